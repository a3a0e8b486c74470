"""Error-state EKF with stochastic cloning for displacement measurements.

State: rotation R (body->world), velocity v, position p, gyro/accel biases,
plus n cloned past poses (R_i, p_i).  The error state is left-multiplicative
on SO(3) (R = exp(theta) R_hat) and additive elsewhere, ordered

    [clone_1 (theta, dp), ..., clone_n (theta, dp) | theta, dv, dp, dbg, dba]

so the covariance is (6n+15) x (6n+15).  Propagation follows the discrete
kinematic model

    R+ = R exp((w - bg) dt)
    v+ = v + g dt + R (a - ba) dt
    p+ = p + dt/2 (v+ + v)

with the error transition derived by exact first-order perturbation of the
model above (see error_transition); biases are constant with random-walk
noise entering through the covariance only.

A filter instance's (state, P) pair must be advanced by one writer at a
time; distinct instances are independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import (MalformedInput, NonFiniteInput, NonPDInitialCovariance,
                     NonPDMeasurementCovariance, SingularInnovation)
from .geometry import exp_so3, remove_yaw, right_jacobian, skew
from .types import DisplacementEstimate, ImuSample, ImuSequence

GRAVITY = np.array([0.0, 0.0, -9.80665])

# Innovation matrices worse conditioned than this are treated as singular.
COND_LIMIT = 1e12


@dataclass
class NoiseConfig:
    """Continuous-time noise densities and gravity.

    sigma_g [rad/s/sqrt(Hz)], sigma_a [m/s^2/sqrt(Hz)] white noise;
    sigma_bg, sigma_ba bias random-walk densities; g world gravity [m/s^2].
    """
    sigma_g: float = 1e-3
    sigma_a: float = 1e-2
    sigma_bg: float = 1e-5
    sigma_ba: float = 1e-4
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba"):
            if getattr(self, name) < 0:
                raise MalformedInput(f"{name} must be >= 0")


@dataclass
class FilterState:
    """Nominal state: current (R, v, p, bg, ba) plus cloned past poses."""
    rot: np.ndarray
    v: np.ndarray
    p: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    clones: list  # [(R_i, p_i)], oldest first

    def copy(self) -> "FilterState":
        return FilterState(self.rot.copy(), self.v.copy(), self.p.copy(),
                           self.bg.copy(), self.ba.copy(),
                           [(r.copy(), p.copy()) for r, p in self.clones])

    @property
    def n_clones(self) -> int:
        return len(self.clones)

    def dim(self) -> int:
        return 6 * self.n_clones + 15


def _check_spd(m: np.ndarray, what: str, exc: type) -> None:
    m = np.asarray(m, dtype=float)
    if m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
        raise exc(f"{what} must be a finite square matrix")
    sym_tol = 1e-9 * max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > sym_tol:
        raise exc(f"{what} is not symmetric")
    try:
        np.linalg.cholesky(0.5 * (m + m.T))
    except np.linalg.LinAlgError:
        raise exc(f"{what} is not positive definite") from None


def _pose_selector() -> np.ndarray:
    """Jacobian of a cloned (theta, dp) pair w.r.t. the 15-dim state error."""
    sel = np.zeros((6, 15))
    sel[0:3, 0:3] = np.eye(3)
    sel[3:6, 6:9] = np.eye(3)
    return sel


def init_state(r0, v0, p0, bg0, ba0, p_cov0, n_clones: int = 1
               ) -> tuple[FilterState, np.ndarray]:
    """Build the initial state and full covariance.

    p_cov0 is the 15x15 covariance of the current-state error; clone blocks
    are initialized as independent copies of its (theta, dp) sub-block, so
    the full matrix stays positive definite.
    """
    r0 = np.asarray(r0, dtype=float)
    if not geometry.is_rotation(r0, tol=1e-7):
        raise MalformedInput("R0 is not a rotation matrix")
    p_cov0 = np.asarray(p_cov0, dtype=float)
    if p_cov0.shape != (15, 15):
        raise MalformedInput("initial covariance must be 15x15")
    _check_spd(p_cov0, "initial covariance", NonPDInitialCovariance)
    if n_clones < 1:
        raise MalformedInput("n_clones must be >= 1")

    state = FilterState(
        rot=r0.copy(),
        v=np.array(v0, dtype=float),
        p=np.array(p0, dtype=float),
        bg=np.array(bg0, dtype=float),
        ba=np.array(ba0, dtype=float),
        clones=[(r0.copy(), np.array(p0, dtype=float)) for _ in range(n_clones)],
    )
    sel = _pose_selector()
    pose_block = sel @ p_cov0 @ sel.T
    dim = 6 * n_clones + 15
    cov = np.zeros((dim, dim))
    for i in range(n_clones):
        cov[6 * i:6 * i + 6, 6 * i:6 * i + 6] = pose_block
    cov[6 * n_clones:, 6 * n_clones:] = p_cov0
    return state, cov


def error_transition(state: FilterState, sample: ImuSample, dt: float,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """15x15 error transition A and 15x12 noise input B for one step.

    Exact first-order perturbation of the discrete model under the
    left-multiplicative error convention.  Noise order in B's columns:
    [gyro white, accel white, gyro-bias walk, accel-bias walk].
    """
    w_hat = sample.w - state.bg
    a_hat = sample.a - state.ba
    r = state.rot
    r_next = r @ exp_so3(w_hat * dt)
    ra = r @ a_hat

    a_mat = np.eye(15)
    gyro_in = -r_next @ right_jacobian(w_hat * dt) * dt
    a_mat[0:3, 9:12] = gyro_in
    a_mat[3:6, 0:3] = -skew(ra) * dt
    a_mat[3:6, 12:15] = -r * dt
    a_mat[6:9, 0:3] = -0.5 * skew(ra) * dt * dt
    a_mat[6:9, 3:6] = np.eye(3) * dt
    a_mat[6:9, 12:15] = -0.5 * r * dt * dt

    b_mat = np.zeros((15, 12))
    b_mat[0:3, 0:3] = gyro_in            # gyro white enters like dbg
    b_mat[3:6, 3:6] = -r * dt            # accel white enters like dba
    b_mat[6:9, 3:6] = -0.5 * r * dt * dt
    b_mat[9:12, 6:9] = np.eye(3)
    b_mat[12:15, 9:12] = np.eye(3)
    return a_mat, b_mat


def _noise_cov(noise: NoiseConfig, dt: float) -> np.ndarray:
    """Discrete covariance of the 12-dim noise vector driving B."""
    w = np.zeros(12)
    w[0:3] = noise.sigma_g ** 2 / dt
    w[3:6] = noise.sigma_a ** 2 / dt
    w[6:9] = noise.sigma_bg ** 2 * dt
    w[9:12] = noise.sigma_ba ** 2 * dt
    return np.diag(w)


def propagate(state: FilterState, cov: np.ndarray, sample: ImuSample,
              dt: float, noise: NoiseConfig) -> tuple[FilterState, np.ndarray]:
    """Advance mean and covariance by one IMU sample over dt seconds."""
    if dt <= 0:
        raise MalformedInput(f"dt must be > 0, got {dt}")
    if not (np.all(np.isfinite(sample.w)) and np.all(np.isfinite(sample.a))):
        raise NonFiniteInput("IMU sample contains non-finite values")

    a_mat, b_mat = error_transition(state, sample, dt)

    w_hat = sample.w - state.bg
    a_hat = sample.a - state.ba
    new = state.copy()
    new.rot = state.rot @ exp_so3(w_hat * dt)
    new.v = state.v + noise.g * dt + state.rot @ a_hat * dt
    new.p = state.p + 0.5 * dt * (new.v + state.v)

    nc = 6 * state.n_clones
    cov = cov.copy()
    p_ss = cov[nc:, nc:]
    p_cs = cov[:nc, nc:]
    cov[nc:, nc:] = a_mat @ p_ss @ a_mat.T + b_mat @ _noise_cov(noise, dt) @ b_mat.T
    cov[:nc, nc:] = p_cs @ a_mat.T
    cov[nc:, :nc] = cov[:nc, nc:].T
    cov = 0.5 * (cov + cov.T)
    return new, cov


def clone_pose(state: FilterState, cov: np.ndarray
               ) -> tuple[FilterState, np.ndarray]:
    """Drop the oldest clone and append the current pose as the newest.

    The covariance is marginalized/augmented in one similarity transform, so
    the new clone's block and cross terms equal the current pose's exactly.
    """
    n = state.n_clones
    dim = state.dim()
    t = np.zeros((dim, dim))
    if n > 1:
        t[0:6 * (n - 1), 6:6 * n] = np.eye(6 * (n - 1))
    t[6 * (n - 1):6 * n, 6 * n:] = _pose_selector()
    t[6 * n:, 6 * n:] = np.eye(15)

    new = state.copy()
    new.clones = new.clones[1:] + [(state.rot.copy(), state.p.copy())]
    return new, t @ cov @ t.T


def measurement_update(state: FilterState, cov: np.ndarray,
                       meas: DisplacementEstimate, clone_index: int = 0
                       ) -> tuple[FilterState, np.ndarray]:
    """Fuse a local-frame displacement between clone i and the current pose.

    Measurement model h(X) = R_i^T (p_j - p_i) with the clone's full
    rotation; Jacobians are the exact first-order blocks
    H_theta_i = R_i^T [p_j - p_i]x, H_dp_i = -R_i^T, H_dp_j = R_i^T.
    Covariance update uses the Joseph form.
    """
    if not 0 <= clone_index < state.n_clones:
        raise MalformedInput(f"clone_index {clone_index} out of range")
    sigma = np.asarray(meas.cov, dtype=float)
    if sigma.shape != (3, 3):
        raise NonPDMeasurementCovariance("measurement covariance must be 3x3")
    _check_spd(sigma, "measurement covariance", NonPDMeasurementCovariance)

    r_i, p_i = state.clones[clone_index]
    dp = state.p - p_i
    h = r_i.T @ dp

    dim = state.dim()
    nc = 6 * state.n_clones
    h_mat = np.zeros((3, dim))
    h_mat[:, 6 * clone_index:6 * clone_index + 3] = r_i.T @ skew(dp)
    h_mat[:, 6 * clone_index + 3:6 * clone_index + 6] = -r_i.T
    h_mat[:, nc + 6:nc + 9] = r_i.T

    innov_cov = h_mat @ cov @ h_mat.T + sigma
    if np.linalg.cond(innov_cov) > COND_LIMIT:
        raise SingularInnovation("innovation matrix is numerically singular")

    gain = cov @ h_mat.T @ np.linalg.inv(innov_cov)
    residual = h - np.asarray(meas.d, dtype=float)  # h(X) - d_hat
    delta = -gain @ residual

    new = state.copy()
    for k in range(state.n_clones):
        d_th = delta[6 * k:6 * k + 3]
        d_p = delta[6 * k + 3:6 * k + 6]
        rk, pk = new.clones[k]
        new.clones[k] = (exp_so3(d_th) @ rk, pk + d_p)
    s = delta[nc:]
    new.rot = exp_so3(s[0:3]) @ new.rot
    new.v = new.v + s[3:6]
    new.p = new.p + s[6:9]
    new.bg = new.bg + s[9:12]
    new.ba = new.ba + s[12:15]

    ikh = np.eye(dim) - gain @ h_mat
    cov = ikh @ cov @ ikh.T + gain @ sigma @ gain.T
    return new, 0.5 * (cov + cov.T)


def rotate_window(window: ImuSequence, r_hat: np.ndarray) -> ImuSequence:
    """Rotate a raw IMU window into the gravity-aligned, heading-free frame.

    Applies only the tilt factor of r_hat (yaw removed), so the result is
    invariant to the heading estimate; timestamps are unchanged.
    """
    if not (np.all(np.isfinite(window.w)) and np.all(np.isfinite(window.a))):
        raise NonFiniteInput("window contains non-finite values")
    tilt = remove_yaw(np.asarray(r_hat, dtype=float))
    return ImuSequence(window.t.copy(), window.w @ tilt.T, window.a @ tilt.T,
                       validate=False)


# -- configuration file -----------------------------------------------------

@dataclass
class FilterConfig:
    """Runtime settings for the fused pipeline (key = value text file)."""
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    n_clones: int = 1
    window_len: int = 200          # samples per displacement window
    update_stride: int = 200       # samples between measurement updates
    sigma_theta0: float = 1e-3     # initial attitude std [rad]
    sigma_v0: float = 1e-2
    sigma_p0: float = 1e-4
    sigma_bg0: float = 1e-4
    sigma_ba0: float = 1e-3

    def initial_cov(self) -> np.ndarray:
        d = np.concatenate([
            np.full(3, self.sigma_theta0 ** 2),
            np.full(3, self.sigma_v0 ** 2),
            np.full(3, self.sigma_p0 ** 2),
            np.full(3, self.sigma_bg0 ** 2),
            np.full(3, self.sigma_ba0 ** 2),
        ])
        return np.diag(d)


def parse_kv_file(path) -> dict:
    """Parse a `key = value` text file; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MalformedInput(f"{path}:{ln}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def load_filter_config(path) -> FilterConfig:
    kv = parse_kv_file(path)
    cfg = FilterConfig()
    float_keys = {
        "sigma_g": ("noise", "sigma_g"), "sigma_a": ("noise", "sigma_a"),
        "sigma_bg": ("noise", "sigma_bg"), "sigma_ba": ("noise", "sigma_ba"),
    }
    for key, val in kv.items():
        try:
            if key in float_keys:
                _, attr = float_keys[key]
                setattr(cfg.noise, attr, float(val))
            elif key == "gravity":
                parts = [float(x) for x in val.replace(",", " ").split()]
                if len(parts) == 1:
                    cfg.noise.g = np.array([0.0, 0.0, -abs(parts[0])])
                elif len(parts) == 3:
                    cfg.noise.g = np.array(parts)
                else:
                    raise ValueError
            elif key in ("n_clones", "window_len", "update_stride"):
                setattr(cfg, key, int(val))
            elif key in ("sigma_theta0", "sigma_v0", "sigma_p0",
                         "sigma_bg0", "sigma_ba0"):
                setattr(cfg, key, float(val))
            else:
                raise MalformedInput(f"unknown filter config key '{key}'")
        except ValueError as exc:
            raise MalformedInput(f"bad value for '{key}': {val!r}") from exc
    if cfg.noise.sigma_g < 0 or cfg.noise.sigma_a < 0:
        raise MalformedInput("noise densities must be >= 0")
    return cfg
