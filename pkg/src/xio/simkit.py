"""Synthetic trajectory and IMU generation.

Rotation and velocity profiles are closed-form; positions are accumulated
with the same trapezoidal rule the filter's kinematic model uses, and
derive_imu inverts the discrete model exactly, so noise-free propagation of
the derived IMU reproduces the trajectory to floating-point roundoff.

The gait kinds superimpose vertical bobbing and yaw/roll/pitch oscillation
at the gait frequency; the quadruped kind additionally sweeps the commanded
velocity direction through lateral and reverse phases while the heading
stays put, which is what separates its inertial signature from a walker's.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedInput
from .eskf import GRAVITY
from .geometry import log_so3, rot_x, rot_y, rot_z
from .types import ImuSequence, Trajectory

RATE = 200.0  # Hz

KINDS = ("circle", "figure-eight", "human-gait", "quadruped-gait")


@dataclass
class TrajectorySpec:
    kind: str = "circle"
    duration: float = 10.0
    speed: float = 1.0
    gait_freq: float = 2.0
    radius: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MalformedInput(f"unknown trajectory kind '{self.kind}'")
        if self.duration <= 0:
            raise MalformedInput("duration must be > 0")
        if self.speed < 0:
            raise MalformedInput("speed must be >= 0")


@dataclass
class ImuNoiseSpec:
    """Measurement corruption: white noise densities, bias random walks,
    and constant initial biases."""
    sigma_g: float = 0.0
    sigma_a: float = 0.0
    sigma_bg: float = 0.0
    sigma_ba: float = 0.0
    init_bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    init_ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    seed: int = 0

    def __post_init__(self):
        self.init_bg = np.asarray(self.init_bg, dtype=float)
        self.init_ba = np.asarray(self.init_ba, dtype=float)
        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba"):
            if getattr(self, name) < 0:
                raise MalformedInput(f"{name} must be >= 0")


def _trapezoid_positions(v: np.ndarray, dt: float) -> np.ndarray:
    p = np.zeros_like(v)
    p[1:] = np.cumsum(0.5 * dt * (v[1:] + v[:-1]), axis=0)
    return p


def synth_trajectory(spec: TrajectorySpec) -> Trajectory:
    """Generate a 200 Hz trajectory for the given spec (duration inclusive,
    so a 10 s spec yields 2001 poses)."""
    n = int(round(spec.duration * RATE)) + 1
    dt = 1.0 / RATE
    t = np.arange(n) * dt
    rng = np.random.default_rng(spec.seed)

    if spec.speed == 0.0:
        rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        zeros = np.zeros((n, 3))
        return Trajectory(t, rot, zeros.copy(), zeros.copy())

    if spec.kind == "circle":
        omega = spec.speed / spec.radius
        theta = omega * t
        v = spec.speed * np.stack(
            [np.cos(theta), np.sin(theta), np.zeros(n)], axis=1)
        yaw = theta
        pitch = np.zeros(n)
        roll = np.zeros(n)

    elif spec.kind == "figure-eight":
        a_amp, b_amp = spec.radius, 0.5 * spec.radius
        omega = spec.speed / spec.radius
        vx = a_amp * omega * np.cos(omega * t)
        vy = 2.0 * b_amp * omega * np.cos(2.0 * omega * t)
        v = np.stack([vx, vy, np.zeros(n)], axis=1)
        yaw = np.arctan2(vy, vx)
        pitch = np.zeros(n)
        roll = np.zeros(n)

    elif spec.kind == "human-gait":
        f = spec.gait_freq
        phase = 2.0 * np.pi * rng.uniform(0.0, 1.0, size=4)
        mod = 0.3  # step-to-step speed modulation
        # arc-length rate along a walking circle of the spec radius
        ell_dot = spec.speed * (1.0 + mod * np.sin(2 * np.pi * f * t + phase[0]))
        theta = (spec.speed * t
                 + spec.speed * mod / (2 * np.pi * f)
                 * (np.cos(phase[0]) - np.cos(2 * np.pi * f * t + phase[0]))
                 ) / spec.radius
        vx = ell_dot * np.cos(theta)
        vy = ell_dot * np.sin(theta)
        a_z = 0.01
        vz = a_z * 2 * np.pi * f * np.cos(2 * np.pi * f * t + phase[1])
        v = np.stack([vx, vy, vz], axis=1)
        yaw = theta + 0.08 * np.sin(2 * np.pi * f * t + phase[2])
        pitch = 0.03 * np.sin(4 * np.pi * f * t + phase[3])
        roll = 0.05 * np.sin(2 * np.pi * f * t + phase[2])

    else:  # quadruped-gait
        f = spec.gait_freq if spec.gait_freq != 2.0 else 4.0
        phase = 2.0 * np.pi * rng.uniform(0.0, 1.0, size=4)
        # commanded direction sweeps a full turn twice per run: forward,
        # lateral, reverse, lateral phases relative to the body heading
        sweep = 2.0 * np.pi * 2.0 / spec.duration
        alpha = sweep * t + phase[0]
        vx = spec.speed * np.cos(alpha)
        vy = spec.speed * np.sin(alpha)
        a_z = 0.008
        vz = a_z * 2 * np.pi * f * np.cos(2 * np.pi * f * t + phase[1])
        v = np.stack([vx, vy, vz], axis=1)
        # heading wobbles at the gait frequency but does not track velocity
        yaw = 0.12 * np.sin(2 * np.pi * f * t + phase[2])
        pitch = 0.06 * np.sin(4 * np.pi * f * t + phase[3])
        roll = 0.08 * np.sin(2 * np.pi * f * t + phase[1])

    rot = np.empty((n, 3, 3))
    for k in range(n):
        rot[k] = rot_z(yaw[k]) @ rot_y(pitch[k]) @ rot_x(roll[k])
    p = _trapezoid_positions(v, dt)
    return Trajectory(t, rot, p, v)


def derive_imu(traj: Trajectory, g: np.ndarray = GRAVITY) -> ImuSequence:
    """Ideal noise-free IMU: the exact inverse of the filter's discrete
    kinematic model, so propagation reproduces the trajectory.

    Returns len(traj)-1 samples (sample k advances pose k to k+1).
    """
    n = len(traj)
    if n < 2:
        raise MalformedInput("trajectory must have at least two poses")
    dts = np.diff(traj.t)
    w = np.empty((n - 1, 3))
    a = np.empty((n - 1, 3))
    for k in range(n - 1):
        w[k] = log_so3(traj.rot[k].T @ traj.rot[k + 1]) / dts[k]
        a[k] = traj.rot[k].T @ ((traj.v[k + 1] - traj.v[k]) / dts[k] - g)
    return ImuSequence(traj.t[:-1], w, a, validate=False)


def corrupt(seq: ImuSequence, noise: ImuNoiseSpec) -> ImuSequence:
    """Apply white noise and bias random walks; bit-reproducible per seed."""
    rng = np.random.default_rng(noise.seed)
    n = len(seq)
    dt = seq.dt if n > 1 else 1.0 / RATE
    draws = {
        "gw": rng.standard_normal((n, 3)),
        "aw": rng.standard_normal((n, 3)),
        "gb": rng.standard_normal((n, 3)),
        "ab": rng.standard_normal((n, 3)),
    }
    w = seq.w.copy()
    a = seq.a.copy()
    if noise.sigma_g > 0:
        w += noise.sigma_g / np.sqrt(dt) * draws["gw"]
    if noise.sigma_a > 0:
        a += noise.sigma_a / np.sqrt(dt) * draws["aw"]

    def walk(density: float, scaled: np.ndarray) -> np.ndarray:
        steps = density * np.sqrt(dt) * scaled
        out = np.zeros((n, 3))
        out[1:] = np.cumsum(steps[:-1], axis=0)
        return out

    # skip no-op additions so untouched channels stay bit-identical
    if noise.sigma_bg > 0 or np.any(noise.init_bg != 0):
        w += noise.init_bg + (walk(noise.sigma_bg, draws["gb"])
                              if noise.sigma_bg > 0 else 0.0)
    if noise.sigma_ba > 0 or np.any(noise.init_ba != 0):
        a += noise.init_ba + (walk(noise.sigma_ba, draws["ab"])
                              if noise.sigma_ba > 0 else 0.0)
    return ImuSequence(seq.t.copy(), w, a, validate=False)
