"""Columnar dataset files (`xio-v1`).

Layout: a header line `# xio-v1 rate=<Hz>` followed by CSV rows

    t,wx,wy,wz,ax,ay,az[,qw,qx,qy,qz,px,py,pz]

Quaternions are Hamilton convention (w first), positions world-frame, SI
units throughout.  The trailing pose columns are optional (inference-only
files).  Files whose rate differs from 200 Hz are linearly resampled on
load; rotations are interpolated along SO(3) geodesics.
"""
from __future__ import annotations

import numpy as np

from .errors import MalformedFile
from .geometry import exp_so3, log_so3
from .types import ImuSequence, Trajectory

FORMAT = "xio-v1"
TARGET_RATE = 200.0


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), Shepperd's method."""
    m = np.asarray(r, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def save_dataset(path, imu: ImuSequence, traj: Trajectory | None = None,
                 rate: float = TARGET_RATE) -> None:
    """Write an xio-v1 file; when traj is given, poses are sampled at the
    IMU timestamps (velocity is not stored; loaders rebuild it)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {FORMAT} rate={rate:g}\n")
        for k in range(len(imu)):
            row = [imu.t[k], *imu.w[k], *imu.a[k]]
            if traj is not None:
                t = float(imu.t[k])
                q = matrix_to_quat(traj.rotation_at(t))
                p = traj.position_at(t)
                row += [*q, *p]
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _finite_diff_velocity(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    if len(t) == 2:
        v = np.empty_like(p)
        v[:] = (p[1] - p[0]) / (t[1] - t[0])
        return v
    # edge_order=2 keeps the boundary estimates O(dt^2) accurate, which
    # matters when a filter is initialized from the first row
    return np.gradient(p, t, axis=0, edge_order=2)


def load_dataset(path) -> tuple[ImuSequence, Trajectory | None]:
    """Parse an xio-v1 file, resampling to 200 Hz when needed.

    Raises MalformedFile (with the offending line number) on a bad header,
    non-monotonic time, non-finite values, or ragged rows.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise MalformedFile(f"{path}:1: empty file")
    header = lines[0].strip()
    parts = header.lstrip("#").split()
    if not header.startswith("#") or len(parts) != 2 or parts[0] != FORMAT \
            or not parts[1].startswith("rate="):
        raise MalformedFile(f"{path}:1: expected '# {FORMAT} rate=<Hz>' header")
    try:
        rate = float(parts[1][len("rate="):])
    except ValueError:
        raise MalformedFile(f"{path}:1: unparseable rate") from None
    if rate <= 0:
        raise MalformedFile(f"{path}:1: rate must be positive")

    rows = []
    ncols = None
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if ncols is None:
            if len(fields) not in (7, 14):
                raise MalformedFile(f"{path}:{ln}: expected 7 or 14 columns, "
                                    f"got {len(fields)}")
            ncols = len(fields)
        elif len(fields) != ncols:
            raise MalformedFile(f"{path}:{ln}: inconsistent column count")
        try:
            vals = [float(x) for x in fields]
        except ValueError:
            raise MalformedFile(f"{path}:{ln}: non-numeric value") from None
        if not all(np.isfinite(vals)):
            raise MalformedFile(f"{path}:{ln}: non-finite value")
        if rows and vals[0] <= rows[-1][0]:
            raise MalformedFile(f"{path}:{ln}: non-monotonic timestamp")
        rows.append(vals)
    if len(rows) < 2:
        raise MalformedFile(f"{path}:{len(lines)}: fewer than two data rows")

    data = np.array(rows)
    t, w, a = data[:, 0], data[:, 1:4], data[:, 4:7]
    quats = data[:, 7:11] if ncols == 14 else None
    pos = data[:, 11:14] if ncols == 14 else None

    if abs(rate - TARGET_RATE) > 1e-9:
        t, w, a, quats, pos = _resample(t, w, a, quats, pos)

    imu = ImuSequence(t, w, a, validate=False)
    traj = None
    if quats is not None:
        rot = np.empty((len(t), 3, 3))
        for k in range(len(t)):
            rot[k] = quat_to_matrix(quats[k])
        traj = Trajectory(t, rot, pos, _finite_diff_velocity(t, pos))
    return imu, traj


def _resample(t, w, a, quats, pos):
    """Half-open 200 Hz grid over the source span (a 10 s file -> 2000 rows)."""
    span = t[-1] - t[0]
    n_out = int(np.floor(span * TARGET_RATE + 1e-9))
    n_out = max(n_out, 2)
    tq = t[0] + np.arange(n_out) / TARGET_RATE

    def lin(cols):
        return np.stack([np.interp(tq, t, cols[:, i])
                         for i in range(cols.shape[1])], axis=1)

    w_out, a_out = lin(w), lin(a)
    quats_out = pos_out = None
    if quats is not None:
        pos_out = lin(pos)
        idx = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, len(t) - 2)
        quats_out = np.empty((n_out, 4))
        for k in range(n_out):
            i = idx[k]
            u = (tq[k] - t[i]) / (t[i + 1] - t[i])
            ra = quat_to_matrix(quats[i])
            rb = quat_to_matrix(quats[i + 1])
            quats_out[k] = matrix_to_quat(ra @ exp_so3(u * log_so3(ra.T @ rb)))
    return tq, w_out, a_out, quats_out, pos_out
