"""Shared value types: IMU samples/windows, trajectories, displacement estimates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedInput
from . import geometry


@dataclass(frozen=True)
class ImuSample:
    """One 6-axis inertial measurement: gyro w [rad/s], accel a [m/s^2]."""
    t: float
    w: np.ndarray
    a: np.ndarray


class ImuSequence:
    """A timestamped stream of IMU samples backed by contiguous arrays.

    t: (N,) strictly increasing seconds; w, a: (N, 3).  A fixed-length
    window is just a slice of a sequence, so the same class serves both.
    """

    def __init__(self, t, w, a, validate: bool = True):
        self.t = np.asarray(t, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.a = np.asarray(a, dtype=float)
        if validate:
            if self.t.ndim != 1 or self.w.shape != (len(self.t), 3) \
                    or self.a.shape != (len(self.t), 3):
                raise MalformedInput("inconsistent IMU array shapes")
            if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.w))
                    and np.all(np.isfinite(self.a))):
                raise MalformedInput("non-finite IMU values")
            if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
                raise MalformedInput("IMU timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.t[i]), self.w[i], self.a[i])

    def slice(self, start: int, stop: int) -> "ImuSequence":
        return ImuSequence(self.t[start:stop], self.w[start:stop],
                           self.a[start:stop], validate=False)

    @property
    def dt(self) -> float:
        """Median sampling period."""
        return float(np.median(np.diff(self.t))) if len(self.t) > 1 else 0.0


# Fixed-length network input; alias kept for readability at call sites.
ImuWindow = ImuSequence


class Trajectory:
    """Timestamped pose sequence: rotations R (N,3,3), positions p (N,3),
    velocities v (N,3)."""

    def __init__(self, t, rot, p, v):
        self.t = np.asarray(t, dtype=float)
        self.rot = np.asarray(rot, dtype=float)
        self.p = np.asarray(p, dtype=float)
        self.v = np.asarray(v, dtype=float)

    def __len__(self) -> int:
        return len(self.t)

    def _locate(self, t: float) -> tuple[int, float]:
        ts = self.t
        if t <= ts[0]:
            return 0, 0.0
        if t >= ts[-1]:
            return len(ts) - 2, 1.0
        i = int(np.searchsorted(ts, t, side="right")) - 1
        return i, (t - ts[i]) / (ts[i + 1] - ts[i])

    def position_at(self, t: float) -> np.ndarray:
        i, u = self._locate(t)
        return (1.0 - u) * self.p[i] + u * self.p[i + 1]

    def velocity_at(self, t: float) -> np.ndarray:
        i, u = self._locate(t)
        return (1.0 - u) * self.v[i] + u * self.v[i + 1]

    def rotation_at(self, t: float) -> np.ndarray:
        i, u = self._locate(t)
        if u == 0.0:
            return self.rot[i]
        return geometry.interp_rotation(self.rot[i], self.rot[i + 1], u)


@dataclass
class DisplacementEstimate:
    """Network output / filter measurement: local-frame displacement d [m]
    and its 3x3 covariance [m^2]."""
    d: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: np.eye(3))
