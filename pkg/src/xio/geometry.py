"""Minimal SO(3) toolkit: skew, exp/log maps, yaw handling, interpolation.

Rotations are plain 3x3 numpy arrays (body -> world) throughout; rotation
vectors are 3-arrays in radians.  All functions are pure and safe to call
concurrently.
"""
from __future__ import annotations

import numpy as np

from .errors import NearPiRotation

# Angle below which the Rodrigues coefficients switch to their 2nd-order
# Taylor expansions (avoids 0/0 with no precision loss).
SMALL_ANGLE = 1e-8
# Margin around pi inside which log_so3 refuses to pick an axis.
NEAR_PI_MARGIN = 1e-6

_EYE3 = np.eye(3)


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(phi) -> np.ndarray:
    """Rodrigues exponential map from a rotation vector to a rotation matrix."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    s = skew(phi)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return _EYE3 + a * s + b * (s @ s)


def log_so3(r: np.ndarray) -> np.ndarray:
    """Inverse of exp_so3; returns the canonical rotation vector (|phi| <= pi).

    Raises NearPiRotation when the angle is within NEAR_PI_MARGIN of pi,
    where the axis is numerically ambiguous.
    """
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta > np.pi - NEAR_PI_MARGIN:
        raise NearPiRotation(f"rotation angle {theta:.9f} rad is within "
                             f"{NEAR_PI_MARGIN:g} of pi")
    w = _vee(r - r.T)  # = 2 sin(theta) * axis
    if theta < SMALL_ANGLE:
        # theta/(2 sin theta) ~ 1/2 * (1 + theta^2/6); theta^2 from |w|.
        theta2 = float(w @ w) / 4.0
        return 0.5 * (1.0 + theta2 / 6.0) * w
    return (theta / (2.0 * np.sin(theta))) * w


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): exp(phi + d) ~ exp(phi) exp(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    s = skew(phi)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        b = 0.5 - theta2 / 24.0
        c = 1.0 / 6.0 - theta2 / 120.0
    else:
        theta = np.sqrt(theta2)
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    return _EYE3 - b * s + c * (s @ s)


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    """True when r is orthonormal with determinant +1 within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    ortho = np.max(np.abs(r.T @ r - _EYE3))
    return ortho <= tol and abs(np.linalg.det(r) - 1.0) <= tol


def rot_z(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def yaw_of(r: np.ndarray) -> float:
    """Heading angle of the ZYX Euler factorization R = Rz(yaw) Ry Rx."""
    return float(np.arctan2(r[1, 0], r[0, 0]))


def remove_yaw(r: np.ndarray) -> np.ndarray:
    """Tilt-only factor Rz(-yaw(R)) @ R; maps body vectors into the
    gravity-aligned, heading-free frame."""
    return rot_z(-yaw_of(r)) @ r


def interp_rotation(ra: np.ndarray, rb: np.ndarray, alpha: float) -> np.ndarray:
    """Geodesic interpolation on SO(3); alpha=0 -> ra, alpha=1 -> rb."""
    return ra @ exp_so3(alpha * log_so3(ra.T @ rb))
