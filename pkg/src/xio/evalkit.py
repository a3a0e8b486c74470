"""Trajectory metrics (ATE/RTE), uncertainty coverage, alignment, plotting.

Alignment is the rigid yaw+translation anchoring the estimate's first pose
to the ground truth's first pose (heading is unobservable in IMU-only
odometry, so a full similarity fit would hide real error).  RTE uses
1-minute windows slid one sample at a time; sequences shorter than the
window fall back to the full span and the report says so.

All functions are pure; plots are standalone SVG polylines with no display
dependency.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NoOverlap, SequenceTooShort
from .geometry import rot_z, yaw_of
from .types import Trajectory


@dataclass
class MetricReport:
    ate: float
    rte: float
    n_points: int
    n_rte_windows: int
    rte_window: float               # seconds actually used
    rte_window_truncated: bool
    sigma3_coverage: float | None = None

    def lines(self) -> list[str]:
        out = [
            f"ATE [m]: {self.ate:.6f}",
            f"RTE [m]: {self.rte:.6f}",
            f"points: {self.n_points}",
            f"rte windows: {self.n_rte_windows}",
            f"rte window [s]: {self.rte_window:g}"
            + (" (truncated to span)" if self.rte_window_truncated else ""),
        ]
        if self.sigma3_coverage is not None:
            out.append(f"3-sigma coverage: {self.sigma3_coverage:.4f}")
        return out


def align(est: Trajectory, gt: Trajectory) -> Trajectory:
    """Resample est at gt's timestamps and remove the first-pose yaw and
    translation offsets.  Raises NoOverlap when time ranges are disjoint."""
    t0 = max(est.t[0], gt.t[0])
    t1 = min(est.t[-1], gt.t[-1])
    if t1 <= t0:
        raise NoOverlap("estimate and ground truth do not overlap in time")
    mask = (gt.t >= t0 - 1e-9) & (gt.t <= t1 + 1e-9)
    ts = gt.t[mask]

    p = np.stack([est.position_at(float(t)) for t in ts])
    v = np.stack([est.velocity_at(float(t)) for t in ts])
    rot = np.stack([est.rotation_at(float(t)) for t in ts])

    gt_r0 = gt.rotation_at(float(ts[0]))
    gt_p0 = gt.position_at(float(ts[0]))
    dyaw = yaw_of(gt_r0) - yaw_of(rot[0])
    rz = rot_z(dyaw)
    p_aligned = (p - p[0]) @ rz.T + gt_p0
    v_aligned = v @ rz.T
    rot_aligned = np.einsum("ij,njk->nik", rz, rot)
    return Trajectory(ts, rot_aligned, p_aligned, v_aligned)


def _gt_slice(gt: Trajectory, ts: np.ndarray) -> np.ndarray:
    return np.stack([gt.position_at(float(t)) for t in ts])


def ate(est_p: np.ndarray, gt_p: np.ndarray) -> float:
    """Root-mean-square pointwise distance between aligned positions."""
    est_p, gt_p = np.asarray(est_p), np.asarray(gt_p)
    if est_p.shape != gt_p.shape:
        raise LengthMismatch(f"{est_p.shape} vs {gt_p.shape}")
    return float(np.sqrt(np.mean(np.sum((est_p - gt_p) ** 2, axis=1))))


def rte(est_p: np.ndarray, gt_p: np.ndarray, t: np.ndarray,
        window_s: float = 60.0) -> tuple[float, int, float, bool]:
    """RMS error of relative displacements over fixed time windows,
    slid one sample at a time.

    Returns (rte, n_windows, window_used, truncated).  Sequences shorter
    than window_s use their full span; spans below one second raise.
    """
    est_p, gt_p, t = np.asarray(est_p), np.asarray(gt_p), np.asarray(t)
    if est_p.shape != gt_p.shape or len(t) != len(est_p):
        raise LengthMismatch("position/timestamp lengths differ")
    span = float(t[-1] - t[0])
    if span < 1.0:
        raise SequenceTooShort(f"span {span:.3f} s < 1 s")
    dt = float(np.median(np.diff(t)))
    truncated = span < window_s
    used = span if truncated else window_s
    k = max(1, int(round(used / dt)))
    k = min(k, len(t) - 1)
    d_est = est_p[k:] - est_p[:-k]
    d_gt = gt_p[k:] - gt_p[:-k]
    err = np.sqrt(np.mean(np.sum((d_est - d_gt) ** 2, axis=1)))
    return float(err), len(d_est), k * dt, truncated


def sigma_coverage(errors, sigmas, k: float = 3.0) -> float:
    """Fraction of samples with |error| <= k*sigma on all three axes."""
    errors, sigmas = np.asarray(errors), np.asarray(sigmas)
    if errors.shape != sigmas.shape:
        raise LengthMismatch(f"{errors.shape} vs {sigmas.shape}")
    inside = np.all(np.abs(errors) <= k * sigmas, axis=-1)
    return float(np.mean(inside))


def evaluate_pair(est: Trajectory, gt: Trajectory, rte_window: float = 60.0,
                  sigma3_coverage: float | None = None) -> MetricReport:
    """Align est to gt and compute the full metric report."""
    aligned = align(est, gt)
    gt_p = _gt_slice(gt, aligned.t)
    ate_val = ate(aligned.p, gt_p)
    rte_val, n_win, used, truncated = rte(aligned.p, gt_p, aligned.t,
                                          rte_window)
    return MetricReport(ate=ate_val, rte=rte_val, n_points=len(aligned.t),
                        n_rte_windows=n_win, rte_window=used,
                        rte_window_truncated=truncated,
                        sigma3_coverage=sigma3_coverage)


def write_report(report: MetricReport, txt_path=None, csv_path=None) -> None:
    if txt_path is not None:
        with open(txt_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(report.lines()) + "\n")
    if csv_path is not None:
        cov = "" if report.sigma3_coverage is None \
            else f"{report.sigma3_coverage:.6f}"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("ate_m,rte_m,n_points,n_rte_windows,rte_window_s,"
                     "rte_window_truncated,sigma3_coverage\n")
            fh.write(f"{report.ate:.9f},{report.rte:.9f},{report.n_points},"
                     f"{report.n_rte_windows},{report.rte_window:g},"
                     f"{int(report.rte_window_truncated)},{cov}\n")


# -- plotting ------------------------------------------------------------------

def _polyline(points, color, width=1.5):
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{width}" points="{coords}"/>')


def plot_topdown(path, est: Trajectory, gt: Trajectory | None = None,
                 size: int = 720, margin: int = 48) -> None:
    """Standalone SVG, top-down (x-y) view of est vs. gt polylines."""
    tracks = [("estimate", est.p, "#d62728")]
    if gt is not None:
        tracks.insert(0, ("ground truth", gt.p, "#1f77b4"))
    allp = np.concatenate([p[:, :2] for _, p, _ in tracks])
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    extent = max(float(np.max(hi - lo)), 1e-6)
    scale = (size - 2 * margin) / extent
    center = 0.5 * (hi + lo)

    def to_px(xy):
        x = (xy[:, 0] - center[0]) * scale + size / 2
        y = size / 2 - (xy[:, 1] - center[1]) * scale
        return np.stack([x, y], axis=1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{margin}" y="24" font-family="sans-serif" '
        f'font-size="14">top-down view [m], extent {extent:.2f}</text>',
    ]
    for k, (name, p, color) in enumerate(tracks):
        parts.append(_polyline(to_px(p[:, :2]), color))
        parts.append(f'<text x="{margin}" y="{44 + 18 * k}" fill="{color}" '
                     f'font-family="sans-serif" font-size="13">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
