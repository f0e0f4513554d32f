"""Trajectory alignment and APE/RPE metrics.

Legged odometry has four gauge freedoms (world translation and yaw), so
before computing errors the estimate is aligned to the reference with a
closed-form SE(2) fit on the xy points, and the z mean of each trajectory is
subtracted independently. Errors are Frobenius norms of the deviation of the
4x4 relative pose matrix from identity, summarized by RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .lie import Pose, exp_so3


@dataclass
class Trajectory:
    times: np.ndarray
    poses: list[Pose]

    def __len__(self) -> int:
        return len(self.times)

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])


@dataclass
class Gauge:
    """Detected gauge offset: estimate ~ gauge applied to reference."""

    x: float
    y: float
    yaw: float
    z_offset: float


@dataclass
class AlignedPair:
    reference: Trajectory      # matched subset, z-demeaned
    estimate: Trajectory       # matched subset, SE(2)-aligned and z-demeaned
    gauge: Gauge
    dropped: int               # samples without a timestamp match


def associate(ref_times: np.ndarray, est_times: np.ndarray, max_offset: float):
    """Nearest-neighbor timestamp pairs within max_offset; unmatched dropped."""
    pairs = []
    j = 0
    used = set()
    for i, t in enumerate(ref_times):
        j = int(np.searchsorted(est_times, t))
        best = None
        for cand in (j - 1, j):
            if 0 <= cand < len(est_times) and cand not in used:
                off = abs(est_times[cand] - t)
                if off <= max_offset and (best is None or off < best[1]):
                    best = (cand, off)
        if best is not None:
            pairs.append((i, best[0]))
            used.add(best[0])
    return pairs


def align(reference: Trajectory, estimate: Trajectory) -> AlignedPair:
    """SE(2) + independent z-mean alignment of the estimate to the reference.

    The rotation/translation come from the closed-form 2-D orthogonal
    Procrustes fit on the xy points (reflections excluded by construction);
    degenerate point sets fall back to identity rotation plus the centroid
    shift.
    """
    if len(reference) < 2 or len(estimate) < 2:
        raise ValidationError("alignment needs at least two poses per trajectory")
    interval = float(np.median(np.diff(reference.times)))
    pairs = associate(reference.times, estimate.times, 0.5 * interval)
    if len(pairs) < 2:
        raise ValidationError("fewer than two matched timestamps")
    dropped = len(reference) + len(estimate) - 2 * len(pairs)

    ref = [reference.poses[i] for i, _ in pairs]
    est = [estimate.poses[j] for _, j in pairs]
    times = np.array([reference.times[i] for i, _ in pairs])

    r_xy = np.array([p.t[:2] for p in ref])
    e_xy = np.array([p.t[:2] for p in est])
    r_c = r_xy.mean(axis=0)
    e_c = e_xy.mean(axis=0)
    rp = r_xy - r_c
    ep = e_xy - e_c
    s = float(np.sum(ep[:, 0] * rp[:, 1] - ep[:, 1] * rp[:, 0]))
    c = float(np.sum(ep[:, 0] * rp[:, 0] + ep[:, 1] * rp[:, 1]))
    gamma = 0.0 if (s == 0.0 and c == 0.0) else float(np.arctan2(s, c))

    Rz = exp_so3(np.array([0.0, 0.0, gamma]))
    shift = r_c - Rz[:2, :2] @ e_c
    T_align = Pose(Rz, np.array([shift[0], shift[1], 0.0]))

    z_ref = float(np.mean([p.t[2] for p in ref]))
    z_est = float(np.mean([p.t[2] for p in est]))

    ref_out = [Pose(p.R.copy(), p.t - np.array([0.0, 0.0, z_ref])) for p in ref]
    est_out = []
    for p in est:
        q = T_align * p
        est_out.append(Pose(q.R, q.t - np.array([0.0, 0.0, z_est])))

    # detected offset = inverse of the applied correction (z from the means)
    inv = T_align.inverse()
    gauge = Gauge(float(inv.t[0]), float(inv.t[1]), float(-gamma), z_est - z_ref)
    return AlignedPair(Trajectory(times, ref_out), Trajectory(times.copy(), est_out),
                       gauge, dropped)


@dataclass
class MetricSeries:
    values: np.ndarray

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def max(self) -> float:
        return float(np.max(self.values))


def _pose_deviation(rel: Pose, translation_only: bool) -> float:
    if translation_only:
        return float(np.linalg.norm(rel.t))
    dev = rel.matrix() - np.eye(4)
    return float(np.linalg.norm(dev, ord="fro"))


def ape(aligned: AlignedPair, translation_only: bool = False) -> MetricSeries:
    """Per-timestamp Frobenius deviation of ref^-1 * est from identity."""
    vals = np.array([
        _pose_deviation(r.inverse() * e, translation_only)
        for r, e in zip(aligned.reference.poses, aligned.estimate.poses)])
    return MetricSeries(vals)


def rpe(aligned: AlignedPair, delta: float = 1.0,
        translation_only: bool = False) -> MetricSeries:
    """Deviation of relative motions over a wall-clock gap of delta seconds."""
    times = aligned.reference.times
    if times[-1] - times[0] <= delta:
        raise ValidationError(f"trajectory shorter than the RPE interval {delta}s")
    interval = float(np.median(np.diff(times)))
    vals = []
    for i, t in enumerate(times):
        j = int(np.searchsorted(times, t + delta))
        best = None
        for cand in (j - 1, j):
            if 0 <= cand < len(times):
                off = abs(times[cand] - (t + delta))
                if off <= 0.5 * interval and (best is None or off < best[1]):
                    best = (cand, off)
        if best is None:
            continue
        j = best[0]
        r_rel = aligned.reference.poses[i].inverse() * aligned.reference.poses[j]
        e_rel = aligned.estimate.poses[i].inverse() * aligned.estimate.poses[j]
        vals.append(_pose_deviation(r_rel.inverse() * e_rel, translation_only))
    return MetricSeries(np.array(vals))


@dataclass
class MetricReport:
    ape: MetricSeries
    rpe: MetricSeries
    gauge: Gauge
    dropped: int

    def to_keyvalues(self) -> dict:
        return {
            "ape_rmse": self.ape.rmse, "ape_mean": self.ape.mean, "ape_max": self.ape.max,
            "rpe_rmse": self.rpe.rmse, "rpe_mean": self.rpe.mean, "rpe_max": self.rpe.max,
            "gauge_x": self.gauge.x, "gauge_y": self.gauge.y,
            "gauge_yaw": self.gauge.yaw, "gauge_z_offset": self.gauge.z_offset,
            "dropped_matches": self.dropped,
        }


def evaluate(reference: Trajectory, estimate: Trajectory, rpe_delta: float = 1.0,
             translation_only: bool = False) -> MetricReport:
    pair = align(reference, estimate)
    return MetricReport(ape(pair, translation_only), rpe(pair, rpe_delta, translation_only),
                        pair.gauge, pair.dropped)
