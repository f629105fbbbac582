"""Tracking and extraction metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .scene import segment_bounds


def circular_error(est, truth) -> np.ndarray:
    """Absolute wrapped difference in degrees, in ``[0, 180]``."""
    d = np.mod(np.asarray(est, float) - np.asarray(truth, float) + np.pi, 2 * np.pi) - np.pi
    return np.degrees(np.abs(d))


@dataclass
class TrackMetrics:
    mae_deg: float
    acc_pct: float
    re_acc_pct: float
    n_frames: int
    final_re_acc_pct: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def side_centers(target_seg_az, interferer_seg_az) -> np.ndarray:
    """Center azimuth of the expected half-plane for every segment.

    The half-plane boundary passes through the array along the bisector of
    the two speakers' directions; its center is perpendicular to the
    bisector on the target's side.
    """
    a = np.asarray(target_seg_az, float)
    b = np.asarray(interferer_seg_az, float)
    mid = np.angle(np.exp(1j * a) + np.exp(1j * b))
    c1, c2 = mid + np.pi / 2, mid - np.pi / 2
    pick_c1 = np.cos(a - c1) >= np.cos(a - c2)
    return np.mod(np.where(pick_c1, c1, c2), 2 * np.pi)


def regional_accuracy(theta, centers, n_segments: int = 4, per_segment: bool = False):
    """Percentage of estimates within 90 degrees of the segment's half-plane center.

    Segments are half-open, equal-length time quartiles. Returns the mean over
    segments, or the list of per-segment values with ``per_segment=True``.
    """
    theta = np.asarray(theta, float)
    vals = []
    for (a, b), c in zip(segment_bounds(len(theta), n_segments), centers):
        if b <= a:
            continue
        vals.append(100.0 * float(np.mean(circular_error(theta[a:b], c) < 90.0)))
    return vals if per_segment else float(np.mean(vals))


def track_metrics(theta, truth, acc_threshold_deg: float = 10.0, centers=None,
                  mask=None) -> TrackMetrics:
    theta = np.asarray(theta, float)
    truth = np.asarray(truth, float)
    if theta.shape != truth.shape:
        raise ValueError(f"track and truth lengths differ: {theta.shape} vs {truth.shape}")
    err = circular_error(theta, truth)
    sel = np.ones(len(err), bool) if mask is None else np.asarray(mask, bool)
    e = err[sel]
    re_acc = final = float("nan")
    if centers is not None:
        per = regional_accuracy(theta, centers, per_segment=True)
        re_acc, final = float(np.mean(per)), float(per[-1])
    return TrackMetrics(float(np.mean(e)), 100.0 * float(np.mean(e <= acc_threshold_deg)), re_acc,
                        int(sel.sum()), final)


@dataclass
class Summary:
    mean: float
    ci95: float  # half-width
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.ci95:.2f}"


def aggregate(values) -> Summary:
    """Sample mean with the half-width of a two-sided 95 % t interval."""
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    n = len(v)
    if n < 2:
        raise ValueError("need at least two values")
    sd = float(np.std(v, ddof=1))
    half = float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))
    return Summary(float(np.mean(v)), half, n)


def si_sdr(estimate, reference, eps: float = 1e-12) -> float:
    """Scale-invariant signal-to-distortion ratio in dB (zero-mean signals)."""
    est = np.asarray(estimate, float).ravel()
    ref = np.asarray(reference, float).ravel()
    n = min(len(est), len(ref))
    est, ref = est[:n] - est[:n].mean(), ref[:n] - ref[:n].mean()
    alpha = np.dot(est, ref) / (np.dot(ref, ref) + eps)
    target = alpha * ref
    noise = est - target
    return float(10 * np.log10((np.dot(target, target) + eps) / (np.dot(noise, noise) + eps)))
