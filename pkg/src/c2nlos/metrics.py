"""Evaluation metrics: SSIM, matched localisation error, stage timings."""

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

K1, K2 = 0.01, 0.03


@dataclass
class EvalReport:
    mean_error: tuple = None
    ssim: float = None
    timings: dict = field(default_factory=dict)

    @contextmanager
    def timed(self, stage):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0

    def to_dict(self):
        d = {"timings": dict(self.timings)}
        if self.mean_error is not None:
            d["mean_error"] = {"x": self.mean_error[0], "y": self.mean_error[1], "z": self.mean_error[2]}
        if self.ssim is not None:
            d["ssim"] = self.ssim
        return d


def _window_sums(a, w):
    """Sums over every fully-contained ``w x w`` window (integral image)."""
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    return s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]


def ssim_map(img, ref, window=8, k1=K1, k2=K2, data_range=None):
    """Local SSIM over all valid ``window x window`` uniform windows."""
    x = np.asarray(img, dtype=float)
    y = np.asarray(ref, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < window:
        raise ValueError(f"images must be 2D and at least {window} pixels per side")
    L = float(y.max() - y.min()) if data_range is None else float(data_range)
    if L == 0:
        L = 1.0
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    n = window * window
    # shift by the reference mean to keep the integral-image sums well conditioned
    off = y.mean()
    x, y = x - off, y - off
    mx = _window_sums(x, window) / n
    my = _window_sums(y, window) / n
    vx = np.maximum(_window_sums(x * x, window) / n - mx * mx, 0)
    vy = np.maximum(_window_sums(y * y, window) / n - my * my, 0)
    cxy = _window_sums(x * y, window) / n - mx * my
    mx, my = mx + off, my + off
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(img, ref, window=8, k1=K1, k2=K2, data_range=None):
    """Mean structural similarity of ``img`` against ``ref``.

    Uniform windows, population statistics, dynamic range taken from
    ``ref`` unless given.
    """
    return float(np.mean(ssim_map(img, ref, window, k1, k2, data_range)))


def normalize_image(img):
    """Clip negatives and scale to unit maximum (zero images stay zero)."""
    a = np.clip(np.asarray(img, dtype=float), 0, None)
    m = a.max()
    return a / m if m > 0 else a


def _as_points(items):
    out = []
    for p in items:
        if hasattr(p, "position"):
            p = p.position
        if hasattr(p, "as_array"):
            p = p.as_array()
        out.append(np.asarray(p, dtype=float))
    return np.array(out).reshape(-1, 3)


def match(detections, ground_truth):
    """Min-cost assignment on Euclidean distance; returns index pairs."""
    d = _as_points(detections)
    g = _as_points(ground_truth)
    if len(d) != len(g):
        raise ValueError(f"{len(d)} detections vs {len(g)} ground-truth points")
    cost = np.linalg.norm(d[:, None, :] - g[None, :, :], axis=-1)
    return linear_sum_assignment(cost)


def localization_error(detections, ground_truth):
    """Per-axis mean absolute error after optimal matching.

    Accepts detections, points or ``(n, 3)`` arrays for either argument.
    """
    d = _as_points(detections)
    g = _as_points(ground_truth)
    if len(d) == 0 and len(g) == 0:
        return (0.0, 0.0, 0.0)
    ri, ci = match(d, g)
    err = np.abs(d[ri] - g[ci]).mean(axis=0)
    return tuple(float(e) for e in err)
