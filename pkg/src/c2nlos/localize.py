"""Scatterer localisation from transient sinograms.

Every scatterer traces ``gamma - alpha cos(beta - phi')`` in a v-axis
sinogram.  For each candidate amplitude a one-pixel-wide sinusoid template
is cross-correlated with the sinogram in the frequency domain; the shifts
of the best match give the phase and offset.  Stacking the correlation
images over amplitudes yields a 3D vote volume whose peaks are inverted to
3D positions.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .errors import InsufficientPeaks, NoIntersection
from .forward import SPEED_OF_LIGHT, TransientSinogram, VAxis, resample_to_v
from .geometry import (
    TWO_PI,
    CartesianPoint,
    SinusoidParams,
    scatterer_position,
)

# templates correlated per FFT batch
_BATCH = 16


@dataclass
class HoughVolume:
    """Vote scores indexed ``[amplitude, phase, offset]``.

    Phase index ``j`` maps to ``beta = 2 pi (j + angle_offset) / num_angles``;
    offset index ``g`` maps to ``gamma = v_axis.start + g * v_axis.bin_width``;
    amplitude index ``a`` maps to ``alpha = alpha_bins[a] * v_axis.bin_width``.
    """

    data: np.ndarray
    alpha_bins: np.ndarray
    v_axis: VAxis
    circle: object
    angle_offset: float = 0.0

    def params_at(self, index):
        a, j, g = index
        na = self.data.shape[1]
        return SinusoidParams(
            alpha=float(self.alpha_bins[a] * self.v_axis.bin_width),
            beta=float((TWO_PI * (j + self.angle_offset) / na) % TWO_PI),
            gamma=float(self.v_axis.start + g * self.v_axis.bin_width),
        )

    @property
    def pitch(self):
        """Physical bin pitch ``(d_alpha, d_beta, d_gamma)``."""
        dv = self.v_axis.bin_width
        step = np.diff(self.alpha_bins).min() if len(self.alpha_bins) > 1 else 1
        return (float(step * dv), TWO_PI / self.data.shape[1], float(dv))


@dataclass(frozen=True)
class Peak:
    params: SinusoidParams
    score: float
    index: tuple


@dataclass(frozen=True)
class Detection:
    params: SinusoidParams
    position: CartesianPoint
    score: float


@dataclass
class LocalizeConfig:
    num_v_bins: int = None
    median_subtract: bool = True
    radiometric_weighting: bool = True
    crop: bool = True
    crop_threshold: float = 0.1
    crop_margin: int = 12
    max_alpha_bins: int = None
    suppression_radius: tuple = (4, 8, 8)
    score_floor: float = None
    resample_method: str = "area"

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown localize options: {sorted(unknown)}")
        d = dict(d)
        if "suppression_radius" in d:
            d["suppression_radius"] = tuple(d["suppression_radius"])
        return cls(**d)


def hough_kernel(alpha_bins, dims):
    """Binary template with one lit pixel per angle row.

    Row ``k`` (angle ``2 pi k / num_angles``) lights column
    ``round(alpha cos(angle) + num_v // 2)``.
    """
    na, nv = dims
    if alpha_bins > nv / 2:
        raise ValueError(f"amplitude {alpha_bins} exceeds half the v extent {nv / 2}")
    theta = TWO_PI * np.arange(na) / na
    cols = np.clip(np.rint(alpha_bins * np.cos(theta) + nv // 2).astype(np.int64), 0, nv - 1)
    t = np.zeros((na, nv))
    t[np.arange(na), cols] = 1.0
    return t


def hough_accumulate(sino, amplitudes=None):
    """Cross-correlate amplitude templates with a v-axis sinogram.

    ``amplitudes`` are candidate amplitudes in v-bins (defaults to every
    integer up to half the v extent).  Correlation wraps in angle and is
    zero-padded along v.
    """
    if sino.axis_kind != "v":
        raise ValueError("hough_accumulate needs a v-axis sinogram")
    s = np.asarray(sino.data, dtype=float)
    na, nv = s.shape
    if amplitudes is None:
        amplitudes = np.arange(nv // 2 + 1)
    amplitudes = np.asarray(amplitudes)
    L = sfft.next_fast_len(2 * nv, real=True)
    fs = sfft.rfft2(s, s=(na, L))
    # offset bin g sits at lag g - nv // 2
    lags = (np.arange(nv) - nv // 2) % L
    out = np.empty((len(amplitudes), na, nv))
    for b0 in range(0, len(amplitudes), _BATCH):
        batch = amplitudes[b0:b0 + _BATCH]
        ts = np.stack([hough_kernel(a, (na, nv)) for a in batch])
        ft = sfft.rfft2(ts, s=(na, L))
        corr = sfft.irfft2(np.conj(ft) * fs[None], s=(na, L))
        out[b0:b0 + len(batch)] = corr[:, :, lags]
    # correlation shift d_phi matches phase beta = d_phi + pi
    out = np.roll(out, na // 2, axis=1)
    return HoughVolume(out, amplitudes, sino.axis, sino.circle, angle_offset=na / 2 - na // 2)


def find_peaks(vol, k, suppression_radius=(4, 8, 8), floor=None):
    """Greedy non-maximum suppression over the vote volume.

    Returns the ``k`` strongest peaks, best first.  Ties go to the lowest
    offset.  The score floor defaults to three times the volume median and
    is never below zero.

    Raises
    ------
    InsufficientPeaks
        If fewer than ``k`` maxima clear the floor.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    d = vol.data
    if floor is None:
        floor = max(3.0 * float(np.median(d)), 0.0)
    mx = ndimage.maximum_filter(d, size=3, mode=("nearest", "wrap", "nearest"))
    cand = np.argwhere((d == mx) & (d > floor))
    scores = d[tuple(cand.T)]
    order = np.lexsort((cand[:, 2], -scores))
    ra, rb, rg = suppression_radius
    na = d.shape[1]
    picked = []
    for i in order:
        a, j, g = cand[i]
        clash = False
        for pa, pj, pg in picked:
            dj = abs(j - pj)
            if abs(a - pa) <= ra and min(dj, na - dj) <= rb and abs(g - pg) <= rg:
                clash = True
                break
        if clash:
            continue
        picked.append((int(a), int(j), int(g)))
        if len(picked) == k:
            break
    peaks = [Peak(vol.params_at(ix), float(d[ix]), ix) for ix in picked]
    if len(peaks) < k:
        raise InsufficientPeaks(f"found {len(peaks)} of {k} peaks above floor {floor:.3g}", peaks)
    return peaks


def _support_window(s, threshold, margin):
    prof = np.clip(s, 0, None).sum(axis=0)
    base = np.median(prof)
    top = prof.max()
    if top <= base:
        return 0, s.shape[1]
    hits = np.nonzero(prof > base + threshold * (top - base))[0]
    return max(hits[0] - margin, 0), min(hits[-1] + margin + 1, s.shape[1])


def prepare_sinogram(sino, config=None):
    """Resample, denoise and crop a sinogram ahead of voting."""
    cfg = config or LocalizeConfig()
    if sino.axis_kind == "time":
        sino = resample_to_v(sino, cfg.num_v_bins, method=cfg.resample_method)
    s = np.array(sino.data, dtype=float)
    ax = sino.axis
    if not cfg.radiometric_weighting:
        v = ax.values
        s[:, v > 0] /= v[v > 0] ** 1.5
    if cfg.median_subtract:
        s -= np.median(s, axis=1, keepdims=True)
    if cfg.crop:
        lo, hi = _support_window(s, cfg.crop_threshold, cfg.crop_margin)
        s = s[:, lo:hi]
        ax = VAxis(hi - lo, ax.bin_width, ax.start + lo * ax.bin_width)
    return TransientSinogram(s, sino.circle, ax)


def _to_detection(peak, circle):
    p = peak.params
    rp = circle.radius
    r = np.sqrt(max(p.gamma - rp**2, 0.0))
    alpha = min(p.alpha, 2.0 * r * rp)
    params = SinusoidParams(alpha, p.beta, max(p.gamma, rp**2))
    return Detection(params, scatterer_position(params, circle), peak.score)


def localize(sino, k=1, config=None, return_volume=False):
    """Positions of the ``k`` strongest scatterers in a sinogram.

    With ``return_volume`` the vote volume is returned as well.
    """
    cfg = config or LocalizeConfig()
    prepared = prepare_sinogram(sino, cfg)
    nv = prepared.data.shape[1]
    top = nv // 2 if cfg.max_alpha_bins is None else min(nv // 2, cfg.max_alpha_bins)
    vol = hough_accumulate(prepared, np.arange(top + 1))
    peaks = find_peaks(vol, k, cfg.suppression_radius, cfg.score_floor)
    dets = sorted((_to_detection(p, sino.circle) for p in peaks), key=lambda d: -d.score)
    return (dets, vol) if return_volume else dets


def peak_times(sino, indices):
    """Sub-bin peak time (seconds) of selected rows of a time-axis sinogram."""
    ax = sino.axis
    out = []
    for i in indices:
        row = np.asarray(sino.data[i], dtype=float)
        m = int(np.argmax(row))
        lo, hi = max(m - 1, 0), min(m + 2, len(row))
        w = row[lo:hi]
        out.append(float(np.dot(np.arange(lo, hi), w) / w.sum()) * ax.bin_width)
    return out


def trilaterate(peak_times, points, c=SPEED_OF_LIGHT):
    """Intersection of three spheres centred at wall points.

    ``peak_times`` are round-trip times; sphere radii are ``t c / 2``.  Of
    the two intersections, the one on the hidden side (larger z) is returned.

    Raises
    ------
    ValueError
        If the centres are collinear or a time is not positive.
    NoIntersection
        If the spheres do not meet; carries the least-squares point.
    """
    t = np.asarray(peak_times, dtype=float)
    P = np.asarray(points, dtype=float).reshape(3, 3)
    if np.any(t <= 0):
        raise ValueError("peak times must be positive")
    r = t * c / 2.0
    e1 = P[1] - P[0]
    d = np.linalg.norm(e1)
    if d == 0:
        raise ValueError("scan points coincide")
    e1 /= d
    w = P[2] - P[0]
    i = np.dot(e1, w)
    e2 = w - i * e1
    j = np.linalg.norm(e2)
    if j < 1e-12 * max(d, 1.0):
        raise ValueError("scan points are collinear")
    e2 /= j
    e3 = np.cross(e1, e2)
    x = (r[0] ** 2 - r[1] ** 2 + d**2) / (2 * d)
    y = (r[0] ** 2 - r[2] ** 2 + i**2 + j**2) / (2 * j) - (i / j) * x
    z2 = r[0] ** 2 - x**2 - y**2
    base = P[0] + x * e1 + y * e2
    if z2 < 0:
        ls = base
        res = np.sqrt(np.mean((np.linalg.norm(P - ls, axis=1) - r) ** 2))
        raise NoIntersection("spheres do not intersect", CartesianPoint(*map(float, ls)), float(res))
    z = np.sqrt(z2)
    a, b = base + z * e3, base - z * e3
    best = a if a[2] >= b[2] else b
    return CartesianPoint(*map(float, best))
