"""2D imaging from transient sinograms.

Two routes:

* crop around an assumed sphere radius and backproject the sinogram as a
  parallel-beam CT sinogram, giving an image in ``[u, w] = 2 r' [x, y]``
  coordinates (units of m^2);
* explicit plane-to-sinogram system matrix for a plane at depth ``d``,
  inverted by Tikhonov-regularised least squares with conjugate gradients.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import BudgetExceeded, EmptySinogram, WindowOutOfRange
from .forward import (
    Scene,
    TransientSinogram,
    VAxis,
    resample_to_v,
    resampling_matrix,
    splat_indices,
)

DEFAULT_BUDGET = 1 << 30


@dataclass
class CroppedSinogram:
    """Sinogram resampled onto detector offsets ``s = v - gamma_est``."""

    data: np.ndarray
    r_est: float
    circle: object
    window: tuple
    offsets: np.ndarray

    @property
    def gamma(self):
        return self.r_est**2 + self.circle.radius**2


@dataclass
class PlaneImage:
    """Image on a wall-parallel plane, rows = y ascending, cols = x ascending.

    ``pitch`` is the pixel size in meters on the plane.  Radon images are
    formed in ``[u, w] = scale * [x, y]`` with ``scale = 2 r'``; ``extent``
    is the half-width in those image units.
    """

    data: np.ndarray
    pitch: float
    provenance: str
    scale: float = 1.0
    extent: float = None
    info: dict = field(default_factory=dict)

    def coords(self):
        """Pixel-centre coordinates in image units, one array per axis."""
        n = self.data.shape[0]
        half = self.extent if self.extent is not None else self.pitch * self.scale * n / 2
        return -half + (np.arange(n) + 0.5) * (2 * half / n)

    def locate(self, x, y):
        """Fractional ``(row, col)`` of the plane point ``(x, y)``."""
        n = self.data.shape[0]
        half = self.extent if self.extent is not None else self.pitch * self.scale * n / 2
        step = 2 * half / n
        return ((self.scale * y + half) / step - 0.5, (self.scale * x + half) / step - 0.5)


@dataclass
class PlaneSystem:
    """Sparse system ``A_d`` mapping plane albedos to a flattened v-sinogram."""

    matrix: sp.csc_matrix
    depth: float
    circle: object
    v_axis: VAxis
    xs: np.ndarray
    ys: np.ndarray
    lam: float = 0.0

    @property
    def resolution(self):
        return len(self.xs)

    def pixel_positions(self):
        gy, gx = np.meshgrid(self.ys, self.xs, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, self.depth)])


def _ensure_v(sino, num_bins=None):
    if sino.axis_kind == "time":
        return resample_to_v(sino, num_bins)
    return sino


def crop_sinogram(sino, r_est, circle=None, margin=0.0):
    """Cut the v-window ``[(r - r')^2, (r + r')^2]`` centred on ``r^2 + r'^2``.

    ``margin`` widens the window (m^2); a pair ``(below, above)`` widens
    the two sides independently, which keeps room for off-sphere content
    when the lower bound is already near zero.  Samples keep the native v
    pitch and offset 0 always sits at ``r_est^2 + r'^2``.
    """
    sino = _ensure_v(sino)
    circle = circle or sino.circle
    rp = circle.radius
    gamma = r_est**2 + rp**2
    below, above = (margin, margin) if np.isscalar(margin) else map(float, margin)
    lo, hi = (r_est - rp) ** 2 - below, (r_est + rp) ** 2 + above
    ax = sino.axis
    v_first, v_last = ax.start, ax.start + (ax.num_bins - 1) * ax.bin_width
    if lo < v_first - 1e-12 or hi > v_last + 1e-12:
        raise WindowOutOfRange(f"window [{lo:.4g}, {hi:.4g}] outside v-range [{v_first:.4g}, {v_last:.4g}]")
    m_lo = int(np.floor((2 * r_est * rp + below) / ax.bin_width + 1e-9))
    m_hi = int(np.floor((2 * r_est * rp + above) / ax.bin_width + 1e-9))
    s = np.arange(-m_lo, m_hi + 1) * ax.bin_width
    f = np.clip((gamma + s - ax.start) / ax.bin_width, 0, ax.num_bins - 1)
    i0 = np.minimum(np.floor(f).astype(np.int64), ax.num_bins - 2)
    w = f - i0
    d = np.asarray(sino.data, dtype=float)
    data = d[:, i0] * (1 - w) + d[:, i0 + 1] * w
    return CroppedSinogram(data, float(r_est), circle, (lo, hi), s)


def ramp_filter(rows, spacing):
    """Ram-Lak filtering along the last axis (spatial-domain kernel design)."""
    n = rows.shape[-1]
    size = max(64, int(2 ** np.ceil(np.log2(2 * n))))
    k = np.arange(-(size // 2), size // 2)
    h = np.zeros(size)
    h[k == 0] = 0.25
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    hf = np.real(np.fft.fft(np.fft.ifftshift(h)))
    pf = np.fft.fft(rows, n=size, axis=-1)
    out = np.real(np.fft.ifft(pf * hf, axis=-1))[..., :n]
    return out / spacing


def backproject(rows, offsets, angles, grid):
    """Sum each row along its parallel-beam lines over pixel centres ``grid``."""
    gu, gw = np.meshgrid(grid, grid, indexing="xy")
    img = np.zeros(gu.shape)
    for row, th in zip(rows, angles):
        s = gu * np.cos(th) + gw * np.sin(th)
        img += np.interp(s, offsets, row, left=0.0, right=0.0)
    return img * np.pi / len(angles)


def inverse_radon(cs, filter="none", out_size=360, extent=None):
    """Backproject a cropped sinogram into a ``[u, w]`` image.

    Row ``k`` is a parallel projection at angle ``phi'_k + pi``.  ``extent``
    is the image half-width in m^2 (defaults to the crop half-width).
    """
    rows = np.asarray(cs.data, dtype=float)
    spacing = cs.offsets[1] - cs.offsets[0] if len(cs.offsets) > 1 else 1.0
    if filter in ("ram-lak", "ramlak", "ramp"):
        rows = ramp_filter(rows, spacing)
    elif filter not in (None, "none"):
        raise ValueError(f"unknown filter {filter!r}")
    half = float(np.abs(cs.offsets).max()) if extent is None else float(extent)
    grid = -half + (np.arange(out_size) + 0.5) * (2 * half / out_size)
    angles = cs.circle.angles + np.pi
    img = backproject(rows, cs.offsets, angles, grid)
    scale = 2 * cs.circle.radius
    return PlaneImage(img, (2 * half / out_size) / scale, "radon", scale, half,
                      {"r_est": cs.r_est, "filter": filter or "none"})


def refocus(sino, radii, filter="none", out_size=360, extent=None, margin=0.0):
    """Backprojections focused at each assumed sphere radius."""
    sino = _ensure_v(sino)
    return [inverse_radon(crop_sinogram(sino, r, margin=margin), filter, out_size, extent) for r in radii]


def auto_focus(sino):
    """Focus radius from the intensity-weighted mean of the v axis."""
    sino = _ensure_v(sino)
    d = np.asarray(sino.data, dtype=float)
    total = d.sum()
    if not total > 0:
        raise EmptySinogram("sinogram carries no energy")
    v = sino.axis.values
    mean_v = float((d.sum(axis=0) * v).sum() / total)
    rp2 = sino.circle.radius**2
    r_max = np.sqrt(max(v[-1] - rp2, 0.0))
    return float(np.clip(np.sqrt(max(mean_v - rp2, 0.0)), 0.0, r_max))


def undistort(img, strength):
    """Radial remap about the image centre followed by a central crop.

    An output pixel at normalised radius ``q`` samples the input at
    ``p (1 + strength p^2)`` with ``p = s q``; ``s`` keeps the mid-edge
    fixed so the corners are cropped rather than left empty.
    """
    if strength < 0:
        raise ValueError("strength must be nonnegative")
    if strength == 0:
        return replace(img, data=np.array(img.data, copy=True))
    h, w = img.data.shape
    # s (1 + k s^2) = 1
    roots = np.roots([strength, 0.0, 1.0, -1.0])
    s = float(min(r.real for r in roots if abs(r.imag) < 1e-9 and r.real > 0))
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    qy, qx = (yy - cy) / cy, (xx - cx) / cx
    py, px = s * qy, s * qx
    g = 1 + strength * (px**2 + py**2)
    src = np.array([cy + py * g * cy, cx + px * g * cx])
    out = ndimage.map_coordinates(np.asarray(img.data, dtype=float), src, order=1, mode="constant")
    info = dict(img.info, undistort=strength)
    return replace(img, data=out, info=info)


def plane_pixels(resolution, extent):
    """Pixel-centre coordinates of a square plane of half-width ``extent``."""
    return -extent + (np.arange(resolution) + 0.5) * (2 * extent / resolution)


def build_plane_matrix(depth, circle, resolution, extent, time_axis, num_v_bins=None,
                       budget_bytes=DEFAULT_BUDGET, method="area"):
    """Columns are v-sinograms of unit scatterers on the plane ``z = depth``.

    Column ``j`` equals ``resample_to_v(simulate_sinogram(pixel j))``
    flattened row-major over ``(angle, v)``.
    """
    nv = time_axis.num_bins if num_v_bins is None else int(num_v_bins)
    na, nt = circle.num_angles, time_axis.num_bins
    npix = resolution * resolution
    R = resampling_matrix(nt, time_axis.bin_width, time_axis.c, nv, method)
    per_bin = R.nnz / max(nt, 1)
    est = int(npix * na * 2 * (per_bin + 1) * 12)
    if est > budget_bytes:
        raise BudgetExceeded(f"plane matrix needs ~{est / 2**20:.0f} MiB, budget {budget_bytes / 2**20:.0f} MiB")
    xs = plane_pixels(resolution, extent)
    ys = xs.copy()
    sys = PlaneSystem(None, float(depth), circle, time_axis.v_axis(nv), xs, ys)
    pos = sys.pixel_positions()
    pi, ki, bins, w = splat_indices(circle.points(), Scene(pos), time_axis)
    T = sp.coo_matrix((w, (pi * nt + bins, ki)), shape=(na * nt, npix)).tocsr()
    T.sum_duplicates()
    K = sp.kron(sp.identity(na, format="csr"), R, format="csr")
    sys.matrix = (K @ T).tocsc()
    return sys


def conjugate_gradient(apply, b, x0=None, tol=1e-6, max_iter=1000):
    """Solve ``apply(x) = b`` for symmetric positive definite ``apply``.

    Returns ``(x, info)``; ``x`` is the iterate with the lowest relative
    residual seen, and ``info["converged"]`` flags whether ``tol`` was met.
    """
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), {"converged": True, "iterations": 0, "residual": 0.0}
    r = b - apply(x)
    p = r.copy()
    rr = r @ r
    best, best_res = x.copy(), np.sqrt(rr) / bnorm
    it = 0
    while best_res > tol and it < max_iter:
        ap = apply(p)
        a = rr / (p @ ap)
        x += a * p
        r -= a * ap
        rr_new = r @ r
        it += 1
        res = np.sqrt(rr_new) / bnorm
        if res < best_res:
            best, best_res = x.copy(), res
        p = r + (rr_new / rr) * p
        rr = rr_new
    # recursive residual drifts; report the true one
    true_res = float(np.linalg.norm(b - apply(best)) / bnorm)
    return best, {"converged": true_res <= tol, "iterations": it, "residual": true_res}


def solve_plane(sino, sys, lam=None, tol=1e-6, max_iter=2000):
    """Tikhonov least squares ``(A^T A + lam I) rho = A^T tau`` by CG.

    The raw solution is returned; clamp negatives only for display.
    """
    lam = sys.lam if lam is None else float(lam)
    if isinstance(sino, TransientSinogram):
        sino = _ensure_v(sino, sys.v_axis.num_bins)
        tau = np.asarray(sino.data, dtype=float).ravel()
    else:
        tau = np.asarray(sino, dtype=float).ravel()
    A = sys.matrix
    if tau.size != A.shape[0]:
        raise ValueError(f"sinogram has {tau.size} samples, system expects {A.shape[0]}")
    AT = A.T.tocsr()
    rhs = AT @ tau

    def normal(x):
        return AT @ (A @ x) + lam * x

    x, info = conjugate_gradient(normal, rhs, tol=tol, max_iter=max_iter)
    n = sys.resolution
    pitch = 2 * (sys.xs[-1] - sys.xs[0]) / (2 * (n - 1)) if n > 1 else 1.0
    info = dict(info, depth=sys.depth, lam=lam)
    return PlaneImage(x.reshape(n, n), float(pitch), "linear-inversion", 1.0, float(sys.xs[-1] + pitch / 2), info)


def circle_of_confusion(r_gt, r_est):
    """Radius (m^2, in image units) of the ring an off-sphere point smears into."""
    return r_gt**2 - r_est**2


def project_scene(scene, circle, out_size, extent):
    """Scaled orthographic projection ``2 r' [x, y]`` of a scene's albedo.

    Bilinear splatting onto the same pixel grid :func:`inverse_radon` uses.
    """
    scale = 2 * circle.radius
    step = 2 * extent / out_size
    rel = scene.positions[:, :2] - np.array([circle.center.x, circle.center.y])
    fc = (scale * rel[:, 0] + extent) / step - 0.5
    fr = (scale * rel[:, 1] + extent) / step - 0.5
    img = np.zeros((out_size, out_size))
    c0, r0 = np.floor(fc).astype(int), np.floor(fr).astype(int)
    ac, ar = fc - c0, fr - r0
    for dr, dc, wt in ((0, 0, (1 - ar) * (1 - ac)), (0, 1, (1 - ar) * ac),
                       (1, 0, ar * (1 - ac)), (1, 1, ar * ac)):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < out_size) & (cc >= 0) & (cc < out_size)
        np.add.at(img, (rr[ok], cc[ok]), (scene.albedos * wt)[ok])
    return PlaneImage(img, step / scale, "projection", scale, extent)


def grid_backprojection(ct, r_est, resolution, half_width, falloff=True):
    """Naive confocal backprojection onto the sphere of radius ``r_est``.

    Baseline for a raster scan.  Pixel ``(i, j)`` of a ``resolution``-square
    image covering ``[-half_width, half_width]^2`` (meters, relative to the
    grid centre) sums every scan point's transient at the round-trip time
    to the sphere point above it, optionally undoing the ``1/d^4`` falloff.
    """
    if ct.axis_kind != "time":
        raise ValueError("grid_backprojection needs a time-axis transient")
    ax = ct.axis
    xs = plane_pixels(resolution, half_width)
    gy, gx = np.meshgrid(xs, xs, indexing="ij")
    zz = np.sqrt(np.clip(r_est**2 - gx**2 - gy**2, 0, None))
    cx, cy = ct.grid.center
    vox = np.column_stack([gx.ravel() + cx, gy.ravel() + cy, zz.ravel()])
    pts = ct.grid.points()
    rows = ct.data.reshape(-1, ax.num_bins)
    out = np.zeros(len(vox))
    bins = np.arange(ax.num_bins)
    for p, row in zip(pts, rows):
        d = np.linalg.norm(vox - p, axis=1)
        f = 2 * d / (ax.c * ax.bin_width)
        val = np.interp(f, bins, row, left=0.0, right=0.0)
        out += val * d**4 if falloff else val
    pitch = 2 * half_width / resolution
    return PlaneImage(out.reshape(resolution, resolution), pitch, "grid-backprojection", 1.0, half_width,
                      {"r_est": float(r_est), "scan_points": len(pts)})


def resize_nearest(img, size):
    """Nearest-neighbour upsampling of a square image to ``size`` pixels."""
    n = img.data.shape[0]
    idx = np.minimum(((np.arange(size) + 0.5) * n / size).astype(int), n - 1)
    data = img.data[np.ix_(idx, idx)]
    return replace(img, data=data, pitch=img.pitch * n / size)
