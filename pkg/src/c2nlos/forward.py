"""Brute-force confocal transient simulator.

Each point scatterer with albedo ``rho`` at distance ``d`` from a confocal
scan point deposits ``rho / d**4`` at time ``t = 2 d / c``.  The Dirac
impulse is discretised by linear splatting between the two nearest time
samples (sample ``i`` sits at ``t = i * bin_width``).  No occlusion, no
reflectance model, no wall-to-system travel time.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import CircleOutOfBounds, RangeOverflow
from .geometry import ScanCircle

SPEED_OF_LIGHT = 3e8

# scatterers processed per chunk; bounds the (points x scatterers) temporaries
_CHUNK = 1 << 21


@dataclass(frozen=True)
class TimeAxis:
    num_bins: int
    bin_width: float
    c: float = SPEED_OF_LIGHT

    @property
    def times(self):
        return np.arange(self.num_bins) * self.bin_width

    @property
    def max_range(self):
        """One-way distance covered by the full axis (meters)."""
        return self.num_bins * self.bin_width * self.c / 2.0

    def v_axis(self, num_bins=None):
        """Uniform squared-range axis spanning ``[0, max_range**2]``."""
        n = self.num_bins if num_bins is None else int(num_bins)
        return VAxis(n, self.max_range**2 / n)

    @classmethod
    def for_range(cls, max_range, num_bins):
        """Axis of ``num_bins`` samples whose one-way range is ``max_range``."""
        return cls(int(num_bins), 2.0 * max_range / (SPEED_OF_LIGHT * num_bins))

    def to_dict(self):
        return {"kind": "time", "num_bins": self.num_bins, "bin_width": self.bin_width, "c": self.c}


@dataclass(frozen=True)
class VAxis:
    """Squared-range axis; sample ``j`` sits at ``start + j * bin_width`` (m^2)."""

    num_bins: int
    bin_width: float
    start: float = 0.0

    @property
    def values(self):
        return self.start + np.arange(self.num_bins) * self.bin_width

    def to_dict(self):
        return {"kind": "v", "num_bins": self.num_bins, "bin_width": self.bin_width, "start": self.start}


def axis_from_dict(d):
    if d["kind"] == "time":
        return TimeAxis(int(d["num_bins"]), float(d["bin_width"]), float(d.get("c", SPEED_OF_LIGHT)))
    return VAxis(int(d["num_bins"]), float(d["bin_width"]), float(d.get("start", 0.0)))


@dataclass(frozen=True)
class WallGrid:
    """Regular grid of confocal scan points on the wall (nodes include the edges)."""

    nx: int = 64
    ny: int = 64
    width: float = 1.0
    height: float = None
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.height is None:
            object.__setattr__(self, "height", self.width)

    @property
    def xs(self):
        return self.center[0] + np.linspace(-self.width / 2, self.width / 2, self.nx)

    @property
    def ys(self):
        return self.center[1] + np.linspace(-self.height / 2, self.height / 2, self.ny)

    @property
    def pitch(self):
        return (self.width / (self.nx - 1), self.height / (self.ny - 1))

    def points(self):
        """Scan points in row-major ``(y, x)`` order, shape ``(ny*nx, 3)``."""
        gy, gx = np.meshgrid(self.ys, self.xs, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def inscribed_circle(self, num_angles=360):
        from .geometry import CartesianPoint

        r = min(self.width, self.height) / 2
        return ScanCircle(r, num_angles, CartesianPoint(self.center[0], self.center[1], 0.0))

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "width": self.width, "height": self.height, "center": list(self.center)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nx"]), int(d["ny"]), float(d["width"]), float(d.get("height", d["width"])),
                   tuple(d.get("center", (0.0, 0.0))))


@dataclass
class Scene:
    """Point scatterers: ``positions`` (K, 3) in meters, ``albedos`` (K,)."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    albedos: np.ndarray = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float)).reshape(-1, 3)
        if self.albedos is None:
            self.albedos = np.ones(len(self.positions))
        self.albedos = np.asarray(self.albedos, dtype=float).reshape(-1)
        if len(self.albedos) != len(self.positions):
            raise ValueError("one albedo per scatterer required")
        if np.any(self.albedos < 0):
            raise ValueError("albedos must be nonnegative")
        if np.any(self.positions[:, 2] <= 0):
            raise ValueError("scatterers must lie in the hidden half-space z > 0")

    def __len__(self):
        return len(self.positions)

    def __add__(self, other):
        return Scene(np.vstack([self.positions, other.positions]), np.concatenate([self.albedos, other.albedos]))

    @classmethod
    def from_points(cls, items):
        """Build from an iterable of ``(position, albedo)`` pairs."""
        items = list(items)
        if not items:
            return cls()
        pos, alb = zip(*items)
        return cls(np.array(pos, dtype=float), np.array(alb, dtype=float))

    @classmethod
    def from_volume(cls, data, extent):
        """Scatterers at the centres of nonzero voxels.

        ``data`` is indexed ``[z, y, x]``; ``extent`` is
        ``((x0, x1), (y0, y1), (z0, z1))`` spanning the voxel edges.
        """
        data = np.asarray(data, dtype=float)
        nz, ny, nx = data.shape
        centers = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for (lo, hi), n in zip(extent, (nx, ny, nz))]
        iz, iy, ix = np.nonzero(data)
        pos = np.column_stack([centers[0][ix], centers[1][iy], centers[2][iz]])
        return cls(pos, data[iz, iy, ix])

    def to_dict(self):
        return {"scatterers": [{"position": list(map(float, p)), "albedo": float(a)}
                               for p, a in zip(self.positions, self.albedos)]}


@dataclass
class ConfocalTransient:
    """Full grid scan: ``data`` indexed ``[y, x, bin]``."""

    data: np.ndarray
    grid: WallGrid
    axis: object

    @property
    def axis_kind(self):
        return "time" if isinstance(self.axis, TimeAxis) else "v"


@dataclass
class TransientSinogram:
    """Circular scan: ``data`` indexed ``[angle, bin]``."""

    data: np.ndarray
    circle: ScanCircle
    axis: object

    @property
    def axis_kind(self):
        return "time" if isinstance(self.axis, TimeAxis) else "v"


def splat_indices(points, scene, axis):
    """Sparse time-domain response of every (scan point, scatterer) pair.

    Returns ``(point_index, scatterer_index, bin, weight)`` arrays with two
    entries per pair (the linear splat), in a deterministic order.
    """
    points = np.asarray(points, dtype=float)
    out = []
    step = max(1, _CHUNK // max(len(points), 1))
    for k0 in range(0, len(scene), step):
        pos = scene.positions[k0:k0 + step]
        alb = scene.albedos[k0:k0 + step]
        d = np.sqrt(((points[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
        f = 2.0 * d / (axis.c * axis.bin_width)
        if np.any(f > axis.num_bins - 1):
            raise RangeOverflow(
                f"return at {f.max():.1f} bins exceeds the {axis.num_bins}-bin time axis"
            )
        i0 = np.floor(f).astype(np.int64)
        frac = f - i0
        amp = alb[None, :] / d**4
        pi, ki = np.meshgrid(np.arange(len(points)), np.arange(k0, k0 + len(pos)), indexing="ij")
        i1 = np.minimum(i0 + 1, axis.num_bins - 1)
        out.append((
            np.concatenate([pi.ravel(), pi.ravel()]),
            np.concatenate([ki.ravel(), ki.ravel()]),
            np.concatenate([i0.ravel(), i1.ravel()]),
            np.concatenate([(amp * (1 - frac)).ravel(), (amp * frac).ravel()]),
        ))
    if not out:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, np.zeros(0)
    return tuple(np.concatenate(parts) for parts in zip(*out))


def _simulate_at(points, scene, axis):
    n = len(points)
    if len(scene) == 0:
        return np.zeros((n, axis.num_bins))
    pi, _, bins, w = splat_indices(points, scene, axis)
    flat = np.bincount(pi * axis.num_bins + bins, weights=w, minlength=n * axis.num_bins)
    return flat.reshape(n, axis.num_bins)


def simulate_confocal(scene, grid, axis):
    """Confocal transient over every node of ``grid``."""
    data = _simulate_at(grid.points(), scene, axis)
    return ConfocalTransient(data.reshape(grid.ny, grid.nx, axis.num_bins), grid, axis)


def simulate_sinogram(scene, circle, axis):
    """Time-domain transient sinogram over the scan circle."""
    return TransientSinogram(_simulate_at(circle.points(), scene, axis), circle, axis)


def _cube_diff(p, q):
    return (q - p) * (q * q + q * p + p * p)


@lru_cache(maxsize=32)
def resampling_matrix(num_time_bins, bin_width, c, num_v_bins, method="area"):
    """Sparse ``(num_v_bins, num_time_bins)`` operator implementing t -> v.

    ``method="area"`` averages the piecewise-linear time interpolant over
    each v-bin (no aliasing when a v-bin spans several time samples);
    ``method="point"`` samples the interpolant at the bin centres.  Rows are
    scaled by ``v**1.5``.
    """
    nt, nv = int(num_time_bins), int(num_v_bins)
    vaxis = TimeAxis(nt, bin_width, c).v_axis(nv)
    dv = vaxis.bin_width
    v = vaxis.values
    # time-sample units: sigma = t / bin_width = 2 sqrt(v) / (c bin_width)
    to_sigma = 2.0 / (c * bin_width)
    if method == "point":
        s = to_sigma * np.sqrt(v)
        k = np.minimum(np.floor(s).astype(np.int64), nt - 1)
        fr = s - k
        rows = np.concatenate([np.arange(nv), np.arange(nv)])
        cols = np.concatenate([k, k + 1])
        vals = np.concatenate([1 - fr, fr])
    elif method == "area":
        edges = to_sigma * np.sqrt(np.clip(v[0] + (np.arange(nv + 1) - 0.5) * dv, 0, None))
        bps = np.union1d(edges, np.arange(nt + 1, dtype=float))
        bps = bps[(bps >= edges[0]) & (bps <= edges[-1])]
        p, q = bps[:-1], bps[1:]
        keep = q > p
        p, q = p[keep], q[keep]
        mid = 0.5 * (p + q)
        k = np.floor(mid).astype(np.int64)
        j = np.searchsorted(edges, mid) - 1
        sq = (q - p) * (q + p) / 2.0
        cu = _cube_diff(p, q) / 3.0
        w_lo = (k + 1) * sq - cu
        w_hi = cu - k * sq
        # dv = (c^2 / 2) t dt = (c^2 / 2) bin_width^2 sigma dsigma
        scale = 0.5 * c**2 * bin_width**2 / dv
        rows = np.concatenate([j, j])
        cols = np.concatenate([k, k + 1])
        vals = scale * np.concatenate([w_lo, w_hi])
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    ok = cols < nt
    R = sp.coo_matrix((vals[ok], (rows[ok], cols[ok])), shape=(nv, nt)).tocsr()
    R.sum_duplicates()
    R = sp.diags(v**1.5) @ R
    return R.tocsr()


def _apply_rows(R, data):
    flat = data.reshape(-1, data.shape[-1])
    out = (R @ flat.T).T
    return np.ascontiguousarray(out).reshape(data.shape[:-1] + (R.shape[0],))


def resample_to_v(m, num_bins=None, method="area"):
    """Change of variables ``v = (t c / 2)**2`` with the ``v**1.5`` rescale."""
    if m.axis_kind != "time":
        raise ValueError("measurement is already on a v axis")
    ax = m.axis
    nv = ax.num_bins if num_bins is None else int(num_bins)
    R = resampling_matrix(ax.num_bins, ax.bin_width, ax.c, nv, method)
    return replace(m, data=_apply_rows(R, m.data), axis=ax.v_axis(nv))


def bilinear_weights(grid, points, tol=1e-9):
    """Sparse ``(len(points), ny*nx)`` bilinear interpolation weights.

    Raises
    ------
    CircleOutOfBounds
        If a point lies outside the grid extent.
    """
    points = np.asarray(points, dtype=float)
    px, py = grid.pitch
    fx = (points[:, 0] - grid.xs[0]) / px
    fy = (points[:, 1] - grid.ys[0]) / py
    span = tol * max(grid.nx, grid.ny)
    if (fx.min() < -span or fy.min() < -span or fx.max() > grid.nx - 1 + span
            or fy.max() > grid.ny - 1 + span):
        raise CircleOutOfBounds("scan points fall outside the wall grid")
    fx = np.clip(fx, 0, grid.nx - 1)
    fy = np.clip(fy, 0, grid.ny - 1)
    ix = np.minimum(np.floor(fx).astype(np.int64), grid.nx - 2)
    iy = np.minimum(np.floor(fy).astype(np.int64), grid.ny - 2)
    ax, ay = fx - ix, fy - iy
    n = len(points)
    rows = np.tile(np.arange(n), 4)
    cols = np.concatenate([iy * grid.nx + ix, iy * grid.nx + ix + 1,
                           (iy + 1) * grid.nx + ix, (iy + 1) * grid.nx + ix + 1])
    vals = np.concatenate([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay])
    W = sp.coo_matrix((vals, (rows, cols)), shape=(n, grid.nx * grid.ny)).tocsr()
    W.eliminate_zeros()
    return W


def subsample_circle(ct, circle):
    """Sample a confocal transient along ``circle`` by bilinear interpolation."""
    W = bilinear_weights(ct.grid, circle.points())
    flat = ct.data.reshape(-1, ct.data.shape[-1])
    return TransientSinogram(np.asarray(W @ flat), circle, ct.axis)


def add_poisson_noise(m, photons_per_unit, dark_rate=0.0, seed=None):
    """Replace each bin by a Poisson count with mean ``scale * value + dark_rate``."""
    if not photons_per_unit > 0:
        raise ValueError("photons_per_unit must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam = photons_per_unit * np.clip(m.data, 0, None) + dark_rate
    return replace(m, data=rng.poisson(lam).astype(float))
