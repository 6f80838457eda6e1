"""3D volume recovery in the light-cone domain with linearised ADMM.

After ``v = (tc/2)^2`` resampling a point scatterer with albedo ``rho`` at
lateral position ``(x, y)`` and depth ``z`` deposits ``rho * c dt / dv``
along the paraboloid ``v = (x' - x)^2 + (y' - y)^2 + z^2``, independent of
its distance.  With ``u = z^2`` the confocal measurement is therefore a 3D
convolution ``H`` of the light-cone volume ``rho_u(x, y, u)``.  A sampling
matrix ``M`` picks the circle out of the full grid and the problem

    min 1/2 |tau - M H rho|^2 + I_{>=0}(rho) + lam_s |rho|_1
        + lam_tv (|Dx rho|_1 + |Dy rho|_1 + |Dz rho|_1)

is split into six blocks ``C = [MH; I; I; Dx; Dy; Dz]`` and solved with a
linearised ADMM step on ``rho``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .errors import Diverged
from .forward import ConfocalTransient, VAxis, WallGrid, bilinear_weights, resample_to_v

# consecutive objective increases tolerated before declaring divergence
DIVERGENCE_WINDOW = 20


@dataclass
class VoxelVolume:
    """Albedo volume indexed ``[z, y, x]``.

    ``extent`` spans the voxel edges as ``((x0, x1), (y0, y1), (z0, z1))``.
    When ``lct_resampled`` is set the first axis is ``u = z^2`` (m^2) rather
    than depth.
    """

    data: np.ndarray
    extent: tuple
    lct_resampled: bool = False
    info: dict = field(default_factory=dict)

    def depth_centers(self):
        z0, z1 = self.extent[2]
        n = self.data.shape[0]
        return z0 + (np.arange(n) + 0.5) * (z1 - z0) / n

    def slice_energy(self):
        """Total albedo per depth slice."""
        return self.data.reshape(self.data.shape[0], -1).sum(axis=1)

    def mip(self, axis):
        """Maximum-intensity projection: ``front`` (over z), ``top`` (over y), ``side`` (over x)."""
        ax = {"front": 0, "top": 1, "side": 2}[axis]
        return self.data.max(axis=ax)


@dataclass
class LctOperator:
    """Convolution by a light-cone kernel on a ``(ny, nx, nv)`` grid.

    ``spectrum`` is the real FFT of the kernel on ``fft_shape``.  When
    ``fft_shape`` equals ``shape`` the convolution is circular; otherwise
    the volume is zero-padded and the output cropped (linear convolution).
    """

    spectrum: np.ndarray
    shape: tuple
    fft_shape: tuple
    grid: WallGrid = None
    v_axis: VAxis = None
    workers: int = None

    def apply(self, rho):
        f = sfft.rfftn(rho, s=self.fft_shape, workers=self.workers)
        out = sfft.irfftn(f * self.spectrum, s=self.fft_shape, workers=self.workers)
        return out[: self.shape[0], : self.shape[1], : self.shape[2]]

    def adjoint(self, sigma):
        f = sfft.rfftn(sigma, s=self.fft_shape, workers=self.workers)
        out = sfft.irfftn(f * np.conj(self.spectrum), s=self.fft_shape, workers=self.workers)
        return out[: self.shape[0], : self.shape[1], : self.shape[2]]

    @classmethod
    def from_kernel(cls, kernel, shape=None, workers=None):
        """Circular convolution with an explicit kernel (origin at index 0)."""
        kernel = np.asarray(kernel, dtype=float)
        shape = tuple(kernel.shape) if shape is None else tuple(shape)
        return cls(sfft.rfftn(kernel, s=shape), shape, shape, workers=workers)


def lct_kernel(grid, v_axis, fft_shape, scale=1.0, splat="linear"):
    """Light-cone PSF laid out for FFT convolution on ``fft_shape``.

    Entry ``[dy, dx, dj]`` (lateral offsets wrapped) holds the weight a
    voxel leaves ``dj`` v-bins later at lateral offset ``(dx, dy)``, where
    the arrival sits at ``f = (dx^2 + dy^2) pitch^2 / dv`` bins.  With
    ``splat="nearest"`` the unit mass goes to the bin containing the
    arrival, which is what area resampling of a measured transient does;
    ``"linear"`` spreads it over the two neighbouring bins.
    """
    ny, nx = grid.ny, grid.nx
    px, py = grid.pitch
    ly, lx, lv = fft_shape
    dy = np.arange(-(ny - 1), ny)
    dx = np.arange(-(nx - 1), nx)
    gy, gx = np.meshgrid(dy, dx, indexing="ij")
    f = ((gx * px) ** 2 + (gy * py) ** 2) / v_axis.bin_width
    if splat == "nearest":
        taps = ((np.floor(f + 0.5).astype(np.int64), np.ones_like(f)),)
    elif splat == "linear":
        j0 = np.floor(f).astype(np.int64)
        w1 = f - j0
        taps = ((j0, 1 - w1), (j0 + 1, w1))
    else:
        raise ValueError(f"unknown splat {splat!r}")
    k = np.zeros(fft_shape)
    # only offsets that can land inside the measured v range matter
    for jj, ww in taps:
        ok = (jj < v_axis.num_bins) & (ww > 0)
        np.add.at(k, (gy[ok] % ly, gx[ok] % lx, jj[ok]), scale * ww[ok])
    return k


def build_lct_operator(grid, time_axis, num_v_bins=None, boundary="linear", workers=None,
                       splat="linear"):
    """Light-cone operator for a wall grid and the v axis of ``time_axis``.

    Includes the ``c dt / dv`` factor so that ``H`` applied to a unit
    voxel approximates the resampled simulator output.
    """
    nv = time_axis.num_bins if num_v_bins is None else int(num_v_bins)
    vax = time_axis.v_axis(nv)
    shape = (grid.ny, grid.nx, nv)
    if boundary == "linear":
        fft_shape = (sfft.next_fast_len(2 * grid.ny - 1, real=True),
                     sfft.next_fast_len(2 * grid.nx - 1, real=True),
                     sfft.next_fast_len(2 * nv - 1, real=True))
    elif boundary == "circular":
        fft_shape = shape
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    scale = time_axis.c * time_axis.bin_width / vax.bin_width
    k = lct_kernel(grid, vax, fft_shape, scale, splat)
    spec = sfft.rfftn(k, workers=workers)
    return LctOperator(spec, shape, fft_shape, grid, vax, workers)


def sampling_mask(grid, circle):
    """Bilinear sampling matrix ``M`` from grid nodes to circle points."""
    return bilinear_weights(grid, circle.points())


# ---------------------------------------------------------------- proximal maps


def prox_data(v, tau, mu):
    """``argmin_z 1/2 |tau - z|^2 + mu/2 |v - z|^2``."""
    return (tau + mu * v) / (1.0 + mu)


def prox_nonneg(v):
    return np.maximum(v, 0.0)


def prox_l1(v, kappa):
    """Soft thresholding ``sign(v) max(|v| - kappa, 0)``."""
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


# ----------------------------------------------------------- finite differences


def _diff_multipliers(shape):
    """Frequency responses of circular forward differences, per axis."""
    out = []
    for ax, n in enumerate(shape):
        m = n // 2 + 1 if ax == len(shape) - 1 else n
        w = np.exp(2j * np.pi * np.arange(m) / n) - 1.0
        sh = [1] * len(shape)
        sh[ax] = m
        out.append(w.reshape(sh))
    return out


def finite_difference_apply(volume, axis, adjoint=False):
    """Circular forward difference ``x[i+1] - x[i]`` along ``axis`` via FFT."""
    volume = np.asarray(volume, dtype=float)
    d = _diff_multipliers(volume.shape)[axis]
    f = sfft.rfftn(volume)
    f *= np.conj(d) if adjoint else d
    return sfft.irfftn(f, s=volume.shape)


class _Gradient:
    """All three difference operators sharing one transform."""

    def __init__(self, shape, workers=None):
        self.shape = shape
        self.mult = _diff_multipliers(shape)
        self.workers = workers

    def apply(self, x):
        f = sfft.rfftn(x, workers=self.workers)
        return [sfft.irfftn(f * d, s=self.shape, workers=self.workers) for d in self.mult]

    def adjoint(self, parts):
        acc = None
        for p, d in zip(parts, self.mult):
            t = sfft.rfftn(p, workers=self.workers) * np.conj(d)
            acc = t if acc is None else acc + t
        return sfft.irfftn(acc, s=self.shape, workers=self.workers)


# ----------------------------------------------------------------------- ADMM


@dataclass
class AdmmParams:
    mu: float = 1.0
    nu: float = None
    lam_s: float = 5e-3
    lam_tv: float = 5e-3
    relative_lambdas: bool = True
    nonneg: bool = True
    max_iters: int = 200
    tol: float = 1e-4
    power_iters: int = 20
    safety: float = 1.1
    normalize: bool = True
    data_norm: float = 4.0
    depth_slices: int = 64
    raise_on_divergence: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown recon3d options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdmmState:
    rho: np.ndarray
    z: list
    u: list
    mu: float
    nu: float
    lam_s: float
    lam_tv: float
    iteration: int = 0
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)


class _System:
    """The stacked operator ``C`` and its adjoint for one problem."""

    def __init__(self, op, mask, blocks, workers=None):
        self.op = op
        self.mask = mask
        self.maskT = None if mask is None else mask.T.tocsr()
        self.blocks = blocks  # subset of ("data", "nonneg", "l1", "tv")
        self.grad = _Gradient(op.shape, workers) if "tv" in blocks else None
        self.data_scale = 1.0

    def data(self, rho):
        y = self.op.apply(rho)
        ny, nx, nv = y.shape
        y = y.reshape(ny * nx, nv)
        if self.mask is not None:
            y = np.asarray(self.mask @ y)
        return y * self.data_scale

    def data_adjoint(self, y):
        y = y * self.data_scale
        if self.maskT is not None:
            y = np.asarray(self.maskT @ y)
        return self.op.adjoint(y.reshape(self.op.shape))

    def apply(self, rho):
        out = [self.data(rho)]
        if "nonneg" in self.blocks:
            out.append(rho)
        if "l1" in self.blocks:
            out.append(rho)
        if "tv" in self.blocks:
            out.extend(self.grad.apply(rho))
        return out

    def adjoint(self, parts):
        acc = self.data_adjoint(parts[0])
        i = 1
        for name in ("nonneg", "l1"):
            if name in self.blocks:
                acc = acc + parts[i]
                i += 1
        if "tv" in self.blocks:
            acc = acc + self.grad.adjoint(parts[i:i + 3])
        return acc


def _power_norm2(apply, adjoint, shape, iters, seed):
    """Estimate ``|A|^2`` (largest eigenvalue of ``A^T A``)."""
    x = np.random.default_rng(seed).standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = adjoint(apply(x))
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return lam


def _norm2_list(parts):
    return float(sum(np.vdot(p, p).real for p in parts))


def _objective(sys, parts, tau, lam_s, lam_tv):
    val = 0.5 * float(np.sum((tau - parts[0]) ** 2))
    i = 1
    if "nonneg" in sys.blocks:
        i += 1
    if "l1" in sys.blocks:
        val += lam_s * float(np.abs(parts[i]).sum())
        i += 1
    if "tv" in sys.blocks:
        val += lam_tv * float(sum(np.abs(p).sum() for p in parts[i:i + 3]))
    return val


def _measurement(sino, op, mask):
    """Rows of the measurement in the layout the data block produces."""
    m = sino
    if m.axis_kind == "time":
        m = resample_to_v(m, op.shape[2])
    d = np.asarray(m.data, dtype=float)
    if d.shape[-1] != op.shape[2]:
        raise ValueError(f"measurement has {d.shape[-1]} v bins, operator expects {op.shape[2]}")
    return d.reshape(-1, op.shape[2])


def depth_binning_matrix(v_axis, num_slices, z_max=None):
    """Sparse ``(num_slices, nv)`` map from u-bins to depth slices.

    Each u-bin ``[u - du/2, u + du/2]`` becomes a depth interval under
    ``z = sqrt(u)``; its content is split over depth slices in proportion
    to overlap, so total albedo is preserved.
    """
    nv, du = v_axis.num_bins, v_axis.bin_width
    u = v_axis.values
    lo = np.sqrt(np.clip(u - du / 2, 0, None))
    hi = np.sqrt(np.clip(u + du / 2, 0, None))
    if z_max is None:
        z_max = float(hi[-1])
    edges = np.linspace(0, z_max, num_slices + 1)
    rows, cols, vals = [], [], []
    for j in range(nv):
        if hi[j] <= lo[j]:
            continue
        a = max(np.searchsorted(edges, lo[j], side="right") - 1, 0)
        b = min(np.searchsorted(edges, hi[j], side="left"), num_slices)
        for s in range(a, b):
            ov = min(hi[j], edges[s + 1]) - max(lo[j], edges[s])
            if ov > 0:
                rows.append(s)
                cols.append(j)
                vals.append(ov / (hi[j] - lo[j]))
    B = sp.coo_matrix((vals, (rows, cols)), shape=(num_slices, nv)).tocsr()
    return B, (0.0, z_max)


def unresample(rho_u, op, num_slices=64):
    """Light-cone volume ``[y, x, u]`` to a depth volume ``[z, y, x]``."""
    B, zr = depth_binning_matrix(op.v_axis, num_slices)
    ny, nx, nv = rho_u.shape
    flat = rho_u.reshape(-1, nv)
    vol = np.asarray(B @ flat.T).reshape(num_slices, ny, nx)
    g = op.grid
    px, py = g.pitch
    ext = ((g.xs[0] - px / 2, g.xs[-1] + px / 2), (g.ys[0] - py / 2, g.ys[-1] + py / 2), zr)
    return VoxelVolume(vol, ext, False)


def admm_reconstruct(sino, op, mask=None, params=None, callback=None):
    """Recover a depth volume from a sinogram (or full confocal transient).

    ``mask=None`` means the measurement is the full grid (``M = I``).  With
    ``params.normalize`` the data block is rescaled to spectral norm
    ``params.data_norm`` and the lambdas are read relative to
    ``max |(MH)^T tau|`` after that scaling, so the minimiser does not
    depend on ``data_norm``; only the speed of the linearised step does.

    Raises
    ------
    Diverged
        If the objective rises for 20 consecutive iterations.
    """
    p = params or AdmmParams()
    if isinstance(sino, ConfocalTransient) and mask is not None:
        raise ValueError("a full confocal transient takes mask=None")
    tau = _measurement(sino, op, mask)
    blocks = ["data"]
    if p.nonneg:
        blocks.append("nonneg")
    if p.lam_s > 0:
        blocks.append("l1")
    if p.lam_tv > 0:
        blocks.append("tv")
    sys = _System(op, mask, tuple(blocks), op.workers)

    if p.normalize:
        h2 = _power_norm2(sys.data, sys.data_adjoint, op.shape, p.power_iters, p.seed)
        if h2 > 0:
            sys.data_scale = p.data_norm / np.sqrt(h2)
    tau_n = tau * sys.data_scale
    lam_s, lam_tv = p.lam_s, p.lam_tv
    if p.relative_lambdas:
        ref = float(np.abs(sys.data_adjoint(tau_n)).max())
        lam_s, lam_tv = lam_s * ref, lam_tv * ref
    mu = p.mu
    nu = p.nu
    if nu is None:
        c2 = _power_norm2(sys.apply, sys.adjoint, op.shape, p.power_iters, p.seed)
        nu = p.safety * mu * c2
    step = mu / nu

    rho = np.zeros(op.shape)
    cr = sys.apply(rho)
    z = [np.zeros_like(c) for c in cr]
    u = [np.zeros_like(c) for c in cr]
    st = AdmmState(rho, z, u, mu, nu, lam_s, lam_tv)
    rises = 0
    converged = False
    for it in range(p.max_iters):
        st.objective.append(_objective(sys, cr, tau_n, lam_s, lam_tv))
        if len(st.objective) > 1 and st.objective[-1] > st.objective[-2]:
            rises += 1
            if rises >= DIVERGENCE_WINDOW and p.raise_on_divergence:
                raise Diverged(f"objective rose for {rises} consecutive iterations at iteration {it}")
        else:
            rises = 0
        # z updates
        i = 0
        z[i] = prox_data(cr[i] + u[i], tau_n, mu)
        i += 1
        if "nonneg" in blocks:
            z[i] = prox_nonneg(cr[i] + u[i])
            i += 1
        if "l1" in blocks:
            z[i] = prox_l1(cr[i] + u[i], lam_s / mu)
            i += 1
        if "tv" in blocks:
            for k in range(i, i + 3):
                z[k] = prox_l1(cr[k] + u[k], lam_tv / mu)
        # dual update
        r = [c - zz for c, zz in zip(cr, z)]
        for k in range(len(u)):
            u[k] = u[k] + r[k]
        # linearised primal step
        g = sys.adjoint([rk + uk for rk, uk in zip(r, u)])
        rho = rho - step * g
        cr = sys.apply(rho)
        st.iteration = it + 1
        denom = max(np.sqrt(_norm2_list(cr)), np.sqrt(_norm2_list(z)), 1e-300)
        res = np.sqrt(_norm2_list([c - zz for c, zz in zip(cr, z)])) / denom
        st.residual.append(float(res))
        if callback is not None:
            callback(st)
        if res < p.tol:
            converged = True
            break
    st.rho = rho
    st.objective.append(_objective(sys, cr, tau_n, lam_s, lam_tv))
    final = prox_nonneg(rho) if p.nonneg else rho
    fit = sys.data(final) / sys.data_scale
    tn = np.linalg.norm(tau)
    consistency = float(np.linalg.norm(fit - tau) / tn) if tn > 0 else 0.0
    vol = unresample(final, op, p.depth_slices)
    vol.info = {
        "iterations": st.iteration,
        "converged": converged,
        "objective": st.objective,
        "residual": st.residual,
        "consistency": consistency,
        "mu": mu,
        "nu": nu,
        "lam_s": lam_s,
        "lam_tv": lam_tv,
        "data_scale": sys.data_scale,
    }
    vol.info["rho_u"] = final
    return vol


def lct_volume_of_scene(scene, op):
    """Light-cone volume of point scatterers snapped to the nearest voxel."""
    g, vax = op.grid, op.v_axis
    px, py = g.pitch
    out = np.zeros(op.shape)
    ix = np.rint((scene.positions[:, 0] - g.xs[0]) / px).astype(int)
    iy = np.rint((scene.positions[:, 1] - g.ys[0]) / py).astype(int)
    ju = np.rint((scene.positions[:, 2] ** 2 - vax.start) / vax.bin_width).astype(int)
    ok = (ix >= 0) & (ix < g.nx) & (iy >= 0) & (iy < g.ny) & (ju >= 0) & (ju < vax.num_bins)
    np.add.at(out, (iy[ok], ix[ok], ju[ok]), scene.albedos[ok])
    return out

