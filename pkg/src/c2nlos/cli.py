"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Every run writes
a manifest JSON recording inputs, configuration, versions and timings.
"""

import argparse
import csv
import json
import platform
import re
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import scipy.fft as sfft

from . import __version__
from . import io as cio
from .errors import C2NlosError
from .forward import (
    TransientSinogram,
    WallGrid,
    add_poisson_noise,
    resample_to_v,
    simulate_confocal,
    simulate_sinogram,
)
from .geometry import CartesianPoint, ScanCircle
from .localize import LocalizeConfig, localize, trilaterate
from .metrics import localization_error, normalize_image, ssim
from .radon2d import (
    auto_focus,
    build_plane_matrix,
    crop_sinogram,
    inverse_radon,
    solve_plane,
    undistort,
)
from .recon3d import AdmmParams, admm_reconstruct, build_lct_operator, sampling_mask


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # let "-0.25,0.4,0" through as a value rather than an unknown option
    _NUMERIC = re.compile(r"^-\d*\.?\d+([eE][-+]?\d+)?(,-?\d*\.?\d+([eE][-+]?\d+)?)*$")

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = self._NUMERIC

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _parser():
    p = _Parser(prog="c2nlos", description="Circular confocal NLOS simulation and reconstruction.")
    p.add_argument("--seed", type=int, default=0, help="seed of the single random generator")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    p.add_argument("--config", type=Path, help="JSON file with per-subcommand option sections")
    p.add_argument("--manifest", type=Path, help="manifest path (default: next to the main output)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a sinogram or confocal transient from a scene file")
    s.add_argument("--scene", type=Path, help="scene JSON, or the name of a bundled scene (default: two_scatterers)")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--photons", type=float, help="add Poisson noise at this many photons per unit")
    s.add_argument("--dark-rate", type=float, default=0.0)
    s.add_argument("--v-bins", type=int, help="resample to a v axis with this many bins")

    s = sub.add_parser("localize", help="Hough-vote scatterer positions")
    s.add_argument("sinogram", type=Path)
    s.add_argument("-k", type=int, default=1)
    s.add_argument("--out", type=Path, required=True, help="detections CSV")
    s.add_argument("--png", type=Path, help="parameter-space slice at the best amplitude")

    s = sub.add_parser("radon2d", help="crop + backprojection image")
    s.add_argument("sinogram", type=Path)
    s.add_argument("--focus-r", type=float, help="assumed sphere radius (default: auto focus)")
    s.add_argument("--filter", choices=["none", "ram-lak"], default="none")
    s.add_argument("--undistort-strength", type=float, default=0.025,
                   help="radial undistortion coefficient; 0 disables")
    s.add_argument("--size", type=int, default=360)
    s.add_argument("--out", type=Path, required=True, help="output prefix (.tensor and .png)")

    s = sub.add_parser("invert2d", help="regularised plane inversion")
    s.add_argument("sinogram", type=Path)
    s.add_argument("--depth", type=float, required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-6)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--extent", type=float, help="plane half-width in meters (default: scan radius)")
    s.add_argument("--v-bins", type=int, default=512)
    s.add_argument("--out", type=Path, required=True, help="output prefix (.tensor and .png)")

    s = sub.add_parser("recon3d", help="ADMM volume reconstruction")
    s.add_argument("sinogram", type=Path)
    s.add_argument("--grid", type=int, default=64, help="lateral voxels per side")
    s.add_argument("--v-bins", type=int, default=128,
                   help="v bins of the operator; coarse pitch keeps the circle-mask mismatch low")
    s.add_argument("--mu", type=float)
    s.add_argument("--nu", type=float)
    s.add_argument("--lam-s", type=float)
    s.add_argument("--lam-tv", type=float)
    s.add_argument("--iters", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--out", type=Path, required=True, help="output prefix (.tensor and MIP PNGs)")

    s = sub.add_parser("trilaterate", help="three-sphere intersection")
    s.add_argument("--times", type=float, nargs=3, required=True, metavar="T", help="round-trip times (s)")
    s.add_argument("--points", type=str, nargs=3, required=True, metavar="X,Y,Z")
    s.add_argument("--out", type=Path, help="JSON result (default: stdout)")

    s = sub.add_parser("metrics", help="SSIM between images or matched localisation error")
    s.add_argument("--image", type=Path)
    s.add_argument("--ref", type=Path)
    s.add_argument("--detections", type=Path)
    s.add_argument("--truth", type=Path)
    s.add_argument("--window", type=int, default=8)
    s.add_argument("--out", type=Path, help="JSON report (default: stdout)")
    return p


# ------------------------------------------------------------------ commands


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config section {name!r} must be an object")
    return sec


def _read_sino(path):
    m = cio.load_measurement(path)
    if not isinstance(m, TransientSinogram):
        raise C2NlosError(f"{path} is not a sinogram")
    return m


def cmd_simulate(a, cfg, rng, man):
    path = a.scene or cio.bundled_scene_path()
    if a.scene and not a.scene.exists() and cio.bundled_scene_path(a.scene.name).is_file():
        path = cio.bundled_scene_path(a.scene.name)
    scene, scan, axis = cio.load_scene(path)
    man["inputs"]["scene"] = str(path)
    if isinstance(scan, ScanCircle):
        m = simulate_sinogram(scene, scan, axis)
    else:
        m = simulate_confocal(scene, scan, axis)
    if a.photons is not None:
        m = add_poisson_noise(m, a.photons, a.dark_rate, rng)
    if a.v_bins:
        m = resample_to_v(m, a.v_bins)
    cio.save_measurement(m, a.out)
    return [a.out]


def cmd_localize(a, cfg, rng, man):
    sino = _read_sino(a.sinogram)
    conf = LocalizeConfig.from_dict(_section(cfg, "localize"))
    dets, vol = localize(sino, a.k, conf, return_volume=True)
    with open(a.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "z", "score", "alpha", "beta", "gamma"])
        for d in dets:
            p = d.position
            w.writerow([repr(p.x), repr(p.y), repr(p.z), repr(d.score),
                        repr(d.params.alpha), repr(d.params.beta), repr(d.params.gamma)])
    outs = [a.out]
    if a.png:
        best = int(np.unravel_index(np.argmax(vol.data), vol.data.shape)[0])
        cio.emit_png(vol.data[best], a.png, flip=False)
        outs.append(a.png)
    return outs


def cmd_radon2d(a, cfg, rng, man):
    sino = _read_sino(a.sinogram)
    if sino.axis_kind == "time":
        sino = resample_to_v(sino)
    sec = _section(cfg, "radon2d")
    r = a.focus_r if a.focus_r is not None else sec.get("focus_r")
    if r is None:
        r = auto_focus(sino)
    man["config"]["focus_r"] = r
    img = inverse_radon(crop_sinogram(sino, r, margin=sec.get("margin", 0.0)), a.filter, a.size)
    if a.undistort_strength:
        img = undistort(img, a.undistort_strength)
    t = a.out.with_suffix(".tensor")
    cio.write_tensor(img.data, t, kind="image", provenance=img.provenance, pitch=img.pitch,
                     scale=img.scale, extent=img.extent, axes=["y", "x"])
    png = cio.emit_png(normalize_image(img.data), a.out.with_suffix(".png"), "fixed", 0.0, 1.0)
    return [t, png]


def cmd_invert2d(a, cfg, rng, man):
    sino = _read_sino(a.sinogram)
    if sino.axis_kind != "time":
        raise C2NlosError("invert2d needs a time-axis sinogram to build the plane system")
    extent = a.extent if a.extent is not None else sino.circle.radius
    sys_ = build_plane_matrix(a.depth, sino.circle, a.resolution, extent, sino.axis, a.v_bins)
    img = solve_plane(sino, sys_, lam=a.lam)
    man["solver"] = {k: v for k, v in img.info.items()}
    t = a.out.with_suffix(".tensor")
    cio.write_tensor(img.data, t, kind="image", provenance=img.provenance, pitch=img.pitch,
                     depth=a.depth, axes=["y", "x"])
    png = cio.emit_png(normalize_image(img.data), a.out.with_suffix(".png"), "fixed", 0.0, 1.0)
    return [t, png]


def cmd_recon3d(a, cfg, rng, man):
    sino = _read_sino(a.sinogram)
    if sino.axis_kind != "time":
        raise C2NlosError("recon3d needs a time-axis sinogram")
    opts = dict(_section(cfg, "recon3d"))
    for name, val in (("mu", a.mu), ("nu", a.nu), ("lam_s", a.lam_s), ("lam_tv", a.lam_tv),
                      ("max_iters", a.iters), ("tol", a.tol)):
        if val is not None:
            opts[name] = val
    params = AdmmParams.from_dict(opts)
    c = sino.circle
    grid = WallGrid(a.grid, a.grid, 2 * c.radius, center=(c.center.x, c.center.y))
    op = build_lct_operator(grid, sino.axis, a.v_bins)
    vol = admm_reconstruct(sino, op, sampling_mask(grid, c), params)
    man["solver"] = {k: vol.info[k] for k in ("iterations", "converged", "consistency", "mu", "nu", "lam_s", "lam_tv")}
    t = a.out.with_suffix(".tensor")
    cio.write_tensor(vol.data, t, kind="volume", axes=["z", "y", "x"], extent=[list(e) for e in vol.extent])
    outs = [t]
    for view in ("front", "top", "side"):
        p = a.out.parent / f"{a.out.name}_{view}.png"
        cio.emit_png(vol.mip(view), p)
        outs.append(p)
    return outs


def _point(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--points: cannot parse {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"--points: expected X,Y,Z, got {text!r}")
    return vals


def _emit_json(obj, path):
    text = json.dumps(obj, indent=1)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


def cmd_trilaterate(a, cfg, rng, man):
    pts = [_point(t) for t in a.points]
    p = trilaterate(a.times, pts)
    _emit_json({"x": p.x, "y": p.y, "z": p.z}, a.out)
    return [a.out] if a.out else []


def _read_points_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [CartesianPoint(float(r["x"]), float(r["y"]), float(r["z"])) for r in rows]


def _read_image(path):
    if path.suffix.lower() == ".png":
        px, _ = cio.read_png(path)
        return px.astype(float)
    arr, _ = cio.read_tensor(path)
    return arr.astype(float)


def cmd_metrics(a, cfg, rng, man):
    report = {}
    if a.image or a.ref:
        if not (a.image and a.ref):
            raise UsageError("metrics: --image and --ref go together")
        report["ssim"] = ssim(normalize_image(_read_image(a.image)), normalize_image(_read_image(a.ref)), a.window)
    if a.detections or a.truth:
        if not (a.detections and a.truth):
            raise UsageError("metrics: --detections and --truth go together")
        e = localization_error(_read_points_csv(a.detections), _read_points_csv(a.truth))
        report["mean_error"] = {"x": e[0], "y": e[1], "z": e[2]}
    if not report:
        raise UsageError("metrics: give --image/--ref or --detections/--truth")
    _emit_json(report, a.out)
    return [a.out] if a.out else []


COMMANDS = {
    "simulate": cmd_simulate,
    "localize": cmd_localize,
    "radon2d": cmd_radon2d,
    "invert2d": cmd_invert2d,
    "recon3d": cmd_recon3d,
    "trilaterate": cmd_trilaterate,
    "metrics": cmd_metrics,
}


def _versions():
    return {"c2nlos": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _manifest_path(a, outputs):
    if a.manifest:
        return a.manifest
    if outputs:
        first = Path(outputs[0])
        return first.parent / (first.stem + ".manifest.json")
    return Path(f"c2nlos_{a.command}.manifest.json")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _parser()
    try:
        a = parser.parse_args(argv)
        if a.command is None:
            raise UsageError(parser.format_usage().strip())
        if a.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = {}
        if a.config:
            try:
                cfg = json.loads(a.config.read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise UsageError(f"--config: {e}") from None
            if not isinstance(cfg, dict):
                raise UsageError("--config must hold a JSON object")
    except UsageError as e:
        msg = str(e)
        print(msg if msg.startswith(("usage", "c2nlos")) else f"c2nlos: error: {msg}", file=sys.stderr)
        if not argv:
            parser.print_help(sys.stderr)
        return 1

    rng = np.random.default_rng(a.seed)
    man = {
        "command": a.command,
        "argv": argv,
        "inputs": {},
        "config": cfg.get(a.command, {}) if isinstance(cfg, dict) else {},
        "seed": a.seed,
        "threads": a.threads,
        "versions": _versions(),
    }
    t0 = time.perf_counter()
    try:
        with sfft.set_workers(a.threads):
            outputs = COMMANDS[a.command](a, cfg, rng, man)
    except UsageError as e:
        print(f"c2nlos: error: {e}", file=sys.stderr)
        return 1
    except (C2NlosError, OSError, ValueError, MemoryError) as e:
        print(f"c2nlos {a.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    man["timings"] = {"total_seconds": time.perf_counter() - t0}
    man["outputs"] = [str(o) for o in outputs]
    for k, v in vars(a).items():
        if k not in ("config", "manifest") and v is not None:
            man["inputs"].setdefault(k, str(v) if isinstance(v, Path) else v)
    mp = _manifest_path(a, outputs)
    mp.write_text(json.dumps(man, indent=1, default=str) + "\n")
    return 0
