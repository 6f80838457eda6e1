"""On-disk formats: tensor files, scene files and PNG images.

Tensor file layout::

    {"dims": [...], "dtype": "f32le", ...}\\n
    <prod(dims) little-endian float32 values, row-major>

The header is one UTF-8 JSON line and is parsed before the payload is
touched.  Scene files are JSON documents validated against
``data/scene.schema.json``.
"""

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .errors import MalformedHeader, SizeMismatch, UnsupportedDtype
from .forward import (
    ConfocalTransient,
    Scene,
    TimeAxis,
    TransientSinogram,
    WallGrid,
    axis_from_dict,
)
from .geometry import ScanCircle

DTYPE_TAG = "f32le"
_DTYPE = np.dtype("<f4")
# header lines longer than this are rejected without reading further
_MAX_HEADER = 1 << 20


def write_tensor(data, path, **meta):
    """Write ``data`` as float32 with a JSON header; extra ``meta`` is stored."""
    arr = np.ascontiguousarray(np.asarray(data), dtype=_DTYPE)
    header = dict(meta)
    header["dims"] = list(arr.shape)
    header["dtype"] = DTYPE_TAG
    line = json.dumps(header, separators=(",", ":"), sort_keys=True)
    if "\n" in line:
        raise ValueError("header must fit on one line")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(line.encode("utf-8") + b"\n")
        f.write(arr.tobytes(order="C"))
    return path


def read_header(f):
    line = f.readline(_MAX_HEADER)
    if not line.endswith(b"\n"):
        raise MalformedHeader("header line missing or not newline-terminated")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeader(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    dims = header.get("dims")
    if not isinstance(dims, list) or not all(isinstance(d, int) and d >= 0 for d in dims):
        raise MalformedHeader("header 'dims' must be a list of nonnegative integers")
    if header.get("dtype") != DTYPE_TAG:
        raise UnsupportedDtype(f"dtype {header.get('dtype')!r} is not supported (expected {DTYPE_TAG!r})")
    return header


def read_tensor(path):
    """Return ``(array, header)``; the array is float32 with shape ``dims``."""
    with open(path, "rb") as f:
        header = read_header(f)
        payload = f.read()
    n = int(np.prod(header["dims"], dtype=np.int64))
    if len(payload) != 4 * n:
        raise SizeMismatch(f"payload has {len(payload)} bytes, header declares {4 * n}")
    arr = np.frombuffer(payload, dtype=_DTYPE).reshape(header["dims"]).copy()
    return arr, header


# ---------------------------------------------------------------- measurements


def save_measurement(m, path, **extra):
    """Tensor file for a sinogram or confocal transient, geometry in the header."""
    if isinstance(m, TransientSinogram):
        meta = {"kind": "sinogram", "axes": ["angle", m.axis_kind], "circle": m.circle.to_dict()}
    elif isinstance(m, ConfocalTransient):
        meta = {"kind": "confocal", "axes": ["y", "x", m.axis_kind], "grid": m.grid.to_dict()}
    else:
        raise TypeError(f"cannot save {type(m).__name__}")
    meta["units"] = ["rad", "m^2" if m.axis_kind == "v" else "s"] if meta["kind"] == "sinogram" \
        else ["m", "m", "m^2" if m.axis_kind == "v" else "s"]
    meta["axis_kind"] = m.axis_kind
    meta["axis"] = m.axis.to_dict()
    meta.update(extra)
    return write_tensor(m.data, path, **meta)


def load_measurement(path):
    arr, h = read_tensor(path)
    kind = h.get("kind")
    if "axis" not in h:
        raise MalformedHeader("measurement header lacks 'axis'")
    axis = axis_from_dict(h["axis"])
    data = arr.astype(float)
    if kind == "sinogram":
        return TransientSinogram(data, ScanCircle.from_dict(h["circle"]), axis)
    if kind == "confocal":
        return ConfocalTransient(data, WallGrid.from_dict(h["grid"]), axis)
    raise MalformedHeader(f"unknown measurement kind {kind!r}")


# ---------------------------------------------------------------------- scenes


def scene_schema():
    return json.loads(resources.files("c2nlos").joinpath("data/scene.schema.json").read_text())


def bundled_scene_path(name="two_scatterers"):
    return resources.files("c2nlos").joinpath(f"data/{name}.json")


def _time_axis(d):
    if "bin_width" in d:
        return TimeAxis(int(d["num_bins"]), float(d["bin_width"]))
    return TimeAxis.for_range(float(d["max_range"]), int(d["num_bins"]))


def parse_scene(doc, base=None):
    """Validate a scene document and return ``(scene, scan, time_axis)``.

    ``scan`` is a :class:`ScanCircle` or :class:`WallGrid`.
    """
    jsonschema.validate(doc, scene_schema())
    if "scatterers" in doc:
        scene = Scene.from_points((s["position"], s.get("albedo", 1.0)) for s in doc["scatterers"])
    else:
        vol = doc["volume"]
        p = Path(vol["path"])
        if base is not None and not p.is_absolute():
            p = Path(base) / p
        data, _ = read_tensor(p)
        scene = Scene.from_volume(data, tuple(tuple(e) for e in vol["extent"]))
    scan = doc["scan"]
    if "circle" in scan:
        geom = ScanCircle.from_dict(scan["circle"])
    else:
        geom = WallGrid.from_dict(scan["grid"])
    return scene, geom, _time_axis(doc["time_axis"])


def load_scene(path):
    path = Path(str(path))
    with open(path) as f:
        doc = json.load(f)
    return parse_scene(doc, base=path.parent)


def scene_document(scene, scan, time_axis):
    doc = scene.to_dict()
    if isinstance(scan, ScanCircle):
        doc["scan"] = {"circle": scan.to_dict()}
    else:
        doc["scan"] = {"grid": scan.to_dict()}
    doc["time_axis"] = {"num_bins": time_axis.num_bins, "bin_width": time_axis.bin_width}
    return doc


# ---------------------------------------------------------------------- images


def emit_png(image, path, normalization="minmax", vmin=None, vmax=None, flip=True):
    """8-bit grayscale PNG plus a sidecar JSON describing the intensity map.

    ``minmax`` maps the image range to [0, 255] (a constant image becomes
    mid-gray 128); ``fixed`` maps ``[vmin, vmax]`` (default ``[0, max]``)
    and clips.  With ``flip`` the first row is drawn at the bottom so +y
    points up.
    """
    a = np.asarray(getattr(image, "data", image), dtype=float)
    if a.ndim != 2:
        raise ValueError("emit_png expects a 2D image")
    if normalization == "minmax":
        lo, hi = float(a.min()), float(a.max())
        if hi > lo:
            px = np.rint((a - lo) / (hi - lo) * 255)
        else:
            px = np.full(a.shape, 128.0)
    elif normalization == "fixed":
        lo = 0.0 if vmin is None else float(vmin)
        hi = float(a.max()) if vmax is None else float(vmax)
        if hi <= lo:
            hi = lo + 1.0
        px = np.rint(np.clip((a - lo) / (hi - lo), 0, 1) * 255)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    px = px.astype(np.uint8)
    if flip:
        px = px[::-1]
    path = Path(path)
    Image.fromarray(px, mode="L").save(path)
    side = {"normalization": normalization, "min": lo, "max": hi, "origin": "lower" if flip else "upper"}
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(side, f, indent=1)
    return path


def read_png(path):
    """Pixels (rows as stored) and the sidecar metadata, if present."""
    path = Path(path)
    px = np.asarray(Image.open(path))
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else None
    return px, meta
