"""Recover two hidden planar patches in 3D with ADMM.

The bundled scene: a 0.5 m circle inscribed in a 64x64 wall grid sees
two patches at 0.6 m and 1.0 m.  The reconstruction is summarised by
its per-slice energy and three maximum-intensity projections.
"""

from pathlib import Path

import numpy as np

from c2nlos.forward import WallGrid, simulate_sinogram
from c2nlos.io import bundled_scene_path, emit_png, load_scene
from c2nlos.recon3d import AdmmParams, admm_reconstruct, build_lct_operator, sampling_mask

out = Path("out")
out.mkdir(exist_ok=True)

scene, circle, axis = load_scene(bundled_scene_path("two_planes"))
grid = WallGrid(64, 64, 2 * circle.radius)
sino = simulate_sinogram(scene, circle, axis)

op = build_lct_operator(grid, axis, 128)
vol = admm_reconstruct(sino, op, sampling_mask(grid, circle), AdmmParams(max_iters=200))
print(f"{vol.info['iterations']} iterations, data consistency {vol.info['consistency']:.3f}")

e = vol.slice_energy()
for k in np.argsort(e)[::-1][:4]:
    print(f"slice {k:2d}  depth {vol.depth_centers()[k]:.3f} m  energy {e[k]:.3g}")
for view in ("front", "top", "side"):
    emit_png(vol.mip(view), out / f"patches_{view}.png")
