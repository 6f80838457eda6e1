"""Image a letter Z lying on a sphere around the scan circle.

Two reconstructions from the same sinogram: filtered spherical Radon
inversion at the true radius and a focus sweep over nearby radii.
"""

from pathlib import Path

import numpy as np

from c2nlos.forward import Scene, TimeAxis, resample_to_v, simulate_sinogram
from c2nlos.geometry import ScanCircle
from c2nlos.io import emit_png
from c2nlos.metrics import normalize_image, ssim
from c2nlos.radon2d import crop_sinogram, inverse_radon, project_scene, refocus

out = Path("out")
out.mkdir(exist_ok=True)

n, half, width = 300, 0.35, 0.06
g = (np.arange(n) + 0.5) / n * 2 - 1
X, Y = np.meshgrid(g, g)
z = ((np.abs(np.abs(Y) - half) < width / 2) | (np.abs(X - Y) < width / np.sqrt(2))) & (np.abs(X) <= half)
xy = np.column_stack([X[z], Y[z]]) * 0.6
scene = Scene(np.column_stack([xy, np.sqrt(1 - (xy**2).sum(1))]))

circle = ScanCircle(0.5, 360)
sino = resample_to_v(simulate_sinogram(scene, circle, TimeAxis.for_range(3.0, 2048)))

img = inverse_radon(crop_sinogram(sino, 1.0), "ram-lak", out_size=180)
ref = project_scene(scene, circle, 180, img.extent)
print(f"SSIM vs ground truth: {ssim(normalize_image(img.data), normalize_image(ref.data)):.3f}")
emit_png(img.data, out / "z_radon.png")
emit_png(ref.data, out / "z_truth.png")

radii = np.linspace(0.8, 1.2, 5)
for r, im in zip(radii, refocus(sino, radii, "ram-lak", out_size=180, extent=img.extent)):
    print(f"radius {r:.2f}: SSIM {ssim(normalize_image(im.data), normalize_image(ref.data)):.3f}")
    emit_png(im.data, out / f"z_focus_{r:.2f}.png")
