"""
Tour of the synthetic wrapped-body scan
=======================================

Real scans of wrapped bodies are scarce and cannot be redistributed, so the
package ships a procedural stand-in with exact per-voxel ground truth.  This
script generates the small preset, prints what is inside, and renders a few
slices so you can see the geometry the segmentation stages have to untangle.

Run from the repository root:  python3 demos/phantom_tour.py
"""

from pathlib import Path

import numpy as np

from wrapseg import (BANDAGE, BODY, EXTERIOR_AIR, HOLLOW, METAL, SUPPORT,
                     PhantomSpec, generate_phantom, get_slice, save_volume,
                     window_to_image)
from wrapseg.volume import label_overlay, save_labels, save_png

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# The small preset trades realism for speed: 64x64x40 voxels instead of the
# default 256x256x120, with a thinner bandage shell and smaller metal discs.
spec = PhantomSpec(rng_seed=11, dims=(64, 64, 40), body_margin_frames=4,
                   cap_frames=2, bandage_thickness=(3, 4), metal_disc_radius=2)
vol, gt = generate_phantom(spec)
save_volume(vol, OUT / "phantom.mvol")
save_labels(gt, OUT / "phantom_gt.mvol")

print(f"volume {vol.voxels.shape}, spacing {vol.spacing} mm")
print(f"HU range [{vol.voxels.min()}, {vol.voxels.max()}]")

names = {EXTERIOR_AIR: "exterior air", SUPPORT: "support", BANDAGE: "bandage",
         BODY: "body", METAL: "metal", HOLLOW: "hollow gap"}
total = vol.voxels.size
for code, name in names.items():
    n = int(np.sum(gt.labels == code))
    print(f"  {name:13s} {n:8d} voxels  ({100 * n / total:5.2f}%)")

# Body cross-sections shrink toward the volume ends; the first and last few
# frames hold no body at all (margin), then bandage-only caps close the shell.
areas = np.sum(gt.labels == BODY, axis=(0, 1))
print("per-frame body area:", " ".join(str(a) for a in areas))

# Render a mid-volume axial slice three ways: raw HU with a soft-tissue
# window, the ground truth painted over it, and a sagittal cut showing how
# the shell wraps the body along z.
mid = vol.voxels.shape[2] // 2
hu = get_slice(vol, "axial", mid)
gray = window_to_image(hu, 0.0, 2000.0)
save_png(gray, OUT / "axial_hu.png")
save_png(label_overlay(gray, get_slice(gt, "axial", mid)), OUT / "axial_gt.png")

sag = window_to_image(get_slice(vol, "sagittal", vol.voxels.shape[0] // 2),
                      0.0, 2000.0)
save_png(sag, OUT / "sagittal_hu.png")
print(f"wrote phantom.mvol, phantom_gt.mvol and three PNGs to {OUT}/")
