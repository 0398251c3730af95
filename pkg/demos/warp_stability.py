"""
Does the segmentation survive geometric distortion?
===================================================

Wrapped bodies are rarely scanned lying perfectly straight, so a useful
sanity check is to bend the input and see whether the pipeline's accuracy
moves.  Thin-plate splines give us smooth, controlled distortions: control
points on a 3x4 grid are displaced and every frame is resampled through the
fitted warp — ground truth included, with nearest-neighbor sampling so labels
stay categorical.

Two flavors are compared against the unwarped run:

  * a single warp applied to every frame (a crooked but rigid-ish pose), and
  * a per-frame set of interpolated warps (a slow twist along the z axis).

Run from the repository root:  python3 demos/warp_stability.py
"""

import numpy as np

from wrapseg import PhantomSpec, generate_phantom
from wrapseg.evaluation import evaluate
from wrapseg.grabcut import GrabCutConfig
from wrapseg.pipeline import PipelineConfig, run_pipeline
from wrapseg.tps import default_grid, fit_tps, make_warp_sets, perturb_grid, warp_volume
from wrapseg.tracker import TrackerConfig

spec = PhantomSpec(rng_seed=11, dims=(64, 64, 40), body_margin_frames=4,
                   cap_frames=2, bandage_thickness=(3, 4), metal_disc_radius=2)
vol, gt = generate_phantom(spec)
cfg = PipelineConfig(grabcut=GrabCutConfig(stride=3, soft_wrap=True),
                     tracker=TrackerConfig(auto_init_px=20))


def run(v, g, tag):
    iou = evaluate(run_pipeline(v, cfg=cfg).labels, g).overall
    print(f"  {tag:22s} body IOU {iou:.4f}")
    return iou


print("scoring the same pipeline on distorted copies of one phantom:")
base = run(vol, gt, "unwarped")

# Single warp: control points displaced by up to 3 px (the small phantom is a
# quarter the default frame size, so the default 8 px would be a huge strain).
nx, ny, nz = vol.voxels.shape
grid = default_grid(nx, ny)
f = fit_tps(grid, perturb_grid(grid, 3.0, rng=np.random.default_rng(1)))
run(*warp_volume(vol, gt, f), "single warp")

# Per-frame set: the displacement is split into nz interpolation steps and
# frame k is resampled through step k, so the distortion drifts slice to
# slice.  Order 1 runs the steps forward, order 2 backward.
sets = make_warp_sets(grid, perturb_grid(grid, 3.0, rng=np.random.default_rng(2)), nz)
run(*warp_volume(vol, gt, sets[1]), "per-frame set, forward")
run(*warp_volume(vol, gt, sets[2]), "per-frame set, reverse")

print("the per-frame sets land on the unwarped score (each step is sub-pixel); "
      "the rigid bend costs a few hundredths, and 3 px on a 64-pixel frame is "
      "proportionally a harsher strain than the full-size runs ever see")
