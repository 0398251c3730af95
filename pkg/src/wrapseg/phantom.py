"""Seeded procedural phantom of a wrapped body with exact ground truth.

The phantom mimics the structure the pipeline exploits: a soft-tissue body
(with bone cores) strictly inside a closed bandage shell, an air-filled
delamination pocket between the glued liner and the outer wrap, metal
amulets buried in the bone, a support object underneath touching only
exterior air, and optional streak artifacts radiating from the metal.

All randomness flows through one generator seeded from PhantomSpec.rng_seed,
consumed in a fixed order, so equal specs produce byte-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume import (
    BANDAGE,
    BODY,
    EXTERIOR_AIR,
    HOLLOW,
    HU_MAX,
    HU_MIN,
    METAL,
    SUPPORT,
    LabelVolume,
    Volume,
)

AIR_HU = -1000.0

# (t along body axis, rx, ry) as fractions of min(nx, ny); piecewise linear.
# Feet at low t, head at high t.
DEFAULT_BODY_PROFILE = (
    (0.00, 0.055, 0.040),
    (0.22, 0.150, 0.085),
    (0.50, 0.200, 0.115),
    (0.68, 0.180, 0.110),
    (0.80, 0.100, 0.100),
    (1.00, 0.045, 0.040),
)


@dataclass(frozen=True)
class PhantomSpec:
    """Everything that determines a phantom; same spec + seed => same bytes."""

    rng_seed: int = 0
    dims: tuple[int, int, int] = (256, 256, 120)
    spacing: tuple[float, float, float] = (1.0, 1.0, 2.5)

    body_profile: tuple[tuple[float, float, float], ...] = DEFAULT_BODY_PROFILE
    body_margin_frames: int = 8     # frames at each volume end without body
    cap_frames: int = 4             # bandage-only frames closing the shell
    bone_scale: float = 0.45

    bandage_thickness: tuple[int, int] = (8, 12)  # voxels, sampled per frame
    liner_px: int = 3               # wrap layer glued to the skin, under the gap
    hollow_gap_px: int = 1          # delamination gap between wrap layers
    hollow_gap_probability: float = 0.7
    bandage_gap_frames: tuple[int, ...] = ()  # frames where the shell is slit open

    metal_disc_count: int = 3
    metal_hu: int = 2600
    metal_disc_radius: int = 4

    support_shape: str = "slab"  # "slab" | "cradle" | "none"
    support_hu: tuple[float, float] = (-500.0, -400.0)

    # mean +/- half-range of the per-voxel uniform texture; the dried body
    # sits far above the wrap so the wrap/body edge dwarfs every other step
    bandage_tex: tuple[float, float] = (-350.0, 80.0)
    tissue_tex: tuple[float, float] = (1200.0, 60.0)
    bone_tex: tuple[float, float] = (1500.0, 80.0)

    streak_intensity: float = 350.0  # additive streak amplitude at the disc
    noise_sigma: float = 12.0

    distractor_blob_count: int = 0  # floating debris for tracking ablations


@dataclass(frozen=True)
class PhantomInfo:
    """Construction metadata exposed for tests and demos."""

    body_z_range: tuple[int, int]          # inclusive frame range containing body
    metal_centers: tuple[tuple[int, int, int], ...]
    support_box: tuple[int, int, int, int] | None  # x0, y0, x1, y1 (exclusive)
    hollow_frames: tuple[int, ...]
    distractor_mask: np.ndarray            # bool (nx, ny, nz)


def _interp_profile(profile, t: float) -> tuple[float, float]:
    pts = sorted(profile)
    if t <= pts[0][0]:
        return pts[0][1], pts[0][2]
    for (t0, rx0, ry0), (t1, rx1, ry1) in zip(pts, pts[1:]):
        if t <= t1:
            u = (t - t0) / (t1 - t0)
            return rx0 + u * (rx1 - rx0), ry0 + u * (ry1 - ry0)
    return pts[-1][1], pts[-1][2]


def _ellipse(xx, yy, cx, cy, rx, ry):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def support_geometry(spec: PhantomSpec):
    """Support cross-section mask (constant across frames), or None."""
    if spec.support_shape == "none":
        return None, None
    nx, ny, _ = spec.dims
    cx = nx / 2.0
    w = int(round(0.55 * nx))
    h = max(5, int(round(0.07 * ny)))
    y0 = int(round(0.78 * ny))
    x0 = int(round(cx - w / 2))
    mask = np.zeros((nx, ny), dtype=bool)
    mask[x0:x0 + w, y0:y0 + h] = True
    if spec.support_shape == "cradle":
        xx, yy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        notch = _ellipse(xx, yy, cx, y0, 0.22 * nx, 0.8 * h)
        mask &= ~notch
    elif spec.support_shape != "slab":
        raise ValueError(f"unknown support shape {spec.support_shape!r}")
    return mask, (x0, y0, x0 + w, y0 + h)


def support_template(spec: PhantomSpec, pad: int = 4) -> np.ndarray | None:
    """The known support cross-section, padded with air, for template matching."""
    mask, box = support_geometry(spec)
    if mask is None:
        return None
    x0, y0, x1, y1 = box
    crop = mask[x0:x1, y0:y1]
    out = np.zeros((crop.shape[0] + 2 * pad, crop.shape[1] + 2 * pad), dtype=bool)
    out[pad:-pad, pad:-pad] = crop
    return out


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, LabelVolume]:
    vol, gt, _ = _build(spec)
    return vol, gt


def phantom_info(spec: PhantomSpec) -> PhantomInfo:
    _, _, info = _build(spec)
    return info


def _build(spec: PhantomSpec):
    nx, ny, nz = spec.dims
    if min(spec.dims) < 32:
        raise ValueError(f"dims {spec.dims} too small for the bandage shell (min 32 per axis)")
    rng = np.random.default_rng(spec.rng_seed)
    cx, cy = nx / 2.0, ny / 2.0 - round(0.03 * ny)
    scale = float(min(nx, ny))

    z0 = spec.body_margin_frames
    z1 = nz - 1 - spec.body_margin_frames
    if z1 <= z0:
        raise ValueError("volume too short for the body margins")
    gap = spec.hollow_gap_px
    tmin, tmax = spec.bandage_thickness

    # -- fixed-order random draws -------------------------------------------
    thickness = rng.integers(tmin, tmax + 1, nz)
    has_gap = rng.random(nz) < spec.hollow_gap_probability

    # frames whose bone core can swallow a disc (plus jitter) on both of the
    # two frames the disc spans; discs outside bone would touch soft tissue
    jmax = 2.0 * scale / 256.0
    need = spec.metal_disc_radius + jmax + 1.0
    def _bone_min(z):
        rxf, ryf = _interp_profile(spec.body_profile, (z - z0) / (z1 - z0))
        return min(rxf, ryf) * scale * spec.bone_scale
    fit = [z for z in range(z0 + 1, z1 - 1)
           if min(_bone_min(z), _bone_min(z + 1)) >= need]
    za, zb = (min(fit), max(fit)) if fit else (z0 + 1, z1 - 2)

    metal = []
    for i in range(spec.metal_disc_count):
        t = (i + 1) / (spec.metal_disc_count + 1)
        zm = int(round(z0 + t * (z1 - z0))) + int(rng.integers(-3, 4))
        zm = min(max(zm, za), zb)
        # amulets buried in the bone core, near the body axis
        jx, jy = rng.uniform(-2.0, 2.0, 2) * scale / 256.0
        metal.append([zm, float(jx), float(jy)])
    # amulets share the axis, so keep >=1 empty frame between them or the
    # two-frame discs would fuse into one connected component
    if spec.metal_disc_count:
        if (spec.metal_disc_count - 1) * 3 > zb - za:
            za, zb = z0 + 1, z1 - 2  # bone window too short; spread out anyway
        if (spec.metal_disc_count - 1) * 3 > zb - za:
            raise ValueError("volume too short to separate the metal discs")
        for i in range(1, spec.metal_disc_count):
            metal[i][0] = max(metal[i][0], metal[i - 1][0] + 3)
        metal[-1][0] = min(metal[-1][0], zb)
        for i in range(spec.metal_disc_count - 2, -1, -1):
            metal[i][0] = min(metal[i][0], metal[i + 1][0] - 3)

    support_mask, support_box = support_geometry(spec)

    blob_specs = []
    for _ in range(spec.distractor_blob_count):
        for _attempt in range(50):
            zb = int(rng.integers(z0, z1 + 1))
            theta = float(rng.uniform(0, 2 * math.pi))
            reach = float(rng.uniform(8, 24))
            radius = int(rng.integers(3, 5))
            span = int(rng.integers(1, 3))
            rxb, ryb = _interp_profile(spec.body_profile, (zb - z0) / (z1 - z0))
            rx_out = rxb * scale + spec.liner_px + gap + tmax
            ry_out = ryb * scale + spec.liner_px + gap + tmax
            er = rx_out * ry_out / math.hypot(ry_out * math.cos(theta), rx_out * math.sin(theta))
            bx = cx + (er + reach + radius) * math.cos(theta)
            by = cy + (er + reach + radius) * math.sin(theta)
            if not (radius + 4 <= bx < nx - radius - 4 and radius + 4 <= by < ny - radius - 4):
                continue
            if support_box is not None:
                sx0, sy0, sx1, sy1 = support_box
                if sx0 - 6 <= bx <= sx1 + 6 and by >= sy0 - radius - 6:
                    continue
            blob_specs.append((zb, span, bx, by, radius))
            break

    streak_phases = rng.uniform(0, 2 * math.pi, max(1, spec.metal_disc_count))

    # -- per-frame assembly -------------------------------------------------
    xx, yy = np.meshgrid(np.arange(nx, dtype=np.float64),
                         np.arange(ny, dtype=np.float64), indexing="ij")
    hu = np.empty((nx, ny, nz), dtype=np.float64)
    labels = np.empty((nx, ny, nz), dtype=np.uint8)
    hollow_frames = []
    metal_centers = []
    blob_vol = np.zeros((nx, ny, nz), dtype=bool)

    metal_by_frame: dict[int, list[tuple[float, float, int]]] = {}
    for i, (zm, jx, jy) in enumerate(metal):
        mx, my = cx + jx, cy + jy
        metal_centers.append((int(round(mx)), int(round(my)), zm))
        for dz in (0, 1):
            metal_by_frame.setdefault(zm + dz, []).append((mx, my, i))

    blob_by_frame: dict[int, list[tuple[float, float, int]]] = {}
    for zb, span, bx, by, radius in blob_specs:
        for dz in range(span):
            if zb + dz < nz:
                blob_by_frame.setdefault(zb + dz, []).append((bx, by, radius))

    for z in range(nz):
        frame_hu = np.full((nx, ny), AIR_HU)
        frame_lab = np.full((nx, ny), EXTERIOR_AIR, dtype=np.uint8)

        band_tex = rng.uniform(spec.bandage_tex[0] - spec.bandage_tex[1],
                               spec.bandage_tex[0] + spec.bandage_tex[1], (nx, ny))
        tis_tex = rng.uniform(spec.tissue_tex[0] - spec.tissue_tex[1],
                              spec.tissue_tex[0] + spec.tissue_tex[1], (nx, ny))
        bone_tex = rng.uniform(spec.bone_tex[0] - spec.bone_tex[1],
                               spec.bone_tex[0] + spec.bone_tex[1], (nx, ny))
        sup_tex = rng.uniform(spec.support_hu[0], spec.support_hu[1], (nx, ny))

        if support_mask is not None:
            frame_hu[support_mask] = sup_tex[support_mask]
            frame_lab[support_mask] = SUPPORT

        t_band = int(thickness[z])
        in_body = z0 <= z <= z1
        in_cap = (z0 - spec.cap_frames <= z < z0) or (z1 < z <= z1 + spec.cap_frames)

        if in_body:
            u = (z - z0) / (z1 - z0)
            rxf, ryf = _interp_profile(spec.body_profile, u)
            rx, ry = rxf * scale, ryf * scale
            body = _ellipse(xx, yy, cx, cy, rx, ry)
            lin = spec.liner_px
            liner_out = _ellipse(xx, yy, cx, cy, rx + lin, ry + lin)
            gap_out = _ellipse(xx, yy, cx, cy, rx + lin + gap, ry + lin + gap)
            outer = _ellipse(xx, yy, cx, cy, rx + lin + gap + t_band,
                             ry + lin + gap + t_band)
            # delamination opens between the glued liner and the outer shell,
            # so the pocket only ever touches wrap material
            hollow = (gap_out & ~liner_out & (yy < cy)) if has_gap[z] else np.zeros_like(body)
            bandage = outer & ~body & ~hollow
            if z in spec.bandage_gap_frames:
                # slit the shell open at the top so outside air reaches the body
                slit = (np.abs(xx - cx) < max(3.0, 0.06 * rx)) & (yy < cy)
                bandage &= ~slit
                hollow &= ~slit
            if hollow.any():
                hollow_frames.append(z)

            frame_hu[bandage] = band_tex[bandage]
            frame_lab[bandage] = BANDAGE
            frame_lab[hollow] = HOLLOW  # HU stays air
            frame_hu[body] = tis_tex[body]
            frame_lab[body] = BODY
            if min(rx, ry) * spec.bone_scale >= 2.0:
                bone = _ellipse(xx, yy, cx, cy, rx * spec.bone_scale, ry * spec.bone_scale)
                frame_hu[bone] = bone_tex[bone]
            for mx, my, _i in metal_by_frame.get(z, ()):
                disc = (xx - mx) ** 2 + (yy - my) ** 2 <= spec.metal_disc_radius ** 2
                frame_hu[disc] = float(spec.metal_hu)
                frame_lab[disc] = METAL
        elif in_cap:
            # shell closes over the body ends
            edge = z0 if z < z0 else z1
            rxf, ryf = _interp_profile(spec.body_profile, 0.0 if z < z0 else 1.0)
            shrink = 1.0 - abs(z - edge) / (spec.cap_frames + 1)
            rx = max(3.0, (rxf * scale + spec.liner_px + gap + t_band) * shrink)
            ry = max(3.0, (ryf * scale + spec.liner_px + gap + t_band) * shrink)
            capm = _ellipse(xx, yy, cx, cy, rx, ry)
            frame_hu[capm] = band_tex[capm]
            frame_lab[capm] = BANDAGE

        for bx, by, radius in blob_by_frame.get(z, ()):
            blob = (xx - bx) ** 2 + (yy - by) ** 2 <= radius ** 2
            frame_hu[blob] = tis_tex[blob]
            frame_lab[blob] = BANDAGE
            blob_vol[:, :, z] |= blob

        if spec.streak_intensity > 0:
            for mx, my, i in metal_by_frame.get(z, ()):
                r = np.hypot(xx - mx, yy - my)
                phi = np.arctan2(yy - my, xx - mx)
                # bright-biased so wrap material never dips below the air range
                streak = (spec.streak_intensity
                          * (0.55 + 0.45 * np.sin(24.0 * phi + streak_phases[i]))
                          * np.exp(-r / 25.0))
                not_metal = frame_lab != METAL
                frame_hu[not_metal] += streak[not_metal]

        hu[:, :, z] = frame_hu
        labels[:, :, z] = frame_lab

    if spec.noise_sigma > 0:
        hu += rng.normal(0.0, spec.noise_sigma, hu.shape)

    voxels = np.clip(np.floor(hu + 0.5), HU_MIN, HU_MAX).astype(np.int16)
    vol = Volume(voxels, spec.spacing)
    gt = LabelVolume(labels, spec.spacing)
    info = PhantomInfo(
        body_z_range=(z0, z1),
        metal_centers=tuple(metal_centers),
        support_box=support_box,
        hollow_frames=tuple(hollow_frames),
        distractor_mask=blob_vol,
    )
    return vol, gt, info
