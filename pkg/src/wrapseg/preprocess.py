"""Stage 1: exterior air, support, metal, and hollow-space labeling.

Works frame by frame on the raw HU volume.  The air threshold is chosen
once per volume from the smoothed HU histogram; everything else derives
from that threshold plus known shapes (support template, metal HU floor).
Voxels not claimed here stay UNKNOWN for the later stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .volume import (
    BANDAGE,
    BODY,
    EXTERIOR_AIR,
    HOLLOW,
    HU_MIN,
    METAL,
    SUPPORT,
    UNKNOWN,
    LabelVolume,
    Volume,
)

FOUR = ndimage.generate_binary_structure(2, 1)
TWENTYSIX = ndimage.generate_binary_structure(3, 3)
HOUGH_THETA_STEP_DEG = 1.0


@dataclass(frozen=True)
class PreprocessConfig:
    hist_bin_width: float = 10.0          # HU per histogram bin
    smooth_window: int = 5                # moving-average width, in bins
    fallback_threshold: float = -500.0    # used when the histogram is unimodal
    metal_threshold: float = 2500.0
    template: np.ndarray | None = None    # bool (w, h) support cross-section
    match_threshold: float = 0.6
    hough_tolerance_deg: float = 5.0      # line direction within tol of vertical
    min_metal_voxels: int = 8

    def __post_init__(self):
        if self.hist_bin_width <= 0:
            raise ValueError("hist_bin_width must be positive")
        if not 0.0 < self.match_threshold <= 1.0:
            raise ValueError("match_threshold must be in (0, 1]")
        if not 0.0 <= self.hough_tolerance_deg <= 15.0:
            raise ValueError("hough_tolerance_deg must be in [0, 15]")
        if self.template is not None:
            t = np.asarray(self.template, dtype=bool)
            if t.ndim != 2 or not t.any() or t.all():
                raise ValueError("template must be a 2D mask with both values present")
            object.__setattr__(self, "template", t)


@dataclass(frozen=True)
class PreprocessResult:
    labels: LabelVolume
    air_threshold: float
    support_boxes: tuple[tuple[int, int, int, int] | None, ...]  # per frame
    metal_components: tuple[np.ndarray, ...]  # each (n, 3) voxel indices


def choose_air_threshold(v: Volume, cfg: PreprocessConfig) -> float:
    """HU at the deepest smoothed-histogram valley between the two tallest peaks."""
    w = cfg.hist_bin_width
    lo = float(HU_MIN)
    hi = float(v.voxels.max()) + w
    edges = np.arange(lo, hi + w, w)
    counts, _ = np.histogram(v.voxels, bins=edges)
    kernel = np.ones(cfg.smooth_window) / cfg.smooth_window
    smooth = np.convolve(counts.astype(np.float64), kernel, mode="same")

    # zero-pad so a mass at the first/last bin still counts as a peak
    peaks, _ = signal.find_peaks(np.concatenate(([0.0], smooth, [0.0])))
    peaks -= 1
    if len(peaks) < 2:
        return cfg.fallback_threshold
    top2 = peaks[np.argsort(smooth[peaks])[-2:]]
    i, j = int(top2.min()), int(top2.max())
    between = smooth[i + 1:j]
    if between.size == 0:
        return cfg.fallback_threshold
    # The valley is a region, not a bin: counts near the minimum differ only
    # by sampling noise (resampled inputs smear thin boundary ramps across
    # it), so merge the contiguous near-minimum run and take its middle.
    vmin = float(between.min())
    tol = max(3.0 * math.sqrt(vmin + 1.0), 0.25 * vmin)
    low = between <= vmin + tol
    k = int(np.argmin(between))
    lo, hi = k, k
    while lo > 0 and low[lo - 1]:
        lo -= 1
    while hi < len(low) - 1 and low[hi + 1]:
        hi += 1
    valley = i + 1 + (lo + hi) // 2
    return float(edges[valley] + w / 2.0)


def segment_exterior_air(frame: np.ndarray, threshold: float) -> np.ndarray:
    """4-connected sub-threshold components touching the frame border."""
    air = frame < threshold
    if not air.any():
        return air
    lab, _ = ndimage.label(air, structure=FOUR)
    border = np.concatenate([lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]])
    ids = np.unique(border[border > 0])
    if ids.size == 0:
        return np.zeros_like(air)
    return np.isin(lab, ids)


def _vertical_hough_window(
    air: np.ndarray, tol_deg: float, min_votes: int
) -> tuple[int, int] | None:
    """x-extent of near-vertical edges of the air/non-air boundary, or None."""
    edge = ndimage.binary_dilation(air, structure=FOUR) & ~air
    xs, ys = np.nonzero(edge)
    if xs.size < min_votes:
        return None
    hits = []
    n_steps = int(round(tol_deg / HOUGH_THETA_STEP_DEG))
    for k in range(-n_steps, n_steps + 1):
        theta = math.radians(90.0 + k * HOUGH_THETA_STEP_DEG)  # line direction
        # signed distance from origin along the line normal
        rho = np.rint(xs * math.sin(theta) - ys * math.cos(theta)).astype(np.int64)
        shifted = rho - rho.min()
        votes = np.bincount(shifted)
        good = np.nonzero(votes >= min_votes)[0]
        hits.extend((g + rho.min() for g in good))
    if not hits:
        return None
    return int(min(hits)), int(max(hits))


def _ncc_valid(window: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-normalized cross-correlation, 'valid' positions only."""
    t = template.astype(np.float64)
    t = t - t.mean()
    t_norm = math.sqrt((t * t).sum())
    if t_norm == 0:
        raise ValueError("template has zero variance")
    f = window.astype(np.float64)
    ones = np.ones_like(t)
    n = t.size
    cross = signal.fftconvolve(f, t[::-1, ::-1], mode="valid")
    local_sum = signal.fftconvolve(f, ones, mode="valid")
    local_sq = signal.fftconvolve(f * f, ones, mode="valid")
    # t already zero-mean, so subtracting the patch mean only affects the norm
    var = local_sq - local_sum * local_sum / n
    var = np.maximum(var, 0.0)
    denom = np.sqrt(var) * t_norm
    out = np.zeros_like(cross)
    np.divide(cross, denom, out=out, where=denom > 1e-12)
    return np.clip(out, -1.0, 1.0)


def detect_support(
    frame: np.ndarray, air_mask: np.ndarray, cfg: PreprocessConfig
) -> tuple[np.ndarray, tuple[int, int, int, int] | None]:
    """Template match inside the Hough-restricted window.

    Returns (mask, box); box is the placed template footprint extent
    (x0, y0, x1, y1), exclusive on the high side.
    """
    empty = np.zeros(frame.shape, dtype=bool)
    if cfg.template is None:
        return empty, None
    tw, th = cfg.template.shape
    nx, ny = frame.shape
    if tw > nx or th > ny:
        return empty, None
    # the support's vertical edges are as tall as the footprint's deepest column
    min_votes = max(4, int(math.ceil(0.6 * cfg.template.sum(axis=1).max())))
    window = _vertical_hough_window(air_mask, cfg.hough_tolerance_deg, min_votes)
    if window is None:
        return empty, None
    pad = tw // 2 + 4
    x_lo = max(0, window[0] - pad)
    x_hi = min(nx, window[1] + pad)
    if x_hi - x_lo < tw:  # widen a too-narrow window to fit the template
        mid = (x_lo + x_hi) // 2
        x_lo = max(0, min(mid - tw // 2 - 2, nx - tw))
        x_hi = min(nx, x_lo + tw + 4)
    sub = frame[x_lo:x_hi, :]
    ncc = _ncc_valid(sub, cfg.template)
    best = np.unravel_index(np.argmax(ncc), ncc.shape)
    if ncc[best] < cfg.match_threshold:
        return empty, None
    bx, by = x_lo + int(best[0]), int(best[1])
    mask = np.zeros_like(empty)
    mask[bx:bx + tw, by:by + th] = cfg.template
    mask &= ~air_mask
    if not mask.any():
        return empty, None
    xs, ys = np.nonzero(mask)
    box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return mask, box


def detect_metal(v: Volume, cfg: PreprocessConfig) -> tuple[np.ndarray, ...]:
    """26-connected 3D components of voxels at/above the metal threshold."""
    hot = v.voxels >= cfg.metal_threshold
    if not hot.any():
        return ()
    lab, n = ndimage.label(hot, structure=TWENTYSIX)
    comps = []
    for i in range(1, n + 1):
        idx = np.argwhere(lab == i)
        if len(idx) >= cfg.min_metal_voxels:
            comps.append(idx)
    return tuple(comps)


def detect_hollow(
    frame: np.ndarray, air_threshold: float, exterior: np.ndarray
) -> np.ndarray:
    """Interior air: sub-threshold pixels not reachable from the border."""
    return (frame < air_threshold) & ~exterior


def run_preprocess(v: Volume, cfg: PreprocessConfig | None = None) -> PreprocessResult:
    if cfg is None:
        cfg = PreprocessConfig()
    threshold = choose_air_threshold(v, cfg)
    nx, ny, nz = v.voxels.shape
    labels = np.full((nx, ny, nz), UNKNOWN, dtype=np.uint8)
    boxes: list[tuple[int, int, int, int] | None] = []
    for z in range(nz):
        frame = v.voxels[:, :, z]
        exterior = segment_exterior_air(frame, threshold)
        hollow = detect_hollow(frame, threshold, exterior)
        support, box = detect_support(frame, frame < threshold, cfg)
        plane = labels[:, :, z]
        plane[hollow] = HOLLOW
        plane[exterior] = EXTERIOR_AIR
        plane[support] = SUPPORT
        boxes.append(box)
    comps = detect_metal(v, cfg)
    for idx in comps:  # metal wins over everything
        labels[idx[:, 0], idx[:, 1], idx[:, 2]] = METAL
    return PreprocessResult(
        labels=LabelVolume(labels, v.spacing),
        air_threshold=threshold,
        support_boxes=tuple(boxes),
        metal_components=comps,
    )
