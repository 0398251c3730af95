"""Stage 2: patch-graph geodesic distances and the bandage/body split.

Each axial frame becomes a grid of 3x3-pixel patches (remainder patches at
the right/bottom edges are smaller).  Patches that are mostly exterior air
or support form the reference set R_e; patches that are mostly metal or
hollow are removed from the graph so paths cannot tunnel through them; the
rest (R_wb) is what we want to split.  For every patch we find the m
smallest geodesic distances to m *different* reference patches, average
them, sort the averages, and cut the sorted sequence at its largest jump:
everything at or below the cut is wrap (bandage), everything above is body.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .volume import (
    BANDAGE,
    BODY,
    EXTERIOR_AIR,
    HOLLOW,
    METAL,
    SUPPORT,
    UNKNOWN,
    LabelVolume,
    Volume,
)

PATCH = 3
R_E, R_WB, EXCLUDED = 0, 1, 2


class FrameSkipped(Exception):
    """Raised when a frame has no reference patch to measure from."""


@dataclass(frozen=True)
class GeodesicConfig:
    m: int = 10                      # how many distinct-source distances to average
    min_depth_ratio: float = 2.0     # deepest/shallowest depth that marks a clear split
    debug_dir: str | None = None     # dump per-frame average-distance heatmaps

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.min_depth_ratio < 1.0:
            raise ValueError("min_depth_ratio must be >= 1")


@dataclass(frozen=True)
class PatchGraph:
    grid: tuple[int, int]            # patches along x and y
    mean_hu: np.ndarray              # float64 (gx, gy)
    member: np.ndarray               # int8 (gx, gy): R_E / R_WB / EXCLUDED
    frame_shape: tuple[int, int]

    def patch_slices(self, i: int, j: int) -> tuple[slice, slice]:
        nx, ny = self.frame_shape
        return (slice(i * PATCH, min((i + 1) * PATCH, nx)),
                slice(j * PATCH, min((j + 1) * PATCH, ny)))

    def edges(self):
        """(a, b, weight) over 4-adjacent non-excluded patch pairs, a < b."""
        gx, gy = self.grid
        out = []
        for i in range(gx):
            for j in range(gy):
                if self.member[i, j] == EXCLUDED:
                    continue
                for di, dj in ((1, 0), (0, 1)):
                    u, v = i + di, j + dj
                    if u < gx and v < gy and self.member[u, v] != EXCLUDED:
                        w = abs(self.mean_hu[i, j] - self.mean_hu[u, v])
                        out.append((i * gy + j, u * gy + v, float(w)))
        return out


@dataclass(frozen=True)
class GeodesicField:
    top: np.ndarray      # float64 (gx, gy, m), inf-padded, ascending
    count: np.ndarray    # int64 (gx, gy): valid entries per patch
    avg: np.ndarray      # float64 (gx, gy): mean of the valid entries (inf if none)
    member: np.ndarray   # as in the graph
    tilde: np.ndarray    # finite averages over R_WB, sorted ascending


def _block_reduce_sum(a: np.ndarray) -> np.ndarray:
    """Sum over 3x3 tiles; right/bottom remainders are smaller tiles."""
    nx, ny = a.shape
    xi = np.arange(0, nx, PATCH)
    yi = np.arange(0, ny, PATCH)
    return np.add.reduceat(np.add.reduceat(a, xi, axis=0), yi, axis=1)


def build_patch_graph(frame: np.ndarray, labels: np.ndarray) -> PatchGraph:
    if frame.size == 0:
        raise ValueError("empty frame")
    nx, ny = frame.shape
    counts = _block_reduce_sum(np.ones(frame.shape))
    mean = _block_reduce_sum(frame.astype(np.float64)) / counts
    ref = _block_reduce_sum(((labels == EXTERIOR_AIR) | (labels == SUPPORT)).astype(np.float64))
    gone = _block_reduce_sum(((labels == METAL) | (labels == HOLLOW)).astype(np.float64))
    member = np.full(mean.shape, R_WB, dtype=np.int8)
    member[gone / counts >= 0.5] = EXCLUDED
    member[ref / counts >= 0.5] = R_E  # reference wins when both reach half
    return PatchGraph(
        grid=mean.shape, mean_hu=mean, member=member, frame_shape=(nx, ny)
    )


@njit(cache=True)
def _topm_search(mean, member, gx, gy, m):
    """Multi-source Dijkstra keeping up to m best distinct-source labels per node."""
    n = gx * gy
    dist = np.full((n, m), np.inf)
    src = np.full((n, m), -1, np.int64)
    cnt = np.zeros(n, np.int64)

    cap = 4 * n * m + n + 16
    hd = np.empty(cap)
    hv = np.empty(cap, np.int64)
    hs = np.empty(cap, np.int64)
    size = 0

    for node in range(n):
        if member[node] == 0:  # reference seed
            hd[size] = 0.0
            hv[size] = node
            hs[size] = node
            size += 1
    # initial entries all share key 0.0, no ordering needed yet
    for start in range(size // 2 - 1, -1, -1):
        pos = start
        while True:
            child = 2 * pos + 1
            if child >= size:
                break
            if child + 1 < size and hd[child + 1] < hd[child]:
                child += 1
            if hd[child] < hd[pos]:
                hd[pos], hd[child] = hd[child], hd[pos]
                hv[pos], hv[child] = hv[child], hv[pos]
                hs[pos], hs[child] = hs[child], hs[pos]
                pos = child
            else:
                break

    while size > 0:
        d = hd[0]
        v = hv[0]
        s = hs[0]
        size -= 1
        hd[0] = hd[size]
        hv[0] = hv[size]
        hs[0] = hs[size]
        pos = 0
        while True:
            child = 2 * pos + 1
            if child >= size:
                break
            if child + 1 < size and hd[child + 1] < hd[child]:
                child += 1
            if hd[child] < hd[pos]:
                hd[pos], hd[child] = hd[child], hd[pos]
                hv[pos], hv[child] = hv[child], hv[pos]
                hs[pos], hs[child] = hs[child], hs[pos]
                pos = child
            else:
                break

        if cnt[v] == m:
            continue
        dup = False
        for k in range(cnt[v]):
            if src[v, k] == s:
                dup = True
                break
        if dup:
            continue
        dist[v, cnt[v]] = d
        src[v, cnt[v]] = s
        cnt[v] += 1

        i = v // gy
        j = v % gy
        for t in range(4):
            if t == 0:
                ui, uj = i - 1, j
            elif t == 1:
                ui, uj = i + 1, j
            elif t == 2:
                ui, uj = i, j - 1
            else:
                ui, uj = i, j + 1
            if ui < 0 or ui >= gx or uj < 0 or uj >= gy:
                continue
            u = ui * gy + uj
            if member[u] == 2 or cnt[u] == m:
                continue
            nd = d + abs(mean[v] - mean[u])
            # sift-up insert
            hd[size] = nd
            hv[size] = u
            hs[size] = s
            pos = size
            size += 1
            while pos > 0:
                parent = (pos - 1) // 2
                if hd[pos] < hd[parent]:
                    hd[pos], hd[parent] = hd[parent], hd[pos]
                    hv[pos], hv[parent] = hv[parent], hv[pos]
                    hs[pos], hs[parent] = hs[parent], hs[pos]
                    pos = parent
                else:
                    break
    return dist, cnt


def geodesic_multi(g: PatchGraph, m: int) -> GeodesicField:
    """Exact m smallest distinct-source geodesic distances, averaged per patch."""
    if m < 1:
        raise ValueError("m must be >= 1")
    gx, gy = g.grid
    if not (g.member == R_E).any():
        raise FrameSkipped("no reference patch in frame")
    dist, cnt = _topm_search(
        g.mean_hu.ravel(), g.member.ravel().astype(np.int64), gx, gy, m
    )
    top = dist.reshape(gx, gy, m)
    count = cnt.reshape(gx, gy)
    total = np.where(np.isfinite(top), top, 0.0).sum(axis=2)
    avg = np.where(count > 0, total / np.maximum(count, 1), np.inf)
    wb = (g.member == R_WB) & np.isfinite(avg)
    tilde = np.sort(avg[wb])
    return GeodesicField(top=top, count=count, avg=avg, member=g.member, tilde=tilde)


def split_by_gradient(field: GeodesicField,
                      threshold: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cut the sorted averages at the largest forward jump.

    Returns boolean grids (wrap, body).  Patches whose average is at or
    below the cut value are wrap; above it, body.  Unreachable patches
    (no finite distance) count as body: they are sealed off behind hollow
    space, which is where the body lives.

    An explicit `threshold` skips the jump search; callers that located
    the wrap depth elsewhere (for instance from neighboring frames of the
    same volume) impose it directly, and a frame whose patches all sit at
    or below it simply holds no body.
    """
    wb = field.member == R_WB
    finite = wb & np.isfinite(field.avg)
    unreachable = wb & ~np.isfinite(field.avg)
    if threshold is None:
        d = field.tilde
        if d.size < 2 or d[-1] == d[0]:
            return finite.copy(), unreachable.copy()
        jumps = np.diff(d)
        split = int(np.nonzero(jumps == jumps.max())[0][-1])  # tie -> larger index
        threshold = d[split]
    wrap = finite & (field.avg <= threshold)
    body = (finite & (field.avg > threshold)) | unreachable
    return wrap, body


def _own_threshold(field: GeodesicField) -> float | None:
    """The frame's largest-jump cut value, or None for a degenerate profile."""
    d = field.tilde
    if d.size < 2 or d[-1] == d[0]:
        return None
    jumps = np.diff(d)
    return float(d[int(np.nonzero(jumps == jumps.max())[0][-1])])


def geodesic_stage(
    v: Volume, labels: LabelVolume, cfg: GeodesicConfig | None = None,
    progress=None,
) -> LabelVolume:
    """Per-frame split of the not-yet-decided voxels into BANDAGE/BODY.

    A frame on its own cannot tell a faint body from wrap-only noise: the
    scan runs past the subject, and there the largest depth jump is as
    arbitrary as any other.  Frames whose profile spans a clear multiple
    of the shallowest depth (`min_depth_ratio`) split themselves and
    donate their cut values; the remaining frames take the median of
    those, which leaves them body-less when nothing in them reaches past
    the donated wrap depth.  When no frame is confident the volume is
    uniformly low-contrast and every frame falls back to its own jump.
    """
    if cfg is None:
        cfg = GeodesicConfig()
    out = labels.labels.copy()
    nz = v.voxels.shape[2]
    fields: list[GeodesicField | None] = []
    graphs: list[PatchGraph] = []
    donated = []
    confident = np.zeros(nz, dtype=bool)
    for z in range(nz):
        if progress is not None:
            progress(0.5 * z / nz)
        g = build_patch_graph(v.voxels[:, :, z], out[:, :, z])
        graphs.append(g)
        try:
            field = geodesic_multi(g, cfg.m)
        except FrameSkipped:
            fields.append(None)
            continue
        fields.append(field)
        d = field.tilde
        # anchor on a low quantile, not the minimum: patches straddling the
        # air boundary are arbitrarily shallow and would inflate the ratio
        lo = float(np.quantile(d, 0.25)) if d.size else 0.0
        if d.size >= 2 and d[-1] > d[0] and (
                lo == 0.0 or d[-1] / lo >= cfg.min_depth_ratio):
            confident[z] = True
            donated.append(_own_threshold(field))
    consensus = float(np.median(donated)) if donated else None

    for z in range(nz):
        if progress is not None:
            progress(0.5 + 0.5 * z / nz)
        lab = out[:, :, z]
        g, field = graphs[z], fields[z]
        if field is None:
            _paint(lab, g, g.member == R_WB, BANDAGE)
            continue
        override = consensus if (consensus is not None and not confident[z]) else None
        wrap, body = split_by_gradient(field, override)
        _paint(lab, g, wrap, BANDAGE)
        _paint(lab, g, body, BODY)
        if cfg.debug_dir is not None:
            _dump_heatmap(field, Path(cfg.debug_dir) / f"avg_distance_{z:04d}.png")
    if progress is not None:
        progress(1.0)
    return LabelVolume(out, v.spacing)


def _paint(lab: np.ndarray, g: PatchGraph, which: np.ndarray, code: int) -> None:
    """Write `code` into the undecided pixels of the selected patches."""
    mask = np.repeat(np.repeat(which, PATCH, axis=0), PATCH, axis=1)
    mask = mask[: lab.shape[0], : lab.shape[1]]
    lab[mask & (lab == UNKNOWN)] = code


def _dump_heatmap(field: GeodesicField, path: Path) -> None:
    import matplotlib

    from .volume import save_png

    a = field.avg.copy()
    ok = np.isfinite(a)
    if ok.any():
        lo, hi = a[ok].min(), a[ok].max()
        a = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    a[~ok] = 1.0
    cmap = matplotlib.colormaps["magma"]
    rgb = (cmap(np.clip(a, 0, 1))[:, :, :3] * 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_png(rgb, path)
