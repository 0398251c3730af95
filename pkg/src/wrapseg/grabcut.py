"""Volumetric GrabCut refinement over overlapping frame chunks.

The body estimate from the distance stage seeds the foreground; exterior
air, the support, and (by default) the wrap are background.  Each chunk of
consecutive frames is segmented with the classic iterated GMM / min-cut
loop, and per-voxel results from all chunks covering a frame are averaged
so the final mask changes smoothly along the scan axis.

Scribbles give the user a direct override channel: FG/BG strokes become
infinite-capacity terminal links inside every chunk that sees them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, maximum_flow
from scipy.special import logsumexp

from .volume import BANDAGE, BODY, EXTERIOR_AIR, SUPPORT, LabelVolume, Volume

SCRIB_NONE = 0
SCRIB_FG = 1
SCRIB_BG = 2

# integer scaling for the solver; capacities are rounded to 1/1024.
# scipy's solver miscomputes above 2^31 regardless of dtype, so the "infinite"
# pin stays at 2^28: far above any grid node's finite incident sum, far below
# the overflow line.
_FLOW_SCALE = 1024
_HARD_CAP = np.int64(2) ** 28
_FINITE_LIMIT = float(_HARD_CAP // 4)


@dataclass(frozen=True)
class Scribble:
    """One user stroke: a polyline swept with a round brush."""

    frame: int
    cls: str                      # "FG" | "BG"
    radius: float
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.cls not in ("FG", "BG"):
            raise ValueError(f"scribble class must be FG or BG, got {self.cls!r}")
        if self.radius < 1:
            raise ValueError(f"brush radius must be >= 1, got {self.radius}")
        if not self.points:
            raise ValueError("scribble needs at least one point")


def parse_scribble_file(path) -> list[Scribble]:
    """Read `frame,class,radius,x1,y1,x2,y2,...` lines; '#' starts a comment."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 5 or len(parts) % 2 == 0:
                raise ValueError(f"{path}:{ln}: expected frame,class,radius,x1,y1,...")
            try:
                frame = int(parts[0])
                radius = float(parts[2])
                coords = [float(p) for p in parts[3:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from None
            pts = tuple(zip(coords[0::2], coords[1::2]))
            out.append(Scribble(frame, parts[1].upper(), radius, pts))
    return out


def rasterize_scribbles(scribbles, dims) -> np.ndarray:
    """Paint strokes into a (nx, ny, nz) map of SCRIB_* codes.

    Strokes are applied in order, so a later stroke overwrites an earlier
    one where they overlap.  A stroke with any point outside the frame is
    dropped with a warning rather than clipped.
    """
    nx, ny, nz = dims
    out = np.zeros(dims, dtype=np.uint8)
    yy, xx = np.meshgrid(np.arange(ny), np.arange(nx))
    for s in scribbles:
        if not 0 <= s.frame < nz or any(
                not (0 <= x < nx and 0 <= y < ny) for x, y in s.points):
            warnings.warn(f"scribble outside volume bounds dropped: {s}")
            continue
        mask = np.zeros((nx, ny), dtype=bool)
        for (x0, y0), (x1, y1) in zip(s.points, s.points[1:] or s.points):
            # exact swept disk: pixel center within radius of the segment
            dx, dy = x1 - x0, y1 - y0
            len2 = dx * dx + dy * dy
            if len2 == 0:
                t = np.zeros_like(xx, dtype=np.float64)
            else:
                t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / len2, 0.0, 1.0)
            mask |= ((xx - (x0 + t * dx)) ** 2 + (yy - (y0 + t * dy)) ** 2
                     <= s.radius ** 2)
        out[:, :, s.frame][mask] = SCRIB_FG if s.cls == "FG" else SCRIB_BG
    return out


# ---------------------------------------------------------------------------
# 1-D Gaussian mixtures


@dataclass(frozen=True)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray


@dataclass(frozen=True)
class GmmModel:
    foreground: Gmm
    background: Gmm


def fit_gmm(samples, k, rng=None, em_iters=10, var_floor=1.0) -> Gmm:
    """k-means++ seeding followed by EM on scalar samples.

    k is silently reduced to the sample count when there are fewer
    samples than requested components.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to zero samples")
    if rng is None:
        rng = np.random.default_rng(0)
    k = min(k, x.size)

    centers = np.empty(k)
    centers[0] = x[rng.integers(x.size)]
    d2 = (x - centers[0]) ** 2
    for i in range(1, k):
        tot = d2.sum()
        if tot > 0:
            centers[i] = x[rng.choice(x.size, p=d2 / tot)]
        else:
            centers[i] = x[rng.integers(x.size)]
        d2 = np.minimum(d2, (x - centers[i]) ** 2)

    w = np.full(k, 1.0 / k)
    mu = centers.copy()
    var = np.full(k, max(x.var(), var_floor))

    for _ in range(em_iters):
        log_r = _component_log_densities(x, w, mu, var)     # (k, n)
        norm = logsumexp(log_r, axis=0)
        r = np.exp(log_r - norm)
        nk = r.sum(axis=1)
        alive = nk > 0
        w = nk / x.size
        mu = np.where(alive, (r @ x) / np.where(alive, nk, 1.0), mu)
        var = np.where(
            alive,
            (r @ x ** 2) / np.where(alive, nk, 1.0) - mu ** 2,
            var,
        )
        var = np.maximum(var, var_floor)
    return Gmm(w, mu, var)


def _component_log_densities(x, w, mu, var):
    # rows for zero-weight components go to -inf so they never contribute
    with np.errstate(divide="ignore"):
        logw = np.log(w)[:, None]
    return (logw
            - 0.5 * np.log(2.0 * np.pi * var)[:, None]
            - (x[None, :] - mu[:, None]) ** 2 / (2.0 * var[:, None]))


def gmm_log_likelihood(gmm: Gmm, values) -> float:
    x = np.asarray(values, dtype=np.float64).ravel()
    return float(logsumexp(
        _component_log_densities(x, gmm.weights, gmm.means, gmm.variances),
        axis=0).sum())


def gmm_neg_log(gmm: Gmm, values) -> np.ndarray:
    """-log p(x) per value under the mixture."""
    x = np.asarray(values, dtype=np.float64).ravel()
    return -logsumexp(
        _component_log_densities(x, gmm.weights, gmm.means, gmm.variances),
        axis=0)


# ---------------------------------------------------------------------------
# min-cut solver


@dataclass
class CutGraph:
    """s/t cut problem: n internal nodes, terminal links, symmetric edges.

    np.inf in a terminal array pins the node to that terminal.
    """

    n: int
    source_cap: np.ndarray
    sink_cap: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_cap: np.ndarray

    def __post_init__(self):
        self.source_cap = np.asarray(self.source_cap, dtype=np.float64)
        self.sink_cap = np.asarray(self.sink_cap, dtype=np.float64)
        self.edge_a = np.asarray(self.edge_a, dtype=np.int64)
        self.edge_b = np.asarray(self.edge_b, dtype=np.int64)
        self.edge_cap = np.asarray(self.edge_cap, dtype=np.float64)
        if self.source_cap.shape != (self.n,) or self.sink_cap.shape != (self.n,):
            raise ValueError("terminal capacity arrays must have length n")
        if np.any(self.edge_cap < 0) or np.any(self.source_cap < 0) \
                or np.any(self.sink_cap < 0):
            raise ValueError("capacities must be non-negative")
        if not np.all(np.isfinite(self.edge_cap)):
            raise ValueError("edge capacities must be finite")


def _as_int_caps(cap):
    scaled = cap * _FLOW_SCALE
    finite = ~np.isinf(cap)
    if np.any(scaled[finite] > _FINITE_LIMIT):
        raise ValueError(
            f"finite capacity above {_FINITE_LIMIT / _FLOW_SCALE:.0f} would "
            "rival the hard-pin capacity")
    return np.round(np.where(finite, scaled, float(_HARD_CAP))).astype(np.int64)


def max_flow(graph: CutGraph):
    """Solve the cut; returns (cut value, boolean source-side mask).

    The reported value is the true capacity of the returned partition
    computed in floats, so it is not polluted by the integer scaling the
    solver itself uses.
    """
    n = graph.n
    src_id, snk_id = n, n + 1
    rows = np.concatenate([
        np.full(n, src_id), np.arange(n), graph.edge_a, graph.edge_b])
    cols = np.concatenate([
        np.arange(n), np.full(n, snk_id), graph.edge_b, graph.edge_a])
    data = np.concatenate([
        _as_int_caps(graph.source_cap), _as_int_caps(graph.sink_cap),
        _as_int_caps(graph.edge_cap), _as_int_caps(graph.edge_cap)])
    keep = data > 0
    mat = sp.csr_matrix(
        (data[keep], (rows[keep], cols[keep])), shape=(n + 2, n + 2))
    result = maximum_flow(mat, src_id, snk_id)
    residual = mat - result.flow
    residual.eliminate_zeros()
    reach = breadth_first_order(
        residual, src_id, directed=True, return_predecessors=False)
    side = np.zeros(n, dtype=bool)
    side[reach[reach < n]] = True
    return cut_value(graph, side), side


def cut_value(graph: CutGraph, source_side) -> float:
    """Capacity of the cut induced by a partition (inf if it cuts a pin)."""
    side = np.asarray(source_side, dtype=bool)
    val = graph.source_cap[~side].sum() + graph.sink_cap[side].sum()
    crossing = side[graph.edge_a] != side[graph.edge_b]
    return float(val + graph.edge_cap[crossing].sum())


# ---------------------------------------------------------------------------
# chunked segmentation


@dataclass(frozen=True)
class GrabCutConfig:
    n_g: int = 10               # frames per chunk
    stride: int = 1
    gmm_k: int = 5
    lam: float = 50.0           # n-link strength
    iters: int = 5
    energy_tol: float = 1e-3    # relative energy change that counts as converged
    soft_wrap: bool = False     # wrap voxels become movable instead of hard BG
    seed: int = 0
    sample_cap: int = 100_000   # per-class GMM fitting subsample
    tlink_max: float = 50.0     # clamp on -log likelihood terms

    def __post_init__(self):
        if self.n_g < 1 or self.stride < 1:
            raise ValueError("chunk size and stride must be >= 1")
        if self.gmm_k < 1:
            raise ValueError("need at least one mixture component")
        if self.lam < 0:
            raise ValueError("n-link strength must be >= 0")


@dataclass(frozen=True)
class GrabCutResult:
    labels: LabelVolume
    fg_probability: np.ndarray          # float32, fraction of chunks voting FG
    chunk_energies: tuple               # per chunk: tuple of per-iteration energies


def _neighbor_weight(hu_a, hu_b, lam, beta):
    d = hu_a.astype(np.float64) - hu_b.astype(np.float64)
    return lam * np.exp(-beta * d * d)


def _chunk_beta(hu):
    sq = []
    for axis in range(3):
        if hu.shape[axis] < 2:
            continue
        d = np.diff(hu.astype(np.float64), axis=axis)
        sq.append(d.ravel() ** 2)
    if not sq:
        return 0.0
    m = float(np.concatenate(sq).mean())
    return 0.0 if m == 0.0 else 1.0 / (2.0 * m)


def _sample(values, cap, rng):
    if values.size <= cap:
        return values
    return values[rng.choice(values.size, cap, replace=False)]


def grabcut_chunk(hu, labels, scrib, cfg: GrabCutConfig, rng=None):
    """Segment one chunk; returns (fg mask, per-iteration energies).

    `labels` carries the distance-stage classes; `scrib` the rasterized
    stroke map (may be None).  Only voxels left movable by the config can
    flip; everything else is folded into the terminals, which keeps the
    solver graph small without changing the optimum.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if scrib is None:
        scrib = np.zeros(hu.shape, dtype=np.uint8)

    hard_fg = scrib == SCRIB_FG
    movable = labels == BODY
    if cfg.soft_wrap:
        movable = movable | (labels == BANDAGE)
    movable &= ~hard_fg & (scrib != SCRIB_BG)
    hard_bg = ~movable & ~hard_fg     # air, support, wrap, metal, pockets, strokes

    fg = hard_fg | (movable & (labels == BODY))
    if not movable.any():
        return fg, ()

    n = int(movable.sum())
    idx = np.full(hu.shape, -1, dtype=np.int64)
    idx[movable] = np.arange(n)
    hu_mov = hu[movable].astype(np.float64)
    beta = _chunk_beta(hu)

    # neighbor structure is constant across iterations; build it once
    ea, eb, ec = [], [], []
    fg_fixed = np.zeros(n)
    bg_fixed = np.zeros(n)
    for axis in range(3):
        lo = tuple(slice(0, -1) if a == axis else slice(None) for a in range(3))
        hi = tuple(slice(1, None) if a == axis else slice(None) for a in range(3))
        w = _neighbor_weight(hu[lo], hu[hi], cfg.lam, beta)
        for (a_sl, b_sl) in ((lo, hi), (hi, lo)):
            pin = movable[a_sl] & hard_fg[b_sl]
            np.add.at(fg_fixed, idx[a_sl][pin], w[pin])
            pin = movable[a_sl] & hard_bg[b_sl]
            np.add.at(bg_fixed, idx[a_sl][pin], w[pin])
        both = movable[lo] & movable[hi]
        ea.append(idx[lo][both])
        eb.append(idx[hi][both])
        ec.append(w[both])
    edge_a = np.concatenate(ea) if ea else np.empty(0, dtype=np.int64)
    edge_b = np.concatenate(eb) if eb else np.empty(0, dtype=np.int64)
    edge_cap = np.concatenate(ec) if ec else np.empty(0)

    energies = []
    for _ in range(cfg.iters):
        fg_samples = _sample(hu[fg].astype(np.float64), cfg.sample_cap, rng)
        bg_samples = _sample(hu[~fg].astype(np.float64), cfg.sample_cap, rng)
        if fg_samples.size == 0 or bg_samples.size == 0:
            break
        model = GmmModel(
            foreground=fit_gmm(fg_samples, cfg.gmm_k, rng),
            background=fit_gmm(bg_samples, cfg.gmm_k, rng),
        )
        src = np.clip(gmm_neg_log(model.background, hu_mov), 0.0, cfg.tlink_max)
        snk = np.clip(gmm_neg_log(model.foreground, hu_mov), 0.0, cfg.tlink_max)
        # pinned neighbors enter through their boundary n-links
        graph = CutGraph(n, src + fg_fixed, snk + bg_fixed,
                         edge_a, edge_b, edge_cap)
        energy, side = max_flow(graph)
        fg = hard_fg.copy()
        fg[movable] = side
        energies.append(energy)
        if len(energies) >= 2:
            prev = energies[-2]
            if prev <= 0 or abs(prev - energy) / prev < cfg.energy_tol:
                break
    return fg, tuple(energies)


def grabcut_volume(volume: Volume, labels: LabelVolume, scribbles=None,
                   cfg: GrabCutConfig = GrabCutConfig(),
                   progress=None) -> GrabCutResult:
    """Run overlapping chunks and average their votes into final labels.

    Voxels outside the wrap/body classes keep their labels; wrap/body
    voxels are relabeled by thresholding the mean FG vote at 0.5 (ties
    vote body, which errs toward keeping tissue for the tracker to prune).
    """
    hu = volume.voxels
    lab = labels.labels
    nx, ny, nz = hu.shape
    scrib = None
    if scribbles is not None:
        scrib = (scribbles if isinstance(scribbles, np.ndarray)
                 else rasterize_scribbles(scribbles, hu.shape))

    if nz <= cfg.n_g:
        starts = [0]
        length = nz
    else:
        starts = list(range(0, nz - cfg.n_g + 1, cfg.stride))
        length = cfg.n_g
        # a stride can leave a tail uncovered; add a flush-right chunk
        if starts[-1] + length < nz:
            starts.append(nz - length)

    votes = np.zeros(hu.shape, dtype=np.float32)
    covered = np.zeros(nz, dtype=np.int32)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(starts))
    all_energies = []
    for i, (start, seed) in enumerate(zip(starts, seeds)):
        sl = (slice(None), slice(None), slice(start, start + length))
        mask, energies = grabcut_chunk(
            hu[sl], lab[sl], None if scrib is None else scrib[sl],
            cfg, np.random.default_rng(seed))
        votes[sl] += mask
        covered[start:start + length] += 1
        all_energies.append(energies)
        if progress is not None:
            progress((i + 1) / len(starts))

    prob = votes / covered[None, None, :]
    out = lab.copy()
    movable = (lab == BANDAGE) | (lab == BODY)
    out[movable] = np.where(prob[movable] >= 0.5, BODY, BANDAGE)
    return GrabCutResult(
        labels=LabelVolume(out, labels.spacing),
        fg_probability=prob,
        chunk_energies=tuple(all_energies),
    )
