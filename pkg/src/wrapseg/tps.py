"""Thin-plate-spline warps for synthesizing extra scan volumes.

A spline fitted between a point set and its perturbation deforms every
frame of a volume, giving new "subjects" with known ground truth.  Either
one warp bends the whole stack, or a chain of per-frame warps interpolated
between two endpoint point sets varies the deformation along z; the chain
can be replayed in four frame orders so no body section is always the most
distorted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import EXTERIOR_AIR, HU_MIN, LabelVolume, Volume

_AIR_FILL = -1000.0
_EDGE_TOL = 1e-6        # snap near-boundary samples instead of dropping them


def _snap_to_edges(c: np.ndarray, hi: float) -> np.ndarray:
    c = c.copy()
    c[(c < 0) & (c >= -_EDGE_TOL)] = 0.0
    c[(c > hi) & (c <= hi + _EDGE_TOL)] = hi
    return c


class SingularError(Exception):
    """Control points admit no unique spline (duplicates or all collinear)."""


def _u(r2: np.ndarray) -> np.ndarray:
    """Radial basis r^2 log(r^2), continued by 0 at r = 0."""
    out = np.zeros_like(r2, dtype=float)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


def _as_points(p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class WarpFunction:
    """Interpolating 2-D spline: affine part plus weighted radial bumps.

    Evaluation at pixel (x, y) gives the source location sampled by
    `warp_frame`, so points, targets describe where each output position
    reads from — swap the roles at fit time to push features the other way.
    """

    points: np.ndarray      # (n, 2) control points
    targets: np.ndarray     # (n, 2) their images
    weights: np.ndarray     # (n, 2) radial coefficients, one column per axis
    affine: np.ndarray      # (3, 2) rows: constant, x, y

    def __call__(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        d2 = ((pts[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
        return (_u(d2) @ self.weights
                + self.affine[0]
                + pts[:, 0:1] * self.affine[1]
                + pts[:, 1:2] * self.affine[2])


def fit_tps(points, targets) -> WarpFunction:
    """Solve the interpolating spline mapping each control point onto its target.

    The linear system is the standard bordered one: radial kernel block plus
    an affine border whose zero rows enforce the vanishing-moment side
    conditions on the weights.
    """
    x = _as_points(points)
    xp = _as_points(targets)
    n = x.shape[0]
    if xp.shape[0] != n:
        raise ValueError("points and targets must pair up")
    if n < 3:
        raise SingularError("need at least 3 control points")
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    if (d2[~np.eye(n, dtype=bool)] == 0).any():
        raise SingularError("duplicate control points")
    p = np.column_stack([np.ones(n), x])
    if np.linalg.matrix_rank(p) < 3:
        raise SingularError("control points are collinear")

    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = _u(d2)
    L[:n, n:] = p
    L[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = xp
    try:
        coeffs = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularError(str(exc)) from None
    return WarpFunction(x, xp, coeffs[:n], coeffs[n:])


def identity_warp() -> WarpFunction:
    corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    return fit_tps(corners, corners)


def _sample_bilinear(frame: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                     fill: float) -> np.ndarray:
    nx, ny = frame.shape
    valid = (xs >= 0) & (xs <= nx - 1) & (ys >= 0) & (ys <= ny - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, nx - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, ny - 2)
    tx = np.clip(xs - x0, 0.0, 1.0)
    ty = np.clip(ys - y0, 0.0, 1.0)
    f = frame.astype(float)
    top = f[x0, y0] * (1 - tx) + f[x0 + 1, y0] * tx
    bot = f[x0, y0 + 1] * (1 - tx) + f[x0 + 1, y0 + 1] * tx
    out = top * (1 - ty) + bot * ty
    out[~valid] = fill
    return out


def _sample_nearest(frame: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    fill) -> np.ndarray:
    nx, ny = frame.shape
    valid = (xs >= 0) & (xs <= nx - 1) & (ys >= 0) & (ys <= ny - 1)
    xi = np.clip(np.rint(xs).astype(int), 0, nx - 1)
    yi = np.clip(np.rint(ys).astype(int), 0, ny - 1)
    out = frame[xi, yi].copy()
    out[~valid] = fill
    return out


def warp_frame(frame: np.ndarray, f: WarpFunction, kind: str | None = None
               ) -> np.ndarray:
    """Resample one frame through the spline.

    Every output pixel reads the source at f(pixel) — inverse mapping, so
    the result has no holes.  Intensity frames are blended bilinearly and
    padded with air; label frames use nearest-neighbor so codes stay
    categorical, padded with exterior air.
    """
    if kind is None:
        kind = "labels" if frame.dtype == np.uint8 else "hu"
    if kind not in ("hu", "labels"):
        raise ValueError(f"unknown frame kind {kind!r}")
    nx, ny = frame.shape
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()]).astype(float)
    src = f(pts)
    xs = _snap_to_edges(src[:, 0].reshape(nx, ny), nx - 1)
    ys = _snap_to_edges(src[:, 1].reshape(nx, ny), ny - 1)
    if kind == "labels":
        return _sample_nearest(frame, xs, ys, EXTERIOR_AIR)
    out = _sample_bilinear(frame, xs, ys, _AIR_FILL)
    return np.maximum(np.rint(out), HU_MIN).astype(np.int16)


@dataclass(frozen=True)
class WarpSet:
    """Per-frame warp chain; one spline per z index, applied independently."""

    set_id: int
    functions: tuple

    def __post_init__(self):
        if not self.functions:
            raise ValueError("a warp set needs at least one function")

    def __len__(self) -> int:
        return len(self.functions)


def make_warp_sets(start_points, end_points, n_frames: int,
                   sets=(1, 2, 3, 4)) -> dict[int, WarpSet]:
    """Build the four frame orderings of the interpolated warp chain.

    The endpoints are divided into n_frames equal steps; f_k maps step k-1
    onto step k.  Set 1 runs the chain forward, Set 2 backward, Sets 3/4
    are the palindromes front-half/back-half first (those need an even
    frame count).
    """
    sets = tuple(sets)
    bad = [s for s in sets if s not in (1, 2, 3, 4)]
    if bad:
        raise ValueError(f"unknown warp set ids {bad}")
    if n_frames % 2 and (3 in sets or 4 in sets):
        raise ValueError("sets 3 and 4 need an even frame count")
    x0 = _as_points(start_points)
    xn = _as_points(end_points)
    if x0.shape != xn.shape:
        raise ValueError("endpoint sets must pair up")
    step = (xn - x0) / n_frames
    chain = [fit_tps(x0 + (k - 1) * step, x0 + k * step)
             for k in range(1, n_frames + 1)]
    half = n_frames // 2
    orders = {
        1: chain,
        2: chain[::-1],
        3: chain[:half] + chain[:half][::-1],
        4: chain[:half][::-1] + chain[:half],
    }
    return {s: WarpSet(s, tuple(orders[s])) for s in sets}


def warp_volume(volume: Volume, labels: LabelVolume | None, warp
                ) -> tuple[Volume, LabelVolume | None]:
    """Warp a whole stack: a single spline for every frame, or a set's k-th
    spline for frame k.  Ground truth rides along with the same geometry."""
    nz = volume.dims[2]
    if isinstance(warp, WarpSet):
        if len(warp) != nz:
            raise ValueError(
                f"warp set length {len(warp)} != frame count {nz}")
        per_frame = warp.functions
    elif isinstance(warp, WarpFunction):
        per_frame = (warp,) * nz
    else:
        raise TypeError("warp must be a WarpFunction or WarpSet")

    hu = np.empty_like(volume.voxels)
    for k in range(nz):
        hu[:, :, k] = warp_frame(volume.voxels[:, :, k], per_frame[k], "hu")
    out_v = Volume(hu, volume.spacing)
    if labels is None:
        return out_v, None
    lab = np.empty_like(labels.labels)
    for k in range(nz):
        lab[:, :, k] = warp_frame(labels.labels[:, :, k], per_frame[k], "labels")
    return out_v, LabelVolume(lab, labels.spacing)


def parse_control_points(path) -> tuple[np.ndarray, np.ndarray]:
    """Read `x,y,x',y'` lines; '#' starts a comment."""
    pts, tgt = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise ValueError(f"{path}:{ln}: expected x,y,x',y'")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{ln}: fields must be numbers") from None
            pts.append(vals[:2])
            tgt.append(vals[2:])
    if not pts:
        raise ValueError(f"{path}: no control points")
    return np.array(pts), np.array(tgt)


def default_grid(nx: int, ny: int, cols: int = 3, rows: int = 4) -> np.ndarray:
    """Evenly spaced interior grid used when no control points are supplied."""
    xs = np.linspace(nx / (cols + 1), nx * cols / (cols + 1), cols)
    ys = np.linspace(ny / (rows + 1), ny * rows / (rows + 1), rows)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def perturb_grid(points: np.ndarray, magnitude: float = 8.0,
                 rng=None) -> np.ndarray:
    """Displace each point by a uniform draw from the radius-`magnitude` disc."""
    rng = np.random.default_rng(rng)
    pts = _as_points(points)
    theta = rng.uniform(0.0, 2.0 * np.pi, len(pts))
    r = magnitude * np.sqrt(rng.uniform(0.0, 1.0, len(pts)))
    return pts + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
