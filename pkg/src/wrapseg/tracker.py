"""Cross-slice filtering of body segments by track continuity.

GrabCut output is per-chunk and can keep isolated debris that looks like
tissue.  Real anatomy persists across neighboring frames, so body segments
are strung into tracks by pixel-overlap similarity; whatever never joins a
track is demoted back to wrap.  Tracks start from user seed clicks or,
optionally, from any large unclaimed segment (auto-init), which gives a
fully non-interactive mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import BANDAGE, BODY, LabelVolume

MIN_SEGMENT_PX = 5

_EIGHT = np.ones((3, 3), dtype=bool)


class SeedMiss(Exception):
    """Seed point does not land inside any segment of its frame."""


class NoTracksError(Exception):
    """Tracking invoked with no seeds and auto-init disabled."""


@dataclass(frozen=True, eq=False)
class Segment:
    """8-connected pixel blob of one frame."""

    frame: int
    coords: np.ndarray          # (n, 2) int32 x,y
    keys: np.ndarray            # sorted (x << 20 | y), for fast set ops

    def __post_init__(self):
        if self.coords.shape[0] == 0:
            raise ValueError("segment must contain at least one pixel")

    @property
    def area(self) -> int:
        return int(self.coords.shape[0])

    @property
    def centroid(self) -> tuple[float, float]:
        cx, cy = self.coords.mean(axis=0)
        return float(cx), float(cy)


def _make_segment(frame: int, coords: np.ndarray) -> Segment:
    coords = np.ascontiguousarray(coords, dtype=np.int32)
    keys = np.sort((coords[:, 0].astype(np.int64) << 20) | coords[:, 1])
    return Segment(frame, coords, keys)


def extract_segments(mask: np.ndarray, frame: int = 0,
                     min_px: int = MIN_SEGMENT_PX) -> list[Segment]:
    """8-connected components of a boolean frame, small ones dropped."""
    labeled, n = ndimage.label(mask, structure=_EIGHT)
    out = []
    for i in range(1, n + 1):
        coords = np.argwhere(labeled == i)
        if coords.shape[0] >= min_px:
            out.append(_make_segment(frame, coords))
    return out


def segment_iou(a: Segment, b: Segment) -> float:
    inter = np.intersect1d(a.keys, b.keys, assume_unique=True).size
    union = a.area + b.area - inter
    return inter / union if union else 1.0


def similarity(history, seg: Segment) -> float:
    """Mean overlap between a candidate segment and a track's recent past."""
    if not history:
        raise ValueError("similarity needs a nonempty history")
    return sum(segment_iou(h, seg) for h in history) / len(history)


@dataclass
class Track:
    id: int
    origin: str                     # "seed@frame(x,y)" | "auto@frame"
    start_frame: int
    history: list                   # most recent first, capped at window size
    segments: dict                  # frame -> Segment actually claimed
    status: str = "active"          # "active" | "ceased"

    @property
    def end_frame(self) -> int:
        return max(self.segments)

    def claim(self, seg: Segment, window: int) -> None:
        if self.status != "active":
            raise ValueError("a ceased track never reactivates")
        if seg.frame != self.end_frame + 1:
            raise ValueError("track frames must stay contiguous")
        self.segments[seg.frame] = seg
        self.history = [seg] + self.history[: window - 1]

    def cease(self) -> None:
        self.status = "ceased"


def start_track(track_id: int, origin: str, seg: Segment, window: int) -> Track:
    # the window starts saturated with copies so similarity is defined
    # from the very next frame
    return Track(track_id, origin, seg.frame, [seg] * window, {seg.frame: seg})


def seed_track(frame: int, point, segments, track_id: int = 0,
               window: int = 4) -> Track:
    """Start a track from a user click inside some segment of `frame`."""
    px, py = int(round(point[0])), int(round(point[1]))
    for seg in segments:
        if bool(np.any((seg.coords[:, 0] == px) & (seg.coords[:, 1] == py))):
            return start_track(track_id, f"seed@{frame}({px},{py})", seg, window)
    raise SeedMiss(f"seed ({px},{py}) hits no segment in frame {frame}")


def greedy_assign(scores: np.ndarray, gate: float):
    """One-to-one matching: repeatedly take the best remaining pair ≥ gate.

    Ties resolve toward the lower row then column index so reruns are
    reproducible.
    """
    s = np.array(scores, dtype=float, copy=True)
    pairs = []
    if s.size == 0:
        return pairs
    while True:
        best = s.max()
        if best < gate:
            break
        r, c = np.argwhere(s == best)[0]
        pairs.append((int(r), int(c)))
        s[r, :] = -np.inf
        s[:, c] = -np.inf
    return pairs


def step_tracks(tracks, segments, eps: float, window: int):
    """Advance active tracks one frame; returns segments nobody claimed.

    Active tracks that fail to claim anything cease permanently.
    """
    active = [t for t in tracks if t.status == "active"]
    if not active:
        return list(segments)
    scores = np.array([[similarity(t.history, s) for s in segments]
                       for t in active]) if segments else np.empty((len(active), 0))
    pairs = greedy_assign(scores, eps)
    claimed_tracks = set()
    claimed_segs = set()
    for r, c in pairs:
        active[r].claim(segments[c], window)
        claimed_tracks.add(r)
        claimed_segs.add(c)
    for r, t in enumerate(active):
        if r not in claimed_tracks:
            t.cease()
    return [s for c, s in enumerate(segments) if c not in claimed_segs]


@dataclass(frozen=True)
class TrackerConfig:
    eps: float = 0.1            # similarity gate for keeping a track alive
    window: int = 4             # history length M
    min_segment_px: int = MIN_SEGMENT_PX
    auto_init: bool = False
    auto_init_px: int = 200     # unclaimed segments at least this big start tracks

    def __post_init__(self):
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        if self.window < 1:
            raise ValueError("history window must be >= 1")


@dataclass(frozen=True)
class TrackResult:
    labels: LabelVolume
    tracks: tuple


def parse_seed_file(path) -> list[tuple[int, int, int]]:
    """Read `frame,x,y` lines; '#' starts a comment."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected frame,x,y")
            try:
                out.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError:
                raise ValueError(f"{path}:{ln}: fields must be integers") from None
    return out


def run_tracking(labels: LabelVolume, seeds=(), cfg: TrackerConfig = TrackerConfig()
                 ) -> TrackResult:
    """Forward pass: build tracks, then demote every untracked body pixel."""
    seeds = list(seeds)
    if not seeds and not cfg.auto_init:
        raise NoTracksError("no seeds given and auto-init is disabled")

    lab = labels.labels
    nz = lab.shape[2]
    seeds_by_frame = {}
    for frame, x, y in seeds:
        if not 0 <= frame < nz:
            raise SeedMiss(f"seed frame {frame} outside volume")
        seeds_by_frame.setdefault(frame, []).append((x, y))

    tracks: list[Track] = []
    tracked = np.zeros(lab.shape, dtype=bool)
    next_id = 1
    for z in range(nz):
        segments = extract_segments(lab[:, :, z] == BODY, z, cfg.min_segment_px)
        free = step_tracks(tracks, segments, cfg.eps, cfg.window)
        for point in seeds_by_frame.get(z, ()):
            t = seed_track(z, point, segments, next_id, cfg.window)
            chosen = t.segments[z]
            if all(chosen is not f for f in free):
                warnings.warn(
                    f"seed {point} at frame {z} lands on an already tracked "
                    "segment; ignored")
                continue
            free = [f for f in free if f is not chosen]
            tracks.append(t)
            next_id += 1
        if cfg.auto_init:
            for seg in free:
                if seg.area >= cfg.auto_init_px:
                    tracks.append(start_track(
                        next_id, f"auto@{z}", seg, cfg.window))
                    next_id += 1
        for t in tracks:
            seg = t.segments.get(z)
            if seg is not None:
                tracked[seg.coords[:, 0], seg.coords[:, 1], z] = True

    out = lab.copy()
    demote = (lab == BODY) & ~tracked
    out[demote] = BANDAGE
    return TrackResult(LabelVolume(out, labels.spacing), tuple(tracks))


def track_report(tracks) -> str:
    """Plain-text summary: one header row per track, then its area series."""
    lines = ["track  start  end    status  origin"]
    for t in tracks:
        lines.append(f"{t.id:5d}  {t.start_frame:5d}  {t.end_frame:3d}  "
                     f"{t.status:>8s}  {t.origin}")
    for t in tracks:
        areas = " ".join(str(t.segments[f].area)
                         for f in sorted(t.segments))
        lines.append(f"track {t.id} areas: {areas}")
    return "\n".join(lines)
