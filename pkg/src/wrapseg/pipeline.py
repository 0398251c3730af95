"""End-to-end composition of the four label-refinement stages.

Each stage consumes the previous stage's label volume, so a run can be
resumed from any intermediate artifact and gives the same result as a
single pass.  The refinement here treats the coarse wrap estimate as soft
background evidence rather than pinning it: the first split mislabels some
tissue near low-contrast wrap, and pinning those pixels would feed the
background model tissue statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .geodesic import GeodesicConfig, geodesic_stage
from .grabcut import GrabCutConfig, grabcut_volume, rasterize_scribbles
from .preprocess import PreprocessConfig, run_preprocess
from .tracker import TrackerConfig, TrackResult, run_tracking
from .volume import LabelVolume, Volume


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    geodesic: GeodesicConfig = field(default_factory=GeodesicConfig)
    grabcut: GrabCutConfig = field(default_factory=lambda: GrabCutConfig(soft_wrap=True))
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    track: bool = True          # cross-frame filtering can be ablated


@dataclass(frozen=True)
class PipelineResult:
    preprocess: LabelVolume
    geodesic: LabelVolume
    grabcut: LabelVolume
    labels: LabelVolume         # final output (tracking applied if enabled)
    tracks: tuple


def run_pipeline(volume: Volume, scribbles=None, seeds=(),
                 cfg: PipelineConfig | None = None,
                 progress=None) -> PipelineResult:
    """Run preprocess, the geodesic split, chunked refinement, and tracking.

    When no seeds are given the tracker falls back to auto-initialization
    so the pipeline stays non-interactive; explicit seeds switch it off
    unless the config asks for both.
    """
    if cfg is None:
        cfg = PipelineConfig()

    def stage_progress(stage_index):
        if progress is None:
            return None
        return lambda f: progress((stage_index + f) / 4.0)

    pre = run_preprocess(volume, cfg.preprocess).labels
    if progress is not None:
        progress(0.25)
    geo = geodesic_stage(volume, pre, cfg.geodesic, progress=stage_progress(1))
    scrib = None
    if scribbles is not None:
        scrib = rasterize_scribbles(scribbles, volume.dims)
    gc = grabcut_volume(volume, geo, scrib, cfg.grabcut,
                        progress=stage_progress(2)).labels
    if not cfg.track:
        if progress is not None:
            progress(1.0)
        return PipelineResult(pre, geo, gc, gc, ())

    tcfg = cfg.tracker
    if not seeds and not tcfg.auto_init:
        tcfg = TrackerConfig(eps=tcfg.eps, window=tcfg.window,
                             min_segment_px=tcfg.min_segment_px,
                             auto_init=True, auto_init_px=tcfg.auto_init_px)
    tracked: TrackResult = run_tracking(gc, seeds, tcfg)
    if progress is not None:
        progress(1.0)
    return PipelineResult(pre, geo, gc, tracked.labels, tracked.tracks)
