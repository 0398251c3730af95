"""Per-frame overlap scoring and run-to-run comparison reports.

Scores are intersection-over-union of a chosen label class against ground
truth, frame by frame.  Frames whose ground truth holds none of the class
are kept in the series (both-empty counts as a perfect 1.0) but excluded
from every average, so empty cap frames cannot pad the numbers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .volume import BODY, LabelVolume

BAND_NAMES = ("legs", "mid_body", "head")


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pixel-set intersection over union; both empty counts as 1."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


@dataclass(frozen=True)
class EvalReport:
    variant: str
    per_frame: tuple            # IOU per frame, full length
    gt_nonempty: tuple          # which frames actually hold ground truth
    bands: dict                 # band name -> average over scored frames
    overall: float

    def scored_frames(self) -> list[int]:
        return [z for z, ne in enumerate(self.gt_nonempty) if ne]


def _band_slices(nz: int) -> dict[str, range]:
    splits = np.array_split(np.arange(nz), 3)
    return {name: range(int(part[0]), int(part[-1]) + 1)
            for name, part in zip(BAND_NAMES, splits)}


def _masked_mean(series, keep) -> float:
    vals = [v for v, k in zip(series, keep) if k]
    return float(np.mean(vals)) if vals else float("nan")


def evaluate(pred: LabelVolume, gt: LabelVolume, label: int = BODY,
             variant: str = "") -> EvalReport:
    """Score one label class of a prediction against ground truth."""
    if pred.dims != gt.dims:
        raise ValueError(f"volume dims differ: {pred.dims} vs {gt.dims}")
    p = pred.labels == label
    g = gt.labels == label
    nz = pred.dims[2]
    series = tuple(iou(p[:, :, z], g[:, :, z]) for z in range(nz))
    nonempty = tuple(bool(g[:, :, z].any()) for z in range(nz))
    bands = {}
    for name, rng in _band_slices(nz).items():
        bands[name] = _masked_mean([series[z] for z in rng],
                                   [nonempty[z] for z in rng])
    overall = _masked_mean(series, nonempty)
    return EvalReport(variant, series, nonempty, bands, overall)


def report_csv(report: EvalReport) -> str:
    """`frame,iou` rows followed by a commented summary block."""
    out = io.StringIO()
    out.write("frame,iou\n")
    for z, v in enumerate(report.per_frame):
        out.write(f"{z},{v:.6f}\n")
    out.write("# summary\n")
    if report.variant:
        out.write(f"# variant,{report.variant}\n")
    for name in BAND_NAMES:
        out.write(f"# {name},{report.bands[name]:.6f}\n")
    out.write(f"# overall,{report.overall:.6f}\n")
    return out.getvalue()


def save_report(report: EvalReport, csv_path=None, png_path=None) -> None:
    """Write the CSV table and/or a line plot of the per-frame series."""
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(report_csv(report))
    if png_path is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 3.2))
        ax.plot(range(len(report.per_frame)), report.per_frame, lw=1.2)
        scored = report.scored_frames()
        if scored:
            ax.axvspan(min(scored), max(scored), color="0.92", zorder=0)
        ax.set_xlabel("frame")
        ax.set_ylabel("IOU")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(report.variant or "segmentation vs ground truth")
        fig.tight_layout()
        fig.savefig(png_path, dpi=110)
        plt.close(fig)


def summary_table(reports) -> str:
    """Side-by-side band averages, one column per variant."""
    reports = list(reports)
    names = [r.variant or f"run {i + 1}" for i, r in enumerate(reports)]
    width = max(12, *(len(n) for n in names)) + 2
    rows = [("Legs", "legs"), ("Mid-body", "mid_body"),
            ("Head", "head"), ("Average", None)]
    lines = ["".join(["          "] + [n.rjust(width) for n in names])]
    for title, key in rows:
        vals = [r.overall if key is None else r.bands[key] for r in reports]
        lines.append("".join([f"{title:<10}"]
                             + [f"{v:.4f}".rjust(width) for v in vals]))
    return "\n".join(lines)
