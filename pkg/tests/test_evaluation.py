"""Overlap scoring: the metric itself, banding, and report output."""

import numpy as np
import pytest

from wrapseg.evaluation import (
    BAND_NAMES,
    evaluate,
    iou,
    report_csv,
    save_report,
    summary_table,
)
from wrapseg.volume import BANDAGE, BODY, LabelVolume

from oracles import pixel_set_iou


def _mask(shape, rect=None):
    m = np.zeros(shape, dtype=bool)
    if rect:
        x0, x1, y0, y1 = rect
        m[x0:x1, y0:y1] = True
    return m


class TestIou:
    def test_identical_nonempty(self):
        m = _mask((10, 10), (2, 8, 2, 8))
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = _mask((10, 10), (0, 4, 0, 4))
        b = _mask((10, 10), (6, 10, 6, 10))
        assert iou(a, b) == 0.0

    def test_half_overlap_by_count(self):
        g = np.ones((8, 8), dtype=bool)
        p = _mask((8, 8), (0, 4, 0, 8))      # left half
        assert iou(p, g) == 0.5

    def test_both_empty(self):
        z = np.zeros((5, 5), dtype=bool)
        assert iou(z, z) == 1.0

    def test_symmetric_and_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.random((9, 9)) < 0.5
            b = rng.random((9, 9)) < 0.5
            assert iou(a, b) == iou(b, a)
            assert iou(a, b) == pytest.approx(pixel_set_iou(a, b))

    def test_one_iff_equal(self):
        a = _mask((6, 6), (1, 4, 1, 4))
        b = a.copy()
        b[5, 5] = True
        assert iou(a, b) < 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            iou(np.zeros((3, 3), bool), np.zeros((4, 3), bool))


def _vol(lab):
    return LabelVolume(lab.astype(np.uint8), (1.0, 1.0, 2.5))


def _body_stack(nz=12, empty=()):
    lab = np.zeros((20, 20, nz), dtype=np.uint8)
    for z in range(nz):
        if z not in empty:
            lab[4:16, 4:16, z] = BODY
    return lab


class TestEvaluate:
    def test_perfect_prediction(self):
        gt = _vol(_body_stack())
        rep = evaluate(gt, gt)
        assert rep.per_frame == (1.0,) * 12
        assert rep.overall == 1.0
        assert all(rep.bands[b] == 1.0 for b in BAND_NAMES)

    def test_series_in_unit_interval(self):
        rng = np.random.default_rng(5)
        pred = _vol((rng.random((10, 10, 9)) < 0.4) * BODY)
        gt = _vol((rng.random((10, 10, 9)) < 0.4) * BODY)
        rep = evaluate(pred, gt)
        assert all(0.0 <= v <= 1.0 for v in rep.per_frame)
        assert 0.0 <= rep.overall <= 1.0

    def test_empty_gt_frames_excluded_from_averages(self):
        gt = _body_stack(empty=(0, 1))
        pred = _body_stack()                  # predicts body on empty frames too
        rep = evaluate(_vol(pred), _vol(gt))
        assert rep.per_frame[0] == 0.0        # spurious prediction scores zero
        assert rep.gt_nonempty[0] is False
        assert rep.overall == 1.0             # but doesn't drag the average

    def test_both_empty_frame_scores_one_in_series(self):
        gt = _body_stack(empty=(3,))
        rep = evaluate(_vol(gt), _vol(gt))
        assert rep.per_frame[3] == 1.0
        assert rep.gt_nonempty[3] is False

    def test_bands_recompute_from_series(self):
        rng = np.random.default_rng(8)
        pred = _vol((rng.random((14, 14, 13)) < 0.5) * BODY)
        gt = _vol((rng.random((14, 14, 13)) < 0.5) * BODY)
        rep = evaluate(pred, gt)
        nz = 13
        splits = np.array_split(np.arange(nz), 3)
        for name, part in zip(BAND_NAMES, splits):
            vals = [rep.per_frame[z] for z in part if rep.gt_nonempty[z]]
            assert rep.bands[name] == pytest.approx(np.mean(vals))
        scored = [v for v, ne in zip(rep.per_frame, rep.gt_nonempty) if ne]
        assert rep.overall == pytest.approx(np.mean(scored))

    def test_scores_requested_class(self):
        lab = _body_stack()
        pred = lab.copy()
        pred[pred == BODY] = BANDAGE
        rep_body = evaluate(_vol(pred), _vol(lab), label=BODY)
        assert rep_body.overall == 0.0

    def test_all_empty_band_is_nan(self):
        gt = np.zeros((8, 8, 6), dtype=np.uint8)
        gt[2:6, 2:6, 4:] = BODY               # only the top third has body
        rep = evaluate(_vol(gt), _vol(gt))
        assert np.isnan(rep.bands["legs"])
        assert rep.bands["head"] == 1.0
        assert rep.overall == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dims"):
            evaluate(_vol(_body_stack(12)), _vol(_body_stack(10)))


class TestReportOutput:
    def test_csv_layout(self):
        gt = _vol(_body_stack(6))
        rep = evaluate(gt, gt, variant="perfect")
        text = report_csv(rep)
        lines = text.splitlines()
        assert lines[0] == "frame,iou"
        assert lines[1] == "0,1.000000"
        assert len([l for l in lines if not l.startswith("#")]) == 7
        assert "# variant,perfect" in lines
        assert "# overall,1.000000" in lines
        for band in BAND_NAMES:
            assert any(l.startswith(f"# {band},") for l in lines)

    def test_save_report_files(self, tmp_path):
        gt = _vol(_body_stack(6))
        rep = evaluate(gt, gt, variant="demo")
        csv = tmp_path / "r.csv"
        png = tmp_path / "r.png"
        save_report(rep, csv, png)
        assert csv.read_text().startswith("frame,iou")
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_summary_table(self):
        gt = _vol(_body_stack(9))
        a = evaluate(gt, gt, variant="full")
        pred = _body_stack(9)
        pred[4:16, 4:10, :] = 0              # drop part of the body
        b = evaluate(_vol(pred), gt, variant="w/o tracking")
        table = summary_table([a, b])
        lines = table.splitlines()
        assert "full" in lines[0] and "w/o tracking" in lines[0]
        assert lines[1].startswith("Legs")
        assert lines[4].startswith("Average")
        assert "1.0000" in lines[4]
