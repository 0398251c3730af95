"""Track-continuity filter: segments, matching, and the forward pass."""

import numpy as np
import pytest

from wrapseg.tracker import (
    MIN_SEGMENT_PX,
    NoTracksError,
    SeedMiss,
    TrackerConfig,
    extract_segments,
    greedy_assign,
    parse_seed_file,
    run_tracking,
    seed_track,
    segment_iou,
    similarity,
    start_track,
    step_tracks,
    track_report,
    _make_segment,
)
from wrapseg.volume import BANDAGE, BODY, EXTERIOR_AIR, LabelVolume

from oracles import all_assignments_best, greedy_max_matching, pixel_set_iou


def _seg_from_mask(mask, frame=0):
    return _make_segment(frame, np.argwhere(mask))


def _rect(x0, x1, y0, y1, shape=(40, 40)):
    m = np.zeros(shape, dtype=bool)
    m[x0:x1, y0:y1] = True
    return m


# ---------------------------------------------------------------------------
# segment extraction


class TestExtractSegments:
    def test_two_blobs(self):
        mask = _rect(2, 6, 2, 6) | _rect(20, 30, 10, 14)
        segs = extract_segments(mask, frame=7)
        assert len(segs) == 2
        assert sorted(s.area for s in segs) == [16, 40]
        assert all(s.frame == 7 for s in segs)

    def test_scan_order_is_deterministic(self):
        mask = _rect(0, 3, 30, 36) | _rect(20, 26, 0, 3)
        segs = extract_segments(mask)
        # the component whose first pixel comes first in scan order leads
        assert segs[0].coords[0, 0] == 0

    def test_small_blobs_dropped(self):
        mask = _rect(0, 2, 0, 2)          # 4 px, below the floor
        assert extract_segments(mask) == []
        plus = np.zeros((9, 9), dtype=bool)
        plus[4, 3:6] = True
        plus[3:6, 4] = True               # 5 px exactly
        assert len(extract_segments(plus)) == 1
        assert extract_segments(plus)[0].area == MIN_SEGMENT_PX

    def test_diagonal_chain_is_one_segment(self):
        mask = np.zeros((10, 10), dtype=bool)
        for i in range(5):
            mask[i, i] = True             # touches only at corners
        segs = extract_segments(mask)
        assert len(segs) == 1 and segs[0].area == 5

    def test_empty_mask(self):
        assert extract_segments(np.zeros((8, 8), dtype=bool)) == []

    def test_centroid(self):
        segs = extract_segments(_rect(2, 6, 10, 14))
        assert segs[0].centroid == (3.5, 11.5)


# ---------------------------------------------------------------------------
# similarity


class TestSimilarity:
    def test_identical_and_disjoint(self):
        a = _seg_from_mask(_rect(0, 4, 0, 4))
        b = _seg_from_mask(_rect(10, 14, 0, 4))
        assert segment_iou(a, a) == 1.0
        assert segment_iou(a, b) == 0.0

    def test_matches_mask_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            ma = rng.random((12, 12)) < 0.4
            mb = rng.random((12, 12)) < 0.4
            if not ma.any() or not mb.any():
                continue
            got = segment_iou(_seg_from_mask(ma), _seg_from_mask(mb))
            assert got == pytest.approx(pixel_set_iou(ma, mb))

    def test_history_mean(self):
        # s is half of A (IoU 1/2) and a quarter of B (IoU 1/4)
        s = _seg_from_mask(_rect(0, 2, 0, 2))
        a = _seg_from_mask(_rect(0, 4, 0, 2))
        b = _seg_from_mask(_rect(0, 4, 0, 4))
        assert similarity([a, b], s) == pytest.approx(0.375)

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            similarity([], _seg_from_mask(_rect(0, 2, 0, 2)))


# ---------------------------------------------------------------------------
# greedy one-to-one matching


class TestGreedyAssign:
    def test_matches_oracle_on_random_matrices(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            nr, nc = rng.integers(0, 6, size=2)
            scores = rng.random((nr, nc)).round(3)
            gate = float(rng.choice([0.0, 0.2, 0.5, 0.9]))
            got = greedy_assign(scores, gate)
            want = [(r, c) for r, c, _ in greedy_max_matching(scores, gate)]
            assert got == want

    def test_higher_pair_wins_contested_segment(self):
        scores = np.array([[0.8, 0.0], [0.6, 0.0]])
        assert greedy_assign(scores[:, :1], 0.1) == [(0, 0)]

    def test_gate_inclusive(self):
        assert greedy_assign(np.array([[0.1]]), 0.1) == [(0, 0)]
        assert greedy_assign(np.array([[0.0999]]), 0.1) == []

    def test_greedy_can_differ_from_optimal(self):
        # deliberately greedy, not assignment-optimal: keep one case on
        # record where the exhaustive optimum picks a different pairing
        scores = np.array([[0.9, 0.85], [0.8, 0.1]])
        greedy = greedy_assign(scores, 0.05)
        assert greedy == [(0, 0), (1, 1)]
        _, best = all_assignments_best(scores, 0.05)
        assert set(best) == {(0, 1), (1, 0)}


# ---------------------------------------------------------------------------
# track lifecycle


def _moving_square(n_frames, start=5, size=6, shift=1, shape=(40, 40)):
    """Per-frame segment lists for a square sliding one pixel per frame."""
    frames = []
    for k in range(n_frames):
        x0 = start + k * shift
        frames.append(extract_segments(_rect(x0, x0 + size, 10, 10 + size, shape), k))
    return frames


class TestTrackLifecycle:
    def test_seeded_history_is_full_window(self):
        segs = extract_segments(_rect(2, 8, 2, 8), frame=0)
        t = seed_track(0, (4, 4), segs, track_id=1, window=4)
        assert len(t.history) == 4
        assert all(h is segs[0] for h in t.history)
        assert t.start_frame == 0 and t.end_frame == 0
        assert t.origin == "seed@0(4,4)"

    def test_seed_miss(self):
        segs = extract_segments(_rect(2, 8, 2, 8), frame=0)
        with pytest.raises(SeedMiss):
            seed_track(0, (20, 20), segs)

    def test_seed_point_rounding(self):
        segs = extract_segments(_rect(2, 8, 2, 8), frame=0)
        t = seed_track(0, (4.4, 6.6), segs)
        assert t.segments[0] is segs[0]

    def test_follows_moving_square(self):
        frames = _moving_square(8)
        t = start_track(1, "auto@0", frames[0][0], 4)
        for z in range(1, 8):
            free = step_tracks([t], frames[z], 0.1, 4)
            assert free == []
        assert t.status == "active"
        assert t.end_frame == 7
        assert sorted(t.segments) == list(range(8))
        # history keeps the four most recent claims, newest first
        assert [h.frame for h in t.history] == [7, 6, 5, 4]

    def test_cease_on_gate_failure_and_stays_ceased(self):
        frames = _moving_square(3)
        far = extract_segments(_rect(30, 36, 30, 36), frame=1)
        t = start_track(1, "auto@0", frames[0][0], 4)
        free = step_tracks([t], far, 0.1, 4)
        assert t.status == "ceased"
        assert len(free) == 1                     # nobody claimed it
        # a ceased track ignores later perfect matches
        free2 = step_tracks([t], frames[0], 0.1, 4)
        assert len(free2) == 1 and t.end_frame == 0
        with pytest.raises(ValueError):
            t.claim(frames[1][0], 4)

    def test_contiguity_enforced(self):
        frames = _moving_square(4)
        t = start_track(1, "auto@0", frames[0][0], 4)
        with pytest.raises(ValueError):
            t.claim(frames[3][0], 4)             # skips frames 1-2

    def test_one_to_one_claims(self):
        base = extract_segments(_rect(5, 11, 10, 16), frame=0)
        t1 = start_track(1, "auto@0", base[0], 4)
        t2 = start_track(2, "auto@0", base[0], 4)
        nxt = extract_segments(_rect(5, 11, 10, 16), frame=1)
        free = step_tracks([t1, t2], nxt, 0.1, 4)
        assert free == []
        claimed = [t for t in (t1, t2) if t.status == "active"]
        assert len(claimed) == 1                  # the other ceased
        assert claimed[0].segments[1] is nxt[0]

    def test_lower_gate_never_ceases_earlier(self):
        def replay(eps):
            frames = []
            local = np.random.default_rng(99)
            for z in range(10):
                segs = []
                for _ in range(local.integers(1, 4)):
                    x0 = int(local.integers(0, 30))
                    y0 = int(local.integers(0, 30))
                    w = int(local.integers(3, 9))
                    segs.append(_seg_from_mask(
                        _rect(x0, x0 + w, y0, y0 + w), frame=z))
                frames.append(segs)
            tracks = [start_track(i + 1, "auto@0", s, 4)
                      for i, s in enumerate(frames[0])]
            ceased_at = {}
            for z in range(1, 10):
                step_tracks(tracks, frames[z], eps, 4)
                for t in tracks:
                    if t.status == "ceased":
                        ceased_at.setdefault(t.id, z)
            return ceased_at

        low, high = replay(0.05), replay(0.3)
        for tid, z_high in high.items():
            assert low.get(tid, 10 ** 9) >= z_high


# ---------------------------------------------------------------------------
# forward pass over a label volume


def _volume_with_square(nz=12, dims=(48, 48), hole=(), blobs=()):
    """BODY square on every frame except `hole`; extra blobs as (frame, rect)."""
    lab = np.zeros(dims + (nz,), dtype=np.uint8)
    lab[...] = EXTERIOR_AIR
    for z in range(nz):
        if z in hole:
            continue
        lab[10:30, 10:30, z] = BODY       # 400 px
    for frame, (x0, x1, y0, y1) in blobs:
        lab[x0:x1, y0:y1, frame] = BODY
    return LabelVolume(lab, (1.0, 1.0, 2.5))


class TestRunTracking:
    def test_requires_seeds_or_auto_init(self):
        vol = _volume_with_square()
        with pytest.raises(NoTracksError):
            run_tracking(vol, seeds=(), cfg=TrackerConfig())

    def test_auto_init_keeps_body_and_drops_debris(self):
        blobs = [(5, (36, 42, 36, 41)), (6, (36, 42, 36, 41))]   # 30 px each
        vol = _volume_with_square(blobs=blobs)
        res = run_tracking(vol, cfg=TrackerConfig(auto_init=True))
        out = res.labels.labels
        assert np.array_equal(out[10:30, 10:30, :] == BODY,
                              vol.labels[10:30, 10:30, :] == BODY)
        assert (out[36:42, 36:41, 5:7] == BANDAGE).all()
        assert len(res.tracks) == 1
        assert res.tracks[0].origin == "auto@0"

    def test_seeded_run_equivalent(self):
        blobs = [(5, (36, 42, 36, 41))]
        vol = _volume_with_square(blobs=blobs)
        res = run_tracking(vol, seeds=[(0, 15, 15)], cfg=TrackerConfig())
        out = res.labels.labels
        assert (out[10:30, 10:30, :] == BODY).all()
        assert (out[36:42, 36:41, 5] == BANDAGE).all()
        assert res.tracks[0].origin == "seed@0(15,15)"

    def test_output_body_subset_of_input(self):
        vol = _volume_with_square(blobs=[(3, (40, 46, 2, 8))])
        res = run_tracking(vol, cfg=TrackerConfig(auto_init=True))
        out = res.labels.labels
        assert not ((out == BODY) & (vol.labels != BODY)).any()
        # nothing but BODY pixels changed
        moved = out != vol.labels
        assert (vol.labels[moved] == BODY).all()
        assert (out[moved] == BANDAGE).all()

    def test_hole_splits_into_two_tracks(self):
        vol = _volume_with_square(hole=(5, 6))
        res = run_tracking(vol, cfg=TrackerConfig(auto_init=True))
        assert len(res.tracks) == 2
        first, second = res.tracks
        assert first.status == "ceased"
        assert (first.start_frame, first.end_frame) == (0, 4)
        assert second.status == "active"
        assert (second.start_frame, second.end_frame) == (7, 11)
        out = res.labels.labels
        assert np.array_equal(out == BODY, vol.labels == BODY)

    def test_no_auto_init_loses_resumed_part(self):
        vol = _volume_with_square(hole=(5, 6))
        res = run_tracking(vol, seeds=[(0, 15, 15)], cfg=TrackerConfig())
        out = res.labels.labels
        assert (out[:, :, :5][vol.labels[:, :, :5] == BODY] == BODY).all()
        assert (out[:, :, 7:] != BODY).all()

    def test_seed_misses_raises(self):
        vol = _volume_with_square()
        with pytest.raises(SeedMiss):
            run_tracking(vol, seeds=[(0, 2, 2)], cfg=TrackerConfig())
        with pytest.raises(SeedMiss):
            run_tracking(vol, seeds=[(99, 15, 15)], cfg=TrackerConfig())

    def test_seed_on_tracked_segment_warns_once(self):
        vol = _volume_with_square()
        with pytest.warns(UserWarning, match="already tracked"):
            res = run_tracking(vol, seeds=[(0, 15, 15), (3, 20, 20)],
                               cfg=TrackerConfig())
        assert len(res.tracks) == 1

    def test_auto_init_size_floor(self):
        # 100 px blob persists across all frames; floor decides its fate
        vol = _volume_with_square(blobs=[(z, (36, 46, 30, 40))
                                         for z in range(12)])
        keep = run_tracking(vol, cfg=TrackerConfig(auto_init=True,
                                                   auto_init_px=100))
        drop = run_tracking(vol, cfg=TrackerConfig(auto_init=True,
                                                   auto_init_px=101))
        assert (keep.labels.labels[36:46, 30:40, :] == BODY).all()
        assert (drop.labels.labels[36:46, 30:40, :] == BANDAGE).all()

    def test_deterministic(self):
        vol = _volume_with_square(hole=(4,), blobs=[(2, (38, 44, 5, 11))])
        a = run_tracking(vol, cfg=TrackerConfig(auto_init=True))
        b = run_tracking(vol, cfg=TrackerConfig(auto_init=True))
        assert np.array_equal(a.labels.labels, b.labels.labels)
        assert track_report(a.tracks) == track_report(b.tracks)


# ---------------------------------------------------------------------------
# seed files and reports


class TestSeedIo:
    def test_parse_round_trip(self, tmp_path):
        p = tmp_path / "seeds.txt"
        p.write_text("# clicks\n3, 120, 88\n\n10,40,41  # second\n")
        assert parse_seed_file(p) == [(3, 120, 88), (10, 40, 41)]

    def test_parse_rejects_malformed(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("3,120\n")
        with pytest.raises(ValueError, match="bad.txt:1"):
            parse_seed_file(p)
        p.write_text("a,b,c\n")
        with pytest.raises(ValueError, match="integers"):
            parse_seed_file(p)

    def test_report_layout(self):
        vol = _volume_with_square(nz=4)
        res = run_tracking(vol, cfg=TrackerConfig(auto_init=True))
        rep = track_report(res.tracks)
        lines = rep.splitlines()
        assert lines[0].split() == ["track", "start", "end", "status", "origin"]
        assert lines[1].split() == ["1", "0", "3", "active", "auto@0"]
        assert "track 1 areas: 400 400 400 400" in rep
