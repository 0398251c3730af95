"""Session service over real HTTP: endpoints, stage jobs, persistence."""

import dataclasses
import io
import json
import threading
import time
import urllib.error
import urllib.request

import numpy as np
import pytest
from PIL import Image

from wrapseg.grabcut import GrabCutConfig, parse_scribble_file
from wrapseg.phantom import PhantomSpec, generate_phantom
from wrapseg.pipeline import PipelineConfig
from wrapseg.service import Session, make_server
from wrapseg.tracker import parse_seed_file
from wrapseg.volume import BANDAGE, BODY, Volume, load_labels, save_volume

SMALL = dict(rng_seed=11, dims=(64, 64, 40), body_margin_frames=4,
             cap_frames=2, bandage_thickness=(3, 4), metal_disc_radius=2)


def _req(method, url, payload=None):
    data = None
    headers = {}
    if payload is not None:
        data = json.dumps(payload).encode()
        headers["Content-Type"] = "application/json"
    req = urllib.request.Request(url, data=data, method=method,
                                 headers=headers)
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, dict(resp.headers), resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, dict(exc.headers), exc.read()


def _get_json(url):
    status, _, body = _req("GET", url)
    return status, json.loads(body)


def _wait_job(base, job, deadline=120.0):
    t0 = time.monotonic()
    samples = []
    while time.monotonic() - t0 < deadline:
        status, d = _get_json(f"{base}/progress/{job}")
        assert status == 200
        samples.append(d["progress"])
        if d["status"] in ("done", "failed"):
            return d, samples
        time.sleep(0.05)
    raise TimeoutError(f"job {job} did not finish")


def _start_server(session):
    server = make_server(session, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    return server, f"http://{host}:{port}"


@pytest.fixture(scope="module")
def air_service(tmp_path_factory):
    d = tmp_path_factory.mktemp("svc_air")
    hu = np.full((20, 18, 5), -1000, dtype=np.int16)
    path = d / "air.mvol"
    save_volume(Volume(hu, (1.0, 1.0, 2.0)), path)
    session = Session(path, d / "session")
    server, base = _start_server(session)
    yield base, session
    server.shutdown()
    server.server_close()


class TestInfoAndSlices:
    def test_info(self, air_service):
        base, _ = air_service
        status, d = _get_json(f"{base}/info")
        assert status == 200
        assert d["dims"] == [20, 18, 5]
        assert d["spacing"] == [1.0, 1.0, 2.0]
        assert set(d["stages"]) == {"preprocess", "geodesic", "grabcut",
                                    "track"}
        assert all(v["status"] == "pending" for v in d["stages"].values())

    def test_axial_slice_is_uniform_dark_png(self, air_service):
        base, _ = air_service
        status, headers, body = _req("GET", f"{base}/slice/axial/0")
        assert status == 200
        assert headers["Content-Type"] == "image/png"
        img = np.asarray(Image.open(io.BytesIO(body)))
        assert img.shape == (18, 20)          # rows = y, cols = x
        assert img.max() <= 1                 # all air, default window

    def test_window_changes_mapping(self, air_service):
        base, _ = air_service
        _, _, dark = _req("GET", f"{base}/slice/axial/0?window=0,2000")
        _, _, mid = _req("GET", f"{base}/slice/axial/0?window=-1000,100")
        dark_px = np.asarray(Image.open(io.BytesIO(dark)))
        mid_px = np.asarray(Image.open(io.BytesIO(mid)))
        assert dark_px.max() <= 1
        assert abs(int(mid_px[0, 0]) - 128) <= 1

    def test_other_axes(self, air_service):
        base, _ = air_service
        for axis, shape in (("sagittal", (5, 18)), ("coronal", (5, 20))):
            status, _, body = _req("GET", f"{base}/slice/{axis}/1")
            assert status == 200
            assert np.asarray(Image.open(io.BytesIO(body))).shape == shape

    def test_slice_errors(self, air_service):
        base, _ = air_service
        assert _req("GET", f"{base}/slice/axial/99")[0] == 400
        assert _req("GET", f"{base}/slice/oblique/0")[0] == 400
        assert _req("GET", f"{base}/slice/axial/0?window=oops")[0] == 400
        assert _req("GET", f"{base}/slice/axial/0?window=0,-5")[0] == 400

    def test_overlay_before_any_run(self, air_service):
        base, _ = air_service
        status, _, body = _req("GET", f"{base}/slice/axial/0?overlay=preprocess")
        assert status == 404
        assert b"no labels yet" in body
        assert _req("GET", f"{base}/slice/axial/0?overlay=bogus")[0] == 404

    def test_unknown_paths(self, air_service):
        base, _ = air_service
        assert _req("GET", f"{base}/nope")[0] == 404
        assert _req("GET", f"{base}/labels/bogus.mvol")[0] == 404
        assert _req("GET", f"{base}/labels/track.mvol")[0] == 404
        assert _req("GET", f"{base}/progress/job-99")[0] == 404
        assert _req("POST", f"{base}/nope", [])[0] == 404

    def test_cors_preflight(self, air_service):
        base, _ = air_service
        req = urllib.request.Request(f"{base}/info", method="OPTIONS")
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert resp.status == 204
            assert resp.headers["Access-Control-Allow-Origin"] == "*"


class TestRecordIngestion:
    def test_scribble_accept_and_persist(self, air_service):
        base, session = air_service
        rec = {"frame": 2, "cls": "FG", "radius": 2,
               "points": [[3, 4], [6, 4]]}
        status, d = _get_json_post(base + "/scribbles", [rec])
        assert status == 200
        assert d == {"accepted": 1, "rejected": []}
        on_disk = parse_scribble_file(session.dir / "scribbles.txt")
        assert len(on_disk) == 1
        assert on_disk[0].frame == 2 and on_disk[0].radius == 2

    def test_duplicate_post_is_idempotent(self, air_service):
        base, session = air_service
        rec = {"frame": 1, "cls": "BG", "radius": 1, "points": [[5, 5]]}
        n_before = len(session.scribbles)
        for _ in range(2):
            status, d = _get_json_post(base + "/scribbles", [rec])
            assert status == 200 and d["accepted"] == 1
        assert len(session.scribbles) == n_before + 1

    def test_rejections_are_per_record(self, air_service):
        base, _ = air_service
        records = [
            {"frame": 0, "cls": "FG", "radius": 1, "points": [[1, 1]]},
            {"frame": 0, "cls": "XX", "radius": 1, "points": [[1, 1]]},
            {"frame": 99, "cls": "FG", "radius": 1, "points": [[1, 1]]},
            {"frame": 0, "cls": "FG", "radius": 1, "points": [[500, 1]]},
            {"frame": 0, "cls": "FG", "radius": 0, "points": [[1, 1]]},
            {"cls": "FG", "radius": 1, "points": [[1, 1]]},
        ]
        status, d = _get_json_post(base + "/scribbles", records)
        assert status == 200
        assert d["accepted"] == 1
        assert [r["index"] for r in d["rejected"]] == [1, 2, 3, 4, 5]
        assert "out of range" in d["rejected"][1]["reason"]

    def test_seeds_roundtrip(self, air_service):
        base, session = air_service
        status, d = _get_json_post(
            base + "/seeds",
            [{"frame": 3, "x": 4, "y": 5}, {"frame": 0, "x": 99, "y": 0}])
        assert status == 200
        assert d["accepted"] == 1
        assert d["rejected"][0]["reason"] == "out of bounds"
        assert parse_seed_file(session.dir / "seeds.txt") == [(3, 4, 5)]

    def test_malformed_bodies(self, air_service):
        base, _ = air_service
        # empty body reads as an empty record list
        status, d = _get_json_post(f"{base}/scribbles", None)
        assert status == 200 and d["accepted"] == 0
        req = urllib.request.Request(f"{base}/scribbles", data=b"not json",
                                     method="POST")
        try:
            with urllib.request.urlopen(req, timeout=10) as resp:
                status = resp.status
        except urllib.error.HTTPError as exc:
            status = exc.code
        assert status == 400
        assert _req("POST", f"{base}/seeds", {"frame": 1})[0] == 400


def _get_json_post(url, payload):
    status, _, body = _req("POST", url, payload)
    return status, json.loads(body)


@pytest.fixture(scope="module")
def phantom_service(tmp_path_factory):
    d = tmp_path_factory.mktemp("svc_phantom")
    vol, gt = generate_phantom(PhantomSpec(**SMALL))
    path = d / "p.mvol"
    save_volume(vol, path)
    cfg = PipelineConfig(
        grabcut=GrabCutConfig(soft_wrap=True, stride=3, seed=0))
    session = Session(path, d / "session", cfg=cfg)
    server, base = _start_server(session)
    yield base, session
    server.shutdown()
    server.server_close()


class TestStageFlow:
    def test_interactive_loop(self, phantom_service):
        base, session = phantom_service

        # prerequisite enforcement before anything has run
        status, d = _get_json_post(base + "/run/geodesic", None)
        assert status == 409
        assert "preprocess" in d["error"]
        assert _req("POST", f"{base}/run/bogus")[0] == 404

        # preprocess
        status, d = _get_json_post(base + "/run/preprocess", None)
        assert status == 202
        done, _ = _wait_job(base, d["job"])
        assert done["status"] == "done"
        _, info = _get_json(f"{base}/info")
        assert info["stages"]["preprocess"]["status"] == "done"

        # overlay works now; bytes downloadable and well formed
        status, _, png = _req("GET", f"{base}/slice/axial/20?overlay=preprocess")
        assert status == 200 and png[:4] == b"\x89PNG"
        status, _, blob = _req("GET", f"{base}/labels/preprocess.mvol")
        assert status == 200
        pre = _labels_from_bytes(blob, session)
        assert pre.dims == (64, 64, 40)

        # geodesic with monotone progress
        _, d = _get_json_post(base + "/run/geodesic", None)
        done, samples = _wait_job(base, d["job"])
        assert done["status"] == "done"
        assert samples == sorted(samples)
        assert samples[-1] == 1.0

        # busy gate: grabcut takes seconds, a second start must bounce
        _, d = _get_json_post(base + "/run/grabcut", None)
        job = d["job"]
        status, e = _get_json_post(base + "/run/preprocess", None)
        assert status == 409 and "running" in e["error"]
        done, _ = _wait_job(base, job)
        assert done["status"] == "done"
        _, _, gc1 = _req("GET", f"{base}/labels/grabcut.mvol")

        # determinism: rerunning with identical inputs reproduces the bytes
        _, d = _get_json_post(base + "/run/grabcut", None)
        assert _wait_job(base, d["job"])[0]["status"] == "done"
        _, _, gc2 = _req("GET", f"{base}/labels/grabcut.mvol")
        assert gc1 == gc2

        # track without seeds and auto-init off surfaces the error
        _, d = _get_json_post(base + "/run/track", None)
        done, _ = _wait_job(base, d["job"])
        assert done["status"] == "failed"
        assert "NoTracksError" in done["error"]
        _, info = _get_json(f"{base}/info")
        assert info["stages"]["track"]["status"] == "failed"

        # scribble correction: pin a body patch to background, rerun
        gc_lab = _labels_from_bytes(gc1, session)
        geo_lab = _labels_from_bytes(
            _req("GET", f"{base}/labels/geodesic.mvol")[2], session)
        frame = 20
        body_px = np.argwhere(gc_lab.labels[:, :, frame] == BODY)
        cx, cy = body_px[len(body_px) // 2]
        rec = {"frame": frame, "cls": "BG", "radius": 2,
               "points": [[int(cx), int(cy)]]}
        status, d = _get_json_post(base + "/scribbles", [rec])
        assert d["accepted"] == 1
        _, d = _get_json_post(base + "/run/grabcut", None)
        assert _wait_job(base, d["job"])[0]["status"] == "done"
        _, _, gc3 = _req("GET", f"{base}/labels/grabcut.mvol")
        gc3_lab = _labels_from_bytes(gc3, session)
        assert gc3_lab.labels[cx, cy, frame] != BODY
        diff = gc3_lab.labels != gc_lab.labels
        movable = np.isin(geo_lab.labels, (BANDAGE, BODY))
        assert diff.any()
        assert movable[diff].all()

        # seeded tracking completes and only prunes
        body_px = np.argwhere(gc3_lab.labels[:, :, 14] == BODY)
        sx, sy = body_px[len(body_px) // 2]
        _, d = _get_json_post(
            base + "/seeds", [{"frame": 14, "x": int(sx), "y": int(sy)}])
        assert d["accepted"] == 1
        _, d = _get_json_post(base + "/run/track", None)
        done, _ = _wait_job(base, d["job"])
        assert done["status"] == "done"
        trk = _labels_from_bytes(
            _req("GET", f"{base}/labels/track.mvol")[2], session)
        assert ((trk.labels == BODY) <= (gc3_lab.labels == BODY)).all()
        assert (trk.labels[:, :, 14] == BODY).any()

        # a fresh process over the same session directory adopts artifacts
        resumed = Session(session.volume_path, session.dir, cfg=session.cfg)
        assert all(resumed.status[s]["status"] == "done"
                   for s in ("preprocess", "geodesic", "grabcut", "track"))
        assert np.array_equal(resumed.labels["track"].labels, trk.labels)


def _labels_from_bytes(blob, session):
    tmp = session.dir / "_download.mvol"
    tmp.write_bytes(blob)
    try:
        return load_labels(tmp)
    finally:
        tmp.unlink()
