"""Local HTTP session service for interactive refinement.

One process serves one volume.  A browser (or any client) fetches windowed
slice images, posts scribbles and track seeds, triggers stage runs, and
polls progress.  Stage outputs land in the session directory as regular
MVOL files, written to a temp name and renamed, so a crash mid-run never
corrupts the previous completed artifact.

Endpoints (JSON unless noted):
  GET  /info                               volume dims, spacing, stage statuses
  GET  /slice/{axis}/{i}?window=c,w&overlay=stage   PNG image
  GET  /labels/{stage}.mvol                raw MVOL bytes
  GET  /progress/{job}                     job status + progress fraction
  POST /scribbles                          [{frame, cls, radius, points}]
  POST /seeds                              [{frame, x, y}]
  POST /run/{stage}                        -> {job}
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .geodesic import geodesic_stage
from .grabcut import Scribble, rasterize_scribbles
from .pipeline import PipelineConfig
from .preprocess import run_preprocess
from .tracker import run_tracking
from .volume import (
    LabelVolume,
    get_slice,
    label_overlay,
    load_labels,
    load_volume,
    save_labels,
    window_to_image,
)

STAGES = ("preprocess", "geodesic", "grabcut", "track")
_PREREQ = {"preprocess": None, "geodesic": "preprocess",
           "grabcut": "geodesic", "track": "grabcut"}
DEFAULT_PORT = 8707
DEFAULT_WINDOW = (0.0, 2000.0)


class PrerequisiteError(Exception):
    """A stage was started before the stage it consumes has completed."""


class BusyError(Exception):
    """A stage is already running in this session."""


def _record_hash(record: dict) -> str:
    return hashlib.sha1(
        json.dumps(record, sort_keys=True).encode()).hexdigest()


class Session:
    """All mutable state behind the endpoints; one instance per process."""

    def __init__(self, volume_path, session_dir=None, seed: int = 0,
                 cfg: PipelineConfig | None = None):
        self.volume_path = Path(volume_path)
        self.volume = load_volume(self.volume_path)
        self.dir = Path(session_dir) if session_dir else Path(
            str(self.volume_path) + ".session")
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg if cfg is not None else PipelineConfig()
        if seed:
            import dataclasses
            self.cfg = dataclasses.replace(
                self.cfg, grabcut=dataclasses.replace(self.cfg.grabcut,
                                                      seed=seed))
        self.scribbles: list[Scribble] = []
        self.seeds: list[tuple[int, int, int]] = []
        self._hashes: set[str] = set()
        self.labels: dict[str, LabelVolume] = {}
        self.status = {s: {"status": "pending", "progress": 0.0, "error": None}
                       for s in STAGES}
        self.jobs: dict[str, dict] = {}
        self._job_counter = 0
        self._state_lock = threading.Lock()   # guards dicts above
        self._gate = threading.Lock()         # one stage at a time
        self._adopt_artifacts()

    # -- artifacts ---------------------------------------------------------

    def _artifact(self, stage: str) -> Path:
        return self.dir / f"{stage}.mvol"

    def _adopt_artifacts(self) -> None:
        """Pick up completed outputs from an earlier process, if any."""
        for stage in STAGES:
            p = self._artifact(stage)
            if p.exists():
                self.labels[stage] = load_labels(p)
                self.status[stage] = {"status": "done", "progress": 1.0,
                                      "error": None}

    def _store(self, stage: str, lv: LabelVolume) -> None:
        tmp = self._artifact(stage).with_suffix(".tmp")
        save_labels(lv, tmp)
        os.replace(tmp, self._artifact(stage))
        self.labels[stage] = lv

    # -- records -----------------------------------------------------------

    def add_scribbles(self, records) -> tuple[int, list]:
        accepted, rejected = 0, []
        nx, ny, nz = self.volume.dims
        with self._state_lock:
            for i, rec in enumerate(records):
                try:
                    frame = int(rec["frame"])
                    cls = str(rec["cls"]).upper()
                    radius = int(rec.get("radius", 1))
                    points = [(float(x), float(y)) for x, y in rec["points"]]
                except (KeyError, TypeError, ValueError) as exc:
                    rejected.append({"index": i, "reason": f"malformed: {exc}"})
                    continue
                if cls not in ("FG", "BG"):
                    rejected.append({"index": i, "reason": f"bad class {cls!r}"})
                    continue
                if not 0 <= frame < nz:
                    rejected.append({"index": i,
                                     "reason": f"frame {frame} out of range"})
                    continue
                if radius < 1:
                    rejected.append({"index": i, "reason": "radius < 1"})
                    continue
                bad = [p for p in points
                       if not (0 <= p[0] < nx and 0 <= p[1] < ny)]
                if bad or not points:
                    rejected.append({"index": i,
                                     "reason": f"points out of bounds: {bad}"})
                    continue
                h = _record_hash({"frame": frame, "cls": cls,
                                  "radius": radius, "points": points})
                accepted += 1
                if h in self._hashes:
                    continue                      # idempotent repost
                self._hashes.add(h)
                self.scribbles.append(
                    Scribble(frame, cls, radius, tuple(points)))
            self._persist_scribbles()
        return accepted, rejected

    def add_seeds(self, records) -> tuple[int, list]:
        accepted, rejected = 0, []
        nx, ny, nz = self.volume.dims
        with self._state_lock:
            for i, rec in enumerate(records):
                try:
                    frame, x, y = (int(rec["frame"]), int(rec["x"]),
                                   int(rec["y"]))
                except (KeyError, TypeError, ValueError) as exc:
                    rejected.append({"index": i, "reason": f"malformed: {exc}"})
                    continue
                if not (0 <= frame < nz and 0 <= x < nx and 0 <= y < ny):
                    rejected.append({"index": i, "reason": "out of bounds"})
                    continue
                h = _record_hash({"seed": [frame, x, y]})
                accepted += 1
                if h in self._hashes:
                    continue
                self._hashes.add(h)
                self.seeds.append((frame, x, y))
            self._persist_seeds()
        return accepted, rejected

    def _persist_scribbles(self) -> None:
        lines = []
        for s in self.scribbles:
            coords = ",".join(f"{p[0]:g},{p[1]:g}" for p in s.points)
            lines.append(f"{s.frame},{s.cls},{s.radius:g},{coords}")
        (self.dir / "scribbles.txt").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    def _persist_seeds(self) -> None:
        lines = [f"{f},{x},{y}" for f, x, y in self.seeds]
        (self.dir / "seeds.txt").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    # -- stage execution ---------------------------------------------------

    def start_stage(self, stage: str) -> str:
        if stage not in STAGES:
            raise KeyError(f"unknown stage {stage!r}")
        need = _PREREQ[stage]
        if need and self.status[need]["status"] != "done":
            raise PrerequisiteError(f"{stage} needs {need} to finish first")
        if not self._gate.acquire(blocking=False):
            raise BusyError("another stage is already running")
        with self._state_lock:
            self._job_counter += 1
            job = f"job-{self._job_counter}"
            self.jobs[job] = {"stage": stage, "status": "running",
                              "progress": 0.0, "error": None}
            self.status[stage] = {"status": "running", "progress": 0.0,
                                  "error": None}
        worker = threading.Thread(target=self._run, args=(stage, job),
                                  daemon=True)
        worker.start()
        return job

    def _progress_cb(self, stage: str, job: str):
        def cb(frac: float) -> None:
            frac = float(min(max(frac, 0.0), 1.0))
            with self._state_lock:
                self.jobs[job]["progress"] = frac
                self.status[stage]["progress"] = frac
        return cb

    def _run(self, stage: str, job: str) -> None:
        try:
            cb = self._progress_cb(stage, job)
            if stage == "preprocess":
                out = run_preprocess(self.volume, self.cfg.preprocess).labels
            elif stage == "geodesic":
                out = geodesic_stage(self.volume, self.labels["preprocess"],
                                     self.cfg.geodesic, progress=cb)
            elif stage == "grabcut":
                scrib = None
                if self.scribbles:
                    scrib = rasterize_scribbles(self.scribbles,
                                                self.volume.dims)
                from .grabcut import grabcut_volume
                out = grabcut_volume(self.volume, self.labels["geodesic"],
                                     scrib, self.cfg.grabcut,
                                     progress=cb).labels
            else:
                out = run_tracking(self.labels["grabcut"], list(self.seeds),
                                   self.cfg.tracker).labels
            self._store(stage, out)
            with self._state_lock:
                self.jobs[job].update(status="done", progress=1.0)
                self.status[stage] = {"status": "done", "progress": 1.0,
                                      "error": None}
        except Exception as exc:    # noqa: BLE001 - reported via progress API
            with self._state_lock:
                msg = f"{type(exc).__name__}: {exc}"
                self.jobs[job].update(status="failed", error=msg)
                self.status[stage] = {"status": "failed", "progress": 0.0,
                                      "error": msg}
        finally:
            self._gate.release()

    # -- views -------------------------------------------------------------

    def info(self) -> dict:
        with self._state_lock:
            stages = {s: dict(v) for s, v in self.status.items()}
        return {"volume": self.volume_path.name,
                "dims": list(self.volume.dims),
                "spacing": list(self.volume.spacing),
                "stages": stages}

    def slice_png(self, axis: str, index: int, window=DEFAULT_WINDOW,
                  overlay: str | None = None) -> bytes:
        gray = window_to_image(get_slice(self.volume, axis, index), *window)
        if overlay is not None:
            if overlay not in STAGES:
                raise KeyError(f"unknown stage {overlay!r}")
            lv = self.labels.get(overlay)
            if lv is None:
                raise KeyError(f"stage {overlay!r} has no labels yet")
            image = label_overlay(gray, get_slice(lv, axis, index))
        else:
            image = gray
        from PIL import Image

        buf = io.BytesIO()
        if image.ndim == 2:
            Image.fromarray(image.T).save(buf, format="PNG")
        else:
            Image.fromarray(np.swapaxes(image, 0, 1)).save(buf, format="PNG")
        return buf.getvalue()

    def labels_bytes(self, stage: str) -> bytes:
        if stage not in STAGES:
            raise KeyError(f"unknown stage {stage!r}")
        p = self._artifact(stage)
        if self.status[stage]["status"] != "done" or not p.exists():
            raise KeyError(f"stage {stage!r} has not completed")
        return p.read_bytes()

    def progress(self, job: str) -> dict:
        with self._state_lock:
            if job not in self.jobs:
                raise KeyError(f"unknown job {job!r}")
            return dict(self.jobs[job])


class _Handler(BaseHTTPRequestHandler):
    server_version = "wrapseg-service"

    # quiet by default; the CLI is the interactive surface
    def log_message(self, fmt, *args):  # noqa: D102
        pass

    @property
    def session(self) -> Session:
        return self.server.session

    def _send(self, code: int, body: bytes, ctype: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, payload: dict) -> None:
        self._send(code, json.dumps(payload).encode(), "application/json")

    def _error(self, code: int, message: str) -> None:
        self._json(code, {"error": message})

    def do_OPTIONS(self):  # noqa: N802 - stdlib naming
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):  # noqa: N802
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if parts == ["info"]:
                return self._json(200, self.session.info())
            if len(parts) == 3 and parts[0] == "slice":
                return self._get_slice(parts[1], parts[2], url.query)
            if len(parts) == 2 and parts[0] == "progress":
                return self._json(200, self.session.progress(parts[1]))
            if len(parts) == 2 and parts[0] == "labels":
                m = re.fullmatch(r"(\w+)\.mvol", parts[1])
                if not m:
                    return self._error(404, "expected /labels/{stage}.mvol")
                data = self.session.labels_bytes(m.group(1))
                return self._send(200, data, "application/octet-stream")
            return self._error(404, f"no such resource: {url.path}")
        except KeyError as exc:
            return self._error(404, str(exc.args[0]))
        except (ValueError, IndexError) as exc:
            return self._error(400, str(exc))

    def _get_slice(self, axis: str, index: str, query: str) -> None:
        params = parse_qs(query)
        window = DEFAULT_WINDOW
        if "window" in params:
            try:
                c, w = (float(v) for v in params["window"][0].split(","))
            except ValueError:
                return self._error(400, "window must be center,width")
            if w <= 0:
                return self._error(400, "window width must be positive")
            window = (c, w)
        overlay = params.get("overlay", [None])[0]
        try:
            png = self.session.slice_png(axis, int(index), window, overlay)
        except KeyError as exc:
            return self._error(404, str(exc.args[0]))
        except (ValueError, IndexError) as exc:
            return self._error(400, str(exc))
        return self._send(200, png, "image/png")

    def do_POST(self):  # noqa: N802
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length) if length else b""
            if parts == ["scribbles"] or parts == ["seeds"]:
                try:
                    records = json.loads(raw.decode() or "[]")
                except json.JSONDecodeError as exc:
                    return self._error(400, f"bad JSON: {exc}")
                if not isinstance(records, list):
                    return self._error(400, "expected a JSON list of records")
                add = (self.session.add_scribbles if parts == ["scribbles"]
                       else self.session.add_seeds)
                accepted, rejected = add(records)
                return self._json(200, {"accepted": accepted,
                                        "rejected": rejected})
            if len(parts) == 2 and parts[0] == "run":
                try:
                    job = self.session.start_stage(parts[1])
                except KeyError as exc:
                    return self._error(404, str(exc.args[0]))
                except PrerequisiteError as exc:
                    return self._error(409, str(exc))
                except BusyError as exc:
                    return self._error(409, str(exc))
                return self._json(202, {"job": job})
            return self._error(404, f"no such resource: {url.path}")
        except Exception as exc:    # noqa: BLE001 - keep the server alive
            return self._error(500, f"{type(exc).__name__}: {exc}")


def make_server(session: Session, port: int = DEFAULT_PORT,
                host: str = "127.0.0.1") -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _Handler)
    server.session = session
    return server


def serve(volume_path, port: int = DEFAULT_PORT, session_dir=None,
          seed: int = 0) -> None:
    session = Session(volume_path, session_dir, seed)
    server = make_server(session, port)
    host, bound = server.server_address[:2]
    print(f"serving {session.volume_path.name} on http://{host}:{bound} "
          f"(session dir: {session.dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
