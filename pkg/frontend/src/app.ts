/** DOM wiring: one canvas, one toolbar, one service client.
 *
 * All label state lives on the server; this file only keeps view state,
 * unsent strokes, and the current slice bitmap.  Anything that changes
 * labels goes through POST /run and comes back via refreshed slices.
 */

import { ServiceClient, ServiceError } from "./api.js";
import type { Axis, JobStatus, ScribbleRecord, SeedRecord, VolumeInfo } from "./api.js";
import {
  DEFAULT_STATE, Dims, ViewState,
  clampIndex, effectiveTool, panBy, setAxis, setIndex, setOverlay,
  setRadius, setTool, setWindow, setZoom, sliceCount, sliceShape, stepIndex,
} from "./state.js";
import { StrokeBuilder, Viewport, imageToCanvas, seedAt } from "./strokes.js";

const STAGES = ["preprocess", "geodesic", "grabcut", "track"] as const;
const POLL_MS = 500;

type StrokeStatus = "pending" | "accepted" | "rejected";

interface DrawnStroke {
  record: ScribbleRecord;
  status: StrokeStatus;
  reason?: string;
}

interface SeedMark {
  record: SeedRecord;
  missed: boolean;
}

function serviceBase(): string {
  const param = new URLSearchParams(location.search).get("service");
  if (param) return param.replace(/\/$/, "");
  if (location.protocol.startsWith("http")) return "";
  return "http://127.0.0.1:8707";
}

class App {
  client = new ServiceClient(serviceBase());
  state: ViewState = { ...DEFAULT_STATE };
  dims: Dims = [1, 1, 1];
  info: VolumeInfo | null = null;
  strokes: DrawnStroke[] = [];
  seeds: SeedMark[] = [];
  building: StrokeBuilder | null = null;
  panning: { x: number; y: number } | null = null;
  job: string | null = null;          // at most one stage in flight
  stamp = 0;                          // bumped when labels may have changed
  bitmap: HTMLImageElement | null = null;
  bitmapKey = "";

  canvas = document.getElementById("view") as HTMLCanvasElement;
  banner = document.getElementById("banner") as HTMLDivElement;
  slider = document.getElementById("slice") as HTMLInputElement;
  sliceLabel = document.getElementById("slice-label") as HTMLSpanElement;
  axisSel = document.getElementById("axis") as HTMLSelectElement;
  overlaySel = document.getElementById("overlay") as HTMLSelectElement;
  centerIn = document.getElementById("wcenter") as HTMLInputElement;
  widthIn = document.getElementById("wwidth") as HTMLInputElement;
  radiusIn = document.getElementById("radius") as HTMLInputElement;
  progress = document.getElementById("job-progress") as HTMLProgressElement;
  jobLabel = document.getElementById("job-label") as HTMLSpanElement;
  stageList = document.getElementById("stage-list") as HTMLDivElement;

  async boot(): Promise<void> {
    this.bindControls();
    await this.refreshInfo(true);
    this.render();
  }

  async refreshInfo(retry = false): Promise<void> {
    try {
      this.info = await this.client.info();
      this.dims = this.info.dims;
      this.state = { ...this.state, index: clampIndex(this.state.index, this.dims, this.state.axis) };
      this.setBanner("");
      this.syncControls();
    } catch {
      this.setBanner(`service unreachable at ${this.client.base || "this origin"} — retrying`, true);
      if (retry) setTimeout(() => void this.refreshInfo(true), 2000);
    }
  }

  setBanner(text: string, isError = false): void {
    this.banner.textContent = text;
    this.banner.className = isError ? "banner error" : text ? "banner info" : "banner";
  }

  // -- controls ------------------------------------------------------------

  bindControls(): void {
    this.axisSel.onchange = () => {
      this.state = setAxis(this.state, this.dims, this.axisSel.value as Axis);
      this.syncControls();
      this.render();
    };
    this.slider.oninput = () => {
      this.state = setIndex(this.state, this.dims, Number(this.slider.value));
      this.syncControls();
      this.render();
    };
    this.overlaySel.onchange = () => {
      this.state = setOverlay(this.state, this.overlaySel.value || null);
      this.render();
    };
    const applyWindow = () => {
      this.state = setWindow(this.state, Number(this.centerIn.value), Number(this.widthIn.value));
      this.render();
    };
    this.centerIn.onchange = applyWindow;
    this.widthIn.onchange = applyWindow;
    this.radiusIn.onchange = () => {
      this.state = setRadius(this.state, Number(this.radiusIn.value));
      this.radiusIn.value = String(this.state.radius);
    };
    for (const tool of ["pan", "scribble-fg", "scribble-bg", "seed"] as const) {
      const btn = document.getElementById(`tool-${tool}`) as HTMLButtonElement;
      btn.onclick = () => {
        this.state = setTool(this.state, tool);
        this.syncControls();
      };
    }
    for (const stage of STAGES) {
      const btn = document.getElementById(`run-${stage}`) as HTMLButtonElement;
      btn.onclick = () => void this.runStage(stage);
    }
    (document.getElementById("clear-strokes") as HTMLButtonElement).onclick = () => {
      this.strokes = this.strokes.filter((s) => s.status === "accepted");
      this.render();
    };

    this.canvas.onpointerdown = (e) => this.pointerDown(e);
    this.canvas.onpointermove = (e) => this.pointerMove(e);
    this.canvas.onpointerup = (e) => void this.pointerUp(e);
    this.canvas.onwheel = (e) => {
      e.preventDefault();
      const factor = e.deltaY < 0 ? 1.25 : 0.8;
      const old = this.state.zoom;
      this.state = setZoom(this.state, old * factor);
      const k = this.state.zoom / old;
      // keep the pixel under the cursor fixed while zooming
      this.state = {
        ...this.state,
        pan: {
          x: e.offsetX - k * (e.offsetX - this.state.pan.x),
          y: e.offsetY - k * (e.offsetY - this.state.pan.y),
        },
      };
      this.render();
    };
    window.onkeydown = (e) => {
      if (e.key === "ArrowUp" || e.key === "ArrowRight") {
        this.state = stepIndex(this.state, this.dims, 1);
      } else if (e.key === "ArrowDown" || e.key === "ArrowLeft") {
        this.state = stepIndex(this.state, this.dims, -1);
      } else {
        return;
      }
      this.syncControls();
      this.render();
    };
  }

  syncControls(): void {
    const count = sliceCount(this.dims, this.state.axis);
    this.slider.max = String(count - 1);
    this.slider.value = String(this.state.index);
    this.sliceLabel.textContent = `${this.state.index} / ${count - 1}`;
    this.axisSel.value = this.state.axis;
    this.centerIn.value = String(this.state.window.center);
    this.widthIn.value = String(this.state.window.width);
    this.radiusIn.value = String(this.state.radius);
    for (const tool of ["pan", "scribble-fg", "scribble-bg", "seed"] as const) {
      const btn = document.getElementById(`tool-${tool}`) as HTMLButtonElement;
      btn.classList.toggle("active", this.state.tool === tool);
    }
    if (this.info) {
      this.stageList.textContent = STAGES
        .map((s) => `${s}: ${this.info!.stages[s]?.status ?? "?"}`)
        .join("   ");
      for (const stage of STAGES) {
        const btn = document.getElementById(`run-${stage}`) as HTMLButtonElement;
        btn.disabled = this.job !== null;
      }
    }
  }

  // -- pointer tools -------------------------------------------------------

  viewport(): Viewport {
    return { zoom: this.state.zoom, pan: this.state.pan };
  }

  pointerDown(e: PointerEvent): void {
    this.canvas.setPointerCapture(e.pointerId);
    const tool = effectiveTool(this.state);
    if (tool === "scribble-fg" || tool === "scribble-bg") {
      this.building = new StrokeBuilder(
        this.state.index,
        tool === "scribble-fg" ? "FG" : "BG",
        this.state.radius,
        sliceShape(this.dims, this.state.axis),
      );
      this.building.add(e.offsetX, e.offsetY, this.viewport());
      this.render();
    } else if (tool === "pan") {
      this.panning = { x: e.offsetX, y: e.offsetY };
    }
  }

  pointerMove(e: PointerEvent): void {
    if (this.building) {
      this.building.add(e.offsetX, e.offsetY, this.viewport());
      this.render();
    } else if (this.panning) {
      this.state = panBy(this.state, e.offsetX - this.panning.x, e.offsetY - this.panning.y);
      this.panning = { x: e.offsetX, y: e.offsetY };
      this.render();
    }
  }

  async pointerUp(e: PointerEvent): Promise<void> {
    const tool = effectiveTool(this.state);
    if (this.building) {
      const record = this.building.finish();
      this.building = null;
      if (record) await this.commitStroke(record);
      this.render();
      return;
    }
    this.panning = null;
    if (tool === "seed") {
      const record = seedAt(e.offsetX, e.offsetY, this.viewport(),
                            this.state.index, sliceShape(this.dims, this.state.axis));
      if (record) await this.commitSeed(record);
    }
  }

  async commitStroke(record: ScribbleRecord): Promise<void> {
    const drawn: DrawnStroke = { record, status: "pending" };
    this.strokes.push(drawn);
    this.render();
    try {
      const out = await this.client.postScribbles([record]);
      if (out.rejected.length > 0) {
        drawn.status = "rejected";
        drawn.reason = out.rejected[0].reason;
        this.setBanner(`stroke rejected: ${drawn.reason}`, true);
      } else {
        drawn.status = "accepted";
        this.setBanner("stroke accepted — rerun grabcut to apply");
      }
    } catch (err) {
      drawn.status = "rejected";
      drawn.reason = String(err);
      this.setBanner(`stroke failed: ${drawn.reason}`, true);
    }
    this.render();
  }

  async commitSeed(record: SeedRecord): Promise<void> {
    const mark: SeedMark = { record, missed: false };
    this.seeds.push(mark);
    this.render();
    try {
      const out = await this.client.postSeeds([record]);
      if (out.rejected.length > 0) {
        mark.missed = true;
        this.setBanner(`seed rejected: ${out.rejected[0].reason}`, true);
        this.render();
        return;
      }
      await this.runStage("track", mark);
    } catch (err) {
      mark.missed = true;
      this.setBanner(`seed failed: ${String(err)}`, true);
      this.render();
    }
  }

  // -- stage jobs ----------------------------------------------------------

  async runStage(stage: string, seedMark?: SeedMark): Promise<void> {
    if (this.job !== null) {
      this.setBanner("a stage is already running", true);
      return;
    }
    try {
      this.job = await this.client.runStage(stage);
    } catch (err) {
      const why = err instanceof ServiceError ? err.message : String(err);
      this.setBanner(`cannot start ${stage}: ${why}`, true);
      return;
    }
    this.jobLabel.textContent = `${stage} (${this.job})`;
    this.syncControls();
    const done = await this.client.pollJob(this.job, POLL_MS, (s: JobStatus) => {
      this.progress.value = s.progress;
    }).catch((err): JobStatus => (
      { stage, status: "failed", progress: 0, error: String(err) }
    ));
    this.job = null;
    this.jobLabel.textContent = "";
    this.progress.value = 0;
    if (done.status === "failed") {
      const why = done.error ?? "unknown error";
      if (seedMark && /hits no segment/.test(why)) seedMark.missed = true;
      this.setBanner(`${stage} failed: ${why}`, true);
    } else {
      this.stamp += 1;            // labels changed; refetch slices
      this.bitmapKey = "";
      this.setBanner(`${stage} done`);
    }
    await this.refreshInfo();
    this.render();
  }

  // -- drawing -------------------------------------------------------------

  render(): void {
    const key = [this.state.axis, this.state.index, this.state.window.center,
                 this.state.window.width, this.state.overlay ?? "", this.stamp].join("|");
    if (key !== this.bitmapKey) {
      this.bitmapKey = key;
      const img = new Image();
      img.onload = () => {
        this.bitmap = img;
        this.paint();
      };
      img.onerror = () => this.setBanner("slice fetch failed", true);
      img.src = this.client.sliceUrl(this.state.axis, this.state.index,
                                     this.state.window, this.state.overlay, this.stamp);
      return;                     // paint happens when the image arrives
    }
    this.paint();
  }

  paint(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.bitmap) {
      ctx.imageSmoothingEnabled = this.state.zoom < 1;
      ctx.setTransform(this.state.zoom, 0, 0, this.state.zoom,
                       this.state.pan.x, this.state.pan.y);
      ctx.drawImage(this.bitmap, 0, 0);
      ctx.setTransform(1, 0, 0, 1, 0, 0);
    }
    if (this.state.axis === "axial") {
      for (const s of this.strokes) {
        if (s.record.frame === this.state.index) this.drawStroke(ctx, s);
      }
      if (this.building) {
        this.drawPolyline(ctx, this.building.points, this.building.radius,
                          this.building.cls === "FG" ? "#27e827" : "#e82727", false);
      }
      for (const m of this.seeds) {
        if (m.record.frame === this.state.index) this.drawSeed(ctx, m);
      }
    }
  }

  drawStroke(ctx: CanvasRenderingContext2D, s: DrawnStroke): void {
    const color = s.status === "rejected" ? "#ff3333"
      : s.record.cls === "FG" ? "#27e827" : "#e82727";
    this.drawPolyline(ctx, s.record.points, s.record.radius, color,
                      s.status === "rejected");
  }

  drawPolyline(ctx: CanvasRenderingContext2D, points: [number, number][],
               radius: number, color: string, dashed: boolean): void {
    if (points.length === 0) return;
    const view = this.viewport();
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = Math.max(1, radius * this.state.zoom);
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    ctx.setLineDash(dashed ? [6, 4] : []);
    ctx.globalAlpha = 0.6;
    const [x0, y0] = imageToCanvas(points[0][0], points[0][1], view);
    if (points.length === 1) {
      ctx.beginPath();
      ctx.arc(x0, y0, Math.max(1, radius * this.state.zoom) / 2, 0, 2 * Math.PI);
      ctx.fill();
    } else {
      ctx.beginPath();
      ctx.moveTo(x0, y0);
      for (const [px, py] of points.slice(1)) {
        const [cx, cy] = imageToCanvas(px, py, view);
        ctx.lineTo(cx, cy);
      }
      ctx.stroke();
    }
    ctx.globalAlpha = 1;
    ctx.setLineDash([]);
  }

  drawSeed(ctx: CanvasRenderingContext2D, mark: SeedMark): void {
    const [cx, cy] = imageToCanvas(mark.record.x, mark.record.y, this.viewport());
    ctx.strokeStyle = mark.missed ? "#ff3333" : "#ffd400";
    ctx.lineWidth = 2;
    ctx.beginPath();
    if (mark.missed) {          // X marker where the click hit nothing
      ctx.moveTo(cx - 5, cy - 5);
      ctx.lineTo(cx + 5, cy + 5);
      ctx.moveTo(cx - 5, cy + 5);
      ctx.lineTo(cx + 5, cy - 5);
    } else {
      ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
    }
    ctx.stroke();
  }
}

new App().boot();
