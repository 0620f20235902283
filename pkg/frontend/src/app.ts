/** DOM glue for the configuration UI: live preview with overlays, config
 * editor with inline validation, topology editing by clicking masses,
 * background capture, and per-object detection-rate timeline. */

import {
  captureBackground,
  getConfig,
  putConfig,
  streamMessages,
  type StreamMessage,
} from "./api.js";
import { ConfigSession, RateRing, TopologyDraft } from "./model.js";
import { fitMapping, frameToView, viewToFrame, type Mapping } from "./overlay.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const session = new ConfigSession();
const topology = new TopologyDraft();
const rings = new Map<string, RateRing>();

let latest: StreamMessage | null = null;
let previewImage: HTMLImageElement | null = null;
let frameW = 0;
let frameH = 0;
let putInFlight = false;

const editor = $<HTMLTextAreaElement>("config-editor");
const applyBtn = $<HTMLButtonElement>("apply-btn");
const errorsBox = $<HTMLElement>("config-errors");
const banner = $<HTMLElement>("banner");
const canvas = $<HTMLCanvasElement>("preview");
const chart = $<HTMLCanvasElement>("rate-chart");
const topoBox = $<HTMLElement>("topology-state");

function showBanner(text: string, kind: "error" | "info"): void {
  banner.textContent = text;
  banner.className = `banner ${kind}`;
  banner.hidden = text === "";
}

function refreshEditorState(): void {
  const errors = session.errors();
  errorsBox.innerHTML = "";
  for (const e of errors) {
    const li = document.createElement("li");
    li.textContent = e;
    errorsBox.appendChild(li);
  }
  applyBtn.disabled = putInFlight || !session.canApply;
}

editor.addEventListener("input", () => {
  session.edit(editor.value);
  refreshEditorState();
});

applyBtn.addEventListener("click", async () => {
  if (putInFlight || !session.canApply) return;
  putInFlight = true;
  applyBtn.disabled = true;
  try {
    const applied = await putConfig(session.draft);
    session.setApplied(applied);
    editor.value = applied;
    showBanner("", "info");
  } catch (e) {
    showBanner(`apply failed: ${(e as Error).message}`, "error");
  } finally {
    putInFlight = false;
    refreshEditorState();
  }
});

$<HTMLButtonElement>("capture-btn").addEventListener("click", async () => {
  try {
    await captureBackground();
    showBanner("background capture started", "info");
  } catch (e) {
    showBanner(`capture failed: ${(e as Error).message}`, "error");
  }
});

$<HTMLButtonElement>("topo-reset-btn").addEventListener("click", () => {
  topology.reset();
  renderTopology();
});

function currentMapping(): Mapping | null {
  if (frameW === 0 || frameH === 0) return null;
  return fitMapping(frameW, frameH, canvas.width, canvas.height);
}

canvas.addEventListener("click", (ev) => {
  const msg = latest;
  const m = currentMapping();
  if (!msg || !m) return;
  const rect = canvas.getBoundingClientRect();
  const [fx, fy] = viewToFrame(
    m,
    ((ev.clientX - rect.left) * canvas.width) / rect.width,
    ((ev.clientY - rect.top) * canvas.height) / rect.height,
  );
  let best: { classId: number; d: number } | null = null;
  for (const mass of msg.masses) {
    const d = Math.hypot(mass.centroid[0] - fx, mass.centroid[1] - fy);
    if (best === null || d < best.d) best = { classId: mass.class_id, d };
  }
  if (best && best.d < 40) topology.pick(best.classId);
  renderTopology();
});

function renderTopology(): void {
  const slots = ["TL", "TR", "BL", "BR"];
  const parts = topology.picks.map((c, i) => `${slots[i]}=class ${c}`);
  let text = parts.length ? parts.join(", ") : "click 4 masses: TL, TR, BL, BR";
  const result = topology.result();
  if (result) {
    text += `  ->  line0: [${result.line0}], line1: [${result.line1}]`;
  }
  if (topology.hint) text += `  (${topology.hint})`;
  topoBox.textContent = text;
}

function drawPreview(): void {
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = "#16181d";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const msg = latest;
  const m = currentMapping();
  if (!msg || !m) return;
  if (previewImage) {
    ctx.drawImage(
      previewImage,
      m.offsetX,
      m.offsetY,
      frameW * m.scale,
      frameH * m.scale,
    );
  }
  ctx.lineWidth = 1.5;
  for (const mass of msg.masses) {
    const [x0, y0] = frameToView(m, mass.bbox[0] - 0.5, mass.bbox[1] - 0.5);
    const [x1, y1] = frameToView(m, mass.bbox[2] + 0.5, mass.bbox[3] + 0.5);
    ctx.strokeStyle = "#43d19a";
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
    const [cx, cy] = frameToView(m, mass.centroid[0], mass.centroid[1]);
    ctx.beginPath();
    ctx.arc(cx, cy, 3, 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.strokeStyle = "#e8b84d";
  for (const marker of msg.markers) {
    ctx.beginPath();
    marker.corners.forEach(([x, y], i) => {
      const [vx, vy] = frameToView(m, x, y);
      i === 0 ? ctx.moveTo(vx, vy) : ctx.lineTo(vx, vy);
    });
    ctx.closePath();
    ctx.stroke();
  }
}

function drawChart(): void {
  const ctx = chart.getContext("2d")!;
  ctx.fillStyle = "#16181d";
  ctx.fillRect(0, 0, chart.width, chart.height);
  const colors = ["#43d19a", "#e8b84d", "#6fa8ff", "#ff7a90", "#c792ea"];
  let ci = 0;
  const legend = $<HTMLElement>("rate-legend");
  legend.innerHTML = "";
  for (const [oid, ring] of [...rings.entries()].sort()) {
    const color = colors[ci++ % colors.length];
    const series = ring.series();
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    series.forEach((r, i) => {
      const x = (i / Math.max(ring.capacity - 1, 1)) * chart.width;
      const y = chart.height - r * (chart.height - 2) - 1;
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.stroke();
    const item = document.createElement("span");
    item.style.color = color;
    item.textContent = `${oid}: ${(ring.latest ?? 0).toFixed(2)}`;
    legend.appendChild(item);
  }
}

function onMessage(msg: StreamMessage): void {
  latest = msg;
  for (const [oid, rate] of Object.entries(msg.rates)) {
    let ring = rings.get(oid);
    if (!ring) {
      ring = new RateRing();
      rings.set(oid, ring);
    }
    ring.push(rate);
  }
  if (msg.preview) {
    const img = new Image();
    img.onload = () => {
      previewImage = img;
      frameW = img.naturalWidth;
      frameH = img.naturalHeight;
      drawPreview();
    };
    img.src = `data:image/png;base64,${msg.preview}`;
  }
  drawPreview();
  drawChart();
}

async function connect(): Promise<void> {
  for (;;) {
    try {
      showBanner("", "info");
      session.setApplied(await getConfig());
      editor.value = session.draft;
      refreshEditorState();
      await streamMessages(onMessage);
    } catch (e) {
      showBanner(`disconnected: ${(e as Error).message} — retrying`, "error");
    }
    await new Promise((r) => setTimeout(r, 2000));
  }
}

renderTopology();
void connect();
