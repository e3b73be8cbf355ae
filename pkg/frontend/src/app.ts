/**
 * Browser client for the editing service.
 *
 * The canvas layer is only ever painted from server responses; mask and
 * sketch annotations live in local binary layers that upload as strict
 * binary PNGs. While a proposal is pending the user can confirm, reject, or
 * replace it with a new submission; only one request is in flight at a time.
 */

import { ApiClient, ApiError } from "./api";
import { BRUSH_DEFAULTS, LayerStack } from "./layers";

type Tool = "mask" | "sketch";

const api = new ApiClient("");

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const baseCanvas = el<HTMLCanvasElement>("canvas-base");
const overlay = el<HTMLCanvasElement>("canvas-overlay");
const statusLine = el<HTMLDivElement>("status");
const submitBtn = el<HTMLButtonElement>("submit");
const confirmBtn = el<HTMLButtonElement>("confirm");
const rejectBtn = el<HTMLButtonElement>("reject");
const undoBtn = el<HTMLButtonElement>("undo");
const clearBtn = el<HTMLButtonElement>("clear");
const newBtn = el<HTMLButtonElement>("new-session");
const sizeInput = el<HTMLInputElement>("canvas-size");
const sourceInput = el<HTMLInputElement>("source-file");
const referenceInput = el<HTMLInputElement>("reference-file");
const promptInput = el<HTMLInputElement>("prompt");
const seedInput = el<HTMLInputElement>("seed");
const brushInput = el<HTMLInputElement>("brush");
const eraseInput = el<HTMLInputElement>("erase");

let sessionId: string | null = null;
let stack: LayerStack | null = null;
let pending = false;
let inFlight = false;
let activeTool: Tool = "mask";
let drawing = false;
let lastPoint: { x: number; y: number } | null = null;

function setStatus(text: string, isError = false): void {
  statusLine.textContent = text;
  statusLine.className = isError ? "status error" : "status";
}

function refreshControls(): void {
  const haveSession = sessionId !== null && stack !== null;
  submitBtn.disabled = !haveSession || inFlight || (stack ? stack.mask.isEmpty() : true);
  submitBtn.textContent = pending ? "Replace proposal" : "Submit edit";
  confirmBtn.style.display = pending ? "inline-block" : "none";
  rejectBtn.style.display = pending ? "inline-block" : "none";
  undoBtn.disabled = !haveSession;
  clearBtn.disabled = !haveSession;
}

async function paintCanvasFromPng(bytes: Uint8Array): Promise<void> {
  const blob = new Blob([new Uint8Array(bytes)], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  baseCanvas.width = bitmap.width;
  baseCanvas.height = bitmap.height;
  overlay.width = bitmap.width;
  overlay.height = bitmap.height;
  const ctx = baseCanvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.drawImage(bitmap, 0, 0);
  bitmap.close();
  repaintOverlay();
}

function repaintOverlay(): void {
  if (!stack) return;
  const ctx = overlay.getContext("2d");
  if (!ctx) return;
  const img = ctx.createImageData(overlay.width, overlay.height);
  for (let i = 0; i < stack.mask.data.length; i++) {
    const at = i * 4;
    if (stack.sketch.data[i]) {
      img.data[at] = 20;
      img.data[at + 1] = 20;
      img.data[at + 2] = 20;
      img.data[at + 3] = 235;
    } else if (stack.mask.data[i]) {
      img.data[at] = 235;
      img.data[at + 1] = 60;
      img.data[at + 2] = 60;
      img.data[at + 3] = 110;
    }
  }
  ctx.putImageData(img, 0, 0);
}

function canvasPoint(e: PointerEvent): { x: number; y: number } {
  const rect = overlay.getBoundingClientRect();
  return {
    x: ((e.clientX - rect.left) / rect.width) * overlay.width,
    y: ((e.clientY - rect.top) / rect.height) * overlay.height,
  };
}

function brushRadius(): number {
  const manual = Number(brushInput.value);
  if (Number.isFinite(manual) && manual > 0) return manual;
  return activeTool === "mask" ? BRUSH_DEFAULTS.mask : BRUSH_DEFAULTS.sketch;
}

overlay.addEventListener("pointerdown", (e) => {
  if (!stack) return;
  drawing = true;
  overlay.setPointerCapture(e.pointerId);
  lastPoint = canvasPoint(e);
  stack.layer(activeTool).drawStroke([lastPoint], brushRadius(), eraseInput.checked);
  repaintOverlay();
  refreshControls();
});

overlay.addEventListener("pointermove", (e) => {
  if (!drawing || !stack || !lastPoint) return;
  const point = canvasPoint(e);
  stack.layer(activeTool).drawStroke([lastPoint, point], brushRadius(), eraseInput.checked);
  lastPoint = point;
  repaintOverlay();
  refreshControls();
});

const stopDrawing = () => {
  drawing = false;
  lastPoint = null;
};
overlay.addEventListener("pointerup", stopDrawing);
overlay.addEventListener("pointercancel", stopDrawing);

for (const tool of ["mask", "sketch"] as const) {
  el<HTMLInputElement>(`tool-${tool}`).addEventListener("change", () => {
    activeTool = tool;
    brushInput.value = String(tool === "mask" ? BRUSH_DEFAULTS.mask : BRUSH_DEFAULTS.sketch);
  });
}

undoBtn.addEventListener("click", () => {
  if (!stack) return;
  stack.layer(activeTool).undo();
  repaintOverlay();
  refreshControls();
});

clearBtn.addEventListener("click", () => {
  if (!stack) return;
  stack.clearAnnotations();
  repaintOverlay();
  refreshControls();
});

async function newSession(): Promise<void> {
  inFlight = true;
  refreshControls();
  try {
    const file = sourceInput.files?.[0];
    if (file) {
      const bytes = new Uint8Array(await file.arrayBuffer());
      sessionId = await api.createSessionFromPng(bytes);
    } else {
      const size = Math.max(16, Number(sizeInput.value) || 128);
      sessionId = await api.createSessionFromShape(size, size);
    }
    const canvas = await api.getCanvas(sessionId);
    const state = await api.getState(sessionId);
    stack = new LayerStack(state.shape[0], state.shape[1]);
    pending = state.has_pending;
    await paintCanvasFromPng(canvas);
    setStatus(`session ${sessionId.slice(0, 8)}… (${state.shape[0]}x${state.shape[1]})`);
  } catch (err) {
    setStatus(err instanceof Error ? err.message : String(err), true);
  } finally {
    inFlight = false;
    refreshControls();
  }
}

newBtn.addEventListener("click", () => void newSession());

async function submitEdit(): Promise<void> {
  if (!sessionId || !stack) return;
  inFlight = true;
  refreshControls();
  try {
    const reference = referenceInput.files?.[0];
    const preview = await api.submitEdit(sessionId, {
      maskPng: stack.mask.toPngBytes(),
      sketchPng: stack.sketch.toPngBytes(),
      referencePng: reference ? new Uint8Array(await reference.arrayBuffer()) : undefined,
      prompt: promptInput.value,
      seed: Number(seedInput.value) || 0,
    });
    pending = true;
    await paintCanvasFromPng(preview); // preview display; canvas state unchanged server-side
    setStatus("proposal ready: confirm to keep it, reject to revert");
  } catch (err) {
    if (err instanceof ApiError) setStatus(`edit rejected: ${err.detail}`, true);
    else setStatus(String(err), true);
  } finally {
    inFlight = false;
    refreshControls();
  }
}

submitBtn.addEventListener("click", () => void submitEdit());

confirmBtn.addEventListener("click", () => {
  if (!sessionId || !stack) return;
  inFlight = true;
  refreshControls();
  void api
    .confirm(sessionId)
    .then(async (canvas) => {
      pending = false;
      stack?.clearAnnotations();
      await paintCanvasFromPng(canvas);
      setStatus("edit confirmed");
    })
    .catch((err) => setStatus(err instanceof ApiError ? err.detail : String(err), true))
    .finally(() => {
      inFlight = false;
      refreshControls();
    });
});

rejectBtn.addEventListener("click", () => {
  if (!sessionId) return;
  inFlight = true;
  refreshControls();
  void api
    .reject(sessionId)
    .then(async (canvas) => {
      pending = false;
      await paintCanvasFromPng(canvas);
      setStatus("proposal rejected; canvas reverted");
    })
    .catch((err) => setStatus(err instanceof ApiError ? err.detail : String(err), true))
    .finally(() => {
      inFlight = false;
      refreshControls();
    });
});

refreshControls();
setStatus("create a session to start painting");
