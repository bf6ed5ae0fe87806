// Browser entry point: orbit the camera with the mouse, click to prompt,
// switch display modes, run label queries. All math lives server-side; this
// file only wires DOM events to the typed API client.

import { Client, PromptResponse, RenderResponse } from "./api.js";
import { displayToPixel, layoutFor } from "./coords.js";
import { orbitToPose } from "./orbit.js";
import { MASK_COLORS, MASK_OPACITIES, overlayMasks } from "./overlay.js";
import { rleDecode } from "./rle.js";
import { LatestGate, ViewerState, initialState, withMode, withOrbitDelta, withPrompt } from "./state.js";

const client = new Client("");
const gate = new LatestGate();

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const legendEl = document.getElementById("legend")!;
const modesEl = document.getElementById("modes")!;

let state: ViewerState;
let imgW = 0;
let imgH = 0;
let baseImage: ImageData | null = null;
let lastPrompt: PromptResponse | null = null;

function note(msg: string) {
  statusEl.textContent = msg;
}

async function pngToImageData(b64: string): Promise<ImageData> {
  const img = new Image();
  img.src = `data:image/png;base64,${b64}`;
  await img.decode();
  const off = document.createElement("canvas");
  off.width = img.width;
  off.height = img.height;
  const octx = off.getContext("2d")!;
  octx.drawImage(img, 0, 0);
  return octx.getImageData(0, 0, img.width, img.height);
}

function paint(data: ImageData) {
  const { scale, offsetX, offsetY } = layoutFor(canvas.width, canvas.height, imgW, imgH);
  const off = document.createElement("canvas");
  off.width = imgW;
  off.height = imgH;
  off.getContext("2d")!.putImageData(data, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = "#13151a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, offsetX, offsetY, imgW * scale, imgH * scale);
}

function repaintWithOverlays() {
  if (!baseImage) return;
  if (state.mode === "prompt" && lastPrompt && !lastPrompt.empty) {
    const masks = lastPrompt.masks.map((m) => rleDecode(m.rle, imgH, imgW));
    const composed = new ImageData(imgW, imgH);
    composed.data.set(overlayMasks(baseImage.data, imgW, imgH, masks));
    paint(composed);
  } else {
    paint(baseImage);
  }
}

async function refresh() {
  const ticket = gate.issue("view");
  const pose = orbitToPose(state.orbit);
  note("rendering...");
  try {
    let data: ImageData;
    if (state.mode === "pca-seg" || state.mode === "pca-lang") {
      const r = await client.pca(state.mode === "pca-seg" ? "seg" : "lang", pose);
      data = await pngToImageData(r.image_png);
    } else if (state.mode === "query") {
      const r = await client.query(pose);
      data = await pngToImageData(r.labels_png);
      legendEl.innerHTML = r.legend
        .map((e) => `<span class="chip"><i style="background:rgb(${e.color})"></i>${e.name}</span>`)
        .join(" ");
    } else {
      const r: RenderResponse = await client.render(pose);
      data = await pngToImageData(state.mode === "depth" ? r.depth_png : r.image_png);
    }
    if (!gate.isCurrent("view", ticket)) return; // stale response discarded
    imgW = data.width;
    imgH = data.height;
    baseImage = data;
    if (state.mode !== "query") legendEl.innerHTML = "";
    repaintWithOverlays();
    note(`${state.mode} | az ${state.orbit.azimuthDeg.toFixed(0)} el ${state.orbit.elevationDeg.toFixed(0)} r ${state.orbit.radius.toFixed(2)} | prompts: ${state.history.length}`);
  } catch (err) {
    if (gate.isCurrent("view", ticket)) note(`error: ${(err as Error).message}`);
  }
}

async function onClick(ev: MouseEvent) {
  if (state.mode !== "prompt" || !imgW) return;
  const rect = canvas.getBoundingClientRect();
  const px = displayToPixel(ev.clientX - rect.left, ev.clientY - rect.top,
                            canvas.width, canvas.height, imgW, imgH);
  if (!px) return;
  const ticket = gate.issue("prompt");
  try {
    const resp = await client.prompt(orbitToPose(state.orbit), [px.x, px.y]);
    if (!gate.isCurrent("prompt", ticket)) return;
    state = withPrompt(state, { pixel: [px.x, px.y], masks: resp.masks, empty: resp.empty });
    lastPrompt = resp;
    if (resp.empty) {
      note(`(${px.x},${px.y}): no surface here (alpha 0)`);
      repaintWithOverlays();
      return;
    }
    repaintWithOverlays();
    const conf = resp.masks.map((m) => m.confidence.toFixed(2)).join(" / ");
    note(`prompt (${px.x},${px.y}) | confidences ${conf} | prompts: ${state.history.length}`);
  } catch (err) {
    note(`prompt failed: ${(err as Error).message}`);
  }
}

function wireModes() {
  const modes = ["color", "depth", "pca-seg", "pca-lang", "prompt", "query"] as const;
  for (const m of modes) {
    const btn = document.createElement("button");
    btn.textContent = m;
    btn.onclick = () => {
      state = withMode(state, m);
      if (m !== "prompt") lastPrompt = null;
      for (const b of modesEl.querySelectorAll("button"))
        b.classList.toggle("active", b.textContent === m);
      void refresh();
    };
    modesEl.appendChild(btn);
  }
  (modesEl.firstChild as HTMLButtonElement).classList.add("active");
}

function wireOrbit() {
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.onmousedown = (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
  };
  window.onmouseup = () => (dragging = false);
  window.onmousemove = (e) => {
    if (!dragging) return;
    state = withOrbitDelta(state, -(e.clientX - lastX) * 0.5, (e.clientY - lastY) * 0.5);
    lastX = e.clientX;
    lastY = e.clientY;
    void refresh();
  };
  canvas.onwheel = (e) => {
    e.preventDefault();
    state = withOrbitDelta(state, 0, 0, e.deltaY * 0.002);
    void refresh();
  };
  canvas.onclick = (e) => void onClick(e);
}

async function boot() {
  note("loading scene...");
  const meta = await client.getMeta();
  state = initialState({
    azimuthDeg: 0,
    elevationDeg: meta.orbit.elevation_deg,
    radius: meta.orbit.radius,
    target: meta.orbit.target,
  });
  const box = document.getElementById("maskinfo")!;
  box.innerHTML = MASK_COLORS
    .map((c, i) => `<span class="chip"><i style="background:rgb(${c});opacity:${MASK_OPACITIES[i]}"></i>${["small", "medium", "large"][i]}</span>`)
    .join(" ");
  wireModes();
  wireOrbit();
  await refresh();
}

void boot();
