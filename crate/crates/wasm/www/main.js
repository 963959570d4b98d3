// Expects the wasm-bindgen output in ./pkg (see the README for the build command).
import init, { Library, reduceMixture } from "./pkg/aeg_wasm.js";

const canvas = document.getElementById("plane");
const ctx = canvas.getContext("2d");
const $ = (id) => document.getElementById(id);
const SIZE = canvas.width;

let library = null;
let clips = [];
let components = [];
let overlay = null;

const toPx = ([v, a]) => [((v + 1) / 2) * SIZE, ((1 - a) / 2) * SIZE];
const toVa = (x, y) => [(x / SIZE) * 2 - 1, 1 - (y / SIZE) * 2];

// One-sigma ellipse of a Gaussian with cov stored as [xx, xy, yy].
function ellipse(mean, cov, stroke, fill) {
  const [xx, xy, yy] = cov;
  const tr = (xx + yy) / 2;
  const d = Math.sqrt(((xx - yy) / 2) ** 2 + xy * xy);
  const l1 = tr + d;
  const l2 = Math.max(tr - d, 0);
  const angle = Math.atan2(l1 - xx, xy || 1e-12);
  const [cx, cy] = toPx(mean);
  const scale = SIZE / 2;
  ctx.beginPath();
  ctx.ellipse(cx, cy, Math.sqrt(l1) * scale, Math.sqrt(l2) * scale, -angle, 0, 2 * Math.PI);
  if (fill) { ctx.fillStyle = fill; ctx.fill(); }
  ctx.strokeStyle = stroke;
  ctx.stroke();
}

function draw(hits = []) {
  ctx.clearRect(0, 0, SIZE, SIZE);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(SIZE / 2, 0); ctx.lineTo(SIZE / 2, SIZE);
  ctx.moveTo(0, SIZE / 2); ctx.lineTo(SIZE, SIZE / 2);
  ctx.stroke();
  ctx.fillStyle = "#999";
  ctx.fillText("valence", SIZE - 48, SIZE / 2 - 6);
  ctx.fillText("arousal", SIZE / 2 + 6, 12);
  for (const c of clips) ellipse(c.mean, c.cov, "rgba(0,0,0,0.12)");
  components.forEach((g, i) => {
    const hue = (360 * i) / components.length;
    ellipse(g.mean, g.cov, `hsl(${hue} 70% 45%)`, `hsla(${hue} 70% 50% / 0.08)`);
  });
  const hitIds = new Set(hits.map((h) => h.clip_id));
  for (const c of clips) {
    if (!hitIds.has(c.clip_id)) continue;
    const [x, y] = toPx(c.mean);
    ctx.fillStyle = "#d22";
    ctx.fillRect(x - 3, y - 3, 6, 6);
  }
  if (overlay) ellipse(overlay.mean, overlay.cov, "#000", "rgba(0,0,0,0.1)");
}

function showError(e) {
  $("status").textContent = String(e.message ?? e);
}

function build() {
  try {
    library?.free();
    library = new Library(+$("k").value, +$("clips").value, +$("seed").value);
    clips = JSON.parse(library.clips());
    components = JSON.parse(library.components());
    $("weights").value = components.map((_, i) => (i < 2 ? 1 : 0)).join(",");
    overlay = null;
    $("results").innerHTML = "";
    $("status").textContent = "";
    draw();
  } catch (e) {
    showError(e);
  }
}

function query(evt) {
  if (!library) return;
  const rect = canvas.getBoundingClientRect();
  const point = toVa(evt.clientX - rect.left, evt.clientY - rect.top);
  const kind = document.querySelector("input[name=kind]:checked").value;
  const s = +$("variance").value;
  const q = kind === "point" ? { point } : { gaussian: { mean: point, cov: [s, 0, s] } };
  overlay = kind === "point" ? { mean: point, cov: [0.0004, 0, 0.0004] } : q.gaussian;
  try {
    const hits = JSON.parse(library.retrieve(JSON.stringify({
      query: q, method: $("method").value, topk: +$("topk").value,
    })));
    $("results").innerHTML = hits
      .map((h) => `<li>${h.clip_id}  ${h.score.toFixed(4)}</li>`)
      .join("");
    $("status").textContent = "";
    draw(hits);
  } catch (e) {
    showError(e);
  }
}

function reduce() {
  const raw = $("weights").value.split(",").map(Number);
  const total = raw.reduce((a, b) => a + b, 0);
  if (raw.length !== components.length || !(total > 0)) {
    showError(`need ${components.length} nonnegative weights with a positive sum`);
    return;
  }
  try {
    overlay = JSON.parse(reduceMixture(JSON.stringify({
      weights: raw.map((w) => w / total), components,
    })));
    $("status").textContent = "";
    $("results").innerHTML =
      `<li>mean (${overlay.mean.map((x) => x.toFixed(3)).join(", ")})</li>` +
      `<li>cov [${overlay.cov.map((x) => x.toFixed(4)).join(", ")}]</li>`;
    draw();
  } catch (e) {
    showError(e);
  }
}

await init();
$("build").addEventListener("click", build);
$("reduce").addEventListener("click", reduce);
canvas.addEventListener("click", query);
build();
