import init, { ensembleMi, refinementTrajectory, augmentPreview, previewSize } from "./pkg/fewshot_demo_wasm.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#d62728", "#1f77b4", "#2ca02c"];

function runMi() {
  try {
    const r = JSON.parse(ensembleMi($("mi-input").value));
    $("mi-out").textContent =
      `average scores      ${r.average.map((v) => v.toFixed(4)).join("  ")}\n` +
      `entropy of average  ${r.entropy_of_average.toFixed(6)}\n` +
      `mutual information  ${r.mutual_information.toFixed(6)}`;
  } catch (e) {
    $("mi-out").textContent = `error: ${e}`;
  }
}

function runTrajectory() {
  const canvas = $("tr-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let t;
  try {
    t = JSON.parse(refinementTrajectory(+$("tr-seed").value, +$("tr-iter").value, +$("tr-spread").value));
  } catch (e) {
    $("tr-out").textContent = `error: ${e}`;
    return;
  }
  const pts = [...t.support, ...t.queries, ...t.prototypes.flat()];
  const xs = pts.map((p) => p[0]), ys = pts.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const pad = 20, span = Math.max(x1 - x0, y1 - y0) || 1;
  const px = (p) => [pad + ((p[0] - x0) / span) * (canvas.width - 2 * pad),
                     canvas.height - pad - ((p[1] - y0) / span) * (canvas.height - 2 * pad)];

  t.queries.forEach((q, j) => {
    const [x, y] = px(q);
    ctx.fillStyle = COLORS[t.query_labels[j]];
    ctx.globalAlpha = t.predictions[j] === t.query_labels[j] ? 0.45 : 1;
    ctx.beginPath(); ctx.arc(x, y, 3, 0, 2 * Math.PI); ctx.fill();
  });
  ctx.globalAlpha = 1;
  t.support.forEach((s, i) => {
    const [x, y] = px(s);
    ctx.strokeStyle = COLORS[t.support_labels[i]]; ctx.lineWidth = 2;
    ctx.beginPath(); ctx.moveTo(x - 6, y - 6); ctx.lineTo(x + 6, y + 6);
    ctx.moveTo(x + 6, y - 6); ctx.lineTo(x - 6, y + 6); ctx.stroke();
  });
  for (let c = 0; c < t.support.length; c++) {
    ctx.strokeStyle = COLORS[c]; ctx.lineWidth = 1.5;
    ctx.beginPath();
    t.prototypes.forEach((frame, it) => {
      const [x, y] = px(frame[c]);
      it === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.stroke();
    t.prototypes.forEach((frame, it) => {
      const [x, y] = px(frame[c]);
      ctx.fillStyle = COLORS[c];
      ctx.fillRect(x - 3, y - 3, it === t.prototypes.length - 1 ? 8 : 5, it === t.prototypes.length - 1 ? 8 : 5);
    });
  }
  const correct = t.predictions.filter((p, j) => p === t.query_labels[j]).length;
  const meanGate = t.gates.map((g) => (g.reduce((a, b) => a + b, 0) / g.length).toFixed(3));
  $("tr-out").textContent = `accuracy ${correct}/${t.predictions.length}\nmean gate per iteration ${meanGate.join(" ")}`;
}

function runAugment() {
  const op = $("aug-custom").value.trim() || $("aug-op").value;
  const n = previewSize();
  try {
    const rgba = augmentPreview(op, +$("aug-seed").value);
    const small = document.createElement("canvas");
    small.width = n; small.height = n;
    small.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), n, n), 0, 0);
    const ctx = $("aug-canvas").getContext("2d");
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(small, 0, 0, 256, 256);
    $("aug-err").textContent = "";
  } catch (e) {
    $("aug-err").textContent = `error: ${e}`;
  }
}

await init();
$("mi-run").onclick = runMi;
$("tr-run").onclick = runTrajectory;
$("aug-run").onclick = runAugment;
runMi();
runTrajectory();
runAugment();
