import init, { aloCurve, loocvCurve, leverageProfile } from "./pkg/alo_demo.js";

const NS = "http://www.w3.org/2000/svg";
const status = document.getElementById("status");
const curveSvg = document.getElementById("curve");
const levSvg = document.getElementById("leverage");
const curves = {};

function config() {
  const num = (id) => Number(document.getElementById(id).value);
  return JSON.stringify({
    scenario: document.getElementById("scenario").value,
    model: document.getElementById("model").value,
    n: num("n"),
    p: num("p"),
    k: num("k"),
    seed: num("seed"),
    grid: num("grid"),
    ratio: num("ratio"),
  });
}

function el(name, attrs, parent) {
  const node = document.createElementNS(NS, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  parent.appendChild(node);
  return node;
}

function timed(label, fn) {
  const t0 = performance.now();
  const out = JSON.parse(fn());
  status.textContent = `${label}: ${(performance.now() - t0).toFixed(0)} ms`;
  return out;
}

// Risk against log10(lambda); each curve is a polyline with clickable points.
function drawCurves() {
  curveSvg.replaceChildren();
  const all = Object.values(curves);
  if (!all.length) return;
  const W = 860, H = 320, pad = 45;
  const xs = all[0].lambdas.map(Math.log10);
  const ys = all.flatMap((c) => c.risk.filter((r) => r !== null));
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (W - 2 * pad);
  const sy = (y) => H - pad - ((y - y0) / (y1 - y0 || 1)) * (H - 2 * pad);

  el("line", { x1: pad, y1: H - pad, x2: W - pad, y2: H - pad, class: "axis" }, curveSvg);
  el("line", { x1: pad, y1: pad, x2: pad, y2: H - pad, class: "axis" }, curveSvg);
  el("text", { x: W / 2, y: H - 10 }, curveSvg).textContent = "log10 lambda";
  el("text", { x: 4, y: pad - 10 }, curveSvg).textContent = `risk ${y0.toFixed(3)} .. ${y1.toFixed(3)}`;

  for (const c of all) {
    const pts = c.risk
      .map((r, i) => (r === null ? null : [sx(xs[i]), sy(r), i]))
      .filter((p) => p !== null);
    el("polyline", { points: pts.map((p) => `${p[0]},${p[1]}`).join(" "), fill: "none", class: c.method }, curveSvg);
    for (const [x, y, i] of pts) {
      const dot = el("circle", { cx: x, cy: y, r: 4, class: c.method }, curveSvg);
      const title = el("title", {}, dot);
      title.textContent = `lambda ${c.lambdas[i].toExponential(3)}, risk ${c.risk[i].toFixed(4)}, ${c.method === "alo" ? "active " + c.active[i] : "failed " + c.active[i]}`;
      if (c.method === "alo") {
        dot.style.cursor = "pointer";
        dot.addEventListener("click", () => showLeverage(i));
      }
    }
  }
  el("text", { x: W - pad - 120, y: pad }, curveSvg).textContent = all.map((c) => c.method).join(" / ");
}

// Leverage H_ii per observation, with the saturation level marked.
function showLeverage(index) {
  const lev = timed("leverages", () => leverageProfile(config(), index));
  levSvg.replaceChildren();
  const W = 860, H = 240, pad = 35;
  const n = lev.h.length;
  const bw = (W - 2 * pad) / n;
  const top = Math.max(1, ...lev.h);
  el("line", { x1: pad, y1: pad, x2: W - pad, y2: pad, class: "loocv", "stroke-dasharray": "4 3" }, levSvg);
  lev.h.forEach((h, i) => {
    const bh = (Math.max(h, 0) / top) * (H - 2 * pad);
    const bar = el("rect", { x: pad + i * bw, y: H - pad - bh, width: Math.max(bw - 1, 1), height: bh, class: "alo" }, levSvg);
    el("title", {}, bar).textContent = `obs ${i}: H_ii ${h.toFixed(4)}, y ${lev.y[i].toFixed(3)}, ALO ${lev.alo[i] === null ? "skipped" : lev.alo[i].toFixed(3)}`;
  });
  el("text", { x: pad, y: 15 }, levSvg).textContent =
    `lambda ${lev.lambda.toExponential(3)}, engine ${lev.engine}, ${lev.warnings.length} warning(s); dashed line is H_ii = 1`;
}

function guard(fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      status.textContent = `error: ${e}`;
    }
  };
}

await init();
status.textContent = "ready";
document.getElementById("run-alo").addEventListener("click", guard(() => {
  for (const k of Object.keys(curves)) delete curves[k];
  curves.alo = timed("ALO sweep", () => aloCurve(config()));
  drawCurves();
}));
document.getElementById("run-loocv").addEventListener("click", guard(() => {
  curves.loocv = timed("exact LOOCV", () => loocvCurve(config()));
  drawCurves();
}));
