import init, { render_scene, render_ray, mask_curve } from "./pkg/fewshot_nerf_web.js";

const $ = (id) => document.getElementById(id);
const SAMPLE_COLORS = [
  [0.9, 0.2, 0.2], [0.9, 0.6, 0.1], [0.8, 0.8, 0.2], [0.3, 0.8, 0.3],
  [0.2, 0.7, 0.8], [0.2, 0.3, 0.9], [0.6, 0.3, 0.9], [0.5, 0.5, 0.5],
];
const DELTA = 0.125;

function drawScene() {
  const az = Number($("az").value);
  const el = Number($("el").value);
  const size = Number($("size").value);
  $("az-out").textContent = `${az}°`;
  $("el-out").textContent = `${el}°`;
  const t0 = performance.now();
  const rgba = render_scene(az, el, size, 1024);
  const ms = performance.now() - t0;
  const off = new OffscreenCanvas(size, size);
  off.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), size, size), 0, 0);
  const ctx = $("scene").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, 256, 256);
  $("scene-time").textContent = `${size}×${size} pixels, 1024 samples per ray, ${ms.toFixed(0)} ms`;
}

function drawRay() {
  const inputs = [...$("sigmas").querySelectorAll("input")];
  const sigma = Float64Array.from(inputs, (i) => Number(i.value));
  inputs.forEach((i) => (i.nextElementSibling.textContent = Number(i.value).toFixed(1)));
  const colors = Float64Array.from(SAMPLE_COLORS.flat());
  const out = render_ray(sigma, colors, DELTA);
  const n = sigma.length;
  const [r, g, b, acc, depth] = out;
  const w = out.slice(5, 5 + n);
  const trans = out.slice(5 + n, 5 + 2 * n);

  const c = $("ray");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const bw = c.width / n;
  for (let i = 0; i < n; i++) {
    const [cr, cg, cb] = SAMPLE_COLORS[i].map((v) => Math.round(v * 255));
    ctx.fillStyle = `rgb(${cr},${cg},${cb})`;
    const h = w[i] * (c.height - 10);
    ctx.fillRect(i * bw + 4, c.height - h, bw - 8, h);
  }
  ctx.strokeStyle = "#222";
  ctx.beginPath();
  trans.forEach((t, i) => {
    const x = i * bw + bw / 2;
    const y = c.height - t * (c.height - 10);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();

  const byte = (v) => Math.round(Math.min(1, Math.max(0, v)) * 255);
  $("swatch").style.background = `rgb(${byte(r)},${byte(g)},${byte(b)})`;
  $("ray-out").textContent =
    `rgb (${r.toFixed(3)}, ${g.toFixed(3)}, ${b.toFixed(3)}), opacity ${acc.toFixed(3)}, depth ${depth.toFixed(3)}`;
}

function drawMask() {
  const sat = Number($("sat").value);
  const levels = Number($("levels").value);
  $("sat-out").textContent = `${Math.round(sat * 100)}% of training`;
  $("levels-out").textContent = levels;
  const iters = 2000;
  const out = mask_curve(iters, sat, levels);
  const ratio = out.slice(0, iters);
  const kept = out.slice(iters);

  const c = $("mask");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const x = (i) => (i / (iters - 1)) * c.width;
  const y = (v) => c.height - 5 - v * (c.height - 10);
  ctx.fillStyle = "#cde";
  kept.forEach((k, i) => ctx.fillRect(x(i), y(k / levels), c.width / iters + 1, c.height - y(k / levels)));
  ctx.strokeStyle = "#a22";
  ctx.beginPath();
  ratio.forEach((v, i) => (i === 0 ? ctx.moveTo(x(i), y(v)) : ctx.lineTo(x(i), y(v))));
  ctx.stroke();
}

function buildSigmaSliders() {
  const defaults = [0, 0, 0.5, 4, 8, 2, 0.5, 0];
  for (let i = 0; i < defaults.length; i++) {
    const row = document.createElement("div");
    row.className = "row";
    row.innerHTML = `<label>σ<sub>${i}</sub></label><input type="range" min="0" max="20" step="0.1" value="${defaults[i]}"> <output></output>`;
    $("sigmas").appendChild(row);
  }
  $("sigmas").addEventListener("input", drawRay);
}

async function main() {
  await init();
  $("status").textContent = "";
  buildSigmaSliders();
  for (const id of ["az", "el", "size"]) $(id).addEventListener("input", drawScene);
  for (const id of ["sat", "levels"]) $(id).addEventListener("input", drawMask);
  drawScene();
  drawRay();
  drawMask();
}

main().catch((e) => {
  $("status").textContent = `Failed to start: ${e}`;
});
