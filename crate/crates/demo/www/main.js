import init, { focusHeatmap, sweepAt, trajectoryWithBaseline } from "./pkg/nfbeam_demo.js";

const MODES = ["steady cruise", "fast cruise", "left turn", "right turn", "ascend", "descend", "hover",
  "accelerating cruise", "decelerating cruise", "climbing turn"];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guarded(outId, fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      $(outId).innerHTML = `<span class="err">${e.message ?? e}</span>`;
    }
  };
}

// dB in [-40, 0] to a dark-to-yellow ramp
function colour(db) {
  const t = Math.max(0, Math.min(1, (db + 40) / 40));
  return [Math.round(255 * Math.min(1, 1.6 * t)), Math.round(255 * t * t), Math.round(120 * (1 - t))];
}

function renderHeatmap() {
  const h = JSON.parse(focusHeatmap(num("hm-m"), num("hm-t"), num("hm-p"), num("hm-r"), 160, 120));
  const c = $("hm");
  const ctx = c.getContext("2d");
  const img = ctx.createImageData(h.width, h.height);
  for (let row = 0; row < h.height; row++) {
    for (let col = 0; col < h.width; col++) {
      // canvas y grows downward; put +y at the top
      const [r, g, b] = colour(h.db[(h.height - 1 - row) * h.width + col]);
      const i = 4 * (row * h.width + col);
      img.data.set([r, g, b, 255], i);
    }
  }
  const tmp = new OffscreenCanvas(h.width, h.height);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, c.width, c.height);
  const [fx, fy, fz] = h.focus.map((v) => v.toFixed(1));
  $("hm-info").textContent =
    `x ${h.x_range.map((v) => v.toFixed(0)).join("..")} m, y ${h.y_range.map((v) => v.toFixed(0)).join("..")} m ` +
    `at z = ${fz} m; focus (${fx}, ${fy}); Rayleigh distance ${h.rayleigh_m.toFixed(1)} m`;
}

function runSweep() {
  const t0 = performance.now();
  const r = JSON.parse(sweepAt(num("sw-m"), num("sw-n"), num("sw-s"), num("sw-x"), num("sw-y"), num("sw-z")));
  const ms = performance.now() - t0;
  $("sw-out").textContent =
    `best (i_theta, i_phi, i_r) = (${r.i_theta}, ${r.i_phi}, ${r.i_r}), flat ${r.flat}\n` +
    `focus theta ${r.focal_deg[0].toFixed(2)} deg, phi ${r.focal_deg[1].toFixed(2)} deg, r ${r.focal_deg[2].toFixed(1)} m\n` +
    `SE ${r.se.toFixed(3)} bit/s/Hz; far-field codeword at the same angles ${r.far_field_se.toFixed(3)} bit/s/Hz\n` +
    `${r.codewords} codewords x ${r.antennas} antennas in ${ms.toFixed(0)} ms`;
}

function runTrajectory() {
  const tp = num("tr-tp");
  const d = JSON.parse(trajectoryWithBaseline(num("tr-mode"), num("tr-seed"), tp, num("tr-tf"), num("tr-sg")));
  const c = $("tr");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const all = [...d.truth, ...d.gps, ...d.baseline];
  const xs = all.map((p) => p[0]), ys = all.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const span = Math.max(x1 - x0, y1 - y0, 1) * 1.15;
  const cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
  const px = (p) => [c.width / 2 + ((p[0] - cx) / span) * c.height, c.height / 2 - ((p[1] - cy) / span) * c.height];
  const line = (pts, style, dash = []) => {
    ctx.strokeStyle = style; ctx.setLineDash(dash); ctx.beginPath();
    pts.forEach((p, i) => (i ? ctx.lineTo(...px(p)) : ctx.moveTo(...px(p))));
    ctx.stroke();
  };
  const dots = (pts, style) => {
    ctx.fillStyle = style;
    pts.forEach((p) => { const [u, v] = px(p); ctx.fillRect(u - 2, v - 2, 4, 4); });
  };
  line(d.truth, "#333");
  dots(d.gps.slice(0, tp), "#1f77b4");
  line([d.gps[tp - 1], ...d.baseline], "#d62728", [5, 4]);
  dots(d.truth.slice(tp), "#2ca02c");
  const mae = d.step_mae.map((e) => e.toFixed(2)).join(", ");
  $("tr-info").innerHTML =
    `${d.mode}: black truth, blue observed GPS, green future truth, red dashed baseline.<br>` +
    `per-step MAE (m): ${mae}<br>baseline beams (i_theta, i_phi, i_r): ` +
    d.baseline_beams.map((b) => `(${b.join(", ")})`).join(" ");
}

await init();
MODES.forEach((m, i) => $("tr-mode").add(new Option(`${i}: ${m}`, i)));
$("hm-go").onclick = guarded("hm-info", renderHeatmap);
$("sw-go").onclick = guarded("sw-out", runSweep);
$("tr-go").onclick = guarded("tr-info", runTrajectory);
guarded("hm-info", renderHeatmap)();
guarded("tr-info", runTrajectory)();
