import init, { beam_pattern, drop_mask, lr_curve } from "./pkg/gse_wasm.js";

const $ = (id) => document.getElementById(id);

function show(infoId, fn) {
  const info = $(infoId);
  try {
    info.className = "";
    fn(info);
  } catch (e) {
    info.className = "err";
    info.textContent = String(e.message ?? e);
  }
}

function drawBeam() {
  show("bp-info", (info) => {
    const db = beam_pattern(+$("bp-side").value / 100, +$("bp-look").value, +$("bp-freq").value);
    const c = $("bp").getContext("2d");
    const r0 = 160, floor = -40;
    c.clearRect(0, 0, 360, 360);
    c.strokeStyle = "#ddd";
    for (const f of [0.25, 0.5, 0.75, 1]) {
      c.beginPath(); c.arc(180, 180, r0 * f, 0, 2 * Math.PI); c.stroke();
    }
    c.strokeStyle = "#1565c0";
    c.beginPath();
    db.forEach((v, deg) => {
      const r = r0 * Math.max(0, (Math.min(v, 0) - floor) / -floor);
      const a = (deg * Math.PI) / 180;
      const x = 180 + r * Math.cos(a), y = 180 - r * Math.sin(a);
      deg === 0 ? c.moveTo(x, y) : c.lineTo(x, y);
    });
    c.closePath(); c.stroke();
    info.textContent = `min ${Math.min(...db).toFixed(1)} dB (rings every 10 dB, outer = 0 dB)`;
  });
}

function drawMask() {
  show("dm-info", (info) => {
    const n = 500;
    const m = drop_mask(n, +$("dm-p").value, +$("dm-s").value, +$("dm-seed").value);
    const c = $("dm").getContext("2d");
    const w = 720 / n;
    c.clearRect(0, 0, 720, 60);
    m.forEach((d, i) => {
      c.fillStyle = d ? "#c62828" : "#a5d6a7";
      c.fillRect(i * w, 0, Math.ceil(w), 60);
    });
    const frac = m.reduce((a, b) => a + b, 0) / n;
    info.textContent = `${(frac * 100).toFixed(1)}% of 10 s dropped`;
  });
}

function drawLr() {
  show("lr-info", (info) => {
    const peak = 2e-3;
    const y = lr_curve(+$("lr-n").value, peak, +$("lr-w").value, +$("lr-h").value);
    const c = $("lr").getContext("2d");
    c.clearRect(0, 0, 720, 200);
    c.strokeStyle = "#6a1b9a";
    c.beginPath();
    y.forEach((v, i) => {
      const px = (i / (y.length - 1)) * 720, py = 195 - (v / peak) * 185;
      i === 0 ? c.moveTo(px, py) : c.lineTo(px, py);
    });
    c.stroke();
    info.textContent = `final ${y[y.length - 1].toExponential(2)}`;
  });
}

await init();
for (const id of ["bp-side", "bp-look", "bp-freq"]) $(id).addEventListener("input", drawBeam);
for (const id of ["dm-p", "dm-s", "dm-seed"]) $(id).addEventListener("input", drawMask);
for (const id of ["lr-n", "lr-w", "lr-h"]) $(id).addEventListener("input", drawLr);
drawBeam();
drawMask();
drawLr();
