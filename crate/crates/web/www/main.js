import init, { solve, smooth_basis, convergence } from "./pkg/hho_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

const STOPS = [
  [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
];

function color(t) {
  const s = Math.min(Math.max(t, 0), 1) * (STOPS.length - 1);
  const i = Math.min(Math.floor(s), STOPS.length - 2);
  const f = s - i;
  const c = STOPS[i].map((a, k) => Math.round(a + f * (STOPS[i + 1][k] - a)));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

function draw(plot) {
  const canvas = $("plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const xy = plot.coords;
  const v = plot.values;
  const lo = plot.min;
  const span = plot.max - lo || 1;
  for (let t = 0; t < v.length / 3; t++) {
    const mean = (v[3 * t] + v[3 * t + 1] + v[3 * t + 2]) / 3;
    ctx.fillStyle = color((mean - lo) / span);
    ctx.strokeStyle = ctx.fillStyle;
    ctx.beginPath();
    for (let c = 0; c < 3; c++) {
      const x = xy[6 * t + 2 * c] * w;
      const y = (1 - xy[6 * t + 2 * c + 1]) * h;
      c === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    }
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
  }
  const bar = $("bar").getContext("2d");
  for (let i = 0; i < 200; i++) {
    bar.fillStyle = color(i / 199);
    bar.fillRect(i, 0, 1, 12);
  }
  $("lo").textContent = plot.min.toExponential(2);
  $("hi").textContent = plot.max.toExponential(2);
  $("status").textContent = plot.summary;
  plot.free();
}

function guarded(action) {
  return () => {
    $("status").className = "";
    $("status").textContent = "working...";
    setTimeout(() => {
      try {
        action();
      } catch (e) {
        $("status").className = "error";
        $("status").textContent = String(e.message ?? e);
      }
    }, 0);
  };
}

const common = () => [num("degree"), $("method").value, $("averaging").value];

await init();

$("solve").onclick = guarded(() => {
  const [p, method, avg] = common();
  draw(solve($("case").value, p, num("n"), method, avg, num("samples")));
});

$("smooth").onclick = guarded(() => {
  const [p, , avg] = common();
  draw(smooth_basis(p, num("n"), avg, $("entity").value, num("index"), num("component"), num("samples")));
});

$("converge").onclick = guarded(() => {
  const [p, method, avg] = common();
  const csv = convergence($("case").value, p, method, avg, num("base"), num("levels"));
  const rows = csv.trim().split("\n").map((l) => l.split(","));
  const fmt = (s) => (s === "" ? "-" : Number(s).toPrecision(4));
  $("table").textContent = rows
    .map((r, i) => r.map((c, j) => (i === 0 || j === 0 ? c : fmt(c)).padStart(11)).join(""))
    .join("\n");
  $("status").textContent = `${rows.length - 1} levels`;
});

$("solve").click();
