import init, { Demo, scene_names } from "./pkg/lookout_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("view");
const ctx = canvas.getContext("2d");

const ROLE_FILL = { wall: "#555", occluder: "#b9a27a", "target-candidate": "#7aa6d6" };

let demo = null;
let scene = null;
let running = false;

function toCanvas(p) {
  const { min, max } = scene.bounds;
  const s = Math.min(canvas.width / (max[0] - min[0]), canvas.height / (max[1] - min[1]));
  return [(p[0] - min[0]) * s, canvas.height - (p[1] - min[1]) * s, s];
}

function drawShape(shape) {
  ctx.beginPath();
  if (shape.kind === "disc") {
    const [x, y, s] = toCanvas(shape.params.center);
    ctx.arc(x, y, shape.params.radius * s, 0, 2 * Math.PI);
  } else {
    shape.params.vertices.forEach((v, i) => {
      const [x, y] = toCanvas(v);
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.closePath();
  }
}

function polyline(poses, style, dash = []) {
  if (poses.length < 2) return;
  ctx.strokeStyle = style;
  ctx.setLineDash(dash);
  ctx.lineWidth = 2;
  ctx.beginPath();
  poses.forEach((p, i) => {
    const [x, y] = toCanvas([p.x, p.y]);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.setLineDash([]);
}

function draw() {
  const f = JSON.parse(demo.frame());
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  for (const o of scene.objects) {
    drawShape(o.shape);
    ctx.fillStyle = o.id === f.target ? "#e8a33d" : ROLE_FILL[o.role];
    ctx.fill();
    if (o.role === "target-candidate") {
      const vs = o.shape.kind === "disc" ? [o.shape.params.center] : o.shape.params.vertices;
      const c = [0, 1].map((k) => vs.reduce((a, v) => a + v[k], 0) / vs.length);
      const [x, y] = toCanvas(c);
      ctx.fillStyle = "#222";
      ctx.fillText(o.label || o.id, x + 6, y - 6);
    }
  }

  const [cx, cy] = toCanvas([f.pose.x, f.pose.y]);
  for (const r of f.rays) {
    const [x, y] = toCanvas([f.pose.x + r.depth * Math.cos(r.bearing), f.pose.y + r.depth * Math.sin(r.bearing)]);
    ctx.strokeStyle = r.class === null ? "rgba(0,0,0,0.08)" : "rgba(220,60,60,0.35)";
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(cx, cy);
    ctx.lineTo(x, y);
    ctx.stroke();
  }

  polyline(f.trail, "#3a6ea5");
  polyline([f.pose, ...f.plan], "#2a9d4b", [5, 4]);

  ctx.fillStyle = f.success ? "#1a7f37" : "#222";
  ctx.beginPath();
  ctx.arc(cx, cy, 6, 0, 2 * Math.PI);
  ctx.fill();
  ctx.strokeStyle = ctx.fillStyle;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + 16 * Math.cos(f.pose.theta), cy - 16 * Math.sin(f.pose.theta));
  ctx.stroke();

  $("status").innerHTML =
    `steps       ${f.steps}\n` +
    `confidence  ${f.confidence.toFixed(3)}\n` +
    `bbox        ${f.bbox.toFixed(3)}\n` +
    `reward      ${f.reward.toFixed(3)}\n` +
    `distance    ${f.distance.toFixed(2)} m\n` +
    (f.tier ? `tier        ${f.tier}, d* ${f.d_star.toFixed(2)} m, efficiency ${f.efficiency.toFixed(3)}\n` : "") +
    (f.success ? `<span class="ok">target in view</span>` : "searching");
  return f;
}

function reset() {
  running = false;
  demo.reset(BigInt($("seed").value), $("tier").value);
  $("target").value = demo.target();
  draw();
}

function loadScene() {
  demo = new Demo($("scene").value, BigInt($("seed").value));
  scene = JSON.parse(demo.scene_json());
  $("target").replaceChildren(...demo.targets().map((t) => new Option(t, t)));
  reset();
}

function step() {
  const done = demo.plan_step($("planner").value);
  draw();
  return done;
}

async function runEpisode() {
  if (running) return;
  running = true;
  $("run").textContent = "Stop";
  for (let i = 0; i < 40 && running; i++) {
    if (step()) break;
    await new Promise((r) => setTimeout(r, 60));
  }
  running = false;
  $("run").textContent = "Run episode";
}

await init();
$("scene").replaceChildren(...scene_names().map((n) => new Option(n, n)));
$("scene").onchange = loadScene;
$("target").onchange = () => {
  demo.set_target($("target").value);
  draw();
};
$("reset").onclick = reset;
$("step").onclick = step;
$("run").onclick = () => (running ? (running = false) : runEpisode());

const KEYS = {
  ArrowUp: [1, 0, 0],
  ArrowDown: [-1, 0, 0],
  ArrowLeft: [0, 0, 1],
  ArrowRight: [0, 0, -1],
};
document.addEventListener("keydown", (e) => {
  if (!(e.key in KEYS) || e.target.tagName === "INPUT") return;
  e.preventDefault();
  let [fwd, left, turn] = KEYS[e.key];
  if (e.shiftKey && turn !== 0) [left, turn] = [turn, 0];
  demo.drive(fwd, left, turn);
  draw();
});

loadScene();
