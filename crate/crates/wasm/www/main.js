import init, { Demo } from "./pkg/vhm_wasm.js";

const $ = (id) => document.getElementById(id);
const checked = (name) => document.querySelector(`input[name=${name}]:checked`).value;
let demo = null;

function draw(id, img) {
  const canvas = $(id);
  canvas.width = img.width;
  canvas.height = img.height;
  const data = new ImageData(new Uint8ClampedArray(img.rgba()), img.width, img.height);
  canvas.getContext("2d").putImageData(data, 0, 0);
  $(`${id}-summary`).textContent = img.summary;
  img.free();
}

function guarded(id, f) {
  if (!demo) return;
  try {
    draw(id, f());
  } catch (e) {
    $(`${id}-summary`).textContent = String(e);
  }
}

const renderPool = () => guarded("pool", () => demo.pool(Number($("factor").value), checked("mode")));
const renderTerrain = () => guarded("terrain", () => demo.terrain(checked("layer")));
const renderChange = () =>
  guarded("change", () => demo.change(Number($("threshold").value), Number($("min-area").value), $("eight").checked));

function generate() {
  $("status").textContent = "generating...";
  setTimeout(() => {
    if (demo) demo.free();
    const t = performance.now();
    demo = new Demo(Number($("seed").value), Number($("extent").value));
    $("status").textContent = `${demo.extent} m world in ${Math.round(performance.now() - t)} ms`;
    renderPool();
    renderTerrain();
    renderChange();
  }, 10);
}

function bind(id, render) {
  const out = $(`${id}-val`);
  $(id).addEventListener("input", () => {
    if (out) out.textContent = $(id).value;
    render();
  });
}

await init();
bind("factor", renderPool);
bind("threshold", renderChange);
bind("min-area", renderChange);
bind("eight", renderChange);
document.querySelectorAll("input[name=mode]").forEach((e) => e.addEventListener("change", renderPool));
document.querySelectorAll("input[name=layer]").forEach((e) => e.addEventListener("change", renderTerrain));
$("generate").addEventListener("click", generate);
generate();
