// Glue generated by `wasm-bindgen --target web` lives in ./pkg (see README).
import init, { Scene } from "./pkg/tta_demo.js";

const SIZE = 64;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function draw(id, rgba) {
  const canvas = $(id);
  canvas.width = SIZE;
  canvas.height = SIZE;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
}

function report(scene, extra = "") {
  $("status").textContent = `hole ratio ${scene.hole_ratio().toFixed(3)}${extra}`;
}

function redraw(scene) {
  draw("texture", scene.texture_rgba());
  draw("masked", scene.masked_rgba());
  draw("filled", scene.fill_rgba());
  draw("ratio", scene.ratio_rgba());
}

function guarded(scene, fn) {
  return (ev) => {
    try {
      fn(ev);
      redraw(scene);
    } catch (err) {
      $("status").textContent = `error: ${err.message ?? err}`;
    }
  };
}

async function main() {
  await init();
  const scene = new Scene(SIZE);

  $("new-texture").onclick = guarded(scene, () => {
    scene.set_texture($("family").value, num("tex-seed"));
    report(scene);
  });
  $("random-mask").onclick = guarded(scene, () => {
    scene.random_mask(num("mask-seed"), num("min-ratio"), num("max-ratio"));
    report(scene);
  });
  $("clear-mask").onclick = guarded(scene, () => {
    scene.clear_mask();
    report(scene);
  });
  $("fill").onclick = guarded(scene, () => {
    const t0 = performance.now();
    scene.fill($("mode").value, num("rounds"));
    const ms = performance.now() - t0;
    report(scene, `  fill ${ms.toFixed(0)} ms  hole sharpness ${scene.hole_sharpness().toFixed(4)}`);
  });

  // painting on the input panel; canvas pixels are scaled by CSS
  const masked = $("masked");
  let painting = false;
  const stamp = guarded(scene, (ev) => {
    const r = masked.getBoundingClientRect();
    const x = ((ev.clientX - r.left) / r.width) * SIZE;
    const y = ((ev.clientY - r.top) / r.height) * SIZE;
    scene.paint(x, y, num("brush"), ev.shiftKey);
    report(scene);
  });
  masked.addEventListener("pointerdown", (ev) => {
    painting = true;
    masked.setPointerCapture(ev.pointerId);
    stamp(ev);
  });
  masked.addEventListener("pointermove", (ev) => painting && stamp(ev));
  masked.addEventListener("pointerup", () => (painting = false));

  redraw(scene);
  report(scene);
}

main().catch((err) => {
  $("status").textContent = `failed to start: ${err.message ?? err}`;
});
