import init, { pack, schedule, rope } from "./pkg/longmix_demo.js";

const $ = (id) => document.getElementById(id);
const palette = ["#3b6ea5", "#c9643b", "#4b9a5b", "#8a5aa8", "#b5894a", "#3f8f99", "#a8485f", "#6c7a3a"];

function fail(el, e) {
  el.innerHTML = `<p class="err">${String(e)}</p>`;
}

function renderPack() {
  const out = $("pack-out");
  try {
    const r = JSON.parse(pack($("pack-lengths").value, Number($("pack-length").value), $("pack-carry").checked));
    const colour = {};
    let html = "";
    for (const seq of r.sequences) {
      html += '<div class="seq">';
      seq.origins.forEach((o, i) => {
        colour[o] ??= palette[Object.keys(colour).length % palette.length];
        const w = ((seq.boundaries[i + 1] - seq.boundaries[i]) / r.length) * 100;
        const cls = seq.carried[i] ? "seg carried" : "seg";
        html += `<div class="${cls}" style="width:${w}%;background-color:${colour[o]}" title="${o}: [${seq.boundaries[i]}, ${seq.boundaries[i + 1]})">${o}</div>`;
      });
      html += "</div>";
    }
    html += `<p>${r.sequences.length} sequences, ${r.emitted_tokens} tokens emitted, ${r.carried_tokens} carried, ${r.discarded_tokens} discarded, ${r.pending} left in the unfinished sequence.</p>`;
    html += `<pre>${r.sequences.map((s) => "cu_seqlens = [" + s.boundaries.join(", ") + "]").join("\n")}</pre>`;
    out.innerHTML = html;
  } catch (e) {
    fail(out, e);
  }
}

function gridTable(title, plan, costs) {
  let html = `<table><caption>${title}: makespan ${plan.makespan.toExponential(3)}</caption><tr><th>micro-step</th>`;
  plan.grid[0].forEach((_, d) => (html += `<th>device ${d}</th>`));
  html += "</tr>";
  plan.grid.forEach((row, k) => {
    const worst = Math.max(...row.map((i) => costs[i]));
    html += `<tr><th>${k}</th>`;
    for (const i of row) {
      const bold = costs[i] === worst ? "font-weight:bold" : "";
      html += `<td style="${bold}">#${i} ${costs[i].toExponential(2)}</td>`;
    }
    html += "</tr>";
  });
  return html + "</table>";
}

function renderSchedule() {
  const out = $("sched-out");
  try {
    const r = JSON.parse(schedule($("sched-input").value, Number($("sched-devices").value), Number($("sched-accum").value)));
    out.innerHTML =
      gridTable("listed order", r.unsorted, r.costs) +
      gridTable("sorted by cost", r.sorted, r.costs) +
      `<p>Modeled speedup from sorting: ${(100 * r.speedup).toFixed(1)}%</p>`;
  } catch (e) {
    fail(out, e);
  }
}

function renderRope() {
  const out = $("rope-out");
  const canvas = $("rope-plot");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  try {
    const pts = JSON.parse(rope(Number($("rope-base").value), BigInt($("rope-len").value), Number($("rope-dim").value), BigInt($("rope-max").value)));
    out.innerHTML =
      "<table><tr><th>context</th><th>suggested base</th></tr>" +
      pts.map((p) => `<tr><td>${p.context}</td><td>${p.base.toExponential(3)}</td></tr>`).join("") +
      "</table>";
    const lx = pts.map((p) => Math.log2(p.context));
    const ly = pts.map((p) => Math.log10(p.base));
    const [x0, x1] = [Math.min(...lx), Math.max(...lx) || 1];
    const [y0, y1] = [Math.min(...ly), Math.max(...ly)];
    const px = (x) => 40 + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - 60);
    const py = (y) => canvas.height - 30 - ((y - y0) / (y1 - y0 || 1)) * (canvas.height - 50);
    ctx.strokeStyle = palette[0];
    ctx.fillStyle = "#222";
    ctx.font = "11px system-ui";
    ctx.beginPath();
    pts.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, px(lx[i]), py(ly[i])));
    ctx.stroke();
    pts.forEach((p, i) => {
      ctx.fillRect(px(lx[i]) - 2, py(ly[i]) - 2, 4, 4);
      ctx.fillText(p.base.toExponential(2), px(lx[i]) - 14, py(ly[i]) - 8);
      ctx.fillText(`${p.context / 1024}K`, px(lx[i]) - 8, canvas.height - 12);
    });
  } catch (e) {
    fail(out, e);
  }
}

await init();
for (const id of ["pack-lengths", "pack-length", "pack-carry"]) $(id).addEventListener("input", renderPack);
for (const id of ["sched-input", "sched-devices", "sched-accum"]) $(id).addEventListener("input", renderSchedule);
for (const id of ["rope-base", "rope-len", "rope-dim", "rope-max"]) $(id).addEventListener("input", renderRope);
renderPack();
renderSchedule();
renderRope();
