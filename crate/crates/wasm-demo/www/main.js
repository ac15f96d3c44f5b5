import init, { Demo } from "./pkg/hs_assist_wasm_demo.js";

const $ = (id) => document.getElementById(id);
let demo;

function setStatus(text, error = false) {
  $("status").textContent = text;
  $("status").className = error ? "error" : "";
}

function intIn(id, lo, hi) {
  const v = Number.parseInt($(id).value, 10);
  if (!Number.isFinite(v)) return lo;
  return Math.min(hi, Math.max(lo, v));
}

function suggest() {
  const description = $("description").value;
  if (!description.trim()) {
    setStatus("Enter a description first.", true);
    return;
  }
  const k = intIn("k", 1, 10);
  const n = intIn("n", 1, 50);
  const lambda = Math.max(0, Number.parseFloat($("lambda").value) || 0);
  try {
    const asJson = $("as-json").checked;
    const json = demo.classify(description, k, n, lambda, false, Date.now());
    const report = JSON.parse(json);
    if (asJson) {
      $("report-json").textContent = JSON.stringify(report, null, 2);
    } else {
      $("report").srcdoc = demo.classify(description, k, n, lambda, true, Date.now());
    }
    $("report").hidden = asJson;
    $("report-json").hidden = !asJson;
    $("report-section").hidden = false;

    const select = $("heading");
    select.replaceChildren(
      ...report.heading_candidates.map((h) => {
        const o = document.createElement("option");
        o.value = h.heading;
        o.textContent = `${h.heading} (${(100 * h.probability).toFixed(1)}%)`;
        return o;
      }),
    );
    $("lambda-slider").value = lambda;
    $("n-echo").textContent = n;
    $("explore").disabled = report.heading_candidates.length === 0;
    explore();
    setStatus(report.low_confidence_flag ? "Low confidence: no word of the description is known to the model." : "");
  } catch (e) {
    setStatus(String(e), true);
  }
}

function explore() {
  const heading = $("heading").value;
  const description = $("description").value;
  if (!heading || !description.trim()) return;
  const lambda = Number.parseFloat($("lambda-slider").value);
  $("lambda-value").textContent = lambda.toFixed(2);
  const n = intIn("n", 1, 50);
  let rows;
  try {
    rows = JSON.parse(demo.evidence(description, heading, lambda, intIn("k-case", 1, 50)));
  } catch (e) {
    setStatus(String(e), true);
    return;
  }
  const max = Math.max(1e-9, ...rows.map((r) => Math.abs(r.s_total)));
  $("evidence").replaceChildren(
    ...rows.map((r) => {
      const tr = document.createElement("tr");
      if (r.rank <= n) tr.className = "top";
      const cells = [
        [r.rank, "num"],
        [r.sid, ""],
        [r.text, "text"],
        [r.s_text.toFixed(3), "num"],
        [r.s_expert.toFixed(3), "num"],
        [r.s_total.toFixed(3), "num"],
      ];
      for (const [value, cls] of cells) {
        const td = document.createElement("td");
        td.textContent = value;
        if (cls) td.className = cls;
        tr.append(td);
      }
      const bar = document.createElement("span");
      bar.className = "bar";
      bar.style.width = `${(60 * Math.max(0, r.s_total)) / max}px`;
      const td = document.createElement("td");
      td.append(bar);
      tr.append(td);
      return tr;
    }),
  );
}

async function main() {
  await init();
  setStatus("Training on the synthetic corpus…");
  await new Promise((r) => setTimeout(r, 20));
  const started = performance.now();
  demo = new Demo(7, 32, 20);
  const info = JSON.parse(demo.info());
  setStatus(
    `Model ${info.model_version} ready: ${info.labels} subheadings, ${info.vocabulary} words, ` +
      `T = ${info.temperature.toFixed(3)}, trained in ${((performance.now() - started) / 1000).toFixed(1)} s.`,
  );

  for (const s of JSON.parse(demo.samples(40))) {
    const o = document.createElement("option");
    o.value = s.description;
    o.textContent = `${s.id} (${s.label}, ${s.origin})`;
    $("samples").append(o);
  }
  $("samples").addEventListener("change", (e) => {
    if (e.target.value) {
      $("description").value = e.target.value;
      suggest();
    }
  });
  $("suggest").addEventListener("click", suggest);
  $("heading").addEventListener("change", explore);
  $("lambda-slider").addEventListener("input", explore);
  $("k-case").addEventListener("change", explore);
  $("query").disabled = false;
}

main().catch((e) => setStatus(`Failed to start: ${e}`, true));
