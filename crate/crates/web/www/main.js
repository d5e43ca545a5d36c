import init, { sampleCsv, quantileTest, meanTest } from "./pkg/qselect_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(run) {
  const out = $("out");
  out.classList.remove("error");
  out.textContent = "Running…";
  // let the browser paint before the blocking call
  setTimeout(() => {
    const t0 = performance.now();
    try {
      const text = run();
      out.textContent = `${text}\n(${((performance.now() - t0) / 1000).toFixed(2)} s)`;
    } catch (e) {
      out.classList.add("error");
      out.textContent = String(e.message ?? e);
    }
  }, 0);
}

await init();
$("out").textContent = "Ready.";

$("simulate").addEventListener("click", () =>
  show(() => {
    $("csv").value = sampleCsv(num("n"), num("rho"), num("gamma1"), $("meanOutcome").checked, num("seed"));
    const rows = $("csv").value.trim().split("\n").length - 1;
    return `Simulated ${rows} rows.`;
  }),
);

$("quantile").addEventListener("click", () =>
  show(() => quantileTest($("csv").value, $("taus").value, num("reps"), num("seed"))),
);

$("mean").addEventListener("click", () =>
  show(() => meanTest($("csv").value, num("reps"), num("seed"))),
);
