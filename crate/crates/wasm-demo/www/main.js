import init, { simulate, profile, mcmc } from "./pkg/mse_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let dataset = null;
let truth = null;

function fail(target, err) {
  $(target).innerHTML = `<p class="err">${err.message ?? err}</p>`;
}

function fmt(x, digits = 1) {
  return Number.isFinite(x) ? x.toFixed(digits) : String(x);
}

function axes(ctx, w, h, xs, ys) {
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const pad = 30;
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText(fmt(x0, 2), pad, h - 10);
  ctx.fillText(fmt(x1, 2), w - pad - 30, h - 10);
  return { sx, sy };
}

function vline(ctx, x, h, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  ctx.moveTo(x, 30);
  ctx.lineTo(x, h - 30);
  ctx.stroke();
}

function runSimulate() {
  const request = {
    k: num("k"),
    alpha: num("alpha"),
    effect_sd: num("effect-sd"),
    censor: $("censor-on").checked ? [num("censor-lo"), num("censor-hi")] : null,
    seed: num("seed"),
  };
  try {
    const out = JSON.parse(simulate(JSON.stringify(request)));
    dataset = JSON.stringify(out.dataset);
    truth = out;
    const rows = out.patterns
      .map((p, i) => {
        const cell = out.dataset.cells[i];
        const shown = cell.censored ? "censored" : cell.count;
        return `<tr><td>${p}</td><td>${out.raw_counts[i]}</td><td>${shown}</td></tr>`;
      })
      .join("");
    $("sim-out").innerHTML =
      `<p>True hidden population N0 = ${fmt(out.n0)}</p>` +
      `<table><tr><th>pattern</th><th>raw</th><th>reported</th></tr>${rows}</table>`;
    $("profile").disabled = false;
    $("mcmc").disabled = false;
  } catch (e) {
    fail("sim-out", e);
  }
}

function runProfile() {
  try {
    const out = JSON.parse(profile(dataset, num("half-width"), 81));
    $("profile-out").innerHTML =
      `<p>MLE N0 = ${fmt(out.n0_hat)} (95% Wald ${fmt(out.n0_lo)} to ${fmt(out.n0_hi)})` +
      `${out.unreliable ? ", information matrix near singular" : ""}</p>`;
    const canvas = $("profile-plot");
    const ctx = canvas.getContext("2d");
    const finite = out.profile.map((v, i) => [out.alphas[i], v]).filter(([, v]) => Number.isFinite(v));
    const { sx, sy } = axes(ctx, canvas.width, canvas.height, finite.map((p) => p[0]), finite.map((p) => p[1]));
    ctx.strokeStyle = "#1f5fa8";
    ctx.beginPath();
    finite.forEach(([a, v], i) => (i ? ctx.lineTo(sx(a), sy(v)) : ctx.moveTo(sx(a), sy(v))));
    ctx.stroke();
    vline(ctx, sx(truth.theta[0]), canvas.height, "#c33");
  } catch (e) {
    fail("profile-out", e);
  }
}

function runMcmc() {
  const request = {
    alpha_lo: num("alpha-lo"),
    alpha_hi: num("alpha-hi"),
    effect_sd: num("prior-sd"),
    chains: num("chains"),
    iterations: num("iterations"),
    burnin: num("burnin"),
    seed: num("seed"),
  };
  try {
    const t = performance.now();
    const out = JSON.parse(mcmc(dataset, JSON.stringify(request)));
    const ms = performance.now() - t;
    $("mcmc-out").innerHTML =
      `<p>Posterior median N0 = ${fmt(out.n0_median)} (95% ${fmt(out.n0_lo)} to ${fmt(out.n0_hi)}), ` +
      `max R-hat ${out.max_rhat === null ? "undefined" : fmt(out.max_rhat, 3)}, ` +
      `${out.converged ? "converged" : "not converged"}, ${fmt(ms, 0)} ms</p>` +
      out.warnings.map((w) => `<p class="err">${w}</p>`).join("");
    const draws = out.n0_draws.flat().map(Math.log);
    const bins = 40;
    const lo = Math.min(...draws);
    const hi = Math.max(...draws);
    const counts = new Array(bins).fill(0);
    for (const d of draws) counts[Math.min(bins - 1, Math.floor(((d - lo) / (hi - lo || 1)) * bins))]++;
    const canvas = $("mcmc-plot");
    const ctx = canvas.getContext("2d");
    const edges = counts.map((_, i) => lo + ((hi - lo) * i) / bins);
    const { sx, sy } = axes(ctx, canvas.width, canvas.height, [lo, hi], [0, ...counts]);
    ctx.fillStyle = "#6a9bd1";
    const width = sx(edges[1] ?? hi) - sx(edges[0]);
    counts.forEach((c, i) => ctx.fillRect(sx(edges[i]), sy(c), width - 1, sy(0) - sy(c)));
    vline(ctx, sx(truth.theta[0]), canvas.height, "#c33");
  } catch (e) {
    fail("mcmc-out", e);
  }
}

await init();
$("simulate").addEventListener("click", runSimulate);
$("profile").addEventListener("click", runProfile);
$("mcmc").addEventListener("click", runMcmc);
