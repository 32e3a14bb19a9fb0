"""End-to-end acceptance checks, one test per criterion.

Each test records an ``ACn PASS|FAIL`` line (echoed in pytest's terminal
summary and printed when run with ``-s``) and then asserts the same verdict.
"""
import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from rmhedge import (AnalyticValue, Axis, DividendSpec, PointwiseHedge, SamplePlan, SpatialGrid, TimeGrid,
                     attainability_check, gram_matrix, hedge_field, load_config, mc_confidence_report, mc_value,
                     preset_model, run_scenario, simulate_paths, solve_pide, stream_residual_risk)
from rmhedge.fkmc import probe_seed
from rmhedge.oracles import bs_call, bs_delta, chain_value, merton_call
from rmhedge.pide import apply_generator
from rmhedge.risk import Perturbation
from rmhedge.scenario import build_grid
from rmhedge.sim import stream_martingale_diagnostic

import conftest

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).parents[1] / "configs"


def record(n: int, ok: bool, detail: str):
    line = f"AC{n} {'PASS' if ok else 'FAIL'} {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def config_model(name):
    cfg = load_config(CONFIGS / f"{name}.toml")
    model, div = preset_model(cfg.model_family, cfg.model_params, cfg.dividend_family, cfg.dividend_params)
    return cfg, model, div


# ---------------------------------------------------------------- 1

def test_ac1_black_scholes_completeness():
    model, div = preset_model("black_scholes", {"sigma": 0.2, "r": 0.0}, "call", {"strike": 100.0, "maturity": 1.0})
    grid = SpatialGrid((Axis(100 * math.exp(-2), 100 * math.exp(2), 1601, True),))
    v = solve_pide(model, div, grid, 1e-3)
    ref = bs_call(100.0, 100.0, 1.0, 0.2)
    price = float(v.value(0.0, np.array([[100.0]]), 0)[0])
    price_err = abs(price / ref - 1)

    hf = hedge_field(model, div, v)
    Z = grid.points()[:, 0]
    worst = 0.0
    # interior in time too: the payoff kink must span several nodes (sigma*sqrt(tau) >= 8h)
    for li in np.flatnonzero(1.0 - v.times >= 0.01 - 1e-12):
        delta = bs_delta(Z, 100.0, 1.0 - v.times[li], 0.2)
        sel = (delta > 0.05) & (delta < 0.95)
        if sel.any():
            worst = max(worst, float(np.max(np.abs(hf.phi[li, 0, sel, 0] / delta[sel] - 1))))

    rr = stream_residual_risk(model, div, hf, [100.0], 0, TimeGrid(0.0, 1.0, 1000), 100_000, seed=1)
    bound = 1e-3 * ref ** 2
    ok = (price_err <= 5e-3 and worst <= 0.01 and rr.R0 <= bound and rr.direct["mean"] <= bound
          and rr.cost["mean"] <= bound)
    record(1, ok, f"price {price:.5f} vs {ref:.5f} (rel {price_err:.1e}); max |phi/delta-1| {worst:.1e}; "
                  f"R0 integral {rr.R0:.1e}, direct {rr.direct['mean']:.1e}, cost route {rr.cost['mean']:.3f} "
                  f"<= {bound:.3f}")


# ---------------------------------------------------------------- 2

def test_ac2_merton_incompleteness():
    cfg, model, div = config_model("merton_jump")
    p = cfg.model_params
    v = solve_pide(model, div, build_grid(cfg, model, div), 0.002)
    ref = merton_call(100.0, 100.0, 1.0, p["sigma"], p["r"], p["jump_intensity"], p["jump_mean"], p["jump_std"])
    price = float(v.value(0.0, np.array([[100.0]]), 0)[0])
    hf = hedge_field(model, div, v)
    rr = stream_residual_risk(model, div, hf, [100.0], 0, TimeGrid(0.0, 1.0, 250), 40_000, seed=2)
    gap = rr.consistency["difference"]
    ok = abs(price / ref - 1) <= 0.01 and rr.R0 > 3 * rr.se and rr.consistency["ok"]
    record(2, ok, f"price {price:.4f} vs series {ref:.4f}; R0 {rr.R0:.4f} (SE {rr.se:.1e}); "
                  f"integral - direct {gap:.1e} (SE {rr.consistency['SE']:.1e})")


# ---------------------------------------------------------------- 3

def test_ac3_feynman_kac_probes():
    cfg, model, div = config_model("regime_switching")
    v = solve_pide(model, div, build_grid(cfg, model, div), 0.002)
    points, ests, refs = [], [], []
    for k, t in enumerate((0.0, 0.25, 0.5)):
        for j, s in enumerate((90.0, 100.0, 110.0)):
            y = np.array([s])
            points.append((t, y, 0))
            ests.append(mc_value(model, div, t, y, 0, 1_000_000, 1 / 200, probe_seed(cfg.seed, 3 * k + j),
                                 chunk_size=65536))
            refs.append(float(v.value(t, y[None], 0)[0]))
    rep = mc_confidence_report(ests, refs, points)
    worst = max(abs(e.estimate - r) / e.se for e, r in zip(ests, refs))
    record(3, rep.n_flags <= 1, f"{rep.n_flags}/9 probes beyond 3 SE at 1e6 paths; worst {worst:.2f} SE")


# ---------------------------------------------------------------- 4 and 6 share one run

@pytest.fixture(scope="module")
def regime_risk():
    cfg, model, div = config_model("regime_switching")
    v = solve_pide(model, div, build_grid(cfg, model, div), 0.002)
    hf = hedge_field(model, div, v)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31]))
    perts = [Perturbation.random(rng, 1, 0.2, 1.0) for _ in range(5)]
    grid = TimeGrid.from_step(0.0, 1.0, 0.004)
    rr = stream_residual_risk(model, div, hf, [100.0], 0, grid, 100_000, cfg.seed, perts)
    md = stream_martingale_diagnostic(model, np.array([100.0]), 0, grid, 100_000, cfg.seed + 1)
    return rr, md


def test_ac4_martingale_and_orthogonality(regime_risk):
    rr, md = regime_risk
    orth = rr.orthogonality[0]
    ok = not md.flagged and not orth["flag"]
    z_asset = float(md.asset_mean[0] / md.asset_se[0])
    z_M = [float(md.M_mean[i, j] / md.M_se[i, j]) for i, j in ((0, 1), (1, 0))]
    record(4, ok, f"S* mean {z_asset:+.2f} SE; M^12, M^21 {z_M[0]:+.2f}, {z_M[1]:+.2f} SE; "
                  f"<L, S*> {orth['mean']:.1e} (SE {orth['SE']:.1e})")


def test_ac6_perturbation_optimality(regime_risk):
    rr, _ = regime_risk
    margins = [(p["R0"] - (rr.cost["mean"] - 3 * rr.cost["SE"])) for p in rr.perturbations]
    ok = len(rr.perturbations) == 5 and all(p["ok"] for p in rr.perturbations)
    record(6, ok, f"5 perturbations, R0 {rr.cost['mean']:.4f}; perturbed excess "
                  + ", ".join(f"{p['excess']:+.3f}" for p in rr.perturbations)
                  + f"; min margin {min(margins):.3f}")


# ---------------------------------------------------------------- 5

def test_ac5_mean_self_financing(tmp_path):
    results = []
    for name in ("black_scholes", "merton_jump", "regime_switching", "stochvol", "semi_markov"):
        man = run_scenario(load_config(CONFIGS / f"{name}.toml"), tmp_path / name)
        ch = [c for c in man["checks"] if c["name"] == "mean_self_financing"]
        results.append((name, bool(ch) and ch[0]["passed"], ch[0]["detail"] if ch else "missing"))
    ok = all(r[1] for r in results)
    record(5, ok, "; ".join(f"{n}: {d}" for n, _, d in results))


# ---------------------------------------------------------------- 7

def _complete_fixture():
    params = {"K": 2, "d": 3, "rates": [0.0, 0.0],
              "sigma": [[[0.1], [0.3], [0.2]], [[0.15], [0.25], [0.3]]],
              "rho": [[[0, 0, 0], [0.2, -0.1, 0.05]], [[-0.2, 0.1, -0.05], [0, 0, 0]]],
              "intensity": [[0.0, 0.8], [1.2, 0.0]],
              "levy": {"kind": "atoms", "points": [[1.5]], "weights": [0.4]}}
    return preset_model("exp_levy_regime", params)[0], params


def test_ac7_attainability():
    model, params = _complete_fixture()
    rng = np.random.default_rng(17)
    alpha = rng.uniform(-1, 1, 3)
    beta = rng.uniform(0, 5, 2)
    coupon = rng.uniform(0, 1, 2)
    trans = np.array([[0.0, rng.uniform(0, 2)], [rng.uniform(-2, 0), 0.0]])
    lam = params["intensity"]
    T = 1.0
    div = DividendSpec(T, lambda z, c: z @ alpha + beta[c], lambda u, z, c: coupon[c],
                       lambda u, z, i, j: np.full(z.shape[0], trans[i, j]))

    def value(t, z, c):
        u = chain_value(lam, [0.0, 0.0], beta, coupon, trans, T - t)
        return z @ alpha + u[c]

    v = AnalyticValue(value, lambda t, z, c: np.broadcast_to(alpha, z.shape).copy())
    y0 = np.array([100.0, 80.0, 120.0])
    states = y0 * np.array([[1.0, 1.0, 1.0], [0.8, 1.2, 1.0], [1.3, 0.9, 0.7]])
    plan = SamplePlan(np.array([0.0, 0.5]), states)
    att = attainability_check(model, plan)
    # the value really solves the pricing equation
    h = 1e-4
    gen = 0.0
    for c in (0, 1):
        cc = np.full(3, c)
        dt_v = (v.value(0.3 + h, states, cc) - v.value(0.3 - h, states, cc)) / (2 * h)
        res = dt_v + apply_generator(model, v, 0.3, states, cc) + coupon[c] + lam[c][1 - c] * trans[c, 1 - c]
        gen = max(gen, float(np.max(np.abs(res))))
    rr = stream_residual_risk(model, div, PointwiseHedge(model, div, v, T), y0, 0, TimeGrid(0.0, T, 100), 4000, 7)
    scale = float(np.var(rr.samples["integral"]) + 1.0)
    yes_ok = att.attainable == "yes" and rr.R0 <= 1e-10 * scale and gen < 1e-6

    p1 = {"K": 2, "sigma": [0.2, 0.3], "rates": [0.0, 0.0], "intensity": [[0, 1.0], [1.0, 0]]}
    m1, d1 = preset_model("exp_levy_regime", p1, "compensated_transition", {"maturity": 1.0})
    att1 = attainability_check(m1, SamplePlan(np.array([0.0]), np.array([[100.0]])))
    zero = AnalyticValue(lambda t, z, c: np.zeros(z.shape[0]), lambda t, z, c: np.zeros(z.shape))
    rr1 = stream_residual_risk(m1, d1, PointwiseHedge(m1, d1, zero, 1.0), [100.0], 0, TimeGrid(0.0, 1.0, 200),
                               20_000, 8)
    no_ok = att1.attainable == "no" and rr1.R0 > 3 * rr1.se
    record(7, yes_ok and no_ok,
           f"d=3: {att.attainable}, R0 {rr.R0:.1e}, generator residual {gen:.1e}; "
           f"d=1: {att1.attainable}, R0 {rr1.R0:.4f} = {rr1.R0 / rr1.se:.0f} SE")


# ---------------------------------------------------------------- 8

def test_ac8_semi_markov():
    cfg, model, div = config_model("semi_markov")
    grid_t = TimeGrid(0.0, 1.0, 400)
    ens = simulate_paths(model, [100.0, 0.0], 0, grid_t, 4000, cfg.seed)
    last = np.zeros(ens.n_paths)
    clock_err = 0.0
    for n in range(1, grid_t.n_steps + 1):
        last[ens.trans_path[ens.trans_step == n - 1]] = grid_t.nodes[n]
        clock_err = max(clock_err, float(np.max(np.abs(ens.Y[:, n, 1] - (grid_t.nodes[n] - last)))))

    v = solve_pide(model, div, build_grid(cfg, model, div), 0.005)
    hf = hedge_field(model, div, v)
    Z = v.grid.points()
    sel = np.flatnonzero((Z[:, 0] > 80) & (Z[:, 0] < 125) & (Z[:, 1] > 0.05) & (Z[:, 1] < 0.8))
    sigma = np.asarray(cfg.model_params["sigma"])
    x = model.levy.nodes[:, 0]
    w = model.levy.weights
    worst = 0.0
    regime_term = 0.0
    for li in (0, len(v.times) // 2):
        t = float(v.times[li])
        for c in (0, 1):
            z = Z[sel]
            cc = np.full(sel.size, c)
            s = z[:, 0]
            g = np.expm1(sigma[c] * x)
            v0 = v.value(t, z, cc)
            dv = v.gradient(t, z, cc)[:, 0]
            jumps = np.zeros_like(s)
            for q in range(x.size):
                shifted = np.column_stack([s * np.exp(sigma[c] * x[q]), z[:, 1]])
                jumps += w[q] * g[q] * (v.value(t, shifted, cc) - v0) / s
            G_hat = sigma[c] ** 2 + np.sum(w * g ** 2)
            formula = (sigma[c] ** 2 * dv + jumps) / G_hat
            worst = max(worst, float(np.max(np.abs(hf.phi[li, c, sel, 0] - formula))))
            regime_term = max(regime_term, abs(gram_matrix(model, t, z[0], c).regime[0, 0]))
    ok = clock_err <= 1e-12 and worst <= 1e-9 and regime_term == 0.0
    record(8, ok, f"clock error {clock_err:.1e} over {ens.n_paths} paths; max |phi - formula| {worst:.1e} "
                  f"at {sel.size} nodes x 2 regimes x 2 levels; regime Gram term {regime_term:.1e}")


# ---------------------------------------------------------------- 9

def test_ac9_scheme_order():
    model, div = preset_model("black_scholes", {"sigma": 0.2}, "smooth_call",
                              {"strike": 100.0, "maturity": 1.0, "sigma": 0.2, "tau0": 0.25})

    def err(n, dt):
        grid = SpatialGrid((Axis(100 * math.exp(-2.5), 100 * math.exp(2.5), n, True),))
        v = solve_pide(model, div, grid, dt)
        s = grid.points()[:, 0]
        sel = (s > 60) & (s < 160)
        return float(np.max(np.abs(v.values[0, 0, sel] - bs_call(s[sel], 100.0, 1.25, 0.2))))

    eh = [err(n, 1e-3) for n in (101, 201, 401)]
    et = [err(801, dt) for dt in (0.2, 0.1, 0.05)]
    h_order = min(math.log2(eh[k] / eh[k + 1]) for k in range(2))
    t_order = min(math.log2(et[k] / et[k + 1]) for k in range(2))

    const = DividendSpec(1.0, lambda z, c: np.full(z.shape[0], 3.0), lambda u, z, c: np.zeros(z.shape[0]),
                         lambda u, z, i, j: np.zeros(z.shape[0]))
    regime, _ = preset_model("exp_levy_regime", conftest.REGIME_PARAMS | {"rates": [0.0, 0.0]})
    g = SpatialGrid((Axis(100 * math.exp(-4), 100 * math.exp(4), 200, True),))
    const_err = float(np.max(np.abs(solve_pide(regime, const, g, 0.01).values - 3.0)))
    ok = h_order >= 2 - 0.05 and t_order >= 1 and const_err <= 1e-12
    record(9, ok, f"h-order {h_order:.2f}, dt-order {t_order:.2f}, constant preserved to {const_err:.1e}")


# ---------------------------------------------------------------- 10

def test_ac10_reproducibility(tmp_path):
    cfg = load_config(CONFIGS / "regime_switching.toml")
    cfg.numerics.update(paths=3000, mc_paths=3000)
    hashes = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        run_scenario(cfg, out)
        hashes.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())})
    same = hashes[0] == hashes[1]
    record(10, same, f"{len(hashes[0])} files byte-identical across two runs" if same else
           "artifacts differ: " + ", ".join(k for k in hashes[0] if hashes[0][k] != hashes[1].get(k)))
