"""End-to-end scenario pipeline and its artifact manifest."""
from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path
from typing import Optional

import numpy as np

from . import oracles
from .config import ARTIFACTS, ScenarioConfig
from .fkmc import mc_confidence_report, mc_value, probe_seed
from .hedge import attainability_check, hedge_field
from .model import SamplePlan, validate_dividend, validate_model
from .pide import Axis, SpatialGrid, ValueField, solve_pide, write_value_csv
from .presets import preset_model
from .risk import Perturbation, residual_risk
from .sim import TimeGrid, martingale_diagnostic, simulate_paths, write_paths_csv

DEFAULTS = {"paths": 20000, "dt": 1 / 250, "pide_dt": 1 / 250, "theta": 0.5, "rannacher": 2, "c0": 1,
            "perturbations": 5, "perturbation_scale": 0.2, "chunk_size": 8192, "export_levels": 11,
            "mc_paths": 20000, "antithetic": False}


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# defaults derived from the model
# ---------------------------------------------------------------------------

def _max_log_shift(model) -> float:
    """Largest |log| move of the first asset under a Lévy jump or a switch."""
    params = model.params
    out = 0.0
    if model.levy is not None:
        x = np.abs(model.levy.nodes).max()
        sig = np.abs(np.asarray(params.get("sigma", 1.0), dtype=float)).max()
        if model.family == "merton_jump":
            sig = 1.0
        elif model.family == "stochvol_exp_levy":
            sig = float(params["vol_max"]) * max(np.asarray(params["vol_scale"], dtype=float).max(), 1.0)
        out = max(out, float(x * sig))
    rho = params.get("rho")
    if rho is not None:
        out = max(out, float(np.abs(np.asarray(rho, dtype=float)).max()))
    return out


def _vol_bound(model) -> float:
    p = model.params
    if model.family == "stochvol_exp_levy":
        return float(p["vol_max"]) * float(np.asarray(p["vol_scale"], dtype=float).max())
    return float(np.abs(np.asarray(p.get("sigma", 0.2), dtype=float)).max())


def default_grid(model, dividend, y0) -> SpatialGrid:
    """Log axis for the asset, linear axis for a second coordinate."""
    T = float(dividend.maturity)
    s0 = float(y0[0])
    w = max(6.0 * _vol_bound(model) * math.sqrt(T), 5.5 * _max_log_shift(model), 2.0)
    axes = [Axis(s0 * math.exp(-w), s0 * math.exp(w), 400, True)]
    if model.D == 2:
        if model.family == "semi_markov_exp_levy":
            axes.append(Axis(0.0, max(float(y0[1]), 0.0) + 1.2 * T, 61))
        else:
            p = model.params
            sd = float(p["xi"]) / math.sqrt(2 * float(p["kappa"]))
            c = float(p["theta"])
            half = max(6.5 * sd, abs(float(y0[1]) - c) + 3 * sd)
            axes.append(Axis(c - half, c + half, 41))
    elif model.D > 2:
        raise ValueError("no PIDE grid for more than two state coordinates")
    return SpatialGrid(tuple(axes))


def build_grid(cfg: ScenarioConfig, model, dividend, override: Optional[tuple] = None) -> SpatialGrid:
    y0 = np.asarray(cfg.numerics["y0"], dtype=float)
    spec = cfg.numerics.get("grid")
    if spec is None:
        grid = default_grid(model, dividend, y0)
    else:
        grid = SpatialGrid(tuple(Axis(float(a[0]), float(a[1]), int(a[2]), bool(a[3]) if len(a) > 3 else False)
                                 for a in spec))
    if override:
        if len(override) != grid.dim:
            raise ValueError(f"--grid gives {len(override)} sizes for a {grid.dim}-axis grid")
        grid = SpatialGrid(tuple(Axis(a.lo, a.hi, int(n), a.log) for a, n in zip(grid.axes, override)))
    return grid


def probe_points(cfg: ScenarioConfig, model, dividend) -> list:
    """(t, y, c) with 0-based c: 3 times x 3 states by default."""
    T = float(dividend.maturity)
    y0 = np.asarray(cfg.numerics["y0"], dtype=float)
    spec = cfg.numerics.get("probes", {})
    times = spec.get("times", [0.0, 0.25 * T, 0.5 * T])
    if "states" in spec:
        states = [np.asarray(s, dtype=float) for s in spec["states"]]
    else:
        states = []
        for f in (0.9, 1.0, 1.1):
            s = y0.copy()
            s[0] = round(s[0] * f, 10)
            states.append(s)
    regimes = spec.get("regimes", [cfg.numerics.get("c0", 1)])
    return [(float(t), s, int(c) - 1) for t in times for s in states for c in regimes]


def _oracle_price(model, dividend, t, y, c):
    """Closed form when one exists for the configured claim, else None."""
    fam = model.family
    dfam = dividend.family
    if dfam not in ("call", "put") or model.K != 1:
        return None
    p = model.params
    dp = dividend.params
    if np.any(np.asarray(dp.get("coupon", [0.0])) != 0):
        return None
    tau = float(dividend.maturity) - t
    strike = float(dp["strike"])
    if fam == "black_scholes":
        r = float(p["rates"][0])
        sig = float(np.asarray(p["sigma"]).reshape(-1)[0])
        call = float(oracles.bs_call(y[0], strike, tau, sig, r))
    elif fam == "merton_jump":
        r = float(p["rates"][0])
        call = float(oracles.merton_call(y[0], strike, tau, float(p["sigma"]), r, float(p["jump_intensity"]),
                                         float(p["jump_mean"]), float(p["jump_std"])))
    else:
        return None
    if dfam == "call":
        return call
    return call - y[0] + strike * math.exp(-r * tau)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class _Run:
    def __init__(self, out: Path, wanted):
        self.out = out
        self.wanted = set(wanted)
        self.artifacts = []
        self.checks = []
        self.failures = []
        self.summary = {}

    def write(self, name: str, stage: str, text: Optional[str] = None, writer=None):
        path = self.out / name
        if writer is not None:
            writer(str(path))
        else:
            path.write_text(text)
        self.artifacts.append({"file": name, "sha256": _sha256(path), "stage": stage})

    def check(self, name: str, passed: bool, detail: str, source: str):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail, "artifact": source})


def run_scenario(cfg: ScenarioConfig, out_dir, skip_pide: bool = False, mc_only: bool = False) -> dict:
    """Run every stage the configuration enables; returns the manifest dict.

    Artifacts and ``manifest.json`` go to ``out_dir``. A failing stage is
    recorded and later stages that depend on it are skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    num = DEFAULTS | cfg.numerics
    tol = cfg.tolerances
    run = _Run(out, cfg.outputs.get("artifacts", ARTIFACTS))
    seed = int(num["seed"])
    model, div = preset_model(cfg.model_family, cfg.model_params, cfg.dividend_family, cfg.dividend_params)
    y0 = np.asarray(num["y0"], dtype=float)
    c0 = int(num["c0"]) - 1
    T = float(div.maturity)
    probes = probe_points(cfg, model, div)
    skip_pide = skip_pide or mc_only
    v = None
    hf = None

    # validation
    states = np.array([p[1] for p in probes] + [y0])
    plan = SamplePlan(np.array(sorted({p[0] for p in probes})), states)
    rep = validate_model(model, plan)
    drep = validate_dividend(div, model, plan)
    vdict = rep.to_dict()
    vdict["checks"].append({"name": drep.name, "passed": drep.passed, "detail": drep.detail, "witness": drep.witness})
    run.write("validation.json", "validate", _dump(vdict))
    run.check("validation", rep.passed and drep.passed,
              "all assumption checks pass" if rep.passed and drep.passed else
              "failed: " + ", ".join(ch.name for ch in rep.failures() + ([] if drep.passed else [drep])),
              "validation.json")

    # pide + hedge
    if not skip_pide:
        try:
            grid = build_grid(cfg, model, div, num.get("grid_override"))
            v = solve_pide(model, div, grid, float(num["pide_dt"]), theta=float(num["theta"]),
                           rannacher=int(num["rannacher"]))
            L = len(v.times)
            k = max(2, int(num["export_levels"]))
            idx = np.unique(np.round(np.linspace(0, L - 1, min(k, L))).astype(int))
            sub = ValueField(v.grid, v.times[idx], v.values[idx], v.meta)
            if "value" in run.wanted:
                run.write("value_field.csv", "pide", writer=lambda p: write_value_csv(sub, p))
            v0 = float(v.value(0.0, y0[None], c0)[0])
            run.summary["pide_value"] = v0
            ref = _oracle_price(model, div, 0.0, y0, c0)
            if ref is not None:
                err = abs(v0 - ref) / abs(ref)
                run.summary["closed_form_value"] = ref
                run.check("pide_vs_closed_form", err <= tol["pide_rel"],
                          f"PIDE {v0:.6f} vs closed form {ref:.6f}, rel err {err:.2e} (tol {tol['pide_rel']:g})",
                          "value_field.csv")
            hf = hedge_field(model, div, v, threshold=float(tol["rank_threshold"]))
            if "hedge" in run.wanted:
                rate = model.short_rate(0.0, grid.points(), np.zeros(grid.size, dtype=np.int64))
                bank = np.exp(float(np.mean(rate)) * v.times[idx]) if np.ptp(rate) == 0 else None
                sub_h = _subset_hedge(hf, idx)
                run.write("hedge_field.csv", "hedge", writer=lambda p: sub_h.to_csv(p, bank))
            if model.K > 1 and "credit_hedge" in run.wanted:
                run.write("credit_hedge.csv", "hedge", _credit_table(model, div, v, hf, probes))
        except Exception as exc:  # recorded, later stages skip
            run.failures.append({"stage": "pide", "error": f"{type(exc).__name__}: {exc}"})
            v = hf = None

    # simulation and risk
    if not mc_only:
        try:
            tg = TimeGrid.from_step(0.0, T, float(num["dt"]))
            ens = simulate_paths(model, y0, c0, tg, int(num["paths"]), seed, chunk_size=int(num["chunk_size"]))
            if "paths" in run.wanted:
                mp = int(cfg.outputs.get("max_paths_csv", 10))
                run.write("paths.csv", "simulate", writer=lambda p: write_paths_csv(
                    ens, p, str(out / "transitions.csv"), max_paths=mp))
                run.artifacts.append({"file": "transitions.csv", "sha256": _sha256(out / "transitions.csv"),
                                      "stage": "simulate"})
            md = martingale_diagnostic(ens)
            run.write("martingale.json", "simulate", _dump(md.to_dict()))
            run.check("martingale", not md.flagged, "discounted assets and transition martingales within "
                      f"{tol['mc_sigma']:g} SE of 0" if not md.flagged else "a martingale mean is flagged",
                      "martingale.json")
            if hf is not None:
                rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
                perts = [Perturbation.random(rng, model.d, float(num["perturbation_scale"]), T)
                         for _ in range(int(num["perturbations"]))]
                rr = residual_risk(model, div, v, hf, ens, perts)
                run.write("risk.json", "risk", _dump(rr.to_dict()))
                run.summary["R0"] = rr.R0
                run.summary["R0_SE"] = rr.se
                run.check("mean_self_financing", rr.self_financing["ok"],
                          f"mean cost {rr.self_financing['mean']:.3e} (SE {rr.self_financing['SE']:.2e})", "risk.json")
                run.check("orthogonality", not any(o["flag"] for o in rr.orthogonality),
                          "covariation of L with each discounted asset within 3 SE of 0", "risk.json")
                run.check("integral_vs_direct", rr.consistency["ok"],
                          f"difference {rr.consistency['difference']:.3e} (SE {rr.consistency['SE']:.2e})", "risk.json")
                run.check("perturbation_optimality", all(p["ok"] for p in rr.perturbations),
                          f"{sum(p['ok'] for p in rr.perturbations)}/{len(rr.perturbations)} perturbations "
                          "do not lower the risk", "risk.json")
            del ens
        except Exception as exc:
            run.failures.append({"stage": "simulate", "error": f"{type(exc).__name__}: {exc}"})

    # attainability
    if "attainability" in run.wanted:
        att = attainability_check(model, plan)
        run.write("attainability.json", "attainability", _dump(att.to_dict()))
        run.summary["attainable"] = att.attainable

    # Monte Carlo probes
    try:
        ests, refs = [], []
        for k, (t, y, c) in enumerate(probes):
            ests.append(mc_value(model, div, t, y, c, int(num["mc_paths"]), float(num.get("mc_dt", num["dt"])),
                                 probe_seed(seed, k), int(num["chunk_size"]), bool(num["antithetic"])))
            if v is not None:
                refs.append(float(v.value(t, y[None], c)[0]))
            else:
                ref = _oracle_price(model, div, t, y, c)
                refs.append(float("nan") if ref is None else ref)
        report = mc_confidence_report(ests, refs, probes, tol["mc_sigma"])
        for p in report.probes:
            if math.isnan(p.reference):
                p.flag = False
        if "probes" in run.wanted:
            run.write("probes.json", "fkmc", report.to_json() + "\n")
        run.summary["probes"] = [{"t": p.t, "y": p.y, "c": p.c, "estimate": p.estimate, "SE": p.se,
                                  "reference": None if math.isnan(p.reference) else p.reference}
                                 for p in report.probes]
        have_ref = any(not math.isnan(p.reference) for p in report.probes)
        if have_ref:
            run.check("fk_probes", report.n_flags <= int(tol["max_probe_flags"]),
                      f"{report.n_flags}/{len(report.probes)} probes beyond {tol['mc_sigma']:g} SE",
                      "probes.json")
    except Exception as exc:
        run.failures.append({"stage": "fkmc", "error": f"{type(exc).__name__}: {exc}"})

    manifest = {"scenario": cfg.to_dict(), "artifacts": run.artifacts, "checks": run.checks,
                "failures": run.failures, "summary": run.summary,
                "stages": {"pide": not skip_pide, "simulate": not mc_only}}
    (out / "manifest.json").write_text(_dump(_jsonable(manifest)))
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _subset_hedge(hf, idx):
    from dataclasses import replace
    return replace(hf, times=hf.times[idx], packed=hf.packed[idx], eta=hf.eta[idx], rank=hf.rank[idx],
                   residual=hf.residual[idx])


def _credit_table(model, div, v, hf, probes) -> str:
    """Strategy split into the asset delta and the switching correction."""
    d = model.d
    lines = ["t," + ",".join(f"y{k + 1}" for k in range(model.D)) + ",c," +
             ",".join(f"phi{k + 1}" for k in range(d)) + "," + ",".join(f"dv_ds{k + 1}" for k in range(d)) + "," +
             ",".join(f"switch{k + 1}" for k in range(d))]
    for t, y, _ in probes:
        for c in range(model.K):
            s = hf.sample(t, y[None], np.array([c]), clamp=False)
            g = v.gradient(t, y[None], np.array([c]))[0, :d]
            phi = s.phi[0]
            lines.append(",".join([repr(float(t))] + [repr(float(x)) for x in y] + [str(c + 1)] +
                                  [repr(float(x)) for x in phi] + [repr(float(x)) for x in g] +
                                  [repr(float(x)) for x in phi - g]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def emit_report(manifest: dict):
    """Human-readable summary and exit status (1 iff a check failed or a stage broke)."""
    if not manifest:
        return "", 0
    lines = []
    sc = manifest.get("scenario", {})
    if sc:
        lines.append(f"scenario: {sc['model']['family']} / {sc['dividend']['family']}  seed={sc['numerics']['seed']}")
    s = manifest.get("summary", {})
    if "pide_value" in s:
        lines.append(f"PIDE value at start: {s['pide_value']:.6f}")
    if "closed_form_value" in s:
        lines.append(f"closed-form value:   {s['closed_form_value']:.6f}")
    for p in s.get("probes", []):
        ref = "n/a" if p["reference"] is None else f"{p['reference']:.6f}"
        lines.append(f"probe t={p['t']:.4g} y={p['y']} c={p['c']}: MC {p['estimate']:.6f} "
                     f"(SE {p['SE']:.2e}) reference {ref}")
    if "R0" in s:
        lines.append(f"residual risk R0: {s['R0']:.6e} (SE {s['R0_SE']:.2e})")
    if "attainable" in s:
        lines.append(f"attainable: {s['attainable']}")
    failed = 0
    for ch in manifest.get("checks", []):
        lines.append(f"[{'PASS' if ch['passed'] else 'FAIL'}] {ch['name']}: {ch['detail']}")
        failed += not ch["passed"]
    for f in manifest.get("failures", []):
        lines.append(f"[FAIL] stage {f['stage']}: {f['error']}")
        failed += 1
    return "\n".join(lines) + "\n", int(failed > 0)


def default_out_dir() -> str:
    return os.environ.get("RMHEDGE_OUT_DIR", "rmhedge_out")
