"""Pathwise cost, orthogonal martingale and residual risk of a hedge.

Along each path, with everything evaluated at the left state of a step:

* direct increment of the orthogonal martingale, per unit bank account,
  dL = [w.dW + sum_jumps e(x) - (int e nu) dt + sum_j m_j (dH_j - lambda_j dt)] / B
  where w, e and m_j are the Brownian, jump and regime mismatches;
* integral form, split by source,
  [|w|^2 + int e^2 nu + sum_j lambda_j m_j^2] dt / B^2;
* cost route, X - v_0 - sum phi.dS* with X the discounted payments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fkmc import DividendObserver
from .sim import Observer, PathEnsemble, TimeGrid, replay, run_paths

ORTH_RTOL = 1e-9


@dataclass(frozen=True)
class Perturbation:
    """Bounded deterministic perturbation psi(t) = amp * cos(freq t + phase) on [start, T]."""

    amp: np.ndarray
    freq: float
    phase: float
    start: float

    def __call__(self, t: float) -> np.ndarray:
        if t < self.start:
            return np.zeros_like(self.amp)
        return self.amp * math.cos(self.freq * t + self.phase)

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, scale: float, horizon: float) -> "Perturbation":
        return cls(rng.uniform(-scale, scale, d), float(rng.uniform(0, 4 * math.pi / horizon)),
                   float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 0.5 * horizon)))


class HedgeObserver(Observer):
    def __init__(self, model, dividend, hedge, perturbations: Sequence[Perturbation] = (),
                 keep_cost_path: bool = False):
        self.model = model
        self.hedge = hedge
        self.div_obs = DividendObserver(model, dividend)
        self.perts = list(perturbations)
        self.keep = keep_cost_path

    def start(self, m, grid, y0, c0):
        d = self.model.d
        self.div_obs.start(m, grid, y0, c0)
        self.v0 = self.hedge.value(grid.t0, y0, c0)
        self.L = np.zeros(m)
        self.I = np.zeros((3, m))
        self.cov = np.zeros((m, d))
        self.qS = np.zeros((m, d))
        self.gains = np.zeros(m)
        self.pgains = np.zeros((len(self.perts), m))
        self.T = grid.T
        self.trace = [self.v0.copy()] if self.keep else None

    def step(self, info):
        model = self.model
        d = model.d
        t, dt = info.t, info.dt
        y, c = info.y, info.c
        disc = np.exp(-info.log_b)
        h = self.hedge.sample(t, y, c)
        s0 = y[:, :d] * disc[:, None]
        s1 = info.y_next[:, :d] * np.exp(-info.log_b_next)[:, None]
        dS = s1 - s0
        gain = np.einsum("md,md->m", h.phi, dS)
        self.gains += gain
        for k, p in enumerate(self.perts):
            self.pgains[k] += dS @ p(t)

        dl = np.einsum("mr,mr->m", h.mismatch_W, info.dW) - h.jump_comp * dt
        if info.jump_rows.size:
            jr = info.jump_rows
            F = model.jump(t, y[jr], c[jr], info.jump_marks[:, None, :])[:, 0, :]
            vs = self.hedge.value(t, y[jr] + F, c[jr])
            e = vs - h.value[jr] - np.einsum("md,md->m", h.phi[jr], F[:, :d])
            np.add.at(dl, jr, e)
        reg = np.zeros_like(dl)
        if info.intensity is not None:
            lam = info.intensity
            dl -= np.einsum("mk,mk->m", h.mismatch_C, lam) * dt
            fired = np.flatnonzero(info.dest >= 0)
            if fired.size:
                dl[fired] += h.mismatch_C[fired, info.dest[fired]]
            reg = np.einsum("mk,mk->m", h.mismatch_C ** 2, lam)
        dl *= disc
        self.L += dl
        self.cov += dl[:, None] * dS
        self.qS += dS * dS
        d2 = disc * disc * dt
        self.I[0] += np.einsum("mr,mr->m", h.mismatch_W, h.mismatch_W) * d2
        self.I[1] += h.jump_risk * d2
        self.I[2] += reg * d2
        self.div_obs.step(info)
        if self.keep:
            t1 = t + dt
            # a 0-achieving hedge holds nothing after the last payment
            alive = t1 < self.T - 1e-12 or not getattr(self.hedge, "zero_achieving", True)
            v1 = self.hedge.value(t1, info.y_next, info.c_next) * np.exp(-info.log_b_next) if alive \
                else np.zeros_like(dl)
            self.trace.append(self.div_obs.X + v1 - self.gains)

    def finish(self):
        X = self.div_obs.finish()
        out = {"L": self.L, "I": self.I, "cov": self.cov, "X": X, "v0": self.v0, "gains": self.gains,
               "cost": X - self.v0 - self.gains, "pgains": self.pgains,
               "qS": self.qS}
        if self.keep:
            out["trace"] = np.stack(self.trace, axis=1)
        return out


def _mse(x: np.ndarray):
    n = x.shape[0]
    m = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
    return m, se


def _pair(mean, se) -> dict:
    return {"mean": float(mean), "SE": float(se)}


@dataclass
class RiskReport:
    n_paths: int
    integral: dict
    sources: dict
    direct: dict
    cost: dict
    self_financing: dict
    consistency: dict
    orthogonality: list
    perturbations: list
    escapes: int
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def R0(self) -> float:
        return self.integral["mean"]

    @property
    def se(self) -> float:
        return self.integral["SE"]

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths, "R0": self.integral["mean"], "SE": self.integral["SE"],
                "sources": self.sources, "direct": self.direct, "cost_route": self.cost,
                "mean_self_financing": self.self_financing, "integral_vs_direct": self.consistency,
                "orthogonality": self.orthogonality, "perturbations": self.perturbations,
                "band_escapes": self.escapes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _report(parts: list, escapes: int, perts: Sequence[Perturbation]) -> RiskReport:
    L = np.concatenate([p["L"] for p in parts])
    I = np.concatenate([p["I"] for p in parts], axis=1)
    cov = np.concatenate([p["cov"] for p in parts])
    cost = np.concatenate([p["cost"] for p in parts])
    pg = np.concatenate([p["pgains"] for p in parts], axis=1)
    P = L.size
    tot = I.sum(axis=0)
    m_int, se_int = _mse(tot)
    names = ("brownian", "jump", "regime")
    sources = {n: _pair(*_mse(I[k])) for k, n in enumerate(names)}
    m_dir, se_dir = _mse(L * L)
    m_cost, se_cost = _mse(cost * cost)
    m_sf, se_sf = _mse(cost)
    diff = tot - L * L
    m_diff, se_diff = _mse(diff)
    cm, cse = _mse(cov)
    # round-off floor, relative to the scale of the claim and of the assets
    X = np.concatenate([p["X"] for p in parts])
    qS = np.concatenate([p["qS"] for p in parts])
    floor = ORTH_RTOL * (X.std() + abs(X.mean())) * np.sqrt(qS.mean(axis=0))
    orth = [{"asset": k + 1, "mean": float(cm[k]), "SE": float(cse[k]), "floor": float(floor[k]),
             "flag": bool(abs(cm[k]) > 3 * cse[k] + floor[k])} for k in range(cov.shape[1])]
    pert = []
    for k, p in enumerate(perts):
        cp = cost - pg[k]
        r_p, se_p = _mse(cp * cp)
        dd, dse = _mse(cp * cp - cost * cost)
        pert.append({"amp": p.amp.tolist(), "freq": p.freq, "phase": p.phase, "start": p.start,
                     "R0": float(r_p), "SE": float(se_p), "excess": float(dd), "excess_SE": float(dse),
                     "ok": bool(r_p >= m_cost - 3 * se_cost)})
    return RiskReport(
        n_paths=P,
        integral=_pair(m_int, se_int),
        sources=sources,
        direct=_pair(m_dir, se_dir),
        cost=_pair(m_cost, se_cost),
        self_financing={"mean": float(m_sf), "SE": float(se_sf), "ok": bool(abs(m_sf) <= 3 * se_sf)},
        consistency={"difference": float(m_diff), "SE": float(se_diff),
                     "ok": bool(abs(m_diff) <= 3 * max(se_diff, 1e-300))},
        orthogonality=orth, perturbations=pert, escapes=escapes,
        samples={"L": L, "integral": tot, "cost": cost})


def residual_risk(model, dividend, value_field, hedge, ensemble: PathEnsemble,
                  perturbations: Sequence[Perturbation] = ()) -> RiskReport:
    """Risk diagnostics of ``hedge`` on a stored ensemble (replayed step by step)."""
    before = getattr(hedge, "escapes", 0)
    res = replay(ensemble, lambda: [HedgeObserver(model, dividend, hedge, perturbations)])
    return _report([r[0] for r in res], getattr(hedge, "escapes", 0) - before, perturbations)


def stream_residual_risk(model, dividend, hedge, y0, c0: int, grid: TimeGrid, n_paths: int, seed: int,
                         perturbations: Sequence[Perturbation] = (), chunk_size: int = 8192) -> RiskReport:
    """Same diagnostics without storing paths."""
    before = getattr(hedge, "escapes", 0)
    res = run_paths(model, np.asarray(y0, dtype=float), int(c0), grid, n_paths, seed,
                    lambda: [HedgeObserver(model, dividend, hedge, perturbations)], chunk_size=chunk_size)
    return _report([r[0] for r in res], getattr(hedge, "escapes", 0) - before, perturbations)


def cost_process(model, dividend, hedge, ensemble: PathEnsemble, paths: Optional[Sequence[int]] = None) -> np.ndarray:
    """Discounted cost C^D at every step for the selected paths, shape (P, N + 1).

    C^D_t = sum of discounted payments up to t + v(t) 1{t<T} / B_t - sum phi.dS*.
    """
    res = replay(ensemble, lambda: [HedgeObserver(model, dividend, hedge, keep_cost_path=True)])
    trace = np.concatenate([r[0]["trace"] for r in res])
    return trace if paths is None else trace[np.asarray(paths)]
