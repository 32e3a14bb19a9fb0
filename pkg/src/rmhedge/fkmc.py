"""Monte Carlo estimates of the ex-dividend value and of discounted payments."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .sim import DEFAULT_CHUNK, Observer, PathEnsemble, TimeGrid, replay, run_paths


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    se: float
    n_paths: int
    seed: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "SE": self.se, "n_paths": self.n_paths, "seed": self.seed}


class DividendObserver(Observer):
    """Per-path X = int dD / B with left-endpoint quadrature.

    Rate payments add g dt / B at the left end of each step, transition
    payments add delta(t_n, Y_n) / B_n on the step where the transition is
    logged, and the terminal payment adds h / B_T on the last step.
    """

    def __init__(self, model, dividend):
        self.model = model
        self.div = dividend

    def start(self, m, grid, y0, c0):
        self.X = np.zeros(m)
        self.last = grid.n_steps - 1

    def step(self, info):
        disc = np.exp(-info.log_b)
        self.X += self.div.rate(info.t, info.y, info.c) * info.dt * disc
        fired = np.flatnonzero(info.dest >= 0)
        if fired.size:
            pay = np.zeros(fired.size)
            ci = info.c[fired]
            cj = info.dest[fired]
            for i in range(self.model.K):
                for j in range(self.model.K):
                    if i == j:
                        continue
                    sel = np.flatnonzero((ci == i) & (cj == j))
                    if sel.size:
                        pay[sel] = self.div.transition(info.t, info.y[fired[sel]], i, j)
            self.X[fired] += pay * disc[fired]
        if info.n == self.last:
            self.X += self.div.terminal(info.y_next, info.c_next) * np.exp(-info.log_b_next)

    def finish(self):
        return self.X


def _estimate(samples: np.ndarray, seed: int, antithetic: bool = False, chunk_size: int = DEFAULT_CHUNK) -> MCEstimate:
    P = samples.size
    mean = float(np.mean(samples))
    if antithetic:
        # pair row r with row r + half inside each full chunk
        half = chunk_size // 2
        pairs = []
        for k in range(0, P, chunk_size):
            block = samples[k:k + chunk_size]
            n_pair = max(0, block.size - half)
            pairs.append(0.5 * (block[:n_pair] + block[half:half + n_pair]))
            pairs.append(block[n_pair:half])
        pm = np.concatenate(pairs)
        se = float(np.std(pm, ddof=1) / math.sqrt(pm.size)) if pm.size > 1 else 0.0
    else:
        se = float(np.std(samples, ddof=1) / math.sqrt(P)) if P > 1 else 0.0
    return MCEstimate(mean, se, P, seed)


def mc_samples(model, dividend, t: float, y, c: int, n_paths: int, dt: float, seed: int,
               chunk_size: int = DEFAULT_CHUNK, antithetic: bool = False) -> np.ndarray:
    """Per-path discounted payments for paths restarted at (t, y, c)."""
    T = float(dividend.maturity)
    if not t < T:
        raise ValueError("start time must precede maturity")
    grid = TimeGrid.from_step(float(t), T, dt)
    y = np.asarray(y, dtype=float).reshape(-1)
    res = run_paths(model, y, int(c), grid, n_paths, seed, lambda: [DividendObserver(model, dividend)],
                    chunk_size=chunk_size, antithetic=antithetic)
    return np.concatenate([r[0] for r in res])


def mc_value(model, dividend, t: float, y, c: int, n_paths: int, dt: float, seed: int,
             chunk_size: int = DEFAULT_CHUNK, antithetic: bool = False) -> MCEstimate:
    """Monte Carlo value at (t, y, c) with 0-based regime ``c``."""
    X = mc_samples(model, dividend, t, y, c, n_paths, dt, seed, chunk_size, antithetic)
    return _estimate(X, seed, antithetic, chunk_size)


def mc_discounted_dividends(model, dividend, ensemble: PathEnsemble) -> np.ndarray:
    """Per-path X on a stored ensemble, by the same accumulation as :func:`mc_value`."""
    res = replay(ensemble, lambda: [DividendObserver(model, dividend)])
    return np.concatenate([r[0] for r in res])


@dataclass
class Probe:
    t: float
    y: list
    c: int
    estimate: float
    se: float
    reference: float
    flag: bool

    def to_dict(self) -> dict:
        return {"t": self.t, "y": self.y, "c": self.c, "estimate": self.estimate, "SE": self.se,
                "reference": self.reference, "flag": self.flag}


@dataclass
class ConfidenceReport:
    probes: list
    n_sigma: float = 3.0

    @property
    def n_flags(self) -> int:
        return sum(p.flag for p in self.probes)

    @property
    def flag_fraction(self) -> float:
        return self.n_flags / len(self.probes) if self.probes else 0.0

    def to_json(self) -> str:
        return json.dumps([p.to_dict() for p in self.probes], indent=2, sort_keys=True)


def mc_confidence_report(estimates: Sequence[MCEstimate], reference: Sequence[float],
                         points: Optional[Sequence[tuple]] = None, n_sigma: float = 3.0) -> ConfidenceReport:
    """Flag probes whose estimate is more than ``n_sigma`` SE from the reference.

    ``points`` holds (t, y, c) per probe with 0-based ``c``; it is reported 1-based.
    """
    probes = []
    for k, (est, ref) in enumerate(zip(estimates, reference)):
        t, y, c = points[k] if points is not None else (float("nan"), [], -1)
        gap = abs(est.estimate - float(ref))
        flag = bool(gap > n_sigma * est.se) if est.se > 0 else bool(gap > 1e-12 * max(1.0, abs(float(ref))))
        probes.append(Probe(float(t), np.asarray(y, dtype=float).reshape(-1).tolist(), int(c) + 1,
                            est.estimate, est.se, float(ref), flag))
    return ConfidenceReport(probes, n_sigma)


def probe_seed(seed: int, k: int) -> int:
    """Independent per-probe seed derived from the master seed."""
    return int(np.random.SeedSequence([int(seed), 7919, int(k)]).generate_state(1, dtype=np.uint64)[0] >> 1)
