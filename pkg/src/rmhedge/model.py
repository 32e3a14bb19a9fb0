"""Market and claim specifications, plus assumption checks.

Coefficient callables are vectorised over a batch of states:

* ``u`` is a scalar time, ``z`` has shape (m, D) with D = d + p,
  ``c`` is an int array (m,) of 0-based regime indices.
* ``short_rate(u, z, c) -> (m,)``
* ``drift(u, z, c) -> (m, D)``; the full drift in the compensated form
  ``dY = drift du + sigma dW + int F dPi~ + sum rho dM``.
* ``diffusion(u, z, c) -> (m, D, r_W)``
* ``jump(u, z, c, x) -> (m, q, D)`` for marks ``x`` of shape (m, q, n).
* ``regime_jump(u, z, i, j) -> (m, D)`` and ``intensity(u, z, i, j) -> (m,)``
  take scalar 0-based regimes.

Regime labels exposed to users are 1..K; internal arrays are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .levy import integrate_levy


@dataclass(frozen=True)
class RegimeSet:
    count: int

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("regime count must be a positive integer")

    @property
    def labels(self) -> tuple:
        return tuple(range(1, self.count + 1))

    def pairs(self):
        """Ordered 0-based pairs (i, j) with i != j."""
        return [(i, j) for i in range(self.count) for j in range(self.count) if i != j]

    def index(self, label: int) -> int:
        if label not in self.labels:
            raise ValueError(f"regime {label} outside 1..{self.count}")
        return int(label) - 1


@dataclass(frozen=True)
class MarketModelSpec:
    regimes: RegimeSet
    d: int
    p: int
    n: int
    r_W: int
    short_rate: Callable
    drift: Callable
    diffusion: Callable
    jump: Callable
    regime_jump: Callable
    intensity: Callable
    levy: object = None
    intensity_bound: float = 0.0
    compensator: Optional[Callable] = None
    intensity_rows: Optional[Callable] = None
    regime_jump_rows: Optional[Callable] = None
    time_homogeneous: bool = True
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1 or self.p < 0 or self.r_W < 0 or self.n < 0:
            raise ValueError("invalid dimensions")
        if self.levy is not None and self.levy.dim != self.n:
            raise ValueError("Lévy measure dimension does not match n")

    @property
    def K(self) -> int:
        return self.regimes.count

    @property
    def D(self) -> int:
        return self.d + self.p

    @property
    def has_jumps(self) -> bool:
        return self.levy is not None

    @property
    def jump_mass(self) -> float:
        return 0.0 if self.levy is None else self.levy.total_mass

    def jump_at_nodes(self, u, z, c) -> np.ndarray:
        """F_Y at every Lévy node: (m, q, D)."""
        nodes = self.levy.nodes
        x = np.broadcast_to(nodes, (z.shape[0],) + nodes.shape)
        return self.jump(u, z, c, x)

    def jump_compensator(self, u, z, c) -> np.ndarray:
        """``int F_Y nu(dx)`` per state, shape (m, D)."""
        if self.levy is None:
            return np.zeros_like(z, dtype=float)
        if self.compensator is not None:
            return self.compensator(u, z, c)
        F = self.jump_at_nodes(u, z, c)
        return integrate_levy(self.levy, lambda x: np.moveaxis(F, 1, 0))

    def intensity_matrix(self, u, z, c) -> np.ndarray:
        """lambda^{c_k, j}(u, z_k) as (m, K); zero on the diagonal."""
        if self.intensity_rows is not None:
            return self.intensity_rows(u, z, c)
        m = z.shape[0]
        out = np.zeros((m, self.K))
        for i in range(self.K):
            sel = c == i
            if not sel.any():
                continue
            zi = z[sel]
            for j in range(self.K):
                if j != i:
                    out[sel, j] = self.intensity(u, zi, i, j)
        return out

    def regime_jump_all(self, u, z, c) -> np.ndarray:
        """rho^{c_k, j}(u, z_k) as (m, K, D); zero for j = c_k."""
        if self.regime_jump_rows is not None:
            return self.regime_jump_rows(u, z, c)
        m = z.shape[0]
        out = np.zeros((m, self.K, self.D))
        for i in range(self.K):
            sel = c == i
            if not sel.any():
                continue
            zi = z[sel]
            for j in range(self.K):
                if j != i:
                    out[sel, j] = self.regime_jump(u, zi, i, j)
        return out

    def effective_drift(self, u, z, c, lam=None) -> np.ndarray:
        """Drift of the uncompensated dynamics (jumps and transitions added raw)."""
        b = self.drift(u, z, c)
        if self.levy is not None:
            b = b - self.jump_compensator(u, z, c)
        if self.K > 1:
            if lam is None:
                lam = self.intensity_matrix(u, z, c)
            rho = self.regime_jump_all(u, z, c)
            b = b - np.matmul(lam[:, None, :], rho)[:, 0, :]
        return b


@dataclass(frozen=True)
class DividendSpec:
    """Payment stream: terminal h, rate g, transition payments delta^{i,j}.

    ``terminal(z, c) -> (m,)``, ``rate(u, z, c) -> (m,)``,
    ``transition(u, z, i, j) -> (m,)`` with scalar 0-based regimes.
    """

    maturity: float
    terminal: Callable
    rate: Callable
    transition: Callable
    growth_order: float = 1.0
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        if self.growth_order < 1:
            raise ValueError("growth order must be at least 1")

    def source(self, u, z, c, model: MarketModelSpec) -> np.ndarray:
        """g + sum_j delta^{c,j} lambda^{c,j}."""
        out = np.asarray(self.rate(u, z, c), dtype=float).copy()
        for i in range(model.K):
            sel = c == i
            if not sel.any():
                continue
            zi = z[sel]
            for j in range(model.K):
                if j != i:
                    out[sel] += self.transition(u, zi, i, j) * model.intensity(u, zi, i, j)
        return out


@dataclass(frozen=True)
class SemimartingaleDividendSpec:
    """Dividend of the form xi/B_T + int g/B du plus martingale loadings.

    ``brownian(u, z, c) -> (m, r_W)``, ``jump(u, z, c, x) -> (m, q)`` on
    marks (m, q, n), ``transition(u, z, i, j) -> (m,)``; ``terminal`` and
    ``rate`` as in DividendSpec.
    """

    terminal: Callable
    rate: Callable
    brownian: Callable
    jump: Callable
    transition: Callable
    growth_order: float = 1.0


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplePlan:
    """Probe points: each row of ``states`` is tried at every time and regime."""

    times: np.ndarray
    states: np.ndarray
    regimes: Optional[np.ndarray] = None

    def expand(self, K: int):
        regs = np.arange(K) if self.regimes is None else np.asarray(self.regimes, dtype=int)
        for u in np.atleast_1d(self.times):
            for c in regs:
                z = np.atleast_2d(np.asarray(self.states, dtype=float))
                yield float(u), z, np.full(z.shape[0], int(c))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    witness: Optional[dict] = None


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(ch.passed for ch in self.checks)

    def __getitem__(self, name) -> CheckResult:
        for ch in self.checks:
            if ch.name == name:
                return ch
        raise KeyError(name)

    def failures(self) -> list:
        return [ch for ch in self.checks if not ch.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": ch.name, "passed": ch.passed, "detail": ch.detail,
                            "witness": ch.witness} for ch in self.checks]}


def _witness(u, z, c):
    return {"u": float(u), "z": np.asarray(z, dtype=float).tolist(), "c": int(c) + 1}


def validate_model(spec: MarketModelSpec, plan: SamplePlan, drift_rtol: float = 1e-10) -> ValidationReport:
    """Check the standing assumptions at the probe points; never raises."""
    checks = []
    d = spec.d

    drift_bad = None
    n_bad = 0
    n_total = 0
    lg_const = 0.0
    lg_witness = None
    ei_bad = None
    int_bad = None
    for u, z, c in plan.expand(spec.K):
        try:
            mu = spec.drift(u, z, c)
            r = spec.short_rate(u, z, c)
            target = z[:, :d] * r[:, None]
            err = np.abs(mu[:, :d] - target)
            scale = np.maximum(np.abs(target), np.abs(mu[:, :d]))
            bad_rows = np.any(err > drift_rtol * scale, axis=1)
            n_total += z.shape[0]
            n_bad += int(bad_rows.sum())
            if bad_rows.any() and drift_bad is None:
                k = int(np.flatnonzero(bad_rows)[0])
                drift_bad = _witness(u, z[k], c[k])

            sig = spec.diffusion(u, z, c)
            lhs = np.sum(mu ** 2, axis=1) + np.sum(sig ** 2, axis=(1, 2))
            if spec.levy is not None:
                F = spec.jump_at_nodes(u, z, c)
                lhs = lhs + np.tensordot(np.sum(F ** 2, axis=2), spec.levy.weights, axes=(1, 0))
            ci = int(c[0])
            for j in range(spec.K):
                if j == ci:
                    continue
                rho = spec.regime_jump(u, z, ci, j)
                lhs = lhs + np.sum(rho ** 2, axis=1)
                lam = spec.intensity(u, z, ci, j)
                bad = (lam < 0) | (lam > spec.intensity_bound * (1 + 1e-12)) | ~np.isfinite(lam)
                if bad.any() and ei_bad is None:
                    k = int(np.flatnonzero(bad)[0])
                    ei_bad = _witness(u, z[k], ci) | {"lambda": float(lam[k]), "to": j + 1}
            if not np.all(np.isfinite(lhs)) and int_bad is None:
                k = int(np.flatnonzero(~np.isfinite(lhs))[0])
                int_bad = _witness(u, z[k], c[k])
            ratio = lhs / (1.0 + np.sum(z ** 2, axis=1))
            if np.any(np.isfinite(ratio)):
                k = int(np.nanargmax(np.where(np.isfinite(ratio), ratio, -np.inf)))
                if ratio[k] > lg_const:
                    lg_const = float(ratio[k])
                    lg_witness = _witness(u, z[k], c[k])
        except Exception as exc:  # failures are reported, not raised
            checks.append(CheckResult("evaluation", False, f"coefficient evaluation failed: {exc}",
                                      _witness(u, z[0], c[0])))

    checks.append(CheckResult(
        "drift_restriction", drift_bad is None,
        f"mu_S = s*r violated at {n_bad}/{n_total} probes (rtol {drift_rtol:g})" if drift_bad
        else f"mu_S = s*r at all {n_total} probes", drift_bad))
    checks.append(CheckResult(
        "linear_growth", np.isfinite(lg_const) and int_bad is None,
        f"constant {lg_const:.6g}", lg_witness))
    checks.append(CheckResult(
        "intensity_bound", ei_bad is None,
        f"0 <= lambda <= {spec.intensity_bound:g}" + ("" if ei_bad is None else " violated"), ei_bad))
    checks.append(CheckResult(
        "integrability", int_bad is None,
        "jump and transition loadings square-integrable" if int_bad is None else "non-finite loading",
        int_bad))
    if spec.levy is not None:
        x = spec.levy.nodes
        w = spec.levy.weights
        val = float(np.sum(np.minimum(np.sum(x ** 2, axis=1), 1.0) * w))
        ok = bool(np.all(w > 0) and np.isfinite(val))
        checks.append(CheckResult("levy_measure", ok, f"int |x|^2 ^ 1 dnu = {val:.6g}"))
    else:
        checks.append(CheckResult("levy_measure", True, "no jump part"))
    checks.append(CheckResult(
        "no_common_jumps", True,
        "jump and transition times are sampled disjointly; one transition channel per step"))
    return ValidationReport(checks)


def validate_dividend(div: DividendSpec, spec: MarketModelSpec, plan: SamplePlan) -> CheckResult:
    """Spot-check |h|^2 + |g|^2 + sum |delta|^2 <= K (1 + |z|^{2m})."""
    m = div.growth_order
    best = 0.0
    wit = None
    for u, z, c in plan.expand(spec.K):
        lhs = div.terminal(z, c) ** 2 + div.rate(u, z, c) ** 2
        ci = int(c[0])
        for j in range(spec.K):
            if j != ci:
                lhs = lhs + div.transition(u, z, ci, j) ** 2
        if not np.all(np.isfinite(lhs)):
            k = int(np.flatnonzero(~np.isfinite(lhs))[0])
            return CheckResult("dividend_growth", False, "non-finite payment", _witness(u, z[k], ci))
        ratio = lhs / (1.0 + np.sum(z ** 2, axis=1) ** m)
        k = int(np.argmax(ratio))
        if ratio[k] > best:
            best = float(ratio[k])
            wit = _witness(u, z[k], ci)
    return CheckResult("dividend_growth", True, f"constant {best:.6g} at order {m:g}", wit)
