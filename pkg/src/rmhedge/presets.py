"""Registry of parametric market families and payment streams.

Market families (all multiplicative in the traded assets, so the drift
restriction holds by construction):

``black_scholes``        one asset, one regime, no jumps.
``merton_jump``          one asset with Gaussian log-jumps.
``exp_levy_regime``      d assets, K regimes, loadings exp(sigma.x)-1 and exp(rho)-1.
``stochvol_exp_levy``    one asset, OU factor driving a bounded volatility.
``semi_markov_exp_levy`` one asset plus a time-since-last-switch clock.
"""
from __future__ import annotations

import numpy as np

from .errors import PresetError
from .levy import FiniteAtoms, exponential_moment_ok, gaussian_density, integrate_levy
from .model import DividendSpec, MarketModelSpec, RegimeSet
from .oracles import bs_call

MODEL_FAMILIES = ("black_scholes", "merton_jump", "exp_levy_regime",
                  "stochvol_exp_levy", "semi_markov_exp_levy")
DIVIDEND_FAMILIES = ("call", "put", "smooth_call", "linear", "constant", "compensated_transition")


class _Params:
    """Typed access to a params mapping with family-aware error messages."""

    def __init__(self, family, params):
        self.family = family
        self.raw = dict(params or {})
        self.used = set()

    def get(self, key, default=None, required=False):
        if key not in self.raw:
            if required:
                raise PresetError(f"{self.family}: missing parameter '{key}'")
            return default
        self.used.add(key)
        return self.raw[key]

    def num(self, key, default=None, required=False, positive=False, nonneg=False):
        val = self.get(key, default, required)
        if val is None:
            return None
        try:
            x = float(val)
        except (TypeError, ValueError):
            raise PresetError(f"{self.family}: parameter '{key}' must be a number, got {val!r}") from None
        if not np.isfinite(x):
            raise PresetError(f"{self.family}: parameter '{key}' must be finite")
        if positive and not x > 0:
            raise PresetError(f"{self.family}: parameter '{key}' must be positive")
        if nonneg and x < 0:
            raise PresetError(f"{self.family}: parameter '{key}' must be nonnegative")
        return x

    def arr(self, key, shape, default=None, required=False):
        val = self.get(key, default, required)
        if val is None:
            return None
        try:
            a = np.array(val, dtype=float)
        except (TypeError, ValueError):
            raise PresetError(f"{self.family}: parameter '{key}' must be numeric") from None
        try:
            a = np.broadcast_to(a, shape).copy()
        except ValueError:
            raise PresetError(f"{self.family}: parameter '{key}' has shape {a.shape}, expected {shape}") from None
        if not np.all(np.isfinite(a)):
            raise PresetError(f"{self.family}: parameter '{key}' must be finite")
        return a

    def finish(self):
        extra = set(self.raw) - self.used
        if extra:
            raise PresetError(f"{self.family}: unknown parameter(s) {sorted(extra)}")


def _levy_from(spec, n, family):
    """Build a Lévy measure from a params sub-table (or None)."""
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise PresetError(f"{family}: 'levy' must be a table")
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        if n != 1:
            raise PresetError(f"{family}: gaussian jump density is one-dimensional")
        try:
            return gaussian_density(float(spec["mass"]), float(spec["mean"]), float(spec["std"]),
                                    n_nodes=int(spec.get("nodes", 96)))
        except KeyError as exc:
            raise PresetError(f"{family}: gaussian levy needs '{exc.args[0]}'") from None
    if kind == "atoms":
        try:
            pts = np.array(spec["points"], dtype=float).reshape(-1, n)
            return FiniteAtoms(pts, np.array(spec["weights"], dtype=float))
        except (KeyError, ValueError) as exc:
            raise PresetError(f"{family}: invalid atoms: {exc}") from None
    raise PresetError(f"{family}: unknown levy kind '{kind}'")


def _check_moments(levy, loadings, m, family):
    """Exponential-moment condition for every pair of loading vectors."""
    if levy is None:
        return
    for a in loadings:
        for b in loadings:
            if not exponential_moment_ok(levy, m * (np.asarray(a) + np.asarray(b)), power=1.0):
                raise PresetError(f"{family}: exponential moment of the jump measure is not finite "
                                  f"for loading {np.asarray(a).tolist()}")


# ---------------------------------------------------------------------------
# multiplicative d-asset family with regimes (covers the first three)
# ---------------------------------------------------------------------------

def _exp_levy(family, K, sig, rates, rho, lam, levy, extra=None):
    """sig (K, d, n), rates (K,), rho (K, K, d), lam (K, K)."""
    d = sig.shape[1]
    n = sig.shape[2]
    lam = lam.copy()
    np.fill_diagonal(lam, 0.0)
    rho = rho.copy()
    for i in range(K):
        rho[i, i] = 0.0
    jump_rho = np.expm1(rho)  # (K, K, d)
    if levy is not None:
        kappa = np.array([[integrate_levy(levy, lambda x, a=sig[c, k]: np.expm1(x @ a)) for k in range(d)]
                          for c in range(K)])
    else:
        kappa = np.zeros((K, d))

    def short_rate(u, z, c):
        return np.take(rates, c, axis=0)

    def drift(u, z, c):
        return z * np.take(rates, c, axis=0)[:, None]

    def diffusion(u, z, c):
        return z[:, :, None] * np.take(sig, c, axis=0)

    def jump(u, z, c, x):
        # (m, q, n) x (m, d, n) -> (m, q, d)
        expo = np.einsum("mqn,mdn->mqd", x, np.take(sig, c, axis=0))
        return z[:, None, :] * np.expm1(expo)

    def regime_jump(u, z, i, j):
        return z * jump_rho[i, j]

    def intensity(u, z, i, j):
        return np.full(z.shape[0], lam[i, j])

    def compensator(u, z, c):
        return z * np.take(kappa, c, axis=0)

    def intensity_rows(u, z, c):
        return np.take(lam, c, axis=0)

    def regime_jump_rows(u, z, c):
        return z[:, None, :] * np.take(jump_rho, c, axis=0)

    params = {"K": K, "sigma": sig.tolist(), "rates": rates.tolist(), "rho": rho.tolist(),
              "intensity": lam.tolist()}
    if extra:
        params.update(extra)
    return MarketModelSpec(
        regimes=RegimeSet(K), d=d, p=0, n=n, r_W=n,
        short_rate=short_rate, drift=drift, diffusion=diffusion, jump=jump,
        regime_jump=regime_jump, intensity=intensity, levy=levy,
        intensity_bound=float(lam.max()) if K > 1 else 0.0,
        compensator=compensator if levy is not None else None,
        intensity_rows=intensity_rows, regime_jump_rows=regime_jump_rows,
        family=family, params=params)


def black_scholes(params):
    P = _Params("black_scholes", params)
    sigma = P.num("sigma", required=True, nonneg=True)
    r = P.num("r", 0.0)
    P.finish()
    return _exp_levy("black_scholes", 1, np.full((1, 1, 1), sigma), np.array([r]),
                     np.zeros((1, 1, 1)), np.zeros((1, 1)), None)


def merton_jump(params):
    P = _Params("merton_jump", params)
    sigma = P.num("sigma", required=True, nonneg=True)
    r = P.num("r", 0.0)
    mass = P.num("jump_intensity", required=True, positive=True)
    mean = P.num("jump_mean", required=True)
    std = P.num("jump_std", required=True, positive=True)
    nodes = int(P.num("nodes", 96, positive=True))
    m = P.num("moment_order", 1.0, positive=True)
    P.finish()
    levy = gaussian_density(mass, mean, std, n_nodes=nodes)
    _check_moments(levy, [np.array([1.0])], m, "merton_jump")
    spec = _exp_levy("merton_jump", 1, np.full((1, 1, 1), 1.0), np.array([r]),
                     np.zeros((1, 1, 1)), np.zeros((1, 1)), levy,
                     extra={"jump_intensity": mass, "jump_mean": mean, "jump_std": std})
    # the Brownian loading is sigma while the jump loading is exp(x) - 1
    sig = sigma

    def diffusion(u, z, c):
        return sig * z[:, :, None]

    def jump(u, z, c, x):
        return z[:, None, :] * np.expm1(x)

    return _replace(spec, diffusion=diffusion, jump=jump,
                    params=spec.params | {"sigma": sigma})


def _replace(spec, **kw):
    from dataclasses import replace
    return replace(spec, **kw)


def exp_levy_regime(params):
    P = _Params("exp_levy_regime", params)
    K = int(P.num("K", 1, positive=True))
    d = int(P.num("d", 1, positive=True))
    sig_raw = np.array(P.get("sigma", required=True), dtype=float)
    # accepted shapes: (K,), (K, n), (K, d, n)
    if sig_raw.ndim == 0:
        sig_raw = np.full((K,), float(sig_raw))
    if sig_raw.ndim == 1:
        sig = np.broadcast_to(sig_raw.reshape(K, 1, 1) if sig_raw.shape[0] == K else sig_raw, (K, d, 1)).copy()
    elif sig_raw.ndim == 2:
        sig = np.broadcast_to(sig_raw[:, None, :], (K, d, sig_raw.shape[1])).copy()
    elif sig_raw.ndim == 3:
        sig = sig_raw
    else:
        raise PresetError("exp_levy_regime: 'sigma' must have shape (K,), (K, n) or (K, d, n)")
    if sig.shape[:2] != (K, d):
        raise PresetError(f"exp_levy_regime: 'sigma' shape {sig.shape} does not match K={K}, d={d}")
    n = sig.shape[2]
    rates = P.arr("rates", (K,), 0.0)
    rho = np.array(P.get("rho", 0.0), dtype=float)
    if rho.ndim == 0:
        rho = np.full((K, K, d), float(rho))
    elif rho.ndim == 2 and rho.shape == (K, K):
        rho = np.repeat(rho[:, :, None], d, axis=2)
    if rho.shape != (K, K, d):
        raise PresetError(f"exp_levy_regime: 'rho' shape {rho.shape}, expected {(K, K, d)}")
    lam = P.arr("intensity", (K, K), 0.0)
    if np.any(lam < 0):
        raise PresetError("exp_levy_regime: intensities must be nonnegative")
    levy = _levy_from(P.get("levy"), n, "exp_levy_regime")
    m = P.num("moment_order", 1.0, positive=True)
    P.finish()
    _check_moments(levy, [sig[c, k] for c in range(K) for k in range(d)], m, "exp_levy_regime")
    return _exp_levy("exp_levy_regime", K, sig, rates, rho, lam, levy)


def stochvol_exp_levy(params):
    """Asset with volatility vol(R) = lo + (hi - lo) * logistic(R), R an OU factor.

    Brownian loading of the asset: vol(R) * (corr, sqrt(1 - corr^2));
    factor loading: (xi, 0). Optional 2-d jump atoms use the same loading
    vector in the exponent.
    """
    P = _Params("stochvol_exp_levy", params)
    K = int(P.num("K", 1, positive=True))
    rates = P.arr("rates", (K,), 0.0)
    kappa = P.num("kappa", required=True, positive=True)
    theta = P.num("theta", 0.0)
    xi = P.num("xi", required=True, nonneg=True)
    lo = P.num("vol_min", required=True, positive=True)
    hi = P.num("vol_max", required=True, positive=True)
    corr = P.arr("corr", (K,), 0.0)
    scale = P.arr("vol_scale", (K,), 1.0)
    rho = P.arr("rho", (K, K), 0.0)
    lam = P.arr("intensity", (K, K), 0.0)
    levy = _levy_from(P.get("levy"), 2, "stochvol_exp_levy")
    m = P.num("moment_order", 1.0, positive=True)
    P.finish()
    if hi < lo:
        raise PresetError("stochvol_exp_levy: vol_max must be >= vol_min")
    if np.any(np.abs(corr) > 1):
        raise PresetError("stochvol_exp_levy: |corr| must be <= 1")
    np.fill_diagonal(lam, 0.0)
    np.fill_diagonal(rho, 0.0)
    if levy is not None:
        loads = [hi * np.take(scale, c, axis=0) * np.array([corr[c], np.sqrt(1 - corr[c] ** 2)]) for c in range(K)]
        _check_moments(levy, loads, m, "stochvol_exp_levy")
    unit = np.stack([corr, np.sqrt(1 - corr ** 2)], axis=1)  # (K, 2)

    def vol(r, c):
        return np.take(scale, c, axis=0) * (lo + (hi - lo) / (1.0 + np.exp(-r)))

    def loading(z, c):
        return vol(z[:, 1], c)[:, None] * np.take(unit, c, axis=0)  # (m, 2)

    def short_rate(u, z, c):
        return np.take(rates, c, axis=0)

    def drift(u, z, c):
        return np.stack([z[:, 0] * np.take(rates, c, axis=0), kappa * (theta - z[:, 1])], axis=1)

    def diffusion(u, z, c):
        m_ = z.shape[0]
        out = np.zeros((m_, 2, 2))
        out[:, 0, :] = z[:, :1] * loading(z, c)
        out[:, 1, 0] = xi
        return out

    def jump(u, z, c, x):
        expo = np.einsum("mqn,mn->mq", x, loading(z, c))
        out = np.zeros(x.shape[:2] + (2,))
        out[:, :, 0] = z[:, :1] * np.expm1(expo)
        return out

    def compensator(u, z, c):
        expo = loading(z, c) @ levy.nodes.T  # (m, q)
        out = np.zeros_like(z)
        out[:, 0] = z[:, 0] * (np.expm1(expo) @ levy.weights)
        return out

    def regime_jump(u, z, i, j):
        out = np.zeros_like(z)
        out[:, 0] = z[:, 0] * np.expm1(rho[i, j])
        return out

    def intensity(u, z, i, j):
        return np.full(z.shape[0], lam[i, j])

    return MarketModelSpec(
        regimes=RegimeSet(K), d=1, p=1, n=2, r_W=2,
        short_rate=short_rate, drift=drift, diffusion=diffusion, jump=jump,
        regime_jump=regime_jump, intensity=intensity, levy=levy,
        intensity_bound=float(lam.max()) if K > 1 else 0.0,
        compensator=compensator if levy is not None else None,
        family="stochvol_exp_levy",
        params={"K": K, "rates": rates.tolist(), "kappa": kappa, "theta": theta, "xi": xi,
                "vol_min": lo, "vol_max": hi, "corr": corr.tolist(), "vol_scale": scale.tolist(),
                "rho": rho.tolist(), "intensity": lam.tolist()})


def semi_markov_exp_levy(params):
    """Asset with regime volatility and a clock R = time since the last switch.

    Hazards lambda^{i,j}(R) = lam_max[i,j] * (1 - exp(-R / scale[i,j])), bounded
    by lam_max. Transitions reset the clock and do not move the asset.
    """
    P = _Params("semi_markov_exp_levy", params)
    K = int(P.num("K", 2, positive=True))
    r = P.num("r", 0.0)
    sigma = P.arr("sigma", (K,), required=True)
    lam_max = P.arr("hazard_max", (K, K), required=True)
    hscale = P.arr("hazard_scale", (K, K), 1.0)
    levy = _levy_from(P.get("levy"), 1, "semi_markov_exp_levy")
    m = P.num("moment_order", 1.0, positive=True)
    P.finish()
    if K < 2:
        raise PresetError("semi_markov_exp_levy: needs at least two regimes")
    if np.any(sigma < 0):
        raise PresetError("semi_markov_exp_levy: sigma must be nonnegative")
    np.fill_diagonal(hscale, 1.0)
    if np.any(lam_max < 0) or np.any(hscale <= 0):
        raise PresetError("semi_markov_exp_levy: hazards need nonnegative caps and positive scales")
    np.fill_diagonal(lam_max, 0.0)
    _check_moments(levy, [np.array([s]) for s in sigma], m, "semi_markov_exp_levy")
    if levy is not None:
        kappa = np.array([float(integrate_levy(levy, lambda x, s=s: np.expm1(s * x[:, 0]))) for s in sigma])

    def hazard(rr, i, j):
        return lam_max[i, j] * -np.expm1(-np.maximum(rr, 0.0) / hscale[i, j])

    def total_hazard(rr, c):
        out = np.zeros_like(rr)
        for i in range(K):
            sel = c == i
            if sel.any():
                out[sel] = sum(hazard(rr[sel], i, j) for j in range(K) if j != i)
        return out

    def short_rate(u, z, c):
        return np.full(z.shape[0], r)

    def drift(u, z, c):
        return np.stack([z[:, 0] * r, 1.0 - z[:, 1] * total_hazard(z[:, 1], c)], axis=1)

    def diffusion(u, z, c):
        out = np.zeros((z.shape[0], 2, 1))
        out[:, 0, 0] = z[:, 0] * np.take(sigma, c, axis=0)
        return out

    def jump(u, z, c, x):
        out = np.zeros(x.shape[:2] + (2,))
        out[:, :, 0] = z[:, :1] * np.expm1(np.take(sigma, c, axis=0)[:, None] * x[:, :, 0])
        return out

    def compensator(u, z, c):
        out = np.zeros_like(z)
        out[:, 0] = z[:, 0] * np.take(kappa, c, axis=0)
        return out

    def regime_jump(u, z, i, j):
        out = np.zeros_like(z)
        out[:, 1] = -z[:, 1]
        return out

    def intensity(u, z, i, j):
        return hazard(z[:, 1], i, j)

    return MarketModelSpec(
        regimes=RegimeSet(K), d=1, p=1, n=1, r_W=1,
        short_rate=short_rate, drift=drift, diffusion=diffusion, jump=jump,
        regime_jump=regime_jump, intensity=intensity, levy=levy,
        intensity_bound=float(lam_max.max()),
        compensator=compensator if levy is not None else None,
        family="semi_markov_exp_levy",
        params={"K": K, "r": r, "sigma": sigma.tolist(), "hazard_max": lam_max.tolist(),
                "hazard_scale": hscale.tolist()})


_MODEL_BUILDERS = {
    "black_scholes": black_scholes,
    "merton_jump": merton_jump,
    "exp_levy_regime": exp_levy_regime,
    "stochvol_exp_levy": stochvol_exp_levy,
    "semi_markov_exp_levy": semi_markov_exp_levy,
}


# ---------------------------------------------------------------------------
# payment streams
# ---------------------------------------------------------------------------

def _payment_tables(P, K):
    coupon = P.arr("coupon", (K,), 0.0)
    trans = P.arr("transition", (K, K), 0.0)
    np.fill_diagonal(trans, 0.0)
    return coupon, trans


def dividend(name: str, params: dict, model: MarketModelSpec) -> DividendSpec:
    """Build a payment stream from a named family."""
    if name not in DIVIDEND_FAMILIES:
        raise PresetError(f"unknown dividend family '{name}'; known: {', '.join(DIVIDEND_FAMILIES)}")
    P = _Params(name, params)
    K = model.K
    T = P.num("maturity", required=True, positive=True)

    if name == "compensated_transition":
        i = int(P.num("from", 1)) - 1
        j = int(P.num("to", 2)) - 1
        P.finish()
        if not (0 <= i < K and 0 <= j < K and i != j):
            raise PresetError("compensated_transition: invalid regime pair")

        def rate(u, z, c):
            out = np.zeros(z.shape[0])
            sel = c == i
            if sel.any():
                out[sel] = -model.intensity(u, z[sel], i, j)
            return out

        def transition(u, z, a, b):
            return np.full(z.shape[0], 1.0 if (a, b) == (i, j) else 0.0)

        return DividendSpec(T, lambda z, c: np.zeros(z.shape[0]), rate, transition, 1.0,
                            name, {"maturity": T, "from": i + 1, "to": j + 1})

    coupon, trans = _payment_tables(P, K)

    def rate(u, z, c):
        return np.take(coupon, c, axis=0)

    def transition(u, z, i, j):
        return np.full(z.shape[0], trans[i, j])

    if name in ("call", "put"):
        strike = P.num("strike", required=True, positive=True)
        asset = int(P.num("asset", 1)) - 1
        if not 0 <= asset < model.d:
            raise PresetError(f"{name}: asset index outside 1..{model.d}")
        sign = 1.0 if name == "call" else -1.0

        def terminal(z, c):
            return np.maximum(sign * (z[:, asset] - strike), 0.0)
        extra = {"strike": strike, "asset": asset + 1}
    elif name == "smooth_call":
        strike = P.num("strike", required=True, positive=True)
        sig = P.num("sigma", required=True, positive=True)
        tau0 = P.num("tau0", required=True, positive=True)
        rr = P.num("rate", 0.0)

        def terminal(z, c):
            return bs_call(z[:, 0], strike, tau0, sig, rr)
        extra = {"strike": strike, "sigma": sig, "tau0": tau0, "rate": rr}
    elif name == "linear":
        alpha = P.arr("alpha", (model.d,), 0.0)
        beta = P.arr("beta", (K,), 0.0)

        def terminal(z, c):
            return z[:, :model.d] @ alpha + np.take(beta, c, axis=0)
        extra = {"alpha": alpha.tolist(), "beta": beta.tolist()}
    else:  # constant
        value = P.num("value", 1.0)

        def terminal(z, c):
            return np.full(z.shape[0], value)
        extra = {"value": value}
    P.finish()
    return DividendSpec(T, terminal, rate, transition, 1.0, name,
                        {"maturity": T, "coupon": coupon.tolist(), "transition": trans.tolist()} | extra)


def preset_model(name: str, params: dict | None = None, dividend_family: str | None = None,
                 dividend_params: dict | None = None):
    """Build ``(MarketModelSpec, DividendSpec or None)`` for a named family."""
    if name not in _MODEL_BUILDERS:
        raise PresetError(f"unknown model family '{name}'; known: {', '.join(MODEL_FAMILIES)}")
    if params is not None and not isinstance(params, dict):
        raise PresetError(f"{name}: params must be a mapping")
    spec = _MODEL_BUILDERS[name](params or {})
    div = None
    if dividend_family is not None:
        div = dividend(dividend_family, dividend_params or {}, spec)
    return spec, div
