import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmhedge import (AnalyticValue, Axis, DividendSpec, HedgeField, PointwiseHedge, SamplePlan, SpatialGrid,
                     TimeGrid, attainability_check, cost_process, cross_vector, gram_matrix, hedge_field,
                     min_norm_solve, preset_model, representation_triple, residual_risk,
                     semimartingale_adjust, simulate_paths, solve_pide)
from rmhedge.hedge import HedgeSample
from rmhedge.oracles import bs_call, bs_delta, expected_transitions

from conftest import REGIME_PARAMS


def zero_dividend(T=1.0):
    return DividendSpec(T, lambda z, c: np.zeros(z.shape[0]), lambda u, z, c: np.zeros(z.shape[0]),
                        lambda u, z, i, j: np.zeros(z.shape[0]))


def per_regime(values):
    values = np.asarray(values, dtype=float)
    return AnalyticValue(lambda t, z, c: values[c], lambda t, z, c: np.zeros(z.shape))


# ---------------------------------------------------------------- min-norm solve

def test_identity_solve():
    phi, res, rank = min_norm_solve(np.eye(3), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_allclose(phi, [1.0, -2.0, 3.0])
    assert res < 1e-14 and rank == 3


def test_singular_solve_drops_null_direction():
    phi, res, rank = min_norm_solve(np.diag([1.0, 0.0]), np.array([2.0, 0.0]))
    np.testing.assert_allclose(phi, [2.0, 0.0], atol=1e-14)
    assert rank == 1 and res < 1e-14


@given(st.integers(0, 10_000))
def test_min_norm_matches_pseudoinverse(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(4, 3))
    G = B @ B.T
    A = G @ rng.normal(size=4) + 0.0
    phi, res, rank = min_norm_solve(G, A)
    np.testing.assert_allclose(phi, np.linalg.pinv(G) @ A, atol=1e-10 * max(1.0, np.abs(phi).max()))
    assert rank == 3


def test_batch_equals_single():
    rng = np.random.default_rng(3)
    B = rng.normal(size=(5, 3, 3))
    G = B @ np.swapaxes(B, 1, 2)
    A = rng.normal(size=(5, 3))
    phi, res, rank = min_norm_solve(G, A)
    for k in range(5):
        p1, r1, k1 = min_norm_solve(G[k], A[k])
        np.testing.assert_allclose(phi[k], p1, rtol=1e-12)
        assert rank[k] == k1


def test_scalar_zero_gram():
    phi, res, rank = min_norm_solve(np.zeros((1, 1)), np.array([0.0]))
    assert phi[0] == 0.0 and rank == 0


# ---------------------------------------------------------------- Gram matrix

def test_gram_zero_model():
    model, _ = preset_model("black_scholes", {"sigma": 0.0})
    G = gram_matrix(model, 0.0, [100.0], 0)
    assert np.all(G.matrix == 0)


def test_gram_black_scholes(bs):
    model, _ = bs
    G = gram_matrix(model, 0.3, [120.0], 0).matrix
    np.testing.assert_allclose(G, [[120.0 ** 2 * 0.04]], rtol=1e-14)


@pytest.mark.parametrize("i", [0, 1])
def test_gram_regime_preset_by_hand(regime, i):
    model, _ = regime
    s = 93.0
    sig = REGIME_PARAMS["sigma"][i]
    lam = REGIME_PARAMS["intensity"][i][1 - i]
    rho = REGIME_PARAMS["rho"][i][1 - i]
    pts = [0.1, -0.2]
    w = [0.2, 0.1]
    jump = sum(wq * (np.exp(sig * x) - 1) ** 2 for x, wq in zip(pts, w))
    expect = sig ** 2 + jump + lam * (np.exp(rho) - 1) ** 2
    G = gram_matrix(model, 0.0, [s], i)
    np.testing.assert_allclose(G.matrix[0, 0] / s ** 2, expect, rtol=1e-13)
    np.testing.assert_allclose(G.regime[0, 0] / s ** 2, lam * (np.exp(rho) - 1) ** 2, rtol=1e-13)


@given(st.floats(10.0, 500.0), st.floats(-1.5, 1.5), st.integers(0, 1))
def test_gram_blocks_psd_stochvol(s, r, c):
    model, _ = preset_model("stochvol_exp_levy", {
        "K": 2, "kappa": 1.0, "xi": 0.4, "vol_min": 0.1, "vol_max": 0.5, "corr": [-0.4, 0.2],
        "rho": [[0, -0.1], [0.1, 0]], "intensity": [[0, 1.0], [2.0, 0]],
        "levy": {"kind": "atoms", "points": [[0.2, 0.1], [-0.3, 0.0]], "weights": [0.3, 0.2]}})
    G = gram_matrix(model, 0.0, [s, r], c)
    for block in (G.diffusion, G.jump, G.regime, G.matrix):
        assert np.linalg.eigvalsh(0.5 * (block + block.T)).min() >= -1e-10 * max(1.0, np.abs(block).max())


# ---------------------------------------------------------------- cross vector

def test_cross_vector_constant_value(regime):
    model, div = regime
    zero_trans = zero_dividend()
    A = cross_vector(model, zero_trans, per_regime([4.0, 4.0]), 0.0, [100.0], 0)
    np.testing.assert_allclose(A, 0.0, atol=1e-12)


def test_cross_vector_linear_stochvol():
    model, _ = preset_model("stochvol_exp_levy", {"kappa": 2.0, "xi": 0.5, "vol_min": 0.1, "vol_max": 0.4,
                                                  "corr": [-0.5]})
    alpha = 0.7
    v = AnalyticValue(lambda t, z, c: alpha * z[:, 0], lambda t, z, c: np.stack([np.full(len(z), alpha),
                                                                                   np.zeros(len(z))], 1))
    z = [80.0, 0.3]
    A = cross_vector(model, zero_dividend(), v, 0.0, z, 0)
    a_SS = gram_matrix(model, 0.0, z, 0).matrix
    np.testing.assert_allclose(A, a_SS[0] * alpha, rtol=1e-13)


def test_cross_vector_quadratic_by_hand(regime):
    model, div = regime
    a = np.array([0.01, 0.03])
    v = AnalyticValue(lambda t, z, c: a[c] * z[:, 0] ** 2,
                      lambda t, z, c: (2 * a[c] * z[:, 0])[:, None])
    s = 105.0
    sig, lam, rho = 0.15, 1.0, -0.05
    expect = 2 * a[0] * sig ** 2 * s ** 3
    for x, w in zip([0.1, -0.2], [0.2, 0.1]):
        expect += w * s * np.expm1(sig * x) * a[0] * s ** 2 * (np.exp(2 * sig * x) - 1)
    expect += lam * s * np.expm1(rho) * (a[1] * s ** 2 * np.exp(2 * rho) - a[0] * s ** 2 + 1.0)
    A = cross_vector(model, div, v, 0.0, [s], 0)
    np.testing.assert_allclose(A[0], expect, rtol=1e-12)


# ---------------------------------------------------------------- representation triple

def test_triple_of_zero_value(regime):
    model, _ = regime
    tr = representation_triple(model, zero_dividend(), per_regime([0.0, 0.0]), 0.0, [100.0], 1)
    assert np.all(tr.delta == 0) and np.all(tr.jump_nodes == 0) and np.all(tr.gamma == 0)


def test_triple_piecewise_constant(regime):
    model, div = regime
    vals = [3.0, 5.5]
    bank = 1.25
    tr = representation_triple(model, div, per_regime(vals), 0.0, [100.0], 0, bank=bank)
    np.testing.assert_allclose(tr.gamma, [0.0, (5.5 - 3.0 + 1.0) / bank])
    tr1 = representation_triple(model, div, per_regime(vals), 0.0, [100.0], 1, bank=bank)
    np.testing.assert_allclose(tr1.gamma, [(3.0 - 5.5) / bank, 0.0])
    np.testing.assert_allclose(tr.jump_nodes, 0.0)


def test_triple_black_scholes_delta(bs):
    model, div = bs
    tau = 0.6
    v = AnalyticValue(lambda t, z, c: bs_call(z[:, 0], 100.0, 1.0 - t, 0.2))
    s = 104.0
    tr = representation_triple(model, div, v, 1.0 - tau, [s], 0)
    np.testing.assert_allclose(tr.delta[0], 0.2 * s * bs_delta(s, 100.0, tau, 0.2), rtol=1e-6)


# ---------------------------------------------------------------- semimartingale adjustment

class _Loadings:
    def __init__(self, w=0.0, jump=0.0, trans=0.0):
        self.w, self.j, self.t = w, jump, trans

    def brownian(self, u, z, c):
        return np.full((z.shape[0], 1), self.w)

    def jump(self, u, z, c, x):
        return np.full(x.shape[:2], self.j)

    def transition(self, u, z, i, j):
        return np.full(z.shape[0], self.t)


def test_adjust_zero_is_identity(regime):
    model, div = regime
    hat = representation_triple(model, div, per_regime([1.0, 2.0]), 0.0, [100.0], 0)
    adj = semimartingale_adjust(_Loadings(), hat, 1.7, 0.0, [100.0], model.levy.nodes)
    np.testing.assert_array_equal(adj.delta, hat.delta)
    np.testing.assert_array_equal(adj.gamma, hat.gamma)
    np.testing.assert_array_equal(adj.jump_nodes, hat.jump_nodes)


def test_adjust_divides_by_bank(regime):
    model, div = regime
    hat = representation_triple(model, zero_dividend(), per_regime([0.0, 0.0]), 0.0, [100.0], 0)
    B = 1.4
    adj = semimartingale_adjust(_Loadings(w=0.3 * B, jump=0.2 * B, trans=B), hat, B, 0.0, [100.0],
                                model.levy.nodes)
    np.testing.assert_allclose(adj.delta, [0.3])
    np.testing.assert_allclose(adj.jump_nodes, [0.2, 0.2])
    np.testing.assert_allclose(adj.gamma, [0.0, 1.0])
    np.testing.assert_allclose(adj.jump(np.array([[0.05]])), [0.2])


# ---------------------------------------------------------------- hedge fields

def bs_field(n=240, dt=0.01):
    model, div = preset_model("black_scholes", {"sigma": 0.2}, "call", {"strike": 100.0, "maturity": 1.0})
    grid = SpatialGrid((Axis(100 * np.exp(-2), 100 * np.exp(2), n, True),))
    return model, div, solve_pide(model, div, grid, dt)


def test_field_black_scholes_delta():
    model, div, v = bs_field()
    hf = hedge_field(model, div, v)
    Z = v.grid.points()
    grad = v.gradient(0.0, Z, np.zeros(len(Z), dtype=np.int64))[:, 0]
    np.testing.assert_allclose(hf.phi[0, 0, :, 0], grad, rtol=1e-10, atol=1e-12)
    sel = (Z[:, 0] > 70) & (Z[:, 0] < 140)
    np.testing.assert_allclose(hf.phi[0, 0, sel, 0], bs_delta(Z[sel, 0], 100.0, 1.0, 0.2), atol=5e-3)
    # final level is the left limit
    np.testing.assert_array_equal(hf.phi[-1], hf.phi[-2])
    np.testing.assert_allclose(hf.eta[-1], -hf.phi[-1][..., 0] * Z[:, 0])


def test_field_of_zero_claim(regime):
    model, _ = regime
    grid = SpatialGrid((Axis(100 * np.exp(-2.5), 100 * np.exp(2.5), 60, True),))
    v = solve_pide(model, zero_dividend(0.5), grid, 0.05)
    hf = hedge_field(model, zero_dividend(0.5), v)
    assert np.all(hf.phi == 0) and np.all(hf.eta == 0)


def test_pointwise_stochvol_formula():
    model, _ = preset_model("stochvol_exp_levy", {"kappa": 2.0, "xi": 0.5, "vol_min": 0.1, "vol_max": 0.4,
                                                  "corr": [-0.5]})
    v = AnalyticValue(lambda t, z, c: 0.01 * z[:, 0] ** 2 + z[:, 0] * np.sin(z[:, 1]) + 3 * z[:, 1] ** 2)
    ph = PointwiseHedge(model, zero_dividend(), v, 1.0)
    z = np.array([[90.0, 0.4], [120.0, -0.7]])
    c = np.zeros(2, dtype=np.int64)
    out = ph.sample(0.0, z, c)
    g = v.gradient(0.0, z, c)
    sig = model.diffusion(0.0, z, c)
    a = np.einsum("mir,mjr->mij", sig, sig)
    expect = g[:, 0] + a[:, 0, 1] / a[:, 0, 0] * g[:, 1]
    np.testing.assert_allclose(out.phi[:, 0], expect, rtol=1e-9)
    # the Brownian mismatch is orthogonal to the asset loading
    np.testing.assert_allclose(np.einsum("mr,mr->m", out.mismatch_W, sig[:, 0, :]), 0.0, atol=1e-8)


# ---------------------------------------------------------------- cost process

class _BuyAndHold:
    zero_achieving = False

    def __init__(self, model):
        self.model = model

    def sample(self, t, z, c, clamp=True):
        m = z.shape[0]
        return HedgeSample(np.ones((m, 1)), np.zeros((m, self.model.r_W)), np.zeros(m), np.zeros(m),
                           np.zeros((m, self.model.K)), z[:, 0].copy())

    def value(self, t, z, c, clamp=True):
        return np.atleast_2d(z)[:, 0].copy()


def test_cost_of_nothing_is_zero(bs):
    model, _ = bs
    ens = simulate_paths(model, [100.0], 0, TimeGrid(0.0, 1.0, 50), 64, seed=2)
    grid = SpatialGrid((Axis(100 * np.exp(-3), 100 * np.exp(3), 40, True),))
    v = solve_pide(model, zero_dividend(), grid, 0.05)
    C = cost_process(model, zero_dividend(), hedge_field(model, zero_dividend(), v), ens)
    assert C.shape == (64, 51)
    assert np.all(C == 0)


def test_buy_and_hold_cost_is_constant():
    model, _ = preset_model("black_scholes", {"sigma": 0.3, "r": 0.04})
    ens = simulate_paths(model, [100.0], 0, TimeGrid(0.0, 1.0, 40), 32, seed=5)
    C = cost_process(model, zero_dividend(), _BuyAndHold(model), ens, paths=[0, 5, 31])
    np.testing.assert_allclose(C, 100.0, rtol=1e-12)


# ---------------------------------------------------------------- residual risk

def test_zero_claim_has_zero_risk(bs):
    model, _ = bs
    ens = simulate_paths(model, [100.0], 0, TimeGrid(0.0, 1.0, 50), 200, seed=4)
    ph = PointwiseHedge(model, zero_dividend(), AnalyticValue(lambda t, z, c: np.zeros(len(z))), 1.0)
    rep = residual_risk(model, zero_dividend(), None, ph, ens)
    assert rep.R0 == 0.0 and rep.direct["mean"] == 0.0 and rep.cost["mean"] == 0.0


def test_transition_claim_risk_equals_expected_switches():
    params = dict(REGIME_PARAMS, rho=0.0, rates=[0.0, 0.0])
    params.pop("levy")
    model, div = preset_model("exp_levy_regime", params, "compensated_transition", {"maturity": 1.0})
    ens = simulate_paths(model, [100.0], 0, TimeGrid(0.0, 1.0, 200), 20000, seed=8)
    ph = PointwiseHedge(model, div, per_regime([0.0, 0.0]), 1.0)
    rep = residual_risk(model, div, None, ph, ens)
    oracle = expected_transitions(params["intensity"], [1.0, 0.0], 1.0, 0, 1)
    assert abs(rep.R0 - oracle) < 3 * rep.se + 2e-3 * oracle
    assert abs(rep.direct["mean"] - oracle) < 3 * rep.direct["SE"]
    assert rep.sources["brownian"]["mean"] == 0.0 and rep.sources["jump"]["mean"] == 0.0
    assert rep.self_financing["ok"]


# ---------------------------------------------------------------- attainability

def test_attainable_black_scholes(bs):
    model, _ = bs
    rep = attainability_check(model, SamplePlan(np.array([0.0, 0.5]), np.array([[80.0], [120.0]])))
    assert rep.attainable == "yes" and rep.required_rank == 1


def test_not_attainable_two_regimes_one_asset():
    params = dict(REGIME_PARAMS)
    params.pop("levy")
    model, _ = preset_model("exp_levy_regime", params)
    rep = attainability_check(model, SamplePlan(np.array([0.0]), np.array([[100.0]])))
    assert rep.attainable == "no" and rep.required_rank == 2


def test_attainability_needs_finite_support():
    model, _ = preset_model("merton_jump", {"sigma": 0.2, "jump_intensity": 0.3, "jump_mean": 0.0,
                                            "jump_std": 0.1})
    rep = attainability_check(model, SamplePlan(np.array([0.0]), np.array([[100.0]])))
    assert rep.attainable in ("no", "indeterminate")


def test_hedge_field_csv(tmp_path):
    model, div, v = bs_field(n=40, dt=0.25)
    hf = hedge_field(model, div, v)
    assert isinstance(hf, HedgeField)
    path = tmp_path / "hedge.csv"
    hf.to_csv(str(path))
    rows = path.read_text().splitlines()
    assert rows[0] == "t,y1,c,phi1,eta,rank,residual"
    assert len(rows) == 1 + len(v.times) * 40
