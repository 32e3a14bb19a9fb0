from dataclasses import replace

import numpy as np
import pytest

from rmhedge import (PresetError, RegimeSet, SamplePlan, TimeGrid, preset_model, simulate_paths,
                     validate_dividend, validate_model)
from rmhedge.presets import MODEL_FAMILIES

from conftest import REGIME_PARAMS

PRESETS = {
    "black_scholes": {"sigma": 0.2, "r": 0.05},
    "merton_jump": {"sigma": 0.2, "r": 0.01, "jump_intensity": 0.3, "jump_mean": -0.1, "jump_std": 0.15},
    "exp_levy_regime": REGIME_PARAMS,
    "stochvol_exp_levy": {"K": 2, "rates": [0.01, 0.02], "kappa": 2.0, "theta": 0.0, "xi": 0.5,
                          "vol_min": 0.1, "vol_max": 0.4, "corr": -0.5, "vol_scale": [1.0, 1.2],
                          "rho": [[0.0, -0.03], [0.03, 0.0]], "intensity": [[0.0, 0.5], [0.8, 0.0]],
                          "levy": {"kind": "atoms", "points": [[0.2, 0.1], [-0.3, 0.0]], "weights": [0.2, 0.2]}},
    "semi_markov_exp_levy": {"K": 2, "r": 0.01, "sigma": [0.15, 0.3], "hazard_max": [[0, 1.5], [2.0, 0]],
                             "hazard_scale": [[0, 0.3], [0.5, 0]],
                             "levy": {"kind": "atoms", "points": [[0.3], [-0.4]], "weights": [0.3, 0.2]}},
}


def plan_for(model):
    s = np.array([50.0, 80.0, 100.0, 130.0, 250.0])
    if model.D == 1:
        z = s[:, None]
    else:
        z = np.stack([s, np.linspace(0.0, 1.0, s.size)], axis=1)
    return SamplePlan(np.array([0.0, 0.5, 1.0]), z)


def test_registry_covers_the_families():
    assert set(PRESETS) == set(MODEL_FAMILIES)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates(name):
    model, div = preset_model(name, PRESETS[name], "call", {"strike": 100.0, "maturity": 1.0})
    plan = plan_for(model)
    rep = validate_model(model, plan)
    assert rep.passed, rep.to_dict()
    assert validate_dividend(div, model, plan).passed


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_discounted_drift_vanishes(name):
    model, _ = preset_model(name, PRESETS[name])
    for u, z, c in plan_for(model).expand(model.K):
        mu = model.drift(u, z, c)[:, :model.d]
        r = model.short_rate(u, z, c)
        np.testing.assert_allclose(mu - z[:, :model.d] * r[:, None], 0.0, atol=1e-12)


def test_black_scholes_preset():
    model, _ = preset_model("black_scholes", {"sigma": 0.2, "r": 0.05})
    assert model.K == 1 and model.levy is None
    assert validate_model(model, SamplePlan(np.array([0.0]), np.array([[100.0]]))).passed
    model0, _ = preset_model("black_scholes", {"sigma": 0.2, "r": 0.0})
    z = np.array([[100.0]])
    assert model0.drift(0.0, z, np.array([0]))[0, 0] == 0.0
    assert model0.intensity_matrix(0.0, z, np.array([0])).sum() == 0.0


def test_wrong_drift_fails_at_every_probe():
    model, _ = preset_model("black_scholes", {"sigma": 0.2, "r": 0.05})
    bad = replace(model, drift=lambda u, z, c: 2 * z * 0.05)
    plan = plan_for(model)
    rep = validate_model(bad, plan)
    ch = rep["drift_restriction"]
    assert not ch.passed
    assert ch.detail.startswith("mu_S = s*r violated at 15/15")


def test_gaussian_regime_preset_has_finite_growth_constant():
    params = dict(REGIME_PARAMS, levy={"kind": "gaussian", "mass": 0.3, "mean": -0.1, "std": 0.15})
    model, _ = preset_model("exp_levy_regime", params)
    rep = validate_model(model, plan_for(model))
    assert rep.passed
    const = float(rep["linear_growth"].detail.split()[1])
    # independent bound: |mu|^2 + |sigma|^2 + int F^2 nu + |rho|^2 over s^2
    sig = 0.35
    x = model.levy.nodes[:, 0]
    jump = np.sum(model.levy.weights * np.expm1(sig * x) ** 2)
    ref = 0.02 ** 2 + sig ** 2 + jump + np.expm1(0.05) ** 2
    assert const <= ref * (1 + 1e-9) and const >= 0.9 * ref * 250 ** 2 / (1 + 250 ** 2)


def test_regime_switch_moves_asset_by_factor():
    params = {"K": 2, "sigma": [0.15, 0.35], "rho": [[0, -0.05], [0.05, 0]], "intensity": [[0, 1.0], [1.0, 0]]}
    model, _ = preset_model("exp_levy_regime", params)
    z = np.array([[100.0]])
    assert model.regime_jump(0.0, z, 0, 1)[0, 0] == pytest.approx(100.0 * (np.exp(-0.05) - 1))
    assert model.regime_jump(0.0, z, 1, 0)[0, 0] == pytest.approx(100.0 * (np.exp(0.05) - 1))
    ens = simulate_paths(model, [100.0], 0, TimeGrid(0.0, 1.0, 100), 200, 3)
    k = np.flatnonzero(ens.trans_path >= 0)[:20]
    for p, n, i in zip(ens.trans_path[k], ens.trans_step[k], ens.trans_from[k]):
        before, after = ens.Y[p, n, 0], ens.Y[p, n + 1, 0]
        # continuous move over one step is small next to the 5% switch factor
        ratio = after / before
        assert abs(np.log(ratio) - (-0.05 if i == 0 else 0.05)) < 0.12


def test_semi_markov_clock_coefficients():
    model, _ = preset_model("semi_markov_exp_levy", PRESETS["semi_markov_exp_levy"])
    z = np.array([[100.0, 0.4]])
    rho = model.regime_jump(0.0, z, 0, 1)
    np.testing.assert_array_equal(rho, [[0.0, -0.4]])
    lam = model.intensity(0.0, z, 0, 1)[0]
    assert lam == pytest.approx(1.5 * (1 - np.exp(-0.4 / 0.3)))
    # compensated drift: clock grows at unit rate between switches
    assert model.effective_drift(0.0, z, np.array([0]))[0, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("name,params,err", [
    ("nope", {}, "unknown model family"),
    ("black_scholes", {}, "sigma"),
    ("black_scholes", {"sigma": 0.2, "bogus": 1}, "bogus"),
    ("black_scholes", {"sigma": "x"}, "sigma"),
    ("merton_jump", {"sigma": 0.2, "jump_intensity": 0.1, "jump_mean": 6.0, "jump_std": 1.5}, "moment"),
])
def test_preset_errors(name, params, err):
    with pytest.raises(PresetError, match=err):
        preset_model(name, params)


def test_regime_set():
    rs = RegimeSet(3)
    assert rs.labels == (1, 2, 3)
    assert len(rs.pairs()) == 6
    assert rs.index(2) == 1
    with pytest.raises(ValueError):
        rs.index(4)
    with pytest.raises(ValueError):
        RegimeSet(0)
