import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmhedge import _kernels as kern

seeds = st.integers(0, 2 ** 31 - 1)


@given(seeds, st.integers(1, 4), st.integers(2, 60))
def test_thomas_backends_agree(seed, B, N):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-1, 0, (B, N))
    up = rng.uniform(-1, 0, (B, N))
    dg = 2.5 + rng.uniform(0, 1, (B, N))
    rhs = rng.normal(size=(B, N))
    x_nb = kern.thomas_batch_nb(lo, dg, up, rhs)
    x_np = kern.thomas_batch_np(lo, dg, up, rhs)
    np.testing.assert_allclose(x_nb, x_np, rtol=1e-12, atol=1e-14)
    M = np.diag(dg[0]) + np.diag(lo[0, 1:], -1) + np.diag(up[0, :-1], 1)
    np.testing.assert_allclose(M @ x_np[0], rhs[0], atol=1e-11)


@given(seeds, st.booleans())
def test_locate_backends_agree(seed, log):
    rng = np.random.default_rng(seed)
    xi_nodes = np.linspace(-2.0, 2.0, 33)
    z_nodes = np.exp(xi_nodes) if log else xi_nodes
    xi = rng.uniform(-2.6, 2.6, 200)
    xi[:3] = xi_nodes[[0, 16, 32]]
    z = np.exp(xi) if log else xi
    i1, a1, b1 = kern.locate_axis_nb(xi_nodes, z_nodes, xi, z, -2.4, 2.4)
    i2, a2, b2 = kern.locate_axis_np(xi_nodes, z_nodes, xi, z, -2.4, 2.4)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_array_equal(b1, b2)
    np.testing.assert_allclose(a1, a2, rtol=1e-14, atol=1e-15)
    np.testing.assert_array_equal(b2, np.abs(xi) > 2.4)


@given(seeds)
def test_gather_backends_agree(seed):
    rng = np.random.default_rng(seed)
    m = 100
    c = rng.integers(0, 2, m)
    f1 = rng.normal(size=(2, 20, 3))
    idx = rng.integers(0, 19, m)
    a = rng.uniform(-0.2, 1.2, m)
    np.testing.assert_allclose(kern.gather_1d_nb(f1, c, idx, a), kern.gather_1d_np(f1, c, idx, a), rtol=1e-13)
    f2 = rng.normal(size=(2, 12, 9, 2))
    i0 = rng.integers(0, 11, m)
    i1 = rng.integers(0, 8, m)
    a0 = rng.uniform(0, 1, m)
    a1 = rng.uniform(0, 1, m)
    np.testing.assert_allclose(kern.gather_2d_nb(f2, c, i0, a0, i1, a1), kern.gather_2d_np(f2, c, i0, a0, i1, a1),
                               rtol=1e-12, atol=1e-14)


@given(seeds, st.floats(0.01, 5.0))
def test_poisson_backends_agree(seed, mean):
    from scipy import stats
    rng = np.random.default_rng(seed)
    cdf = stats.poisson.cdf(np.arange(20), mean)
    u = rng.random(500)
    np.testing.assert_array_equal(kern.poisson_counts_nb(u, cdf), kern.poisson_counts_np(u, cdf))


def _backend_run(flag):
    code = ("import json, numpy as np; from rmhedge import BACKEND, preset_model, mc_value;"
            "m, d = preset_model('merton_jump', {'sigma': 0.2, 'jump_intensity': 0.5, 'jump_mean': -0.1, "
            "'jump_std': 0.1}, 'call', {'strike': 100.0, 'maturity': 0.5});"
            "e = mc_value(m, d, 0.0, [100.0], 0, 2000, 0.01, 3);"
            "print(json.dumps([BACKEND, e.estimate]))")
    env = dict(os.environ, RMHEDGE_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


@pytest.mark.skipif(not kern.HAVE_NUMBA, reason="numba not installed")
def test_env_flag_selects_backend_with_same_results():
    nb = _backend_run("")
    npy = _backend_run("1")
    assert nb[0] == "numba" and npy[0] == "numpy"
    assert abs(nb[1] - npy[1]) <= 1e-12 * abs(npy[1])
