import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmhedge import FiniteAtoms, NumericalDomain, gaussian_density, integrate_levy


def test_single_atom_weighted_sum():
    assert integrate_levy(FiniteAtoms([[1.0]], [0.5]), lambda x: x[:, 0]) == pytest.approx(0.5)


def test_zero_integrand():
    for mu in (FiniteAtoms([[1.0], [-2.0]], [0.5, 0.1]), gaussian_density(0.3, -0.1, 0.15)):
        assert integrate_levy(mu, lambda x: np.zeros(x.shape[0])) == 0.0


def test_gaussian_against_dense_trapezoid():
    mass, m, s = 0.3, -0.1, 0.15
    mu = gaussian_density(mass, m, s)
    got = integrate_levy(mu, lambda x: np.expm1(x[:, 0]) ** 2)
    x = np.linspace(-2.0, 2.0, 100_000)
    dens = mass * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    ref = np.trapezoid(np.expm1(x) ** 2 * dens, x)
    assert abs(got - ref) / ref < 1e-6


def test_vector_valued_integrand():
    mu = FiniteAtoms([[0.1], [-0.2]], [0.2, 0.1])
    out = integrate_levy(mu, lambda x: np.stack([x[:, 0], x[:, 0] ** 2], axis=1))
    np.testing.assert_allclose(out, [0.0, 0.2 * 0.01 + 0.1 * 0.04], atol=1e-15)


def test_non_finite_integrand_names_the_node():
    mu = FiniteAtoms([[0.5], [0.0]], [1.0, 1.0])
    with pytest.raises(NumericalDomain) as exc:
        with np.errstate(divide="ignore"):
            integrate_levy(mu, lambda x: 1.0 / x[:, 0])
    np.testing.assert_array_equal(exc.value.node, [0.0])


@pytest.mark.parametrize("pts,w", [([[0.1], [0.1]], [1.0, 1.0]), ([[0.1]], [0.0]), ([[0.1]], [-1.0])])
def test_atoms_reject_bad_input(pts, w):
    with pytest.raises(ValueError):
        FiniteAtoms(pts, w)


def test_gaussian_drops_small_jumps():
    mu = gaussian_density(0.3, 0.0, 0.1, n_nodes=97, eps=1e-3)
    assert np.all(np.abs(mu.nodes) >= 1e-3)
    # an odd rule puts a node at the origin; its mass is removed
    assert mu.total_mass < 0.29
    assert gaussian_density(0.3, 0.0, 0.1, n_nodes=96).total_mass == pytest.approx(0.3, rel=1e-9)


coef = st.floats(-5, 5, allow_nan=False)


@given(coef, coef, st.lists(st.floats(-1, 1), min_size=1, max_size=5, unique=True))
def test_linearity(a, b, xs):
    mu = FiniteAtoms(np.array(xs)[:, None], np.linspace(0.1, 1.0, len(xs)))
    f = lambda x: np.sin(x[:, 0])
    g = lambda x: x[:, 0] ** 3
    lhs = integrate_levy(mu, lambda x: a * f(x) + b * g(x))
    rhs = a * integrate_levy(mu, f) + b * integrate_levy(mu, g)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@given(st.floats(-0.5, 0.5), st.floats(0.05, 0.4), st.floats(0.1, 2.0))
def test_gaussian_linearity(m, s, mass):
    mu = gaussian_density(mass, m, s)
    f = lambda x: np.expm1(x[:, 0])
    g = lambda x: x[:, 0] ** 2
    lhs = integrate_levy(mu, lambda x: 2 * f(x) - 3 * g(x))
    rhs = 2 * integrate_levy(mu, f) - 3 * integrate_levy(mu, g)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
