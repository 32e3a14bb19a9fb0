"""Lévy measures with a finite node representation.

Two variants are supported. ``FiniteAtoms`` is a finite weighted point set,
integrated exactly. ``QuadratureDensity`` wraps a density with a node/weight
table; jumps smaller than ``eps`` are dropped (no diffusion correction), so
the simulator and every integral see the same finite-activity measure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import NumericalDomain, PresetError


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("jump points must have shape (q, n)")
    return pts


@dataclass(frozen=True)
class FiniteAtoms:
    """Finitely supported measure: ``sum_k w_k * delta_{x_k}``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise ValueError("one weight per atom required")
        if pts.shape[0] == 0:
            raise ValueError("at least one atom required")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValueError("atoms and weights must be finite")
        if np.any(w <= 0):
            raise ValueError("atom weights must be strictly positive")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("atoms must be distinct")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.points

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_finite_support(self) -> bool:
        return True

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Marks drawn from the normalised measure, shape (size, n)."""
        if size == 0:
            return np.empty((0, self.dim))
        cdf = np.cumsum(self.weights) / self.total_mass
        k = np.searchsorted(cdf, rng.random(size), side="right")
        return self.points[np.minimum(k, len(cdf) - 1)]


@dataclass(frozen=True)
class QuadratureDensity:
    """Density measure represented by quadrature nodes.

    ``nodes`` and ``quad_weights`` form a rule for Lebesgue integration over
    the retained region; node weights are ``quad_weights * density(nodes)``
    restricted to ``|x| >= eps``. ``sampler(rng, size)`` should draw from the
    normalised retained measure; without one, marks are drawn from the node
    distribution, which matches the quadrature exactly.
    """

    density: Callable[[np.ndarray], np.ndarray]
    eps: float
    nodes_in: np.ndarray
    quad_weights: np.ndarray
    cutoff: float = np.inf
    sampler: Optional[Callable] = None
    label: str = "density"
    nodes_kept: np.ndarray = field(init=False, repr=False)
    node_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("small-jump truncation eps must be positive")
        pts = _as_points(self.nodes_in)
        qw = np.asarray(self.quad_weights, dtype=float).reshape(-1)
        if qw.shape[0] != pts.shape[0]:
            raise ValueError("one quadrature weight per node required")
        dens = np.asarray(self.density(pts), dtype=float).reshape(-1)
        if not np.all(np.isfinite(dens)) or np.any(dens < 0):
            raise ValueError("density must be finite and nonnegative at the nodes")
        norm = np.linalg.norm(pts, axis=1)
        w = qw * dens
        keep = (norm >= self.eps) & (norm <= self.cutoff) & (w > 0)
        if not keep.any():
            raise ValueError("no quadrature node carries mass")
        pts = pts[keep]
        w = w[keep]
        if not np.isfinite(np.sum(np.minimum(norm[keep] ** 2, 1.0) * w)):
            raise ValueError("measure does not integrate |x|^2 ^ 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes_kept", pts)
        object.__setattr__(self, "node_weights", w)

    @property
    def dim(self) -> int:
        return self.nodes_kept.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.nodes_kept

    @property
    def weights(self) -> np.ndarray:
        return self.node_weights

    @property
    def total_mass(self) -> float:
        return float(self.node_weights.sum())

    @property
    def is_finite_support(self) -> bool:
        return False

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0:
            return np.empty((0, self.dim))
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, size), dtype=float).reshape(size, self.dim)
        cdf = np.cumsum(self.node_weights) / self.total_mass
        k = np.searchsorted(cdf, rng.random(size), side="right")
        return self.nodes_kept[np.minimum(k, len(cdf) - 1)]


LevyMeasure = FiniteAtoms | QuadratureDensity


def integrate_levy(measure, f) -> np.ndarray:
    """Integrate ``f`` against ``measure`` using its node set.

    ``f`` maps an (q, n) node array to (q,) or (q, k). Returns a scalar array
    or a (k,) vector. A non-finite value at any node raises NumericalDomain.
    """
    x = measure.nodes
    vals = np.asarray(f(x), dtype=float)
    if vals.shape[0] != x.shape[0]:
        raise ValueError("integrand must return one row per node")
    bad = ~np.isfinite(vals.reshape(vals.shape[0], -1)).all(axis=1)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise NumericalDomain(f"non-finite integrand at jump node {x[k].tolist()}", node=x[k].copy())
    return np.tensordot(measure.weights, vals, axes=(0, 0))


def gaussian_density(mass: float, mean: float, std: float, n_nodes: int = 96,
                     eps: float = 1e-8, width: float = 8.0) -> QuadratureDensity:
    """Normal jump sizes with total intensity ``mass`` (Merton-type jumps).

    Gauss-Legendre nodes on ``mean +/- width*std``; the sampler draws the
    normal restricted to that interval and to ``|x| >= eps``.
    """
    if not (mass > 0 and std > 0):
        raise PresetError("gaussian jump density needs positive mass and std")
    lo, hi = mean - width * std, mean + width * std
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    nodes = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    qw = 0.5 * (hi - lo) * w
    coef = mass / (std * np.sqrt(2 * np.pi))

    def density(x):
        return coef * np.exp(-0.5 * ((x[:, 0] - mean) / std) ** 2)

    a = (lo - mean) / std
    b = (hi - mean) / std
    pa, pb = special.ndtr(a), special.ndtr(b)

    def sampler(rng, size):
        out = mean + std * special.ndtri(pa + (pb - pa) * rng.random(size))
        small = np.abs(out) < eps
        while small.any():
            out[small] = mean + std * special.ndtri(pa + (pb - pa) * rng.random(int(small.sum())))
            small = np.abs(out) < eps
        return out[:, None]

    return QuadratureDensity(density=density, eps=eps, nodes_in=nodes, quad_weights=qw,
                             cutoff=np.inf, sampler=sampler,
                             label=f"gaussian(mass={mass}, mean={mean}, std={std})")


def exponential_moment_ok(measure, loading: np.ndarray, power: float = 2.0,
                          rel_tail: float = 1e-6) -> bool:
    """Numerical check that ``int_{|x|>1} exp(power * loading.x) nu(dx)`` is finite.

    Finite atoms always pass. For densities the integrand at the outermost
    nodes must be negligible relative to its peak, i.e. the tail decays
    before the node table ends.
    """
    loading = np.atleast_1d(np.asarray(loading, dtype=float))
    x = measure.nodes
    vals = np.exp(power * x @ loading) * np.where(np.linalg.norm(x, axis=1) > 1.0, 1.0, 0.0)
    total = np.sum(measure.weights * vals)
    if not np.isfinite(total):
        return False
    if measure.is_finite_support:
        return True
    dens = np.asarray(measure.density(x), dtype=float) * np.exp(power * x @ loading)
    if not np.all(np.isfinite(dens)):
        return False
    peak = dens.max()
    ends = np.concatenate([np.argmin(x, axis=0), np.argmax(x, axis=0)])
    return bool(peak > 0 and dens[ends].max() <= rel_tail * peak)
