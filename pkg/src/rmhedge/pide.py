"""Backward solver for the coupled regime PIDE and gridded value functions.

The spatial grid has one axis per state coordinate (at most two). Each axis
is uniform in a computational coordinate xi, either xi = z or xi = log z.
Interpolation weights are linear in z, both inside the grid and over a band
of 10% of the xi-width beyond each edge; queries past the band raise
DomainEscape.

Time stepping is IMEX: drift, diffusion and killing (short rate plus total
jump and switching intensities) implicit with a theta scheme, the positive
nonlocal parts (Lévy shifts and regime couplings) explicit from the previous
level. At the spatial edges the second derivative in z is set to zero and
the drift uses an inward one-sided difference.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import _kernels
from .errors import DomainEscape, SolverDiverged, StabilityWarning

BAND = 0.1


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int
    log: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.hi > self.lo:
            raise ValueError("axis bounds must be finite with lo < hi")
        if int(self.n) != self.n or self.n < 8:
            raise ValueError("an axis needs at least 8 nodes")
        if self.log and self.lo <= 0:
            raise ValueError("log axis needs a positive lower bound")

    @property
    def xi(self) -> np.ndarray:
        if self.log:
            return np.linspace(math.log(self.lo), math.log(self.hi), self.n)
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def z(self) -> np.ndarray:
        return np.exp(self.xi) if self.log else self.xi

    @property
    def h(self) -> float:
        x = self.xi
        return float(x[1] - x[0])

    def to_xi(self, z):
        if self.log:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.log(z)
        return np.asarray(z, dtype=float)

    def band(self):
        x = self.xi
        w = x[-1] - x[0]
        return float(x[0] - BAND * w), float(x[-1] + BAND * w)

    def jac(self, z):
        """dz/dxi and d2z/dxi2 at physical points."""
        if self.log:
            return z, z
        return np.ones_like(z), np.zeros_like(z)

    def spec(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n": self.n, "log": self.log}


@dataclass(frozen=True)
class SpatialGrid:
    axes: tuple

    def __post_init__(self):
        axes = tuple(self.axes)
        if not 1 <= len(axes) <= 2:
            raise ValueError("the solver supports one or two spatial axes")
        object.__setattr__(self, "axes", axes)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*[a.z for a in self.axes], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def spec(self) -> list:
        return [a.spec() for a in self.axes]

    def locate(self, z, clamp: bool = False):
        """Per-axis (idx, alpha) for points (m, dim); DomainEscape past the band."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = []
        for k, ax in enumerate(self.axes):
            zk = np.ascontiguousarray(z[:, k])
            xi = ax.to_xi(zk)
            lo, hi = ax.band()
            if clamp:
                xi = np.clip(np.nan_to_num(xi, nan=lo, neginf=lo, posinf=hi), lo, hi)
                zk = np.exp(xi) if ax.log else xi
            idx, alpha, bad = _kernels.locate_axis(ax.xi, ax.z, np.ascontiguousarray(xi), zk, lo, hi)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DomainEscape(
                    f"point {z[i].tolist()} leaves axis {k} beyond the extrapolation band "
                    f"[{ax.z[0]:.6g}, {ax.z[-1]:.6g}] +/- {BAND:.0%}", point=z[i].copy(), axis=k)
            out.append((idx, alpha))
        return out

    def interpolation_matrix(self, z, clamp: bool = False) -> sparse.csr_matrix:
        """Sparse (m, N) matrix mapping nodal values to values at ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        m = z.shape[0]
        loc = self.locate(z, clamp=clamp)
        if self.dim == 1:
            idx, a = loc[0]
            rows = np.concatenate([np.arange(m), np.arange(m)])
            cols = np.concatenate([idx, idx + 1])
            vals = np.concatenate([1 - a, a])
        else:
            (i0, a0), (i1, a1) = loc
            n1 = self.shape[1]
            rows = np.tile(np.arange(m), 4)
            cols = np.concatenate([i0 * n1 + i1, (i0 + 1) * n1 + i1, i0 * n1 + i1 + 1, (i0 + 1) * n1 + i1 + 1])
            vals = np.concatenate([(1 - a0) * (1 - a1), a0 * (1 - a1), (1 - a0) * a1, a0 * a1])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(m, self.size))

    def gather(self, fields: np.ndarray, c: np.ndarray, z: np.ndarray, clamp: bool = False) -> np.ndarray:
        """Interpolate nodal ``fields`` (K, N, F) at states ``z`` in regimes ``c`` -> (m, F)."""
        loc = self.locate(z, clamp=clamp)
        c = np.ascontiguousarray(c, dtype=np.int64)
        if self.dim == 1:
            idx, a = loc[0]
            return _kernels.gather_1d(np.ascontiguousarray(fields), c, idx, a)
        (i0, a0), (i1, a1) = loc
        f = np.ascontiguousarray(fields.reshape(fields.shape[0], *self.shape, fields.shape[-1]))
        return _kernels.gather_2d(f, c, i0, a0, i1, a1)

    # nodal finite differences in physical coordinates ---------------------

    def nodal_gradient(self, v: np.ndarray) -> np.ndarray:
        """Gradient of nodal values (..., N) -> (..., N, dim)."""
        lead = v.shape[:-1]
        V = v.reshape(lead + self.shape)
        grads = []
        for k, ax in enumerate(self.axes):
            axis = len(lead) + k
            dv = np.gradient(V, ax.h, axis=axis, edge_order=1)
            J, _ = ax.jac(ax.z)
            shape = [1] * V.ndim
            shape[axis] = ax.n
            grads.append((dv / J.reshape(shape)).reshape(lead + (self.size,)))
        return np.stack(grads, axis=-1)

    def nodal_hessian(self, v: np.ndarray) -> np.ndarray:
        """Hessian of nodal values (..., N) -> (..., N, dim, dim); zero second
        derivative normal to each edge."""
        lead = v.shape[:-1]
        V = v.reshape(lead + self.shape)
        nd = len(lead)
        out = np.zeros(lead + self.shape + (self.dim, self.dim))
        firsts = []
        for k, ax in enumerate(self.axes):
            axis = nd + k
            firsts.append(np.gradient(V, ax.h, axis=axis, edge_order=1))
        for k, ax in enumerate(self.axes):
            axis = nd + k
            sl = [slice(None)] * V.ndim
            d2 = np.zeros_like(V)
            c_ = list(sl)
            c_[axis] = slice(1, -1)
            p_ = list(sl)
            p_[axis] = slice(2, None)
            m_ = list(sl)
            m_[axis] = slice(None, -2)
            d2[tuple(c_)] = (V[tuple(p_)] - 2 * V[tuple(c_)] + V[tuple(m_)]) / ax.h ** 2
            J, H = ax.jac(ax.z)
            shape = [1] * V.ndim
            shape[axis] = ax.n
            J = J.reshape(shape)
            H = H.reshape(shape)
            val = (d2 - firsts[k] * H / J) / J ** 2
            edge = [slice(None)] * V.ndim
            edge[axis] = [0, ax.n - 1]
            val[tuple(edge)] = 0.0
            out[..., k, k] = val
        if self.dim == 2:
            a0, a1 = self.axes
            mixed = np.gradient(firsts[0], a1.h, axis=nd + 1, edge_order=1)
            J0, _ = a0.jac(a0.z)
            J1, _ = a1.jac(a1.z)
            mixed = mixed / (J0[:, None] * J1[None, :])
            mixed[..., [0, -1], :] = 0.0
            mixed[..., :, [0, -1]] = 0.0
            out[..., 0, 1] = mixed
            out[..., 1, 0] = mixed
        return out.reshape(lead + (self.size, self.dim, self.dim))


# ---------------------------------------------------------------------------
# value functions
# ---------------------------------------------------------------------------

class AnalyticValue:
    """Value function from callables; missing derivatives by central differences.

    ``value(t, z, c) -> (m,)``, ``gradient -> (m, D)``, ``hessian -> (m, D, D)``.
    """

    def __init__(self, value: Callable, gradient: Optional[Callable] = None,
                 hessian: Optional[Callable] = None, step: float = 1e-5):
        self._v = value
        self._g = gradient
        self._h = hessian
        self.step = step

    def value(self, t, z, c):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.asarray(self._v(t, z, np.broadcast_to(c, z.shape[:1])), dtype=float)

    def gradient(self, t, z, c):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.broadcast_to(c, z.shape[:1])
        if self._g is not None:
            return np.asarray(self._g(t, z, c), dtype=float)
        D = z.shape[1]
        out = np.empty(z.shape)
        for k in range(D):
            h = self.step * np.maximum(1.0, np.abs(z[:, k]))
            e = np.zeros_like(z)
            e[:, k] = h
            out[:, k] = (self.value(t, z + e, c) - self.value(t, z - e, c)) / (2 * h)
        return out

    def hessian(self, t, z, c):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.broadcast_to(c, z.shape[:1])
        if self._h is not None:
            return np.asarray(self._h(t, z, c), dtype=float)
        D = z.shape[1]
        out = np.empty(z.shape + (D,))
        step = self.step ** 0.5 * 1e-1
        for k in range(D):
            h = step * np.maximum(1.0, np.abs(z[:, k]))
            e = np.zeros_like(z)
            e[:, k] = h
            out[:, :, k] = (self.gradient(t, z + e, c) - self.gradient(t, z - e, c)) / (2 * h[:, None])
        return 0.5 * (out + np.swapaxes(out, 1, 2))


@dataclass
class ValueField:
    """Ex-dividend value on a space-time grid.

    ``values`` has shape (L, K, N) over ascending ``times`` (L,) and the
    flattened grid nodes. Queries interpolate linearly in time and space.
    """

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    _grad: dict = field(default_factory=dict, repr=False)
    _hess: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def time_weights(self, t: float):
        """Bracketing levels and weight of the upper one."""
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise DomainEscape(f"time {t} outside [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 2) if len(ts) > 1 else 0
        if len(ts) == 1:
            return 0, 0, 0.0
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        if abs(w) < 1e-12:
            w = 0.0
        elif abs(w - 1) < 1e-12:
            w = 1.0
        return k, k + 1, float(min(max(w, 0.0), 1.0))

    def level_index(self, t: float) -> Optional[int]:
        k0, k1, w = self.time_weights(t)
        if w == 0.0:
            return k0
        if w == 1.0:
            return k1
        return None

    def _blend(self, getter, t):
        k0, k1, w = self.time_weights(t)
        if w == 0.0:
            return getter(k0)
        if w == 1.0:
            return getter(k1)
        return (1 - w) * getter(k0) + w * getter(k1)

    def nodal_gradient(self, level: int) -> np.ndarray:
        if level not in self._grad:
            self._grad[level] = self.grid.nodal_gradient(self.values[level])
        return self._grad[level]

    def nodal_hessian(self, level: int) -> np.ndarray:
        if level not in self._hess:
            self._hess[level] = self.grid.nodal_hessian(self.values[level])
        return self._hess[level]

    def value(self, t, z, c, clamp: bool = False):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.broadcast_to(np.asarray(c, dtype=np.int64), z.shape[:1])
        return self._blend(lambda k: self.grid.gather(self.values[k][..., None], c, z, clamp)[:, 0], t)

    def gradient(self, t, z, c, clamp: bool = False):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.broadcast_to(np.asarray(c, dtype=np.int64), z.shape[:1])
        return self._blend(lambda k: self.grid.gather(self.nodal_gradient(k), c, z, clamp), t)

    def hessian(self, t, z, c, clamp: bool = False):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.broadcast_to(np.asarray(c, dtype=np.int64), z.shape[:1])
        D = self.grid.dim

        def get(k):
            H = self.nodal_hessian(k)
            flat = H.reshape(H.shape[0], H.shape[1], D * D)
            return self.grid.gather(flat, c, z, clamp).reshape(-1, D, D)
        return self._blend(get, t)


def field_interpolate(v: ValueField, t: float, y, c) -> np.ndarray:
    """Value at (t, y, c); exact at nodes, DomainEscape past the band."""
    return v.value(t, y, c)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def apply_generator(model, v, u: float, z, c) -> np.ndarray:
    """The generator applied to ``v`` at states ``z`` (m, D) in regimes ``c``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), z.shape[:1]).copy()
    m = z.shape[0]
    v0 = v.value(u, z, c)
    grad = v.gradient(u, z, c)
    hess = v.hessian(u, z, c)
    out = np.einsum("md,md->m", grad, model.drift(u, z, c))
    sig = model.diffusion(u, z, c)
    a = np.matmul(sig, np.swapaxes(sig, 1, 2))
    out += 0.5 * np.einsum("mij,mij->m", a, hess)
    if model.levy is not None:
        F = model.jump_at_nodes(u, z, c)  # (m, q, D)
        q = F.shape[1]
        zs = (z[:, None, :] + F).reshape(m * q, -1)
        vs = v.value(u, zs, np.repeat(c, q)).reshape(m, q)
        integrand = vs - v0[:, None] - np.einsum("mqd,md->mq", F, grad)
        out += integrand @ model.levy.weights
    if model.K > 1:
        for i in range(model.K):
            sel = np.flatnonzero(c == i)
            if not sel.size:
                continue
            zi = z[sel]
            for j in range(model.K):
                if j == i:
                    continue
                lam = model.intensity(u, zi, i, j)
                rho = model.regime_jump(u, zi, i, j)
                vj = v.value(u, zi + rho, np.full(sel.size, j))
                out[sel] += lam * (vj - v0[sel] - np.einsum("md,md->m", rho, grad[sel]))
    return out


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _local_operator(model, grid: SpatialGrid, u: float, c: int):
    """Sparse implicit operator (drift, diffusion, killing) for one regime."""
    Z = grid.points()
    N = grid.size
    cc = np.full(N, c, dtype=np.int64)
    lam = model.intensity_matrix(u, Z, cc) if model.K > 1 else None
    b = model.effective_drift(u, Z, cc, lam)
    sig = model.diffusion(u, Z, cc)
    a = np.matmul(sig, np.swapaxes(sig, 1, 2))
    react = model.short_rate(u, Z, cc) + model.jump_mass
    if lam is not None:
        react = react + lam.sum(axis=1)
    shape = grid.shape
    multi = np.array(np.unravel_index(np.arange(N), shape)).T  # (N, dim)
    strides = [int(np.prod(shape[k + 1:])) for k in range(grid.dim)]
    rows, cols, vals = [], [], []
    diag = -react.astype(float).copy()
    idx = np.arange(N)
    for k, ax in enumerate(grid.axes):
        h = ax.h
        ik = multi[:, k]
        st = strides[k]
        zk = Z[:, k]
        J, H = ax.jac(zk)
        akk = a[:, k, k]
        inner = (ik > 0) & (ik < ax.n - 1)
        Dk = 0.5 * akk / J ** 2
        beta = b[:, k] / J - 0.5 * akk * H / J ** 3
        central = np.abs(beta) * h <= 2 * Dk
        lo = np.where(central, Dk / h ** 2 - beta / (2 * h), Dk / h ** 2 + np.maximum(-beta, 0) / h)
        up = np.where(central, Dk / h ** 2 + beta / (2 * h), Dk / h ** 2 + np.maximum(beta, 0) / h)
        dg = np.where(central, -2 * Dk / h ** 2, -2 * Dk / h ** 2 - np.abs(beta) / h)
        if grid.dim > 1:
            # advection-dominated nodes with room for a three-point one-sided stencil
            fwd = inner & ~central & (beta > 0) & (ik < ax.n - 2)
            bwd = inner & ~central & (beta < 0) & (ik > 1)
            for m, sgn in ((fwd, 1), (bwd, -1)):
                sel = np.flatnonzero(m)
                bs = beta[sel] / (2 * h)
                Ds = Dk[sel] / h ** 2
                rows += [sel, sel, sel]
                cols += [sel - sgn * st, sel + sgn * st, sel + 2 * sgn * st]
                vals += [Ds, Ds + sgn * 4 * bs, -sgn * bs]
                diag[sel] += -2 * Ds - sgn * 3 * bs
            inner = inner & ~fwd & ~bwd
        sel = np.flatnonzero(inner)
        rows += [sel, sel]
        cols += [sel - st, sel + st]
        vals += [lo[sel], up[sel]]
        diag[sel] += dg[sel]
        # edges: zero second derivative, inward one-sided drift
        bz = b[:, k] / J
        left = np.flatnonzero(ik == 0)
        right = np.flatnonzero(ik == ax.n - 1)
        rows += [left, right]
        cols += [left + st, right - st]
        vals += [bz[left] / h, -bz[right] / h]
        diag[left] -= bz[left] / h
        diag[right] += bz[right] / h
    if grid.dim == 2:
        a0, a1 = grid.axes
        J0, _ = a0.jac(Z[:, 0])
        J1, _ = a1.jac(Z[:, 1])
        coef = a[:, 0, 1] / (J0 * J1) / (4 * a0.h * a1.h)
        inner = (multi[:, 0] > 0) & (multi[:, 0] < a0.n - 1) & (multi[:, 1] > 0) & (multi[:, 1] < a1.n - 1)
        sel = np.flatnonzero(inner & (coef != 0))
        s0, s1 = strides
        for d0, d1, sgn in ((1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)):
            rows.append(sel)
            cols.append(sel + d0 * s0 + d1 * s1)
            vals.append(sgn * coef[sel])
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    L = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return L


def _nonlocal_operator(model, grid: SpatialGrid, u: float) -> sparse.csr_matrix:
    """Explicit (K N, K N) operator: Lévy shifts within a regime plus
    intensity-weighted shifted couplings between regimes."""
    Z = grid.points()
    N = grid.size
    K = model.K
    blocks = [[None] * K for _ in range(K)]
    for c in range(K):
        cc = np.full(N, c, dtype=np.int64)
        if model.levy is not None:
            F = model.jump_at_nodes(u, Z, cc)  # (N, q, D)
            q = F.shape[1]
            zs = (Z[:, None, :] + F).reshape(N * q, -1)
            try:
                I = grid.interpolation_matrix(zs)
            except DomainEscape as exc:
                raise DomainEscape(f"Lévy shift from a grid node: {exc}", point=exc.point, axis=exc.axis) from None
            w = np.tile(model.levy.weights, N)
            I = sparse.diags(w) @ I
            # sum the q rows of each node
            R = sparse.csr_matrix((np.ones(N * q), (np.repeat(np.arange(N), q), np.arange(N * q))), shape=(N, N * q))
            blocks[c][c] = R @ I
        for j in range(K):
            if j == c:
                continue
            lam = model.intensity(u, Z, c, j)
            live = lam > 0
            if not live.any():
                continue
            rho = model.regime_jump(u, Z, c, j)
            zs = Z + rho
            I = grid.interpolation_matrix(np.where(live[:, None], zs, Z))
            blocks[c][j] = sparse.diags(lam) @ I
    for c in range(K):
        for j in range(K):
            if blocks[c][j] is None:
                blocks[c][j] = sparse.csr_matrix((N, N))
    return sparse.bmat(blocks, format="csr")


class _ImplicitSolver:
    """Solves (I - theta dt L_c) x = rhs per regime; Thomas in 1-D, LU in 2-D."""

    def __init__(self, grid, Ls, theta, dt):
        self.grid = grid
        N = grid.size
        self.K = len(Ls)
        if grid.dim == 1:
            lo = np.zeros((self.K, N))
            dg = np.zeros((self.K, N))
            up = np.zeros((self.K, N))
            for c, L in enumerate(Ls):
                M = sparse.identity(N, format="csr") - theta * dt * L
                dg[c] = M.diagonal(0)
                lo[c, 1:] = M.diagonal(-1)
                up[c, :-1] = M.diagonal(1)
            self.tri = (lo, dg, up)
        else:
            self.lus = [splinalg.splu((sparse.identity(N, format="csc") - theta * dt * L).tocsc()) for L in Ls]

    def solve(self, rhs):
        """rhs (K, N) -> (K, N)."""
        if self.grid.dim == 1:
            lo, dg, up = self.tri
            return _kernels.thomas_batch(lo, dg, up, np.ascontiguousarray(rhs))
        return np.stack([lu.solve(rhs[c]) for c, lu in enumerate(self.lus)])


def solve_pide(model, dividend, grid: SpatialGrid, dt: float, theta: float = 0.5,
               rannacher: int = 2, store_every: int = 1, t0: float = 0.0) -> ValueField:
    """Solve backward from ``dividend.maturity`` to ``t0``.

    Returns a ValueField holding every ``store_every``-th level (the first
    and last levels are always kept).
    """
    if grid.dim != model.D:
        raise ValueError(f"grid has {grid.dim} axes, model state has {model.D} coordinates")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    T = float(dividend.maturity)
    n_steps = max(1, int(math.ceil((T - t0) / dt - 1e-9)))
    times = t0 + (T - t0) * np.arange(n_steps + 1) / n_steps
    times[-1] = T
    dt = (T - t0) / n_steps
    K = model.K
    N = grid.size
    Z = grid.points()

    def operators(u):
        Ls = [_local_operator(model, grid, u, c) for c in range(K)]
        E = _nonlocal_operator(model, grid, u)
        return Ls, E

    def source(u):
        return np.stack([dividend.source(u, Z, np.full(N, c, dtype=np.int64), model) for c in range(K)])

    Ls, E = operators(T)
    bound = float(np.max(np.abs(E).sum(axis=1))) if E.nnz else 0.0
    if bound * dt > 1.0:
        warnings.warn(f"explicit nonlocal bound x dt = {bound * dt:.3g} > 1", StabilityWarning, stacklevel=2)
    solvers = {}

    def solver(th, h):
        key = (th, h)
        if key not in solvers or not model.time_homogeneous:
            solvers[key] = _ImplicitSolver(grid, Ls, th, h)
        return solvers[key]

    V = np.stack([np.asarray(dividend.terminal(Z, np.full(N, c, dtype=np.int64)), dtype=float) for c in range(K)])
    if not np.all(np.isfinite(V)):
        raise SolverDiverged("terminal payoff is not finite on the grid", level=n_steps)
    stored_t = [T]
    stored_v = [V.copy()]

    def advance(V, u_new, u_old, th, h):
        LV = np.stack([Ls[c] @ V[c] for c in range(K)])
        EV = (E @ V.reshape(-1)).reshape(K, N)
        s = th * source(u_new) + (1 - th) * source(u_old) if th < 1 else source(u_new)
        rhs = V + (1 - th) * h * LV + h * EV + h * s
        return solver(th, h).solve(rhs)

    for k in range(n_steps, 0, -1):
        u_old, u_new = float(times[k]), float(times[k - 1])
        if not model.time_homogeneous:
            Ls, E = operators(u_new)
        if n_steps - k < rannacher:
            mid = 0.5 * (u_old + u_new)
            V = advance(V, mid, u_old, 1.0, 0.5 * dt)
            V = advance(V, u_new, mid, 1.0, 0.5 * dt)
        else:
            V = advance(V, u_new, u_old, theta, dt)
        if not np.all(np.isfinite(V)):
            raise SolverDiverged(f"non-finite value field at t={u_new:.6g}", level=k - 1)
        if (k - 1) % store_every == 0 or k - 1 == 0:
            stored_t.append(u_new)
            stored_v.append(V.copy())
    order = np.argsort(stored_t)
    meta = {"scheme": "imex-theta", "theta": theta, "rannacher": rannacher, "dt": dt,
            "n_steps": n_steps, "store_every": store_every, "grid": grid.spec()}
    return ValueField(grid, np.asarray(stored_t)[order], np.stack(stored_v)[order], meta)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def write_value_csv(v: ValueField, path: str):
    """Header lines ``# scheme:`` and ``# grid:`` then rows (t, z..., c, v)."""
    Z = v.grid.points()
    D = v.grid.dim
    with open(path, "w", newline="") as fh:
        meta = {k: val for k, val in v.meta.items() if k != "grid"}
        fh.write("# scheme: " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write("# grid: " + json.dumps(v.grid.spec(), sort_keys=True) + "\n")
        fh.write(",".join(["t"] + [f"z{k + 1}" for k in range(D)] + ["c", "v"]) + "\n")
        for li, t in enumerate(v.times):
            for c in range(v.K):
                for i in range(Z.shape[0]):
                    fh.write(",".join([repr(float(t))] + [repr(float(x)) for x in Z[i]] +
                                      [str(c + 1), repr(float(v.values[li, c, i]))]) + "\n")


def read_value_csv(path: str) -> ValueField:
    meta = {}
    spec = None
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# scheme: "):
            meta = json.loads(line[len("# scheme: "):])
        elif line.startswith("# grid: "):
            spec = json.loads(line[len("# grid: "):])
        elif line and not line.startswith("#"):
            body.append(line)
    if spec is None:
        raise ValueError("value CSV lacks a grid header")
    grid = SpatialGrid(tuple(Axis(**a) for a in spec))
    data = np.array([[float(x) for x in row.split(",")] for row in body[1:]])
    times = np.unique(data[:, 0])
    K = int(data[:, grid.dim + 1].max())
    vals = data[:, -1].reshape(len(times), K, grid.size)
    meta["grid"] = spec
    return ValueField(grid, times, vals, meta)
