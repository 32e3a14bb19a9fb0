"""Risk-minimizing hedge: Gram matrix, cross vector and minimum-norm solve.

All assembly runs on batches of states. For a value function ``v`` with
``value`` and ``gradient`` methods, at state z in regime i:

* Brownian loading       dv = sigma_Y^T grad v                  (r_W,)
* jump loading           jv(x) = v(z + F_Y(x), i) - v(z, i)     per Lévy node
* regime loading         gv_j = v(z + rho^{ij}, j) - v(z, i) + delta^{ij}

and the strategy solves G phi = A with

    G = a_SS + int F_S F_S^T nu + sum_j lambda^{ij} rho_S rho_S^T
    A = sigma_S dv + int F_S jv nu + sum_j lambda^{ij} rho_S gv_j.

Loadings here are undiscounted; the representation triple divides by B.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainEscape

TRUNCATION = 1e-12


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GramMatrix:
    diffusion: np.ndarray
    jump: np.ndarray
    regime: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        G = self.diffusion + self.jump + self.regime
        return 0.5 * (G + np.swapaxes(G, -1, -2))


def min_norm_solve(G, A, threshold: float = TRUNCATION):
    """Minimum-norm least-squares solution of G phi = A for symmetric PSD G.

    Works on a single system or a batch (..., d, d), (..., d). Eigenvalues at
    or below ``threshold`` times the largest are dropped. Returns
    (phi, residual, rank).
    """
    if isinstance(G, GramMatrix):
        G = G.matrix
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    single = G.ndim == 2
    if single:
        G = G[None]
        A = A[None]
    d = G.shape[-1]
    if d == 1:
        g = G[..., 0, 0]
        keep = g > 0
        phi = np.where(keep, A[..., 0] / np.where(keep, g, 1.0), 0.0)[..., None]
        rank = keep.astype(np.int64)
    else:
        G = 0.5 * (G + np.swapaxes(G, -1, -2))
        lam, V = np.linalg.eigh(G)
        top = lam[..., -1:]
        keep = (lam > threshold * top) & (top > 0)
        inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        coef = np.einsum("...ji,...j->...i", V, A) * inv
        phi = np.einsum("...ij,...j->...i", V, coef)
        rank = keep.sum(axis=-1)
    residual = np.linalg.norm(np.einsum("...ij,...j->...i", G, phi) - A, axis=-1)
    if single:
        return phi[0], float(residual[0]), int(rank[0])
    return phi, residual, rank


# ---------------------------------------------------------------------------
# batched assembly
# ---------------------------------------------------------------------------

@dataclass
class Loadings:
    """Per-state ingredients of the hedge for a batch of m states."""

    value: np.ndarray        # (m,)
    brownian: np.ndarray     # (m, r_W)
    jump: np.ndarray         # (m, q)
    regime: np.ndarray       # (m, K), zero in the active column
    sigma_S: np.ndarray      # (m, d, r_W)
    F_S: np.ndarray          # (m, q, d)
    rho_S: np.ndarray        # (m, K, d)
    lam: np.ndarray          # (m, K)
    G: GramMatrix
    A: np.ndarray            # (m, d)


def _gram_parts(model, u, z, c):
    m = z.shape[0]
    d = model.d
    sig = model.diffusion(u, z, c)
    sS = sig[:, :d, :]
    Gd = np.matmul(sS, np.swapaxes(sS, 1, 2))
    if model.levy is not None:
        F_S = model.jump_at_nodes(u, z, c)[:, :, :d]
        w = model.levy.weights
        Gj = np.einsum("mqi,mqj,q->mij", F_S, F_S, w)
    else:
        F_S = np.zeros((m, 0, d))
        Gj = np.zeros((m, d, d))
    if model.K > 1:
        lam = model.intensity_matrix(u, z, c)
        rho_S = model.regime_jump_all(u, z, c)[:, :, :d]
        Gr = np.einsum("mki,mkj,mk->mij", rho_S, rho_S, lam)
    else:
        lam = np.zeros((m, 1))
        rho_S = np.zeros((m, 1, d))
        Gr = np.zeros((m, d, d))
    return sig, sS, F_S, rho_S, lam, GramMatrix(Gd, Gj, Gr)


def assemble(model, dividend, v, u: float, z, c, clamp: bool = False) -> Loadings:
    """Loadings, Gram matrix and cross vector at states ``z`` (m, D), regimes ``c``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    m = z.shape[0]
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (m,)).copy()
    kw = {"clamp": True} if clamp else {}
    sig, sS, F_S, rho_S, lam, G = _gram_parts(model, u, z, c)
    v0 = v.value(u, z, c, **kw)
    grad = v.gradient(u, z, c, **kw)
    dv = np.einsum("mdr,md->mr", sig, grad)
    A = np.einsum("mdr,mr->md", sS, dv)
    if model.levy is not None:
        F = model.jump_at_nodes(u, z, c)
        q = F.shape[1]
        zs = (z[:, None, :] + F).reshape(m * q, -1)
        try:
            vs = v.value(u, zs, np.repeat(c, q), **kw).reshape(m, q)
        except DomainEscape as exc:
            raise DomainEscape(f"Lévy shift leaves the value domain: {exc}", exc.point, exc.axis) from None
        jv = vs - v0[:, None]
        A = A + np.einsum("mqd,mq,q->md", F_S, jv, model.levy.weights)
    else:
        jv = np.zeros((m, 0))
    gv = np.zeros((m, model.K))
    if model.K > 1:
        rho = model.regime_jump_all(u, z, c)
        for i in range(model.K):
            sel = np.flatnonzero(c == i)
            if not sel.size:
                continue
            for j in range(model.K):
                if j == i:
                    continue
                zj = z[sel] + rho[sel, j]
                try:
                    vj = v.value(u, zj, np.full(sel.size, j), **kw)
                except DomainEscape as exc:
                    raise DomainEscape(f"regime shift {i + 1}->{j + 1} leaves the value domain: {exc}",
                                       exc.point, exc.axis) from None
                gv[sel, j] = vj - v0[sel] + dividend.transition(u, z[sel], i, j)
        A = A + np.einsum("mkd,mk,mk->md", rho_S, gv, lam)
    return Loadings(v0, dv, jv, gv, sS, F_S, rho_S, lam, G, A)


# ---------------------------------------------------------------------------
# single-point API
# ---------------------------------------------------------------------------

def _point(z):
    return np.asarray(z, dtype=float).reshape(1, -1)


def gram_matrix(model, u: float, z, i: int) -> GramMatrix:
    """Gram matrix at one state; ``i`` is a 0-based regime."""
    *_, G = _gram_parts(model, u, _point(z), np.array([i], dtype=np.int64))
    return GramMatrix(G.diffusion[0], G.jump[0], G.regime[0])


def cross_vector(model, dividend, v, u: float, z, i: int) -> np.ndarray:
    return assemble(model, dividend, v, u, _point(z), i).A[0]


@dataclass(frozen=True)
class RepresentationTriple:
    """Discounted loadings on W, on the jump measure and on each M^{i,j}."""

    delta: np.ndarray
    jump_nodes: np.ndarray
    gamma: np.ndarray
    regime: int
    _jump_fn: Optional[object] = field(default=None, repr=False, compare=False)

    def jump(self, x) -> np.ndarray:
        """Jump loading at marks ``x`` (q, n)."""
        if self._jump_fn is None:
            raise ValueError("no jump loading available off the quadrature nodes")
        return self._jump_fn(np.atleast_2d(np.asarray(x, dtype=float)))


def representation_triple(model, dividend, v, u: float, z, i: int, bank: float = 1.0) -> RepresentationTriple:
    L = assemble(model, dividend, v, u, _point(z), i)
    zz = _point(z)

    def jump_fn(x):
        F = model.jump(u, zz, np.array([i]), x[None])[0]
        vs = v.value(u, zz + F, np.full(F.shape[0], i))
        return (vs - L.value[0]) / bank

    gamma = L.regime[0] / bank
    return RepresentationTriple(L.brownian[0] / bank, L.jump[0] / bank, gamma, i,
                                jump_fn if model.levy is not None else None)


def semimartingale_adjust(sd, hat: RepresentationTriple, bank: float, u: float = 0.0, z=None,
                          levy_nodes=None) -> RepresentationTriple:
    """Add the dividend's own martingale loadings, divided by the bank account.

    ``sd.brownian``, ``sd.jump`` and ``sd.transition`` are evaluated at (u, z)
    in the triple's regime; ``levy_nodes`` (q, n) updates the tabulated jump
    loading.
    """
    zz = _point(z) if z is not None else np.zeros((1, 1))
    i = hat.regime
    ci = np.array([i], dtype=np.int64)
    delta = hat.delta + np.asarray(sd.brownian(u, zz, ci), dtype=float)[0] / bank

    def own_jump(x):
        return np.asarray(sd.jump(u, zz, ci, x[None]), dtype=float)[0] / bank

    jump_nodes = hat.jump_nodes
    if levy_nodes is not None and jump_nodes.size:
        jump_nodes = jump_nodes + own_jump(np.atleast_2d(levy_nodes))
    gamma = hat.gamma.copy()
    for j in range(gamma.shape[0]):
        if j != i:
            gamma[j] += float(np.asarray(sd.transition(u, zz, i, j))[0]) / bank
    hat_fn = hat._jump_fn

    def jump_fn(x):
        base = hat_fn(x) if hat_fn is not None else np.zeros(x.shape[0])
        return base + own_jump(x)

    return RepresentationTriple(delta, jump_nodes, gamma, i, jump_fn)


# ---------------------------------------------------------------------------
# hedge fields
# ---------------------------------------------------------------------------

@dataclass
class HedgeSample:
    """Hedge quantities at a batch of path states."""

    phi: np.ndarray          # (m, d)
    mismatch_W: np.ndarray   # (m, r_W): dv - sigma_S^T phi
    jump_comp: np.ndarray    # (m,): int (jv - phi.F_S) nu
    jump_risk: np.ndarray    # (m,): int (jv - phi.F_S)^2 nu
    mismatch_C: np.ndarray   # (m, K): gv_j - phi.rho_S
    value: np.ndarray        # (m,)


def _sample_from(L: Loadings, phi, weights) -> HedgeSample:
    w = L.brownian - np.einsum("mdr,md->mr", L.sigma_S, phi)
    if L.jump.shape[1]:
        e = L.jump - np.einsum("mqd,md->mq", L.F_S, phi)
        jc = e @ weights
        jr = (e * e) @ weights
    else:
        jc = np.zeros(phi.shape[0])
        jr = np.zeros(phi.shape[0])
    mc = L.regime - np.einsum("mkd,md->mk", L.rho_S, phi)
    return HedgeSample(phi, w, jc, jr, mc, L.value)


# packed field layout: phi(d) | w(r_W) | jump_comp | jump_risk | mismatch(K) | value
def _pack(s: HedgeSample) -> np.ndarray:
    return np.concatenate([s.phi, s.mismatch_W, s.jump_comp[:, None], s.jump_risk[:, None],
                           s.mismatch_C, s.value[:, None]], axis=1)


def _unpack(a: np.ndarray, d: int, rW: int, K: int) -> HedgeSample:
    o = 0
    phi = a[:, o:o + d]; o += d
    w = a[:, o:o + rW]; o += rW
    jc = a[:, o]; o += 1
    jr = a[:, o]; o += 1
    mc = a[:, o:o + K]; o += K
    return HedgeSample(phi, w, jc, jr, mc, a[:, o])


@dataclass
class HedgeField:
    """Strategy and risk ingredients on the value field's grid and levels.

    ``phi`` (L, K, N, d); ``eta`` (L, K, N) is v 1{t<T} - phi.s, to be divided
    by the bank account; ``rank`` and ``residual`` report the solve.
    """

    model: object
    value_field: object
    times: np.ndarray
    packed: np.ndarray       # (L, K, N, F)
    eta: np.ndarray
    rank: np.ndarray
    residual: np.ndarray
    escapes: int = 0
    zero_achieving = True

    @property
    def grid(self):
        return self.value_field.grid

    @property
    def phi(self) -> np.ndarray:
        return self.packed[..., :self.model.d]

    def _blend(self, t, getter):
        k0, k1, w = self.value_field.time_weights(t)
        if w == 0.0:
            return getter(k0)
        if w == 1.0:
            return getter(k1)
        return (1 - w) * getter(k0) + w * getter(k1)

    def count_escapes(self, z) -> int:
        n = 0
        for k, ax in enumerate(self.grid.axes):
            xi = ax.to_xi(z[:, k])
            lo, hi = ax.band()
            n += int(np.count_nonzero(~((xi >= lo) & (xi <= hi))))
        return n

    def sample(self, t: float, z, c, clamp: bool = True) -> HedgeSample:
        """Hedge quantities at path states; with ``clamp`` states past the
        extrapolation band are pulled back to it and counted in ``escapes``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.asarray(c, dtype=np.int64)
        if clamp:
            self.escapes += self.count_escapes(z)
        a = self._blend(t, lambda k: self.grid.gather(self.packed[k], c, z, clamp))
        m = self.model
        return _unpack(a, m.d, m.r_W, m.K)

    def value(self, t: float, z, c, clamp: bool = True) -> np.ndarray:
        return self.value_field.value(t, z, c, clamp=clamp)

    def to_csv(self, path: str, bank: Optional[np.ndarray] = None):
        """Rows (t, y..., c, phi..., eta, rank, residual); ``bank`` (L,) divides eta."""
        grid = self.grid
        Z = grid.points()
        d = self.model.d
        with open(path, "w", newline="") as fh:
            fh.write(",".join(["t"] + [f"y{k + 1}" for k in range(grid.dim)] + ["c"] +
                              [f"phi{k + 1}" for k in range(d)] + ["eta", "rank", "residual"]) + "\n")
            for li, t in enumerate(self.times):
                b = 1.0 if bank is None else float(bank[li])
                for ci in range(self.packed.shape[1]):
                    phi = self.packed[li, ci, :, :d]
                    for n in range(Z.shape[0]):
                        fh.write(",".join([repr(float(t))] + [repr(float(x)) for x in Z[n]] + [str(ci + 1)] +
                                          [repr(float(x)) for x in phi[n]] +
                                          [repr(float(self.eta[li, ci, n] / b)), str(int(self.rank[li, ci, n])),
                                           repr(float(self.residual[li, ci, n]))]) + "\n")


def hedge_field(model, dividend, v, threshold: float = TRUNCATION) -> HedgeField:
    """Solve for the strategy at every node of every stored level of ``v``.

    At the final level the strategy is the left limit, i.e. the values of the
    previous level; the claim's value there is already paid out.
    """
    grid = v.grid
    Z = grid.points()
    N = Z.shape[0]
    K = model.K
    L_ = len(v.times)
    d = model.d
    weights = model.levy.weights if model.levy is not None else None
    F = d + model.r_W + 3 + K
    packed = np.zeros((L_, K, N, F))
    eta = np.zeros((L_, K, N))
    rank = np.zeros((L_, K, N), dtype=np.int64)
    resid = np.zeros((L_, K, N))
    T = float(v.times[-1])
    for li, t in enumerate(v.times):
        t = float(t)
        for ci in range(K):
            cc = np.full(N, ci, dtype=np.int64)
            L = assemble(model, dividend, v, t, Z, cc)
            if li == L_ - 1 and L_ > 1:
                phi = packed[li - 1, ci, :, :d].copy()
                res = resid[li - 1, ci]
                rk = rank[li - 1, ci]
            else:
                phi, res, rk = min_norm_solve(L.G.matrix, L.A, threshold)
            s = _sample_from(L, phi, weights)
            packed[li, ci] = _pack(s)
            rank[li, ci] = rk
            resid[li, ci] = res
            alive = 1.0 if t < T else 0.0
            eta[li, ci] = L.value * alive - np.einsum("nd,nd->n", phi, Z[:, :d])
    return HedgeField(model, v, np.asarray(v.times), packed, eta, rank, resid)


class PointwiseHedge:
    """Hedge evaluated directly at path states from an analytic value function."""

    zero_achieving = True

    def __init__(self, model, dividend, v, maturity: float):
        self.model = model
        self.dividend = dividend
        self.v = v
        self.T = maturity
        self.escapes = 0

    def sample(self, t: float, z, c, clamp: bool = True) -> HedgeSample:
        L = assemble(self.model, self.dividend, self.v, t, z, c)
        phi, _, _ = min_norm_solve(L.G.matrix, L.A)
        w = self.model.levy.weights if self.model.levy is not None else None
        return _sample_from(L, phi, w)

    def value(self, t: float, z, c, clamp: bool = True) -> np.ndarray:
        return self.v.value(t, z, c)


# ---------------------------------------------------------------------------
# attainability
# ---------------------------------------------------------------------------

@dataclass
class AttainabilityReport:
    attainable: str            # "yes", "no" or "indeterminate"
    required_rank: int
    reason: str
    table: list

    def to_dict(self) -> dict:
        return {"attainable": self.attainable, "required_rank": self.required_rank,
                "reason": self.reason, "table": self.table}


def attainability_check(model, plan, tol: float = 1e-10) -> AttainabilityReport:
    """Rank of [sigma_S | F_S(x_1..x_q) | rho_S^{ij}, j != i] at every probe.

    ``plan`` is a SamplePlan; "yes" means full rank n + q + K - 1 at all probes.
    """
    levy = model.levy
    if levy is not None and not getattr(levy, "is_finite_support", False):
        return AttainabilityReport("indeterminate", -1, "jump measure without finite support", [])
    q = 0 if levy is None else levy.nodes.shape[0]
    need = model.r_W + q + model.K - 1
    d = model.d
    table = []
    full = True
    for u, z, c in plan.expand(model.K):
        sig, sS, F_S, rho_S, lam, _ = _gram_parts(model, u, z, c)
        for k in range(z.shape[0]):
            cols = [sS[k]]
            if q:
                cols.append(F_S[k].T)
            if model.K > 1:
                cols.append(np.delete(rho_S[k], c[k], axis=0).T)
            L = np.concatenate(cols, axis=1) if cols else np.zeros((d, 0))
            if L.size:
                sv = np.linalg.svd(L, compute_uv=False)
                rk = int(np.sum(sv > tol * max(sv[0], 1e-300))) if sv[0] > 0 else 0
            else:
                rk = 0
            full &= rk == need
            table.append({"t": float(u), "z": z[k].tolist(), "regime": int(c[k]) + 1, "rank": rk})
    if d < need:
        return AttainabilityReport("no", need, f"necessity fails: d={d} < n+q+K-1={need}", table)
    if full:
        return AttainabilityReport("yes", need, "full rank at every probe", table)
    return AttainabilityReport("no", need, "rank deficient at some probe", table)
