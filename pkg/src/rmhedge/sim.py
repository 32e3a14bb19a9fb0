"""Euler-Maruyama simulation of the state, regime and bank account.

Paths are simulated in fixed-size chunks. Chunk ``k`` draws all its random
numbers from a Philox stream keyed by ``(seed, k)`` and always draws them for
the full chunk, so path ``i`` depends only on ``(seed, i, chunk_size)`` and
never on how many paths or workers are used.

Within a step ``[t_n, t_{n+1}]`` the scheme is:

* continuous part with coefficients frozen at the left state, drift reduced
  by the Lévy compensator and by ``sum_j lambda^{c,j} rho^{c,j}``;
* Lévy jumps: Poisson count with mean ``nu(R^n) dt``, marks from the
  normalised measure, loadings at the left state, times strictly inside the
  step;
* at most one regime transition, with probability ``lambda^{c,j} dt`` per
  channel (left-state intensities); it is stamped at ``t_{n+1}`` and moves
  the state by ``rho^{c,j}`` evaluated at the pre-transition value;
* ``log B`` accumulates ``r dt`` at the left endpoint.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import PathBlowup, StepTooCoarse

DEFAULT_CHUNK = 8192


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("time grid needs t0 < T")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("time grid needs a positive integer step count")

    @classmethod
    def from_step(cls, t0: float, T: float, dt: float) -> "TimeGrid":
        return cls(t0, T, max(1, int(math.ceil((T - t0) / dt - 1e-9))))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        t = self.t0 + (self.T - self.t0) * np.arange(self.n_steps + 1) / self.n_steps
        t[-1] = self.T
        return t


@dataclass
class StepInfo:
    """Everything an observer may need about one step of one chunk.

    Arrays cover the ``m`` valid rows of the chunk. Jump arrays list every
    Lévy jump of the step: row index, mark, time and the applied increment.
    ``dest`` is -1 where no transition occurred.
    """

    n: int
    t: float
    dt: float
    y: np.ndarray
    c: np.ndarray
    log_b: np.ndarray
    y_next: np.ndarray
    c_next: np.ndarray
    log_b_next: np.ndarray
    dW: np.ndarray
    jump_rows: np.ndarray
    jump_marks: np.ndarray
    jump_times: np.ndarray
    dest: np.ndarray
    intensity: Optional[np.ndarray]
    rate: np.ndarray
    path_offset: int = 0


class Observer:
    """Per-chunk accumulator; subclasses override the hooks they need."""

    def start(self, m: int, grid: TimeGrid, y0: np.ndarray, c0: np.ndarray):
        pass

    def step(self, info: StepInfo):
        pass

    def finish(self):
        return None


def _poisson_cdf(mean: float) -> np.ndarray:
    """CDF table of Poisson(mean) up to where it reaches 1 in double precision."""
    if mean <= 0:
        return np.array([1.0])
    k_max = int(mean + 12 * math.sqrt(mean) + 20)
    k = np.arange(k_max + 1)
    logp = -mean + k * math.log(mean) - np.array([math.lgamma(i + 1) for i in k])
    cdf = np.cumsum(np.exp(logp))
    cdf[-1] = max(cdf[-1], 1.0)
    return cdf


def _rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk)])))


def _check_finite(y, log_b, offset, t):
    bad = ~(np.isfinite(y).all(axis=1) & np.isfinite(log_b))
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise PathBlowup(f"non-finite state on path {offset + k} at t={t:.6g}", path_index=offset + k, time=t)


def _run_chunk(model, y0, c0, grid: TimeGrid, seed: int, chunk: int, chunk_size: int, m: int,
               observers, antithetic: bool = False):
    """Simulate ``m`` valid rows of chunk ``chunk``; feed every observer."""
    rng = _rng(seed, chunk)
    D = model.D
    rW = model.r_W
    K = model.K
    dt = grid.dt
    sqdt = math.sqrt(dt)
    times = grid.nodes
    y = np.array(np.broadcast_to(np.asarray(y0, dtype=float), (m, D)))
    c = np.array(np.broadcast_to(np.asarray(c0, dtype=np.int64), (m,)))
    log_b = np.zeros(m)
    offset = chunk * chunk_size
    levy = model.levy
    jump_cdf = _poisson_cdf(model.jump_mass * dt) if levy is not None else None
    empty_i = np.empty(0, dtype=np.int64)
    empty_f = np.empty((0, model.n))
    for ob in observers:
        ob.start(m, grid, y.copy(), c.copy())
    half = (chunk_size + 1) // 2
    warned = False

    for n in range(grid.n_steps):
        t = float(times[n])
        t1 = float(times[n + 1])
        # random draws, always full chunk
        if rW:
            if antithetic:
                g = rng.standard_normal((half, rW))
                dW_full = np.concatenate([g, -g])[:chunk_size] * sqdt
            else:
                dW_full = rng.standard_normal((chunk_size, rW)) * sqdt
            dW = dW_full[:m]
        else:
            dW = np.zeros((m, 0))
        if levy is not None:
            counts_full = _kernels.poisson_counts(rng.random(chunk_size), jump_cdf)
            total = int(counts_full.sum())
            marks_full = levy.sample(rng, total)
            u_times = rng.random(total)
            n_valid = int(counts_full[:m].sum())
            counts = counts_full[:m]
            jump_rows = np.repeat(np.arange(m), counts)
            marks = marks_full[:n_valid]
            jt = t + dt * u_times[:n_valid]
            lo_t = np.nextafter(t, np.inf)
            hi_t = np.nextafter(t1, -np.inf)
            jt = np.minimum(np.maximum(jt, lo_t), hi_t)
        else:
            jump_rows, marks, jt = empty_i, empty_f, np.empty(0)
        u_trans = rng.random(chunk_size)[:m] if K > 1 else None

        rate = model.short_rate(t, y, c)
        lam = model.intensity_matrix(t, y, c) if K > 1 else None
        dy = model.effective_drift(t, y, c, lam) * dt
        if rW:
            sig = model.diffusion(t, y, c)
            if rW == 1:
                dy += sig[:, :, 0] * dW
            else:
                dy += np.matmul(sig, dW[:, :, None])[:, :, 0]
        if jump_rows.size:
            F = model.jump(t, y[jump_rows], c[jump_rows], marks[:, None, :])[:, 0, :]
            np.add.at(dy, jump_rows, F)
        y_new = y + dy
        c_new = c.copy()
        dest = np.full(m, -1, dtype=np.int64)
        if K > 1:
            cum = lam * dt
            for k in range(1, K):
                cum[:, k] += cum[:, k - 1]
            tot = cum[:, -1]
            if not warned and tot.size and float(tot.max()) + model.jump_mass * dt > 0.5:
                warnings.warn(f"total intensity x step = {float(tot.max()) + model.jump_mass * dt:.3g} > 0.5",
                              StepTooCoarse, stacklevel=3)
                warned = True
            fire = u_trans < tot
            if fire.any():
                rows = np.flatnonzero(fire)
                j = np.argmax(u_trans[rows, None] < cum[rows], axis=1)
                dest[rows] = j
                for i in range(K):
                    for jj in range(K):
                        if i == jj:
                            continue
                        sel = rows[(c[rows] == i) & (j == jj)]
                        if sel.size:
                            y_new[sel] += model.regime_jump(t1, y_new[sel], i, jj)
                            c_new[sel] = jj
        log_b_new = log_b + rate * dt
        _check_finite(y_new, log_b_new, offset, t1)
        if observers:
            info = StepInfo(n, t, dt, y, c, log_b, y_new, c_new, log_b_new, dW, jump_rows, marks, jt,
                            dest, lam, rate, offset)
            for ob in observers:
                ob.step(info)
        y, c, log_b = y_new, c_new, log_b_new
    return [ob.finish() for ob in observers]


def _warn_coarse(model, dt):
    bound = model.intensity_bound * max(model.K - 1, 0) + model.jump_mass
    if bound * dt > 0.5:
        warnings.warn(f"declared intensity bound x step = {bound * dt:.3g} > 0.5", StepTooCoarse, stacklevel=3)


def run_paths(model, y0, c0, grid: TimeGrid, n_paths: int, seed: int,
              observer_factory: Callable[[], list], chunk_size: int = DEFAULT_CHUNK,
              workers: int = 1, antithetic: bool = False) -> list:
    """Stream ``n_paths`` paths through fresh observers per chunk.

    Returns, in chunk order, the list of ``finish()`` results of each chunk's
    observers.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if antithetic and chunk_size % 2:
        raise ValueError("antithetic sampling needs an even chunk size")
    _warn_coarse(model, grid.dt)
    n_chunks = (n_paths + chunk_size - 1) // chunk_size

    def work(k):
        m = min(chunk_size, n_paths - k * chunk_size)
        return _run_chunk(model, y0, c0, grid, seed, k, chunk_size, m, observer_factory(), antithetic)

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, range(n_chunks)))
    return [work(k) for k in range(n_chunks)]


# ---------------------------------------------------------------------------
# stored ensembles
# ---------------------------------------------------------------------------

@dataclass
class PathEnsemble:
    """Stored trajectories.

    ``Y`` (P, R, D), ``C`` (P, R) 0-based, ``log_B`` (P, R) at the recorded
    times ``times`` (R,). With ``record_every == 1`` and ``dW`` present the
    ensemble can be replayed exactly. Jump log: ``jump_path``, ``jump_step``,
    ``jump_time``, ``jump_mark``. Transition log: ``trans_path``,
    ``trans_step``, ``trans_time``, ``trans_from``, ``trans_to`` (0-based).
    ``compensator`` (P, K, K) holds ``int 1{C=i} lambda^{i,j} du`` at the end.
    """

    model: object
    grid: TimeGrid
    seed: int
    record_every: int
    times: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    log_B: np.ndarray
    compensator: np.ndarray
    jump_path: np.ndarray
    jump_step: np.ndarray
    jump_time: np.ndarray
    jump_mark: np.ndarray
    trans_path: np.ndarray
    trans_step: np.ndarray
    trans_time: np.ndarray
    trans_from: np.ndarray
    trans_to: np.ndarray
    dW: Optional[np.ndarray] = None
    chunk_size: int = DEFAULT_CHUNK

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def B(self) -> np.ndarray:
        return np.exp(self.log_B)

    def path_seed(self, i: int) -> tuple:
        """Counter key of path ``i``: (master seed, chunk, row in chunk)."""
        return (self.seed, i // self.chunk_size, i % self.chunk_size)

    @property
    def replayable(self) -> bool:
        return self.record_every == 1 and self.dW is not None


class _Recorder(Observer):
    def __init__(self, K, record_every, store_noise):
        self.K = K
        self.every = record_every
        self.store_noise = store_noise

    def start(self, m, grid, y0, c0):
        self.ys = [y0]
        self.cs = [c0]
        self.bs = [np.zeros(m)]
        self.comp = np.zeros((m, self.K, self.K))
        self.jumps = []
        self.trans = []
        self.dws = []
        self.times = grid.nodes

    def step(self, info):
        if info.intensity is not None:
            self.comp[np.arange(info.c.size), info.c, :] += info.intensity * info.dt
        if info.jump_rows.size:
            self.jumps.append((info.jump_rows + info.path_offset, np.full(info.jump_rows.size, info.n),
                               info.jump_times, info.jump_marks))
        fired = np.flatnonzero(info.dest >= 0)
        if fired.size:
            self.trans.append((fired + info.path_offset, np.full(fired.size, info.n),
                               np.full(fired.size, float(self.times[info.n + 1])), info.c[fired], info.dest[fired]))
        if self.store_noise:
            self.dws.append(info.dW.copy())
        if (info.n + 1) % self.every == 0 or info.n + 1 == len(self.times) - 1:
            self.ys.append(info.y_next)
            self.cs.append(info.c_next)
            self.bs.append(info.log_b_next)

    def finish(self):
        return self


def _cat(parts, idx, empty):
    return np.concatenate([p[idx] for p in parts]) if parts else empty


def simulate_paths(model, y0, c0, grid: TimeGrid, n_paths: int, seed: int, record_every: int = 1,
                   store_noise: bool = True, chunk_size: int = DEFAULT_CHUNK, workers: int = 1,
                   antithetic: bool = False) -> PathEnsemble:
    """Simulate and store ``n_paths`` trajectories started at ``(y0, c0)`` at ``grid.t0``.

    ``c0`` is a 0-based regime index.
    """
    if not 0 <= int(c0) < model.K:
        raise ValueError(f"initial regime {c0} outside 0..{model.K - 1}")
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if y0.shape[0] != model.D:
        raise ValueError(f"initial state must have {model.D} coordinates")
    recs = run_paths(model, y0, c0, grid, n_paths, seed,
                     lambda: [_Recorder(model.K, record_every, store_noise)],
                     chunk_size=chunk_size, workers=workers, antithetic=antithetic)
    recs = [r[0] for r in recs]
    nodes = grid.nodes
    rec_idx = [0] + [n + 1 for n in range(grid.n_steps)
                     if (n + 1) % record_every == 0 or n + 1 == grid.n_steps]
    Y = np.concatenate([np.stack(r.ys, axis=1) for r in recs])
    C = np.concatenate([np.stack(r.cs, axis=1) for r in recs])
    LB = np.concatenate([np.stack(r.bs, axis=1) for r in recs])
    comp = np.concatenate([r.comp for r in recs])
    jumps = [j for r in recs for j in r.jumps]
    trans = [t for r in recs for t in r.trans]
    dW = None
    if store_noise:
        dW = np.concatenate([np.stack(r.dws, axis=1) if r.dws else np.zeros((r.comp.shape[0], 0, model.r_W))
                             for r in recs])
    ei = np.empty(0, dtype=np.int64)
    ef = np.empty(0)
    return PathEnsemble(
        model=model, grid=grid, seed=seed, record_every=record_every, times=nodes[rec_idx],
        Y=Y, C=C, log_B=LB, compensator=comp,
        jump_path=_cat(jumps, 0, ei), jump_step=_cat(jumps, 1, ei), jump_time=_cat(jumps, 2, ef),
        jump_mark=_cat(jumps, 3, np.empty((0, model.n))),
        trans_path=_cat(trans, 0, ei), trans_step=_cat(trans, 1, ei), trans_time=_cat(trans, 2, ef),
        trans_from=_cat(trans, 3, ei), trans_to=_cat(trans, 4, ei),
        dW=dW, chunk_size=chunk_size)


def replay(ensemble: PathEnsemble, observer_factory: Callable[[], list]) -> list:
    """Feed a stored ensemble through fresh observers per chunk.

    Chunks match the ones used to simulate, so per-path arithmetic in the
    observers sees exactly the arrays it would have seen while streaming.
    Returns the ``finish()`` results per chunk, like :func:`run_paths`.
    """
    if not ensemble.replayable:
        raise ValueError("ensemble was not recorded at every step with its noise")
    model = ensemble.model
    grid = ensemble.grid
    P = ensemble.n_paths
    cs = ensemble.chunk_size
    nodes = grid.nodes
    jorder = np.lexsort((ensemble.jump_path, ensemble.jump_step))
    jstep = ensemble.jump_step[jorder]
    bounds = np.searchsorted(jstep, np.arange(grid.n_steps + 1))
    torder = np.argsort(ensemble.trans_step, kind="stable")
    tstep = ensemble.trans_step[torder]
    tbounds = np.searchsorted(tstep, np.arange(grid.n_steps + 1))
    out = []
    for k in range((P + cs - 1) // cs):
        lo, hi = k * cs, min(P, (k + 1) * cs)
        m = hi - lo
        Y = np.ascontiguousarray(ensemble.Y[lo:hi])
        C = np.ascontiguousarray(ensemble.C[lo:hi])
        LB = np.ascontiguousarray(ensemble.log_B[lo:hi])
        observers = observer_factory()
        for ob in observers:
            ob.start(m, grid, Y[:, 0].copy(), C[:, 0].copy())
        for n in range(grid.n_steps):
            t = float(nodes[n])
            y = Y[:, n].copy()
            c = C[:, n].copy()
            sl = jorder[bounds[n]:bounds[n + 1]]
            sl = sl[(ensemble.jump_path[sl] >= lo) & (ensemble.jump_path[sl] < hi)]
            dest = np.full(m, -1, dtype=np.int64)
            ts = torder[tbounds[n]:tbounds[n + 1]]
            ts = ts[(ensemble.trans_path[ts] >= lo) & (ensemble.trans_path[ts] < hi)]
            dest[ensemble.trans_path[ts] - lo] = ensemble.trans_to[ts]
            lam = model.intensity_matrix(t, y, c) if model.K > 1 else None
            info = StepInfo(n, t, grid.dt, y, c, LB[:, n].copy(), Y[:, n + 1].copy(), C[:, n + 1].copy(),
                            LB[:, n + 1].copy(), np.ascontiguousarray(ensemble.dW[lo:hi, n]),
                            ensemble.jump_path[sl] - lo, ensemble.jump_mark[sl], ensemble.jump_time[sl],
                            dest, lam, model.short_rate(t, y, c), lo)
            for ob in observers:
                ob.step(info)
        out.append([ob.finish() for ob in observers])
    return out


# ---------------------------------------------------------------------------
# derived trajectories and diagnostics
# ---------------------------------------------------------------------------

def bank_account(model, ensemble: PathEnsemble, path: Optional[int] = None) -> np.ndarray:
    """B at recorded times: exp of the left-endpoint sum of the short rate.

    Recomputed from the stored states (requires ``record_every == 1``);
    equals ``exp(ensemble.log_B)``.
    """
    if ensemble.record_every != 1:
        return ensemble.B if path is None else ensemble.B[path]
    rows = slice(None) if path is None else slice(path, path + 1)
    Y = ensemble.Y[rows]
    C = ensemble.C[rows]
    dt = ensemble.grid.dt
    nodes = ensemble.grid.nodes
    lb = np.zeros(Y.shape[:2])
    for n in range(ensemble.grid.n_steps):
        lb[:, n + 1] = lb[:, n] + model.short_rate(float(nodes[n]), Y[:, n], C[:, n]) * dt
    out = np.exp(lb)
    return out[0] if path is not None else out


@dataclass
class TransitionProcesses:
    times: np.ndarray
    H: np.ndarray  # (R, K, K)
    compensator: np.ndarray  # (R, K, K)

    @property
    def M(self) -> np.ndarray:
        return self.H - self.compensator


def transition_processes(ensemble: PathEnsemble, path: int) -> TransitionProcesses:
    """Counting processes H^{i,j} and martingales M^{i,j} of one path."""
    if ensemble.record_every != 1:
        raise ValueError("transition processes need every step recorded")
    model = ensemble.model
    K = model.K
    N = ensemble.grid.n_steps
    H = np.zeros((N + 1, K, K))
    sel = ensemble.trans_path == path
    for n, i, j in zip(ensemble.trans_step[sel], ensemble.trans_from[sel], ensemble.trans_to[sel]):
        H[n + 1:, i, j] += 1
    comp = np.zeros((N + 1, K, K))
    nodes = ensemble.grid.nodes
    dt = ensemble.grid.dt
    for n in range(N):
        y = ensemble.Y[path, n][None, :]
        c = ensemble.C[path, n:n + 1]
        comp[n + 1] = comp[n]
        if K > 1:
            lam = model.intensity_matrix(float(nodes[n]), y, c)[0]
            comp[n + 1, int(c[0]), :] += lam * dt
    return TransitionProcesses(ensemble.times, H, comp)


@dataclass
class DiagnosticReport:
    asset_mean: np.ndarray
    asset_se: np.ndarray
    asset_flag: np.ndarray
    M_mean: np.ndarray
    M_se: np.ndarray
    M_flag: np.ndarray
    n_paths: int

    @property
    def flagged(self) -> bool:
        return bool(self.asset_flag.any() or self.M_flag.any())

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths,
                "discounted_asset": [{"asset": k + 1, "mean": float(m), "se": float(s), "flag": bool(f)}
                                     for k, (m, s, f) in enumerate(zip(self.asset_mean, self.asset_se, self.asset_flag))],
                "transition_martingales": [
                    {"from": i + 1, "to": j + 1, "mean": float(self.M_mean[i, j]), "se": float(self.M_se[i, j]),
                     "flag": bool(self.M_flag[i, j])}
                    for i in range(self.M_mean.shape[0]) for j in range(self.M_mean.shape[1]) if i != j]}


def diagnostic_from_samples(ds: np.ndarray, mT: np.ndarray) -> DiagnosticReport:
    """``ds`` (P, d) samples of S*_T - S*_0, ``mT`` (P, K, K) samples of M_T."""
    P = ds.shape[0]
    am = ds.mean(axis=0)
    ase = ds.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros_like(am)
    mm = mT.mean(axis=0)
    mse = mT.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros_like(mm)
    aflag = (np.abs(am) > 3 * ase) & ~((am == 0) & (ase == 0))
    mflag = (np.abs(mm) > 3 * mse) & ~((mm == 0) & (mse == 0))
    return DiagnosticReport(am, ase, aflag, mm, mse, mflag, P)


def martingale_diagnostic(ensemble: PathEnsemble, model=None) -> DiagnosticReport:
    """Mean of discounted terminal asset moves and terminal M^{i,j}, with 3-SE flags."""
    model = model or ensemble.model
    d = model.d
    S0 = ensemble.Y[:, 0, :d] * np.exp(-ensemble.log_B[:, 0])[:, None]
    ST = ensemble.Y[:, -1, :d] * np.exp(-ensemble.log_B[:, -1])[:, None]
    K = model.K
    H = np.zeros((ensemble.n_paths, K, K))
    np.add.at(H, (ensemble.trans_path, ensemble.trans_from, ensemble.trans_to), 1.0)
    return diagnostic_from_samples(ST - S0, H - ensemble.compensator)


class MartingaleObserver(Observer):
    """Streaming version of :func:`martingale_diagnostic`."""

    def __init__(self, d, K):
        self.d = d
        self.K = K

    def start(self, m, grid, y0, c0):
        self.s0 = y0[:, :self.d].copy()
        self.mt = np.zeros((m, self.K, self.K))
        self.last = None

    def step(self, info):
        rows = np.arange(info.c.size)
        if info.intensity is not None:
            self.mt[rows, info.c, :] -= info.intensity * info.dt
        fired = np.flatnonzero(info.dest >= 0)
        if fired.size:
            np.add.at(self.mt, (fired, info.c[fired], info.dest[fired]), 1.0)
        self.last = info

    def finish(self):
        sT = self.last.y_next[:, :self.d] * np.exp(-self.last.log_b_next)[:, None]
        return sT - self.s0, self.mt


def stream_martingale_diagnostic(model, y0, c0, grid, n_paths, seed, **kw) -> DiagnosticReport:
    res = run_paths(model, y0, c0, grid, n_paths, seed, lambda: [MartingaleObserver(model.d, model.K)], **kw)
    ds = np.concatenate([r[0][0] for r in res])
    mt = np.concatenate([r[0][1] for r in res])
    return diagnostic_from_samples(ds, mt)


# ---------------------------------------------------------------------------
# CSV dump
# ---------------------------------------------------------------------------

def write_paths_csv(ensemble: PathEnsemble, path: str, transitions_path: Optional[str] = None,
                    max_paths: Optional[int] = None):
    """Write (path, t, Y1..YD, C, B) rows and an optional (path, t, i, j) log."""
    P = ensemble.n_paths if max_paths is None else min(max_paths, ensemble.n_paths)
    D = ensemble.Y.shape[2]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["path", "t"] + [f"Y{k + 1}" for k in range(D)] + ["C", "B"]) + "\n")
        B = np.exp(ensemble.log_B)
        for i in range(P):
            for r, t in enumerate(ensemble.times):
                vals = [repr(float(t))] + [repr(float(v)) for v in ensemble.Y[i, r]] + \
                       [str(int(ensemble.C[i, r]) + 1), repr(float(B[i, r]))]
                fh.write(f"{i}," + ",".join(vals) + "\n")
    if transitions_path is not None:
        order = np.lexsort((ensemble.trans_step, ensemble.trans_path))
        with open(transitions_path, "w", newline="") as fh:
            fh.write("path,t,i,j\n")
            for k in order:
                if ensemble.trans_path[k] >= P:
                    continue
                fh.write(f"{int(ensemble.trans_path[k])},{float(ensemble.trans_time[k])!r},"
                         f"{int(ensemble.trans_from[k]) + 1},{int(ensemble.trans_to[k]) + 1}\n")
