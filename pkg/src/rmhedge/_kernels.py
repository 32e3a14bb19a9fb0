"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy twin
with the same signature. The public names at the bottom of the module are
bound to the numba versions unless ``RMHEDGE_DISABLE_NUMBA`` is set to a
truthy value (or numba is not importable), in which case the numpy twins
are used. Both variants stay importable as ``*_nb`` / ``*_np`` so tests and
the benchmark can compare them directly.
"""
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_DISABLED = os.environ.get("RMHEDGE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# batched tridiagonal solve
# ---------------------------------------------------------------------------

def thomas_batch_np(lower, diag, upper, rhs):
    """Solve a batch of tridiagonal systems.

    All arrays have shape (B, N). ``lower[:, 0]`` and ``upper[:, -1]`` are
    ignored. The loop runs over N with the batch vectorised.
    """
    n = diag.shape[1]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    cp[:, 0] = upper[:, 0] / diag[:, 0]
    dp[:, 0] = rhs[:, 0] / diag[:, 0]
    for i in range(1, n):
        denom = diag[:, i] - lower[:, i] * cp[:, i - 1]
        cp[:, i] = upper[:, i] / denom
        dp[:, i] = (rhs[:, i] - lower[:, i] * dp[:, i - 1]) / denom
    x = np.empty_like(rhs)
    x[:, n - 1] = dp[:, n - 1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x


def _thomas_batch_py(lower, diag, upper, rhs):
    nb_, n = diag.shape
    x = np.empty_like(rhs)
    cp = np.empty(n)
    dp = np.empty(n)
    for b in range(nb_):
        cp[0] = upper[b, 0] / diag[b, 0]
        dp[0] = rhs[b, 0] / diag[b, 0]
        for i in range(1, n):
            denom = diag[b, i] - lower[b, i] * cp[i - 1]
            cp[i] = upper[b, i] / denom
            dp[i] = (rhs[b, i] - lower[b, i] * dp[i - 1]) / denom
        x[b, n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            x[b, i] = dp[i] - cp[i] * x[b, i + 1]
    return x


# ---------------------------------------------------------------------------
# axis location with banded linear extrapolation
# ---------------------------------------------------------------------------

def locate_axis_np(nodes_xi, nodes_z, xi, z, lo_band, hi_band):
    """Cell index and weight for each query on one grid axis.

    The cell is found in the computational coordinate ``xi``; the weight is
    linear in the physical coordinate ``z``, so fields linear in ``z`` are
    reproduced exactly. Past the edges the edge cell is continued linearly.
    Returns ``(idx, alpha, bad)`` where ``bad`` flags queries outside
    ``[lo_band, hi_band]`` (or non-finite).
    """
    n = nodes_xi.shape[0]
    idx = np.searchsorted(nodes_xi, xi, side="right") - 1
    idx = np.clip(idx, 0, n - 2)
    z0 = nodes_z[idx]
    z1 = nodes_z[idx + 1]
    alpha = (z - z0) / (z1 - z0)
    bad = ~((xi >= lo_band) & (xi <= hi_band))
    return idx.astype(np.int64), alpha, bad


def _locate_axis_py(nodes_xi, nodes_z, xi, z, lo_band, hi_band):
    n = nodes_xi.shape[0]
    m = xi.shape[0]
    idx = np.empty(m, dtype=np.int64)
    alpha = np.empty(m)
    bad = np.zeros(m, dtype=np.bool_)
    for k in range(m):
        q = xi[k]
        if not (q >= lo_band and q <= hi_band):
            bad[k] = True
        if q < nodes_xi[0]:
            j = 0
        elif q > nodes_xi[n - 1]:
            j = n - 2
        else:
            j = np.searchsorted(nodes_xi, q, side="right") - 1
            if j > n - 2:
                j = n - 2
            if j < 0:
                j = 0
        idx[k] = j
        alpha[k] = (z[k] - nodes_z[j]) / (nodes_z[j + 1] - nodes_z[j])
    return idx, alpha, bad


# ---------------------------------------------------------------------------
# regime-selected gathers from gridded fields
# ---------------------------------------------------------------------------

def gather_1d_np(field, c, idx, alpha):
    """``field`` (K, n, F); returns (m, F) linear combination per query."""
    lo = field[c, idx]
    hi = field[c, idx + 1]
    a = alpha[:, None]
    return lo + a * (hi - lo)


def _gather_1d_py(field, c, idx, alpha):
    m = c.shape[0]
    nf = field.shape[2]
    out = np.empty((m, nf))
    for k in range(m):
        a = alpha[k]
        for f in range(nf):
            lo = field[c[k], idx[k], f]
            hi = field[c[k], idx[k] + 1, f]
            out[k, f] = lo + a * (hi - lo)
    return out


def gather_2d_np(field, c, i0, a0, i1, a1):
    """``field`` (K, n0, n1, F); bilinear (with extrapolated weights)."""
    f00 = field[c, i0, i1]
    f10 = field[c, i0 + 1, i1]
    f01 = field[c, i0, i1 + 1]
    f11 = field[c, i0 + 1, i1 + 1]
    w0 = a0[:, None]
    w1 = a1[:, None]
    return (1 - w0) * (1 - w1) * f00 + w0 * (1 - w1) * f10 + (1 - w0) * w1 * f01 + w0 * w1 * f11


def _gather_2d_py(field, c, i0, a0, i1, a1):
    m = c.shape[0]
    nf = field.shape[3]
    out = np.empty((m, nf))
    for k in range(m):
        w0 = a0[k]
        w1 = a1[k]
        cc = c[k]
        p = i0[k]
        q = i1[k]
        for f in range(nf):
            out[k, f] = ((1 - w0) * (1 - w1) * field[cc, p, q, f] + w0 * (1 - w1) * field[cc, p + 1, q, f]
                         + (1 - w0) * w1 * field[cc, p, q + 1, f] + w0 * w1 * field[cc, p + 1, q + 1, f])
    return out


# ---------------------------------------------------------------------------
# Poisson counts by inverse CDF
# ---------------------------------------------------------------------------

def poisson_counts_np(u, cdf):
    """Smallest k with ``u < cdf[k]``; ``len(cdf)`` if ``u`` is beyond the table."""
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def _poisson_counts_py(u, cdf):
    m = u.shape[0]
    out = np.empty(m, dtype=np.int64)
    n = cdf.shape[0]
    for k in range(m):
        j = 0
        while j < n and u[k] >= cdf[j]:
            j += 1
        out[k] = j
    return out


if HAVE_NUMBA:
    thomas_batch_nb = njit(cache=False)(_thomas_batch_py)
    locate_axis_nb = njit(cache=False)(_locate_axis_py)
    gather_1d_nb = njit(cache=False)(_gather_1d_py)
    gather_2d_nb = njit(cache=False)(_gather_2d_py)
    poisson_counts_nb = njit(cache=False)(_poisson_counts_py)
else:  # pragma: no cover
    thomas_batch_nb = thomas_batch_np
    locate_axis_nb = locate_axis_np
    gather_1d_nb = gather_1d_np
    gather_2d_nb = gather_2d_np
    poisson_counts_nb = poisson_counts_np


if USE_NUMBA:
    thomas_batch = thomas_batch_nb
    locate_axis = locate_axis_nb
    gather_1d = gather_1d_nb
    gather_2d = gather_2d_nb
    poisson_counts = poisson_counts_nb
else:
    thomas_batch = thomas_batch_np
    locate_axis = locate_axis_np
    gather_1d = gather_1d_np
    gather_2d = gather_2d_np
    poisson_counts = poisson_counts_np
