"""Closed-form and ODE reference values used as independent oracles."""
import math

import numpy as np
from scipy import linalg, special


def bs_call(s, strike, tau, sigma, r=0.0):
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        vol = sigma * np.sqrt(tau)
        d1 = (np.log(s / strike) + (r + 0.5 * sigma ** 2) * tau) / vol
        d2 = d1 - vol
        price = s * special.ndtr(d1) - strike * np.exp(-r * tau) * special.ndtr(d2)
    return np.where(tau > 0, price, np.maximum(s - strike, 0.0))


def bs_put(s, strike, tau, sigma, r=0.0):
    return bs_call(s, strike, tau, sigma, r) - np.asarray(s, float) + strike * np.exp(-r * np.asarray(tau, float))


def bs_delta(s, strike, tau, sigma, r=0.0):
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(s / strike) + (r + 0.5 * sigma ** 2) * tau) / (sigma * np.sqrt(tau))
        out = special.ndtr(d1)
    return np.where(tau > 0, out, (s > strike).astype(float))


def bs_gamma(s, strike, tau, sigma, r=0.0):
    s = np.asarray(s, dtype=float)
    d1 = (np.log(s / strike) + (r + 0.5 * sigma ** 2) * tau) / (sigma * np.sqrt(tau))
    return np.exp(-0.5 * d1 ** 2) / np.sqrt(2 * np.pi) / (s * sigma * np.sqrt(tau))


def merton_call(s, strike, tau, sigma, r, intensity, mean, std, n_terms=120):
    """Merton jump-diffusion call by the Poisson-mixture series."""
    k = math.exp(mean + 0.5 * std ** 2) - 1.0
    lam2 = intensity * (1.0 + k)
    total = np.zeros_like(np.asarray(s, dtype=float))
    for n in range(n_terms):
        logw = -lam2 * tau + n * math.log(lam2 * tau) - math.lgamma(n + 1) if lam2 * tau > 0 else (0.0 if n == 0 else -np.inf)
        w = math.exp(logw)
        if w == 0.0 and n > lam2 * tau:
            break
        sig_n = math.sqrt(sigma ** 2 + n * std ** 2 / tau)
        r_n = r - intensity * k + n * math.log(1.0 + k) / tau
        total = total + w * bs_call(s, strike, tau, sig_n, r_n)
    return total


def generator_matrix(intensities) -> np.ndarray:
    """Chain generator from an off-diagonal intensity matrix."""
    lam = np.array(intensities, dtype=float)
    np.fill_diagonal(lam, 0.0)
    return lam - np.diag(lam.sum(axis=1))


def chain_occupation(intensities, p0, times) -> np.ndarray:
    """P(C_t = i) at each time (rows) by the forward Kolmogorov equation."""
    Q = generator_matrix(intensities)
    p0 = np.asarray(p0, dtype=float)
    return np.array([p0 @ linalg.expm(Q * t) for t in np.atleast_1d(times)])


def expected_transitions(intensities, p0, horizon, i, j) -> float:
    """E[H^{i,j}_T] = lambda^{i,j} int_0^T P(C_t = i) dt (exact via augmented expm)."""
    Q = generator_matrix(intensities)
    K = Q.shape[0]
    M = np.zeros((2 * K, 2 * K))
    M[:K, :K] = Q.T
    M[K:, :K] = np.eye(K)
    E = linalg.expm(M * horizon)
    occ = E[K:, :K] @ np.asarray(p0, dtype=float)
    return float(np.array(intensities, dtype=float)[i, j] * occ[i])


def chain_value(intensities, rates, terminal, coupon, transition, horizon) -> np.ndarray:
    """Regime-only claim value u_c at time T - horizon.

    Solves u' = (diag(r) - Q) u - (g + sum_j lambda^{cj} delta^{cj}),
    u(T) = terminal, backward in closed form by an augmented exponential.
    """
    lam = np.array(intensities, dtype=float)
    np.fill_diagonal(lam, 0.0)
    Q = generator_matrix(lam)
    K = Q.shape[0]
    src = np.asarray(coupon, dtype=float) + np.sum(lam * np.asarray(transition, dtype=float), axis=1)
    M = np.zeros((K + 1, K + 1))
    M[:K, :K] = np.diag(np.asarray(rates, dtype=float)) - Q
    M[:K, K] = -src
    w = linalg.expm(-M * horizon) @ np.append(np.asarray(terminal, dtype=float), 1.0)
    return w[:K]
