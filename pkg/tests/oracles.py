"""Reference implementations written independently of the package code.

They favour directness over speed: high-precision arithmetic, explicit loops,
brute-force integration over the carrier phase instead of Bessel functions,
and generic adaptive quadrature.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
from scipy import integrate

mp.mp.dps = 40


def envelope_mp(n: int, sigma: float) -> list[float]:
    return [float(mp.e ** (-((m - mp.mpf(n) / 2) ** 2) / (2 * mp.mpf(sigma) ** 2))) for m in range(n)]


def confinement_bruteforce(n: int, sigma: float, squared: bool = False, reach: int = 60) -> float:
    """In-slot share of the sampled envelope using a very wide summation window."""
    num = mp.mpf(0)
    den = mp.mpf(0)
    s2 = 2 * mp.mpf(sigma) ** 2
    for m in range(-reach * n, (reach + 1) * n + 1):
        g = mp.e ** (-((m - mp.mpf(n) / 2) ** 2) / s2)
        if squared:
            g = g * g
        den += g
        if 0 <= m < n:
            num += g
    return float(num / den)


def sigma_scan(n: int, squared: bool = False, lo: float = 1e-3, hi: float | None = None, steps: int = 400):
    """Largest sigma on a geometric grid (refined by bisection) with share >= 0.999; None if none."""
    hi = hi or 10.0 * n
    grid = np.geomspace(lo, hi, steps)
    ok = [confinement_bruteforce(n, s, squared, reach=12) >= 0.999 for s in grid]
    if not ok[0]:
        return None
    k = max(i for i, v in enumerate(ok) if v)
    a, b = grid[k], grid[min(k + 1, steps - 1)]
    for _ in range(60):
        mid = math.sqrt(a * b)
        if confinement_bruteforce(n, mid, squared, reach=12) >= 0.999:
            a = mid
        else:
            b = mid
    return a


def alpha_mp(delta, n_p, sigma2, a, c_q, r) -> float:
    d = mp.mpf(delta)
    L = mp.log(1 / (1 - 2 * d**2))
    return float(4 * mp.mpf(sigma2) / (mp.mpf(a) ** 2 * mp.mpf(c_q) ** 2)
                 * mp.sqrt(2 * L / (mp.mpf(n_p) * (1 + mp.mpf(r) ** 4))))


def q_func(x):
    return 0.5 * np.vectorize(math.erfc)(np.asarray(x) / math.sqrt(2))


def f_k_loop(p, q, c_p, c_q, k):
    """Printed f_k, evaluated with plain Python sums."""
    pr = sum(float(c) * complex(v).real for c, v in zip(c_p, p))
    pi = sum(float(c) * complex(v).imag for c, v in zip(c_p, p))
    qr = sum(float(c) * complex(v).real for c, v in zip(c_q, q))
    qi = sum(float(c) * complex(v).imag for c, v in zip(c_q, q))
    return math.sqrt((pr + (-1) ** (k // 2) * qr) ** 2 + (pi + (-1) ** k * qi) ** 2)


def likelihood_ratio_phase_grid(w, c_p, c_q, alpha, a, sigma2, n_theta: int = 256):
    """p1(w)/p0(w) by averaging the Gaussian likelihood over a carrier-phase grid.

    ``w`` has shape (..., n_s). No Bessel functions and no sufficient-statistic
    shortcut: every symbol and phase is a full-length waveform.
    """
    w = np.asarray(w, dtype=complex)
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    c2 = float(np.sum(c_p**2) + np.sum(c_q**2))
    acc = 0.0
    for x in range(1, 5):
        phi = np.pi * (2 * x - 1) / 4
        u = np.concatenate([c_p, np.exp(1j * phi) * c_q])
        inner = w @ np.conj(u)  # <w, u>
        # Re(conj(a e^{j theta} u) . w) = a Re(e^{-j theta} <w, u>)
        z = a * np.real(np.exp(-1j * thetas)[:, None] * inner.reshape(1, -1)) / sigma2
        acc = acc + np.mean(np.exp(z - a**2 * c2 / (2 * sigma2)), axis=0).reshape(inner.shape)
    return (1 - alpha) + alpha * acc / 4


def gauss_mixture_divergences(alpha: float, mu: float):
    """(TV, H^2, D) between N(0,1) and (1-a) N(0,1) + a N(mu,1) by adaptive quadrature."""
    p0 = lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    p1 = lambda x: (1 - alpha) * p0(x) + alpha * p0(x - mu)
    lo, hi = -12.0, 12.0 + mu
    tv = 0.5 * integrate.quad(lambda x: abs(p0(x) - p1(x)), lo, hi, limit=200, points=[0, mu])[0]
    bc = integrate.quad(lambda x: math.sqrt(p0(x) * p1(x)), lo, hi, limit=200)[0]
    d = integrate.quad(lambda x: p0(x) * math.log(p0(x) / p1(x)), lo, hi, limit=200)[0]
    return tv, 1 - bc, d
