"""Covertness budget: sparse-coding rate, detector-error bounds and Willie's densities.

Conventions
-----------
Noise at Willie is circularly-symmetric complex Gaussian with variance
``2 * sigma_w2`` per complex sample (``sigma_w2`` per real quadrature).
``snr`` always means ``a_w**2 * c_q**2 / sigma_w2`` (linear).

Per-slot statistics reduce to the two complex matched-filter outputs
``P = <c_p, p>`` and ``Q = <c_q, q>``; every likelihood ratio in this module is
a function of ``(Re P, Im P, Re Q, Im Q)`` only, the ``||w||^2`` terms cancel.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import i0e, logsumexp

from .errors import InvalidInputError, InvalidParameterError, PrecisionNotReachedError
from .pulse_shaping import PulseParams

log = logging.getLogger(__name__)

DELTA_MAX = 1 / math.sqrt(2)
# e^{-j phi_x} for the four QPSK data phases pi(2x-1)/4, x = 1..4
QPSK_DEROTATION = np.exp(-1j * np.pi * (2 * np.arange(1, 5) - 1) / 4)
# (Re sign, Im sign) applied to Q by the sign-flip statistic, k = 0..3
SIGN_FLIPS = np.array([[(-1) ** (k // 2), (-1) ** k] for k in range(4)], dtype=float)
STATISTICS = ("qpsk", "printed")


def _check_delta(delta: float) -> None:
    if not (0 < delta < DELTA_MAX):
        raise InvalidParameterError(f"delta must lie in (0, 1/sqrt(2)), got {delta!r}")


def _log_inv_budget(delta: float) -> float:
    """log(1 / (1 - 2 delta^2))."""
    return -math.log1p(-2 * delta * delta)


def alpha_n(
    delta: float,
    n_p: int,
    sigma_w2: float,
    a_w: float,
    c_q: float,
    r_pq: float,
    clamp: bool = True,
) -> float:
    """Slot-occupancy probability that keeps Willie delta-covert.

    alpha = 4 sigma_w^2 / (a_w^2 c_q^2) * sqrt(2 log(1/(1-2 delta^2)) / (n_p (1 + r^4)))

    Values above one are clamped (with a warning) when ``clamp`` is set.
    """
    if delta == 0:
        return 0.0
    _check_delta(delta)
    if n_p < 1:
        raise InvalidParameterError(f"n_p must be >= 1, got {n_p!r}")
    if not (sigma_w2 > 0 and a_w > 0 and c_q > 0 and r_pq >= 0):
        raise InvalidParameterError("sigma_w2, a_w, c_q must be > 0 and r_pq >= 0")
    value = (4 * sigma_w2 / (a_w**2 * c_q**2)) * math.sqrt(
        2 * _log_inv_budget(delta) / (n_p * (1 + r_pq**4))
    )
    if clamp and value > 1:
        warnings.warn(f"alpha_n = {value:.4g} exceeds 1; clamped", RuntimeWarning, stacklevel=2)
        return 1.0
    return value


def alpha_n_from_snr(delta: float, n_p: int, snr: float, r_pq: float, clamp: bool = True) -> float:
    """Same budget written in terms of Willie's SNR."""
    if not snr > 0:
        raise InvalidParameterError(f"snr must be positive, got {snr!r}")
    return alpha_n(delta, n_p, sigma_w2=1.0, a_w=1.0, c_q=math.sqrt(snr), r_pq=r_pq, clamp=clamp)


def alpha_n_finite(delta: float, n_p: int, snr: float, r_pq: float) -> float:
    """Non-asymptotic budget using 1 - (1 - 2 delta^2)^(1/n_p) in place of its expansion."""
    _check_delta(delta)
    one_minus = -math.expm1(math.log1p(-2 * delta * delta) / n_p)
    return (4 / snr) * math.sqrt(2 * one_minus / (1 + r_pq**4))


def zeta(alpha: float, n: int) -> float:
    """alpha_n * sqrt(n)."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n!r}")
    return alpha * math.sqrt(n)


def zeta_from_snr(snr: float, r_pq: float, delta: float, n_s: int) -> float:
    """(SNR sqrt(1 + r^4))^-1 sqrt(32 log(1/(1-2 delta^2)) n_s)."""
    _check_delta(delta)
    return math.sqrt(32 * _log_inv_budget(delta) * n_s) / (snr * math.sqrt(1 + r_pq**4))


# -- detector error lower bounds ---------------------------------------------


def pe_bound_tv(tv: float) -> float:
    if not (0 <= tv <= 1):
        raise InvalidParameterError(f"total variation must lie in [0, 1], got {tv!r}")
    return max(0.0, 0.5 - 0.5 * tv)


def pe_bound_pinsker(re: float) -> float:
    """Pinsker lower bound; ``re`` is the relative entropy in nats."""
    if not re >= 0:
        raise InvalidParameterError(f"relative entropy must be >= 0, got {re!r}")
    return max(0.0, 0.5 - math.sqrt(re) / (2 * math.sqrt(2)))


def pe_bound_hellinger(h: float) -> float:
    """Lower bound 1/2 - H/sqrt(2); ``h`` is the Hellinger distance, not its square."""
    if not (0 <= h <= 1):
        raise InvalidParameterError(f"Hellinger distance must lie in [0, 1], got {h!r}")
    return max(0.0, 0.5 - h / math.sqrt(2))


# -- per-slot densities --------------------------------------------------------


@dataclass(frozen=True)
class SlotObservation:
    """One slot of Willie's samples split into pilot and data parts."""

    pilot: np.ndarray
    data: np.ndarray

    @classmethod
    def split(cls, w: np.ndarray, n_s_pilot: int) -> "SlotObservation":
        w = np.asarray(w, dtype=complex)
        return cls(w[..., :n_s_pilot], w[..., n_s_pilot:])

    @property
    def samples(self) -> np.ndarray:
        return np.concatenate([self.pilot, self.data], axis=-1)


def log_density_h0(w, sigma_w2: float) -> np.ndarray:
    """log psi(w; 0, 2 sigma_w^2 I) over the last axis.

    Equals -n_s log(2 pi sigma_w^2) - ||w||^2 / (2 sigma_w^2).
    """
    if not sigma_w2 > 0:
        raise InvalidParameterError(f"sigma_w2 must be positive, got {sigma_w2!r}")
    if isinstance(w, SlotObservation):
        w = w.samples
    w = np.asarray(w, dtype=complex)
    n_s = w.shape[-1]
    energy = np.sum(w.real**2 + w.imag**2, axis=-1)
    return -n_s * math.log(2 * math.pi * sigma_w2) - energy / (2 * sigma_w2)


def _projections(w, c_p: np.ndarray, c_q: np.ndarray):
    if not isinstance(w, SlotObservation):
        w = SlotObservation.split(w, len(c_p))
    if w.pilot.shape[-1] != len(c_p) or w.data.shape[-1] != len(c_q):
        raise InvalidInputError(
            f"slot segments of length ({w.pilot.shape[-1]}, {w.data.shape[-1]}) "
            f"do not match pulse lengths ({len(c_p)}, {len(c_q)})"
        )
    return w.pilot @ np.asarray(c_p, dtype=float), w.data @ np.asarray(c_q, dtype=float)


def f_k(w, c_p: np.ndarray, c_q: np.ndarray, k: int) -> np.ndarray:
    """Sign-flip magnitude statistic.

    sqrt[(<c_p, Re p> + (-1)^floor(k/2) <c_q, Re q>)^2 + (<c_p, Im p> + (-1)^k <c_q, Im q>)^2]
    """
    if k not in range(4):
        raise InvalidParameterError(f"k must be in 0..3, got {k!r}")
    P, Q = _projections(w, c_p, c_q)
    s_re, s_im = SIGN_FLIPS[k]
    return np.hypot(P.real + s_re * Q.real, P.imag + s_im * Q.imag)


def f_qpsk(w, c_p: np.ndarray, c_q: np.ndarray, x: int) -> np.ndarray:
    """|<c_p, p> + e^{-j pi(2x-1)/4} <c_q, q>|, the exact matched statistic for symbol x."""
    if x not in (1, 2, 3, 4):
        raise InvalidParameterError(f"x must be in 1..4, got {x!r}")
    P, Q = _projections(w, c_p, c_q)
    return np.abs(P + QPSK_DEROTATION[x - 1] * Q)


def _magnitudes(P: np.ndarray, Q: np.ndarray, statistic: str) -> np.ndarray:
    """Stack of the four mixture-component statistics along a new last axis."""
    P = np.asarray(P)[..., None]
    Q = np.asarray(Q)[..., None]
    if statistic == "qpsk":
        return np.abs(P + QPSK_DEROTATION * Q)
    if statistic == "printed":
        return np.hypot(P.real + SIGN_FLIPS[:, 0] * Q.real, P.imag + SIGN_FLIPS[:, 1] * Q.imag)
    raise InvalidParameterError(f"statistic must be one of {STATISTICS}, got {statistic!r}")


def log_signal_ratio(P, Q, c2: float, a_w: float, sigma_w2: float, statistic: str = "qpsk"):
    """log of the phase-averaged signal-present likelihood ratio M.

    M = exp(-a^2 c^2 / (2 sigma^2)) * (1/4) sum_x I0(a f_x / sigma^2), evaluated as
    z + log(i0e(z)) so that arguments far beyond 700 stay finite.
    """
    z = (a_w / sigma_w2) * _magnitudes(P, Q, statistic)
    return logsumexp(z + np.log(i0e(z)), axis=-1) - math.log(4) - a_w**2 * c2 / (2 * sigma_w2)


def log_mixture_ratio(log_m, alpha: float):
    """log(1 - alpha + alpha M) given log M."""
    if alpha == 0:
        return np.zeros_like(np.asarray(log_m, dtype=float))
    if alpha == 1:
        return np.asarray(log_m, dtype=float)
    return np.logaddexp(math.log1p(-alpha), math.log(alpha) + np.asarray(log_m))


def slot_llr(
    w, c_p: np.ndarray, c_q: np.ndarray, alpha: float, a_w: float, sigma_w2: float, statistic="qpsk"
) -> np.ndarray:
    """log p1(w) - log p0(w) for each slot (last axis holds the n_s samples)."""
    P, Q = _projections(w, c_p, c_q)
    c2 = float(np.dot(c_p, c_p) + np.dot(c_q, c_q))
    return log_mixture_ratio(log_signal_ratio(P, Q, c2, a_w, sigma_w2, statistic), alpha)


def log_density_h1(w, c_p, c_q, alpha: float, a_w: float, sigma_w2: float, statistic="qpsk"):
    """log p1(w): noise-only density mixed with the phase-averaged QPSK pulse density."""
    if isinstance(w, SlotObservation):
        samples = w.samples
    else:
        samples = np.asarray(w, dtype=complex)
    return log_density_h0(samples, sigma_w2) + slot_llr(
        w, c_p, c_q, alpha, a_w, sigma_w2, statistic
    )


# -- Taylor forms --------------------------------------------------------------


def bhattacharyya_deficit_taylor(alpha: float, r_pq: float, snr: float, order: int = 2) -> float:
    """Small-signal expansion of 1 - BC for one slot.

    order 2: alpha^2 (1 + r^4) snr^2 / 32
    order 3: additionally subtracts alpha^3 (1 + r^6) snr^3 / 64
    """
    value = alpha**2 * (1 + r_pq**4) * snr**2 / 32
    if order >= 3:
        value -= alpha**3 * (1 + r_pq**6) * snr**3 / 64
    return value


def h2_taylor(alpha: float, r_pq: float, snr: float, n_p: int, order: int = 2) -> float:
    """Frame Hellinger distance squared from the per-slot expansion: 1 - (1 - x)^n_p."""
    x = bhattacharyya_deficit_taylor(alpha, r_pq, snr, order)
    if x >= 1:
        return 1.0
    return -math.expm1(n_p * math.log1p(-x))


# -- numerical oracles ---------------------------------------------------------


@dataclass
class OracleResult:
    """Frame-level divergence estimate with its numerical error."""

    value: float  # H^2 (or relative entropy in nats) for the n_p-slot frame
    stderr: float
    per_slot: float  # 1 - BC (or per-slot relative entropy)
    per_slot_err: float
    method: str
    detail: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _unit_snr(a_w: float, c_q: float, sigma_w2: float) -> float:
    return a_w**2 * c_q**2 / sigma_w2


def _slot_integrands(Z: np.ndarray, alpha: float, snr: float, r: float, statistic: str):
    """(1 - sqrt(1+u)) and (u - log1p u) integrands for standard-normal statistics Z[..., 4].

    In units where sigma_w = a_w = c_q = 1 the projections are P = r (Z1 + j Z2),
    Q = Z3 + j Z4 and the I0 argument is sqrt(snr) * |.|. ``u = alpha (M - 1)``
    has zero mean under H0, so the integrands are rewritten in positive forms
    free of cancellation:
        E[1 - sqrt(1+u)] = E[u^2 / (4 (1 + u/2 + sqrt(1+u)))]
        E[-log(1+u)]     = E[u - log1p(u)]
    """
    sq = math.sqrt(snr)
    P = sq * r * (Z[..., 0] + 1j * Z[..., 1])
    Q = sq * (Z[..., 2] + 1j * Z[..., 3])
    # a_w = sigma_w2 = 1 with the statistics pre-scaled by sqrt(snr)
    log_m = log_signal_ratio(P, Q, c2=snr * (1 + r * r), a_w=1.0, sigma_w2=1.0, statistic=statistic)
    u = alpha * np.expm1(log_m)
    root = np.sqrt(1.0 + u)
    hell = u * u / (4.0 * (1.0 + 0.5 * u + root))
    kl = u - np.log1p(u)
    return hell, kl


def _gauss_hermite_slot(alpha, snr, r, degree, statistic, chunk=1 << 20):
    t, wts = np.polynomial.hermite.hermgauss(degree)
    z = math.sqrt(2.0) * t
    w1 = wts / math.sqrt(math.pi)
    grid = np.stack(np.meshgrid(z, z, z, z, indexing="ij"), axis=-1).reshape(-1, 4)
    weights = np.einsum("i,j,k,l->ijkl", w1, w1, w1, w1).reshape(-1)
    hell = kl = 0.0
    for start in range(0, len(weights), chunk):
        h, k = _slot_integrands(grid[start : start + chunk], alpha, snr, r, statistic)
        hell += float(weights[start : start + chunk] @ h)
        kl += float(weights[start : start + chunk] @ k)
    return hell, kl


DEGREES = (8, 12, 16, 24, 32, 48, 64)


def _quadrature_slot(alpha, snr, r, rtol, max_degree, statistic):
    """Escalate the tensor Gauss-Hermite degree until two successive degrees agree."""
    prev = None
    history = []
    for degree in DEGREES:
        if degree > max_degree:
            break
        cur = _gauss_hermite_slot(alpha, snr, r, degree, statistic)
        history.append((degree, cur))
        if prev is not None:
            errs = [abs(c - p) for c, p in zip(cur, prev)]
            if all(e <= rtol * abs(c) for e, c in zip(errs, cur)):
                return cur, errs, degree
        prev = cur
    errs = [abs(c - p) for c, p in zip(history[-1][1], history[-2][1])] if len(history) > 1 else [math.inf] * 2
    raise PrecisionNotReachedError(
        f"Gauss-Hermite did not reach rtol={rtol} by degree {history[-1][0]}",
        value=history[-1][1],
        error=errs,
    )


def _mc_batch(seed_seq, n, alpha, snr, r, statistic):
    rng = np.random.default_rng(seed_seq)
    Z = rng.standard_normal((n, 4))
    h, k = _slot_integrands(Z, alpha, snr, r, statistic)
    return h.mean(), k.mean()


def _jackknife_se(batch_means: np.ndarray) -> float:
    """Delete-one jackknife standard error of the mean of equal-size batch means."""
    b = len(batch_means)
    if b < 2:
        return math.inf
    total = batch_means.sum()
    loo = (total - batch_means) / (b - 1)
    return float(math.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2)))


def _monte_carlo_slot(alpha, snr, r, rtol, seed, batch_size, max_samples, statistic, workers):
    """Batch-doubling Monte Carlo under H0.

    Batch i always draws from substream i of ``seed``, so the estimate does not
    depend on how batches are spread over workers.
    """
    root = np.random.SeedSequence(seed)
    means: list[tuple[float, float]] = []
    n_batches = 8
    while True:
        need = n_batches - len(means)
        seqs = root.spawn(need)
        args = [(s, batch_size, alpha, snr, r, statistic) for s in seqs]
        if workers and workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                means.extend(ex.map(lambda a: _mc_batch(*a), args))
        else:
            means.extend(_mc_batch(*a) for a in args)
        arr = np.array(means)
        est = arr.mean(axis=0)
        err = np.array([_jackknife_se(arr[:, 0]), _jackknife_se(arr[:, 1])])
        n_done = len(means) * batch_size
        if np.all(err <= rtol * np.abs(est)):
            return tuple(est), tuple(err), n_done
        if 2 * n_done > max_samples:
            raise PrecisionNotReachedError(
                f"Monte Carlo standard error above rtol={rtol} after {n_done} samples",
                value=tuple(est),
                error=tuple(err),
            )
        n_batches *= 2


def _slot_divergences(params, alpha, a_w, sigma_w2, method, rtol, max_degree, seed,
                      batch_size, max_samples, statistic, workers):
    if not (0 <= alpha <= 1):
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha!r}")
    if statistic not in STATISTICS:
        raise InvalidParameterError(f"statistic must be one of {STATISTICS}")
    snr = _unit_snr(a_w, params.c_q, sigma_w2)
    r = params.r_pq
    if alpha == 0 or snr == 0:
        return (0.0, 0.0), (0.0, 0.0), {"trivial": True}
    if method == "quadrature":
        try:
            est, err, degree = _quadrature_slot(alpha, snr, r, rtol, max_degree, statistic)
            return est, err, {"degree": degree}
        except PrecisionNotReachedError as exc:
            log.warning("%s; falling back to Monte Carlo", exc)
            method = "monte_carlo"
    if method == "monte_carlo":
        est, err, n = _monte_carlo_slot(
            alpha, snr, r, max(rtol, 1e-4), seed, batch_size, max_samples, statistic, workers
        )
        return est, err, {"samples": n}
    raise InvalidParameterError(f"unknown method {method!r}")


def hellinger_oracle(
    params: PulseParams,
    alpha: float,
    a_w: float,
    sigma_w2: float,
    n_p: int,
    method: str = "quadrature",
    rtol: float = 1e-8,
    max_degree: int = 64,
    seed: int = 0,
    batch_size: int = 1 << 15,
    max_samples: int = 1 << 24,
    statistic: str = "qpsk",
    workers: int | None = None,
) -> OracleResult:
    """Numerical H^2(P0^n, P1^n) = 1 - BC^n_p for the n_p-slot frame.

    The per-slot deficit 1 - BC is integrated over the four real sufficient
    statistics; quadrature falls back to Monte Carlo if it fails to converge.
    """
    (deficit, _), (err, _), detail = _slot_divergences(
        params, alpha, a_w, sigma_w2, method, rtol, max_degree, seed,
        batch_size, max_samples, statistic, workers,
    )
    log_bc = math.log1p(-deficit)
    h2 = -math.expm1(n_p * log_bc)
    h2_err = n_p * math.exp((n_p - 1) * log_bc) * err
    used = "monte_carlo" if "samples" in detail else "quadrature"
    return OracleResult(h2, h2_err, deficit, err, used, detail)


def relative_entropy_oracle(
    params: PulseParams,
    alpha: float,
    a_w: float,
    sigma_w2: float,
    n_p: int,
    method: str = "quadrature",
    rtol: float = 1e-8,
    max_degree: int = 64,
    seed: int = 0,
    batch_size: int = 1 << 15,
    max_samples: int = 1 << 24,
    statistic: str = "qpsk",
    workers: int | None = None,
) -> OracleResult:
    """Numerical D(P0^n || P1^n) in nats (n_p times the per-slot divergence)."""
    (_, d1), (_, err), detail = _slot_divergences(
        params, alpha, a_w, sigma_w2, method, rtol, max_degree, seed,
        batch_size, max_samples, statistic, workers,
    )
    used = "monte_carlo" if "samples" in detail else "quadrature"
    return OracleResult(n_p * d1, n_p * err, d1, err, used, detail)


@dataclass
class CovertBudget:
    """Budget inputs, the resulting occupancy rate and the bound chain."""

    delta: float
    n_p: int
    n_s: int
    r_pq: float
    sigma_w2: float
    a_w: float
    c_q: float
    alpha_n: float
    zeta: float
    h2_taylor: float
    h2_oracle: float | None = None
    h2_oracle_err: float | None = None
    relative_entropy: float | None = None
    pe_bounds: dict | None = None

    @classmethod
    def compute(
        cls,
        delta: float,
        n_p: int,
        params: PulseParams,
        a_w: float,
        sigma_w2: float,
        oracle: bool = True,
        **oracle_kw,
    ) -> "CovertBudget":
        a = alpha_n(delta, n_p, sigma_w2, a_w, params.c_q, params.r_pq)
        snr = _unit_snr(a_w, params.c_q, sigma_w2)
        out = cls(
            delta=delta,
            n_p=n_p,
            n_s=params.n_s,
            r_pq=params.r_pq,
            sigma_w2=sigma_w2,
            a_w=a_w,
            c_q=params.c_q,
            alpha_n=a,
            zeta=zeta(a, n_p * params.n_s),
            h2_taylor=h2_taylor(a, params.r_pq, snr, n_p),
        )
        if oracle:
            h = hellinger_oracle(params, a, a_w, sigma_w2, n_p, **oracle_kw)
            d = relative_entropy_oracle(params, a, a_w, sigma_w2, n_p, **oracle_kw)
            out.h2_oracle, out.h2_oracle_err = h.value, h.stderr
            out.relative_entropy = d.value
            out.pe_bounds = {
                "pinsker": pe_bound_pinsker(d.value),
                "hellinger": pe_bound_hellinger(math.sqrt(min(1.0, max(0.0, h.value)))),
            }
        return out

    def to_dict(self) -> dict:
        return asdict(self)
