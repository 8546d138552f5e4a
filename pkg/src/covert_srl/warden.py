"""Willie: SNR calibration, the optimal likelihood-ratio test and a radiometer baseline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import covertness_budget as cb
from .errors import InsufficientCalibrationError, InvalidInputError
from .pulse_shaping import PulsePair, PulseParams


@dataclass(frozen=True)
class SnrEstimate:
    a_w2_hat: float
    sigma_w2_hat: float
    snr_hat: float
    snr_db: float
    c_q: float
    theta_hat: float = float("nan")
    n_on: int = 0
    n_off: int = 0
    method: str = "coherent"
    a_w2_raw: float = float("nan")  # before clipping at zero; unbiased

    @classmethod
    def build(cls, a2: float, s2: float, c_q: float, **kw) -> "SnrEstimate":
        snr = a2 * c_q**2 / s2
        db = 10 * math.log10(snr) if snr > 0 else -math.inf
        return cls(a2, s2, snr, db, c_q, **kw)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_snr(
    slots: np.ndarray,
    t: np.ndarray,
    symbols: np.ndarray,
    thetas: np.ndarray,
    params: PulseParams,
    method: str = "coherent",
    bias_correct: bool = True,
) -> SnrEstimate:
    """Estimate a_w^2, sigma_w^2 and the SNR from a calibration segment.

    Parameters
    ----------
    slots : (n_p, n_s) complex
        Willie's observation of the calibration segment, one row per slot.
    t : (n_p,) bool
        Which slots carried a pulse.
    symbols, thetas : (n_t,)
        Transmitted symbols and transmitter phases for the pulse-bearing slots.
    method : {"coherent", "energy"}
        ``"coherent"`` averages <u, w>/c^2 and needs a channel phase that is
        stable across the calibration; ``"energy"`` averages |<u, w>|^2 and is
        insensitive to the channel phase.
    bias_correct : bool
        Subtract the noise contribution to the squared estimate. Without it
        the estimate is biased upward by about 2 sigma^2 / (c^2 n_on).

    The noise variance comes from the empty slots: mean ||w||^2 / (2 n_s).
    """
    slots = np.asarray(slots, dtype=complex)
    t = np.asarray(t, dtype=bool)
    if slots.ndim != 2 or slots.shape != (t.size, params.n_s):
        raise InvalidInputError(f"slots must have shape ({t.size}, {params.n_s}), got {slots.shape}")
    n_on = int(t.sum())
    n_off = t.size - n_on
    if n_on == 0 or n_off == 0:
        raise InsufficientCalibrationError(
            f"need both pulse-bearing and empty slots, got {n_on} and {n_off}"
        )
    s2 = float(np.mean(np.abs(slots[~t]) ** 2)) / 2
    if s2 <= 0:
        s2 = np.finfo(float).tiny
    pair = PulsePair.from_params(params)
    c2 = params.c**2
    u = pair.waveforms(np.asarray(symbols), np.asarray(thetas, dtype=float))
    inner = np.sum(np.conj(u) * slots[t], axis=1)
    if method == "coherent":
        m = inner.mean() / c2
        a2 = abs(m) ** 2 - (2 * s2 / (c2 * n_on) if bias_correct else 0.0)
        theta = float(np.angle(m))
    elif method == "energy":
        a2 = (np.mean(np.abs(inner) ** 2) - (2 * s2 * c2 if bias_correct else 0.0)) / c2**2
        theta = float("nan")
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    raw = float(a2)
    return SnrEstimate.build(max(raw, 0.0), s2, params.c_q, theta_hat=theta, n_on=n_on, n_off=n_off,
                             method=method, a_w2_raw=raw)


def to_slots(segment: np.ndarray, n_s: int, n_p: int | None = None) -> np.ndarray:
    """Reshape the first ``n_p * n_s`` samples into (n_p, n_s) rows."""
    segment = np.asarray(segment, dtype=complex)
    if n_p is None:
        n_p = len(segment) // n_s
    if len(segment) < n_p * n_s:
        raise InvalidInputError(f"segment of {len(segment)} samples cannot hold {n_p} slots of {n_s}")
    return segment[: n_p * n_s].reshape(n_p, n_s)


def frame_llr(
    segment: np.ndarray,
    params: PulseParams,
    alpha: float,
    a_w: float,
    sigma_w2: float,
    n_p: int | None = None,
    statistic: str = "qpsk",
) -> float:
    """Log-likelihood ratio of H1 (sparse pulses) against H0 (noise) for a segment.

    Declare H1 iff the result is positive.
    """
    if alpha == 0:
        return 0.0
    pair = PulsePair.from_params(params)
    w = to_slots(segment, params.n_s, n_p)
    return float(np.sum(cb.slot_llr(w, pair.pilot, pair.data, alpha, a_w, sigma_w2, statistic)))


def radiometer(segment: np.ndarray, n_s: int, n_p: int | None = None) -> float:
    """Total received energy over the slotted part of the segment."""
    return float(np.sum(np.abs(to_slots(segment, n_s, n_p)) ** 2))


def radiometer_threshold(n_p: int, params: PulseParams, alpha: float, a_w: float, sigma_w2: float) -> float:
    """Midpoint between the expected energies under H0 and H1."""
    e0 = 2 * sigma_w2 * n_p * params.n_s
    return e0 + 0.5 * alpha * n_p * a_w**2 * params.c**2


@dataclass
class DetectionReport:
    llr_on: np.ndarray
    llr_off: np.ndarray
    false_alarm: float
    miss: float
    p_e_w_empirical: float
    stderr: float
    p_e_w_bound: float = float("nan")
    bound_err: float = 0.0
    consistent: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self, with_llrs: bool = False) -> dict:
        d = {
            "false_alarm": self.false_alarm,
            "miss": self.miss,
            "p_e_w_empirical": self.p_e_w_empirical,
            "stderr": self.stderr,
            "p_e_w_bound": self.p_e_w_bound,
            "bound_err": self.bound_err,
            "consistent": self.consistent,
            "n_trials": int(len(self.llr_on) + len(self.llr_off)),
            **self.extra,
        }
        if with_llrs:
            d["llr_on"] = np.asarray(self.llr_on).tolist()
            d["llr_off"] = np.asarray(self.llr_off).tolist()
        return d


def error_rates(stat_on, stat_off, threshold: float = 0.0) -> tuple[float, float, float, float]:
    """(false alarm, miss, p_e, binomial standard error of p_e) for a threshold test."""
    on = np.asarray(stat_on, dtype=float)
    off = np.asarray(stat_off, dtype=float)
    if on.size == 0 or off.size == 0:
        raise InvalidInputError("need at least one trial under each hypothesis")
    fa = float(np.mean(off > threshold))
    miss = float(np.mean(on <= threshold))
    pe = 0.5 * (fa + miss)
    se = 0.5 * math.sqrt(fa * (1 - fa) / off.size + miss * (1 - miss) / on.size)
    return fa, miss, pe, se


def empirical_pe(llr_on, llr_off, bound: float | None = None, bound_err: float = 0.0) -> DetectionReport:
    """Detection error of the zero-threshold LLR test over balanced trials.

    ``bound`` is the analytic lower bound for the same parameters. The report
    flags (and warns) when p_e falls below it by more than three combined
    standard errors.
    """
    fa, miss, pe, se = error_rates(llr_on, llr_off)
    ok = True
    if bound is not None:
        se_floor = max(se, 0.5 / math.sqrt(len(llr_on) + len(llr_off)))
        ok = pe >= bound - 3 * (se_floor + bound_err)
        if not ok:
            warnings.warn(f"empirical detection error {pe:.4f} is below the bound {bound:.4f}", stacklevel=2)
    return DetectionReport(
        np.asarray(llr_on, dtype=float),
        np.asarray(llr_off, dtype=float),
        fa,
        miss,
        pe,
        se,
        float("nan") if bound is None else float(bound),
        bound_err,
        ok,
    )


def hellinger_bound(
    params: PulseParams,
    alpha: float,
    a_w: float,
    sigma_w2: float,
    n_p: int,
    **oracle_kw,
) -> tuple[float, float]:
    """(p_e lower bound, its numerical error) from the frame-level Hellinger oracle."""
    if alpha == 0 or n_p == 0:
        return 0.5, 0.0
    res = cb.hellinger_oracle(params, alpha, a_w, sigma_w2, n_p, **oracle_kw)
    h = math.sqrt(max(res.value, 0.0))
    bound = cb.pe_bound_hellinger(h)
    err = res.stderr / (2 * math.sqrt(2) * h) if h > 0 else 0.0
    return bound, err
