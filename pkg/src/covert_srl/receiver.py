"""Bob: preamble synchronization, pilot-aided phase recovery and QPSK decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import InvalidInputError, SyncFailureError, UnusablePilotError
from .pulse_shaping import PulsePair, PulseParams
from .transmitter import SecretKey

SYNC_THRESHOLD = 5.0


def h2(p) -> np.ndarray | float:
    """Binary entropy in bits with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.where(p > 0, p * np.log2(p), 0.0) - np.where(q > 0, q * np.log2(q), 0.0)
    return float(out) if out.ndim == 0 else out


def bsc_capacity(p_e) -> np.ndarray | float:
    c = 1.0 - h2(p_e)
    return c


# -- synchronization -----------------------------------------------------------


def correlate(rx: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Cross-correlation magnitude normalized by the template energy.

    ``out[k] = |<template, rx[k:k+L]>| / ||template||^2`` for every full-overlap
    lag, so a noiseless unit-gain copy scores 1. Dividing by the local received
    energy as well would add noise to the peak position; argmax of this
    statistic is the maximum-likelihood offset under an unknown carrier phase.
    """
    rx = np.asarray(rx, dtype=complex)
    template = np.asarray(template, dtype=complex)
    energy = float(np.vdot(template, template).real)
    if energy == 0:
        raise InvalidInputError("template is identically zero")
    return np.abs(signal.correlate(rx, template, mode="valid", method="fft")) / energy


def sync_preamble(
    rx: np.ndarray,
    template: np.ndarray,
    threshold: float = SYNC_THRESHOLD,
    search: tuple[int, int] | None = None,
) -> int:
    """Offset of ``template`` inside ``rx``; the payload starts at offset + len(template).

    ``search`` optionally restricts the candidate offsets to ``[lo, hi)``.
    Raises SyncFailureError when the peak is less than ``threshold`` times the
    median correlation.
    """
    if len(rx) < len(template):
        raise InvalidInputError(f"received {len(rx)} samples, template needs {len(template)}")
    if search is not None:
        lo, hi = max(0, search[0]), min(len(rx) - len(template) + 1, search[1])
        if hi <= lo:
            raise InvalidInputError(f"empty search window {search}")
        rx = rx[lo : hi + len(template) - 1]
    else:
        lo = 0
    c = correlate(rx, template)
    k = int(np.argmax(c))
    med = float(np.median(c))
    ratio = c[k] / med if med > 0 else (math.inf if c[k] > 0 else 0.0)
    if len(c) == 1:
        ratio = math.inf if c[0] > 0.5 else 0.0
    if ratio < threshold:
        raise SyncFailureError(f"correlation peak only {ratio:.2f}x the median", ratio=ratio)
    return lo + k


# -- per-slot processing -------------------------------------------------------


def estimate_phase(y_p: np.ndarray, c_p: np.ndarray, convention: str = "atan2") -> np.ndarray | float:
    """Pilot phase estimate from p_I + j p_Q = <c_p, y_p>.

    ``convention="atan2"`` returns atan2(p_Q, p_I) in [0, 2 pi).
    ``convention="printed"`` returns arctan(p_I / p_Q), kept for audits.
    ``y_p`` may be a single segment or a stack of them (last axis = samples).
    """
    c_p = np.asarray(c_p, dtype=float)
    if not np.any(c_p):
        raise UnusablePilotError("pilot shape is identically zero")
    proj = np.sum(np.asarray(y_p, dtype=complex) * c_p, axis=-1)
    if convention == "atan2":
        out = np.mod(np.arctan2(proj.imag, proj.real), 2 * np.pi)
    elif convention == "printed":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.arctan(proj.real / proj.imag)
    else:
        raise InvalidInputError(f"unknown phase convention {convention!r}")
    return float(out) if np.ndim(out) == 0 else out


def hard_bits(r_I, r_Q) -> np.ndarray:
    """Bit pairs (b0, b1) from the quadrature and in-phase projections; sgn(0) = +1."""
    b0 = (np.asarray(r_Q) < 0).astype(np.uint8)
    b1 = (np.asarray(r_I) < 0).astype(np.uint8)
    return np.stack([b0, b1], axis=-1)


def demod_slot(y_q: np.ndarray, theta_hat, c_q: np.ndarray):
    """Derotate the data segment and project on the data shape.

    Works on one segment or a stack. Returns ``(r_I, r_Q, bits)`` where
    ``bits[..., 0]`` comes from r_Q and ``bits[..., 1]`` from r_I.
    """
    y_q = np.asarray(y_q, dtype=complex)
    c_q = np.asarray(c_q, dtype=float)
    if y_q.shape[-1] != c_q.shape[-1]:
        raise InvalidInputError(f"data segment has {y_q.shape[-1]} samples, shape has {c_q.shape[-1]}")
    th = np.asarray(theta_hat, dtype=float)
    z = np.sum(y_q * c_q, axis=-1)
    # real arithmetic so a stack and its rows give identical bits
    cos, sin = np.cos(th), np.sin(th)
    r_I = z.real * cos + z.imag * sin
    r_Q = z.imag * cos - z.real * sin
    return r_I, r_Q, hard_bits(r_I, r_Q)


@dataclass
class DecodeReport:
    n_t: int
    bit_errors: int
    p_e_bsc: float
    C_bsc: float
    B_bsc: float
    per_pulse: dict = field(default_factory=dict, repr=False)

    def to_dict(self, per_pulse: bool = False) -> dict:
        d = {
            "n_t": self.n_t,
            "bit_errors": self.bit_errors,
            "p_e_bsc": self.p_e_bsc,
            "C_bsc": self.C_bsc,
            "B_bsc": self.B_bsc,
        }
        if per_pulse:
            d["per_pulse"] = {k: np.asarray(v).tolist() for k, v in self.per_pulse.items()}
        return d


def report_from_errors(n_t: int, bit_errors: int, per_pulse: dict | None = None) -> DecodeReport:
    """Assemble a report; an empty key gives p_e = 1/2 and zero throughput."""
    if n_t == 0:
        return DecodeReport(0, 0, 0.5, 0.0, 0.0, per_pulse or {})
    p = bit_errors / (2 * n_t)
    C = float(bsc_capacity(p))
    return DecodeReport(n_t, int(bit_errors), p, C, 2 * n_t * C, per_pulse or {})


def decode_frame(
    rx: np.ndarray,
    key: SecretKey,
    params: PulseParams,
    truth_bits: np.ndarray,
    convention: str = "atan2",
) -> DecodeReport:
    """Decode the Alice-on segment ``rx`` (already synchronized).

    Only slots with ``t_i = 1`` are examined. Decisions are un-padded with the
    key pad and compared to ``truth_bits``.
    """
    rx = np.asarray(rx, dtype=complex)
    need = key.n_p * params.n_s
    if len(rx) < need:
        raise InvalidInputError(f"segment has {len(rx)} samples, key needs {need}")
    truth_bits = np.asarray(truth_bits, dtype=np.uint8)
    if truth_bits.size != 2 * key.n_t:
        raise InvalidInputError(f"expected {2 * key.n_t} truth bits, got {truth_bits.size}")
    if key.empty:
        return report_from_errors(0, 0)
    pair = PulsePair.from_params(params)
    slots = rx[:need].reshape(key.n_p, params.n_s)[key.indices]
    theta = estimate_phase(slots[:, : params.n_s_pilot], pair.pilot, convention)
    theta = np.atleast_1d(theta)
    r_I, r_Q, bits = demod_slot(slots[:, params.n_s_pilot :], theta, pair.data)
    decided = bits.reshape(-1) ^ key.s
    errors = int(np.count_nonzero(decided != truth_bits))
    per_pulse = {"theta_hat": theta, "r_I": r_I, "r_Q": r_Q, "bits": bits}
    return report_from_errors(key.n_t, errors, per_pulse)


def receive(
    rx_stream: np.ndarray,
    preamble: np.ndarray,
    key: SecretKey,
    params: PulseParams,
    truth_bits: np.ndarray,
    threshold: float = SYNC_THRESHOLD,
    search: tuple[int, int] | None = None,
    convention: str = "atan2",
) -> tuple[int, DecodeReport]:
    """Synchronize on ``preamble`` then decode; returns (preamble offset, report)."""
    offset = sync_preamble(rx_stream, preamble, threshold, search)
    start = offset + len(preamble)
    report = decode_frame(rx_stream[start:], key, params, truth_bits, convention)
    return offset, report
