"""Gaussian-enveloped pilot and QPSK data pulses.

Every occupied pulse slot carries a real, strictly positive pilot segment
followed by a QPSK data segment. Both segments share the same random phase
rotation so that the receiver can recover the data phase from the pilot.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidParameterError, InvalidSymbolError

CONFINEMENT = 0.999
# Truncation of the infinite denominator sum, in multiples of the segment length.
WINDOW_LEFT = 10
WINDOW_RIGHT = 11
SIGMA_RTOL = 1e-6
SIGMA_LO = 1e-3

QPSK_SYMBOLS = (1, 2, 3, 4)


def qpsk_phase(x: int) -> float:
    """Data-segment phase of QPSK symbol ``x``: pi*(2x - 1)/4."""
    if x not in QPSK_SYMBOLS:
        raise InvalidSymbolError(f"symbol must be one of {QPSK_SYMBOLS}, got {x!r}")
    return math.pi * (2 * x - 1) / 4


def gaussian_envelope(n_s_k: int, sigma_k: float) -> np.ndarray:
    """Sample exp(-(m - n/2)^2 / (2 sigma^2)) at m = 0..n-1.

    The centre is n/2 rather than (n-1)/2, so even-length envelopes peak on a
    sample and odd-length ones are centred between two samples.
    """
    if int(n_s_k) != n_s_k or n_s_k < 1:
        raise InvalidParameterError(f"segment length must be a positive integer, got {n_s_k!r}")
    if not sigma_k > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma_k!r}")
    m = np.arange(int(n_s_k), dtype=float)
    if math.isinf(sigma_k):
        return np.ones_like(m)
    return np.exp(-((m - n_s_k / 2) ** 2) / (2 * sigma_k**2))


def normalize_pulse(envelope: np.ndarray, c_k: float) -> np.ndarray:
    """Scale ``envelope`` to Euclidean norm ``c_k``."""
    env = np.asarray(envelope, dtype=float)
    if c_k < 0 or not math.isfinite(c_k):
        raise InvalidParameterError(f"magnitude must be finite and >= 0, got {c_k!r}")
    norm = np.linalg.norm(env)
    if norm == 0:
        raise DegenerateInputError("cannot normalise an all-zero envelope")
    return env * (c_k / norm)


def _window_tail_bound(n_s_k: int, sigma_k: float) -> float:
    """Upper bound on the mass outside the truncation window, relative to the peak sample."""
    d = WINDOW_LEFT * n_s_k + n_s_k / 2  # distance from centre to nearest window edge
    q = math.exp(-d / sigma_k**2)
    if q >= 1.0:
        return math.inf
    return 2 * math.exp(-(d**2) / (2 * sigma_k**2)) / (1 - q)


def confinement_ratio(n_s_k: int, sigma_k: float, measure: str = "amplitude") -> float:
    """In-slot fraction of the envelope mass.

    ``measure="amplitude"`` sums the envelope samples themselves; ``"energy"``
    sums their squares. The all-integer denominator is truncated to
    m in [-10 n, 11 n].
    """
    if measure not in ("amplitude", "energy"):
        raise InvalidParameterError(f"unknown measure {measure!r}")
    m = np.arange(-WINDOW_LEFT * n_s_k, WINDOW_RIGHT * n_s_k + 1, dtype=float)
    d2 = (m - n_s_k / 2) ** 2
    # shift by the closest sample so tiny widths do not underflow to 0/0
    g = np.exp(-(d2 - d2.min()) / (2 * sigma_k**2))
    if measure == "energy":
        g = g * g
    inside = (m >= 0) & (m < n_s_k)
    return float(g[inside].sum() / g.sum())


def select_sigma(n_s_k: int, measure: str = "amplitude") -> float:
    """Largest envelope width keeping ``CONFINEMENT`` of the mass inside the slot.

    Bisection over [1e-3, 10 n]; the in-slot ratio decreases monotonically in
    sigma. A one-sample segment admits no solution because the samples at
    m = 0 and m = 1 are equidistant from the centre.
    """
    if int(n_s_k) != n_s_k or n_s_k < 1:
        raise InvalidParameterError(f"segment length must be a positive integer, got {n_s_k!r}")
    n_s_k = int(n_s_k)
    lo, hi = SIGMA_LO, 10.0 * n_s_k
    if confinement_ratio(n_s_k, lo, measure) < CONFINEMENT:
        raise InvalidParameterError(
            f"no envelope width confines {CONFINEMENT} of the mass to a {n_s_k}-sample segment"
        )
    while hi / lo - 1 > SIGMA_RTOL:
        mid = math.sqrt(lo * hi)
        if confinement_ratio(n_s_k, mid, measure) >= CONFINEMENT:
            lo = mid
        else:
            hi = mid
    assert _window_tail_bound(n_s_k, lo) < 1e-15 * math.sqrt(2 * math.pi) * lo
    return lo


@dataclass(frozen=True)
class PulseParams:
    """Design parameters of a pilot + data pulse.

    ``sigma_p``/``sigma_q`` default to the widest envelopes satisfying the
    in-slot confinement criterion.
    """

    n_s_pilot: int
    n_s_data: int
    c_p: float
    c_q: float
    sigma_p: float = field(default=None)  # type: ignore[assignment]
    sigma_q: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        for name in ("n_s_pilot", "n_s_data"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (self.c_p >= 0 and math.isfinite(self.c_p)):
            raise InvalidParameterError(f"c_p must be finite and >= 0, got {self.c_p!r}")
        if not (self.c_q > 0 and math.isfinite(self.c_q)):
            raise InvalidParameterError(f"c_q must be finite and > 0, got {self.c_q!r}")
        object.__setattr__(self, "c_p", float(self.c_p))
        object.__setattr__(self, "c_q", float(self.c_q))
        if self.sigma_p is None:
            object.__setattr__(self, "sigma_p", select_sigma(self.n_s_pilot))
        if self.sigma_q is None:
            object.__setattr__(self, "sigma_q", select_sigma(self.n_s_data))
        if not (self.sigma_p > 0 and self.sigma_q > 0):
            raise InvalidParameterError("envelope widths must be positive")

    @property
    def n_s(self) -> int:
        return self.n_s_pilot + self.n_s_data

    @property
    def r_pq(self) -> float:
        return self.c_p / self.c_q

    @property
    def c(self) -> float:
        return math.hypot(self.c_p, self.c_q)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PulseParams":
        keys = ("n_s_pilot", "n_s_data", "c_p", "c_q", "sigma_p", "sigma_q")
        return cls(**{k: d[k] for k in keys if k in d and d[k] is not None})


@dataclass(frozen=True)
class PulsePair:
    """Sampled pilot (scaled) and unit-norm data template for one design."""

    params: PulseParams
    pilot: np.ndarray
    data_template: np.ndarray

    @classmethod
    def from_params(cls, params: PulseParams) -> "PulsePair":
        pilot = normalize_pulse(gaussian_envelope(params.n_s_pilot, params.sigma_p), params.c_p)
        tmpl = normalize_pulse(gaussian_envelope(params.n_s_data, params.sigma_q), 1.0)
        pilot.setflags(write=False)
        tmpl.setflags(write=False)
        return cls(params, pilot, tmpl)

    @property
    def data(self) -> np.ndarray:
        """Data segment with magnitude c_q (before QPSK rotation)."""
        return self.data_template * self.params.c_q

    @property
    def n_s(self) -> int:
        return self.params.n_s

    @property
    def c(self) -> float:
        return self.params.c

    def waveform(self, x: int, theta: float = 0.0) -> np.ndarray:
        phi = qpsk_phase(x)
        out = np.empty(self.n_s, dtype=complex)
        out[: self.params.n_s_pilot] = np.exp(1j * theta) * self.pilot
        out[self.params.n_s_pilot :] = np.exp(1j * (theta + phi)) * self.data
        return out

    def waveforms(self, symbols: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        """Vectorised ``waveform``: one row per (symbol, theta) pair."""
        symbols = np.asarray(symbols)
        thetas = np.asarray(thetas, dtype=float)
        if symbols.size and (symbols.min() < 1 or symbols.max() > 4):
            raise InvalidSymbolError("symbols must lie in {1, 2, 3, 4}")
        rot = np.exp(1j * thetas)[:, None]
        data_rot = np.exp(1j * np.pi * (2 * symbols - 1) / 4)[:, None]
        return np.hstack([rot * self.pilot[None, :], rot * data_rot * self.data[None, :]])


def assemble_pulse(params: PulseParams, x: int, theta: float) -> np.ndarray:
    """Complex n_s-sample slot waveform for symbol ``x`` rotated by ``theta``."""
    return PulsePair.from_params(params).waveform(x, theta)
