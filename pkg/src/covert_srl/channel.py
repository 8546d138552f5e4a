"""Block-AWGN broadcast channel.

Each pulse slot sees a constant gain ``a * exp(j theta_i)`` with ``theta_i``
uniform on [0, 2 pi) and independent across slots, plus circularly-symmetric
complex Gaussian noise of variance ``2 * sigma2`` per complex sample
(``sigma2`` per real quadrature).

Randomness is counter based: slot chunk ``k`` always draws from the ``k``-th
jump of a Philox stream keyed by the seed, so any slice of slots can be
reproduced independently of how the work is split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

SLOT_CHUNK = 1024
SAMPLE_CHUNK = 1 << 16

_PHASE_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True)
class ChannelParams:
    """Attenuation, per-quadrature noise variance and the phase model.

    ``phase`` is ``None`` for a fresh uniform phase on every pulse slot, or a
    fixed angle in radians.
    """

    a: float
    sigma2: float
    phase: float | None = None

    def __post_init__(self):
        if not (self.a >= 0 and math.isfinite(self.a)):
            raise InvalidParameterError(f"attenuation must be finite and >= 0, got {self.a!r}")
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise InvalidParameterError(f"sigma2 must be finite and >= 0, got {self.sigma2!r}")

    @property
    def noise_std(self) -> float:
        """Standard deviation of each real quadrature."""
        return math.sqrt(self.sigma2)

    def snr(self, c_q: float) -> float:
        return self.a**2 * c_q**2 / self.sigma2 if self.sigma2 > 0 else math.inf

    def with_phase(self, phase: float | None) -> "ChannelParams":
        return ChannelParams(self.a, self.sigma2, phase)

    def to_dict(self) -> dict:
        return {"a": self.a, "sigma2": self.sigma2, "phase": self.phase}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        return cls(float(d["a"]), float(d["sigma2"]), d.get("phase"))


def _key(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _substream(seed, stream: int, chunk: int) -> np.random.Generator:
    ss = _key(seed)
    child = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (stream,))
    return np.random.Generator(np.random.Philox(child).jumped(chunk))


def slot_phases(n_slots: int, params: ChannelParams, seed, start_slot: int = 0) -> np.ndarray:
    """Per-slot channel phases for slots ``start_slot .. start_slot + n_slots - 1``."""
    if params.phase is not None:
        return np.full(n_slots, float(params.phase))
    out = np.empty(n_slots)
    stop = start_slot + n_slots
    for chunk in range(start_slot // SLOT_CHUNK, -(-stop // SLOT_CHUNK) if stop else 0):
        lo = chunk * SLOT_CHUNK
        draw = _substream(seed, _PHASE_STREAM, chunk).uniform(0.0, 2 * math.pi, SLOT_CHUNK)
        a, b = max(lo, start_slot), min(lo + SLOT_CHUNK, stop)
        out[a - start_slot : b - start_slot] = draw[a - lo : b - lo]
    return out


def awgn(n: int, sigma2: float, seed, start: int = 0, stream: int = _NOISE_STREAM) -> np.ndarray:
    """``n`` samples of CN(0, 2 sigma2) noise beginning at absolute index ``start``."""
    out = np.empty(n, dtype=complex)
    if sigma2 == 0:
        out[:] = 0
        return out
    std = math.sqrt(sigma2)
    stop = start + n
    for chunk in range(start // SAMPLE_CHUNK, -(-stop // SAMPLE_CHUNK) if stop else 0):
        lo = chunk * SAMPLE_CHUNK
        z = _substream(seed, stream, chunk).standard_normal((SAMPLE_CHUNK, 2))
        a, b = max(lo, start), min(lo + SAMPLE_CHUNK, stop)
        seg = z[a - lo : b - lo]
        out[a - start : b - start] = std * (seg[:, 0] + 1j * seg[:, 1])
    return out


def transmit(slots, params: ChannelParams, seed, start_slot: int = 0) -> np.ndarray:
    """Pass pulse slots through the channel.

    Parameters
    ----------
    slots : array_like, shape (n_slots, n_s)
        Transmitted complex slots, all of the same length.
    params : ChannelParams
    seed : int or SeedSequence
    start_slot : int
        Absolute index of the first slot; lets a slice of a longer sequence be
        processed on its own with bit-identical output.

    Returns
    -------
    ndarray, shape (n_slots, n_s)
        ``a * exp(j theta_i) * slot_i + z_i`` for each slot.
    """
    if isinstance(slots, (list, tuple)):
        lengths = {len(s) for s in slots}
        if len(lengths) > 1:
            raise InvalidInputError(f"all slots must have the same length, got {sorted(lengths)}")
    x = np.asarray(slots, dtype=complex)
    if x.ndim != 2:
        raise InvalidInputError("slots must be a 2-D array (n_slots, n_s)")
    n_slots, n_s = x.shape
    theta = slot_phases(n_slots, params, seed, start_slot)
    noise = awgn(n_slots * n_s, params.sigma2, seed, start=start_slot * n_s).reshape(n_slots, n_s)
    return params.a * np.exp(1j * theta)[:, None] * x + noise


def transmit_stream(
    samples: np.ndarray,
    params: ChannelParams,
    seed,
    block_starts: np.ndarray | None = None,
) -> np.ndarray:
    """Pass a contiguous sample stream through the channel.

    The stream is cut into coherence blocks at ``block_starts``; each block
    gets its own phase draw (or the fixed phase). Noise covers every sample.
    """
    x = np.asarray(samples, dtype=complex)
    n = len(x)
    if block_starts is None:
        block_starts = np.array([0])
    block_starts = np.asarray(block_starts, dtype=int)
    if len(block_starts) == 0 or block_starts[0] != 0 or np.any(np.diff(block_starts) <= 0):
        raise InvalidInputError("block_starts must start at 0 and be strictly increasing")
    theta = slot_phases(len(block_starts), params, seed)
    lengths = np.diff(np.append(block_starts, n))
    rot = np.repeat(np.exp(1j * theta), lengths)
    return params.a * rot * x + awgn(n, params.sigma2, seed)
