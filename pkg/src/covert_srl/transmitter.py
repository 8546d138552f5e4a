"""Alice: pre-shared secret, one-time-padded QPSK mapping and packet framing.

Packet layout (samples)::

    | preamble (15400) | Alice-on (T * f_s) | Alice-off (T * f_s) |

The Alice-on segment holds ``n_p = floor(T f_s / n_s)`` pulse slots; only the
slots selected by the secret vector ``t`` are non-zero. Leftover samples after
the last slot are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .pulse_shaping import PulsePair, PulseParams

BARKER13 = np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1], dtype=float)
PREAMBLE_REPEATS = 5
PREAMBLE_SPS = 200
RRC_BETA = 0.35
RRC_SPAN = 12
PREAMBLE_LEN = BARKER13.size * PREAMBLE_REPEATS * PREAMBLE_SPS + RRC_SPAN * PREAMBLE_SPS
DEFAULT_PREAMBLE_GAIN = 10.0  # preamble amplitude in units of c_q

# Gray map between bit pairs (b0, b1) and symbols. b0 rides on the quadrature
# branch and b1 on the in-phase branch; a 0 bit means a positive projection.
_PAIR_TO_SYMBOL = {(0, 0): 1, (0, 1): 2, (1, 1): 3, (1, 0): 4}
_SYMBOL_TO_PAIR = {v: k for k, v in _PAIR_TO_SYMBOL.items()}
_PAIR_INDEX_TO_SYMBOL = np.array([1, 2, 4, 3])  # index = 2*b0 + b1
_SYMBOL_TO_BITS = np.array([[0, 0], [0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)


@dataclass(frozen=True)
class SecretKey:
    """Slot-selection vector ``t`` and the 2 n_t-bit one-time pad ``s``."""

    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=bool)
        s = np.asarray(self.s, dtype=np.uint8)
        if s.size != 2 * int(t.sum()):
            raise InvalidInputError(f"pad has {s.size} bits, expected 2 * n_t = {2 * int(t.sum())}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    @property
    def n_p(self) -> int:
        return self.t.size

    @property
    def n_t(self) -> int:
        return int(self.t.sum())

    @property
    def empty(self) -> bool:
        """True when no slot was selected; the trial carries zero bits."""
        return self.n_t == 0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.t)

    def to_dict(self) -> dict:
        return {
            "n_p": self.n_p,
            "t_indices": self.indices.tolist(),
            "s_hex": pack_bits_hex(self.s),
            "s_len": int(self.s.size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SecretKey":
        t = np.zeros(int(d["n_p"]), dtype=bool)
        t[np.asarray(d["t_indices"], dtype=int)] = True
        return cls(t, unpack_bits_hex(d["s_hex"], int(d["s_len"])))


def pack_bits_hex(bits: np.ndarray) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def unpack_bits_hex(hexstr: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8)
    return np.unpackbits(raw)[:n].astype(np.uint8)


def gen_secret(n_p: int, alpha: float, seed) -> SecretKey:
    """Draw t_i ~ Bernoulli(alpha) i.i.d. and a uniform 2 n_t-bit pad."""
    if n_p < 0 or int(n_p) != n_p:
        raise InvalidParameterError(f"n_p must be a non-negative integer, got {n_p!r}")
    if not (0 <= alpha <= 1):
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha!r}")
    rng = np.random.default_rng(seed)
    t = rng.random(int(n_p)) < alpha
    s = rng.integers(0, 2, size=2 * int(t.sum()), dtype=np.uint8)
    return SecretKey(t, s)


def calibration_key(n_p: int, seed, every: int = 5) -> SecretKey:
    """Key occupying every ``every``-th slot, used for SNR calibration packets."""
    t = np.zeros(n_p, dtype=bool)
    t[::every] = True
    s = np.random.default_rng(seed).integers(0, 2, size=2 * int(t.sum()), dtype=np.uint8)
    return SecretKey(t, s)


def bits_to_symbols(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 2:
        raise InvalidInputError("bit count must be even")
    pairs = bits.reshape(-1, 2)
    return _PAIR_INDEX_TO_SYMBOL[2 * pairs[:, 0] + pairs[:, 1]]


def symbols_to_bits(symbols: np.ndarray) -> np.ndarray:
    return _SYMBOL_TO_BITS[np.asarray(symbols, dtype=int)].reshape(-1)


def encode_message(data_bits: np.ndarray, pad: np.ndarray) -> np.ndarray:
    """XOR the data with the pad and Gray-map consecutive bit pairs to symbols 1..4."""
    data_bits = np.asarray(data_bits, dtype=np.uint8)
    pad = np.asarray(pad, dtype=np.uint8)
    if data_bits.shape != pad.shape:
        raise InvalidInputError(f"data has {data_bits.size} bits but pad has {pad.size}")
    return bits_to_symbols(data_bits ^ pad)


# -- preamble -----------------------------------------------------------------


def rrc_taps(beta: float = RRC_BETA, sps: int = PREAMBLE_SPS, span: int = RRC_SPAN) -> np.ndarray:
    """Unit-energy root-raised-cosine filter with ``span * sps + 1`` taps."""
    if not (0 < beta <= 1):
        raise InvalidParameterError(f"roll-off must lie in (0, 1], got {beta!r}")
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    h = np.empty_like(t)
    at_zero = t == 0
    singular = np.isclose(np.abs(t), 1 / (4 * beta))
    regular = ~(at_zero | singular)
    tr = t[regular]
    h[regular] = (
        np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    ) / (np.pi * tr * (1 - (4 * beta * tr) ** 2))
    h[at_zero] = 1 - beta + 4 * beta / np.pi
    h[singular] = (beta / math.sqrt(2)) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
    )
    return h / np.linalg.norm(h)


def build_preamble(amplitude: float = 1.0) -> np.ndarray:
    """Five Barker-13 repetitions, BPSK, one symbol per 200 samples, RRC shaped.

    Returns a real-valued (stored complex) vector of 15400 samples.
    """
    chips = np.tile(BARKER13, PREAMBLE_REPEATS)
    up = np.zeros(chips.size * PREAMBLE_SPS)
    up[::PREAMBLE_SPS] = chips
    return (amplitude * np.convolve(up, rrc_taps())).astype(complex)


# -- framing ------------------------------------------------------------------


@dataclass
class Frame:
    preamble: np.ndarray
    alice_on: np.ndarray
    alice_off: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def samples(self) -> np.ndarray:
        return np.concatenate([self.preamble, self.alice_on, self.alice_off])

    @property
    def on_offset(self) -> int:
        return len(self.preamble)

    @property
    def off_offset(self) -> int:
        return len(self.preamble) + len(self.alice_on)

    def block_starts(self) -> np.ndarray:
        """Coherence-block boundaries: preamble, each pulse slot, then the rest."""
        n_p, n_s = self.meta["n_p"], self.meta["n_s"]
        slots = self.on_offset + n_s * np.arange(n_p)
        tail = [self.on_offset + n_p * n_s] if len(self.alice_on) + len(self.alice_off) > n_p * n_s else []
        return np.concatenate([[0], slots, tail]).astype(int)


def slots_for(T: float, sample_rate: float, n_s: int) -> tuple[int, int]:
    """(segment length in samples, n_p) for a T-second segment."""
    n = int(math.floor(T * sample_rate + 1e-9))
    return n, n // n_s


def draw_thetas(n: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 2 * math.pi, n)


def build_frame(
    params: PulseParams,
    key: SecretKey,
    symbols: np.ndarray,
    thetas: np.ndarray,
    T: float,
    sample_rate: float,
    preamble_amplitude: float | None = None,
    include_off: bool = True,
) -> Frame:
    """Place one pulse per selected slot in the Alice-on segment."""
    n_seg, n_p = slots_for(T, sample_rate, params.n_s)
    if key.n_p != n_p:
        raise InvalidInputError(f"key covers {key.n_p} slots but the segment holds {n_p}")
    symbols = np.asarray(symbols, dtype=int)
    thetas = np.asarray(thetas, dtype=float)
    if symbols.size != key.n_t or thetas.size != key.n_t:
        raise InvalidInputError(
            f"need {key.n_t} symbols and phases, got {symbols.size} and {thetas.size}"
        )
    if preamble_amplitude is None:
        preamble_amplitude = DEFAULT_PREAMBLE_GAIN * params.c_q
    pair = PulsePair.from_params(params)
    on = np.zeros(n_seg, dtype=complex)
    slots = on[: n_p * params.n_s].reshape(n_p, params.n_s)
    if key.n_t:
        slots[key.indices] = pair.waveforms(symbols, thetas)
    off = np.zeros(n_seg if include_off else 0, dtype=complex)
    meta = {
        "n_p": n_p,
        "n_s": params.n_s,
        "n": n_p * params.n_s,
        "T": T,
        "sample_rate": sample_rate,
        "preamble_amplitude": preamble_amplitude,
    }
    return Frame(build_preamble(preamble_amplitude), on, off, meta)


@dataclass
class Transmission:
    """Everything Alice produced for one trial (ground truth for analysis)."""

    frame: Frame
    key: SecretKey
    data_bits: np.ndarray
    symbols: np.ndarray
    thetas: np.ndarray


def alice_transmission(
    params: PulseParams,
    T: float,
    sample_rate: float,
    alpha: float,
    seed,
    preamble_amplitude: float | None = None,
    calibration: bool = False,
) -> Transmission:
    """Generate key, message and frame for one trial.

    ``calibration`` switches to the calibration packet: every fifth slot,
    zero transmitter phase, no Alice-off segment; ``alpha`` is then ignored.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    k_key, k_data, k_theta = ss.spawn(3)
    _, n_p = slots_for(T, sample_rate, params.n_s)
    key = calibration_key(n_p, k_key) if calibration else gen_secret(n_p, alpha, k_key)
    data = np.random.default_rng(k_data).integers(0, 2, size=2 * key.n_t, dtype=np.uint8)
    symbols = encode_message(data, key.s)
    thetas = np.zeros(key.n_t) if calibration else draw_thetas(key.n_t, k_theta)
    frame = build_frame(
        params, key, symbols, thetas, T, sample_rate, preamble_amplitude, include_off=not calibration
    )
    return Transmission(frame, key, data, symbols, thetas)
