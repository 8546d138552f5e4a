import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from covert_srl.channel import ChannelParams, awgn, transmit
from covert_srl.errors import InvalidInputError, SyncFailureError, UnusablePilotError
from covert_srl.pulse_shaping import PulsePair, PulseParams
from covert_srl.receiver import (
    bsc_capacity,
    correlate,
    decode_frame,
    demod_slot,
    estimate_phase,
    h2,
    receive,
    report_from_errors,
    sync_preamble,
)
from covert_srl.transmitter import alice_transmission, build_preamble, encode_message, gen_secret

from oracles import q_func

PAIR = PulsePair.from_params(PulseParams(6, 6, 1.0, 1.0))


class TestEntropy:
    def test_endpoints(self):
        assert h2(0.0) == 0.0 and h2(1.0) == 0.0 and h2(0.5) == 1.0
        assert bsc_capacity(0.5) == 0.0 and bsc_capacity(0.0) == 1.0

    @given(st.floats(1e-9, 1 - 1e-9))
    def test_matches_definition(self, p):
        assert h2(p) == pytest.approx(-p * math.log2(p) - (1 - p) * math.log2(1 - p), rel=1e-12, abs=1e-15)
        assert h2(p) == pytest.approx(h2(1 - p), abs=1e-12)


class TestPhase:
    def test_exact(self):
        assert estimate_phase(np.exp(1j * math.pi / 3) * PAIR.pilot, PAIR.pilot) == pytest.approx(math.pi / 3, abs=1e-12)

    @pytest.mark.parametrize("theta", [math.pi / 6, 2 * math.pi / 3, 7 * math.pi / 6, 5 * math.pi / 3])
    def test_quadrants(self, theta):
        assert estimate_phase(np.exp(1j * theta) * PAIR.pilot, PAIR.pilot) == pytest.approx(theta, abs=1e-12)

    def test_grid(self):
        th = 2 * np.pi * np.arange(64) / 64
        est = estimate_phase(np.exp(1j * th)[:, None] * PAIR.pilot, PAIR.pilot)
        err = np.angle(np.exp(1j * (est - th)))
        assert np.max(np.abs(err)) < 1e-9

    def test_printed_convention_loses_quadrant(self):
        # arctan of the ratio cannot tell theta from theta + pi
        a = estimate_phase(np.exp(1j * math.pi / 6) * PAIR.pilot, PAIR.pilot, "printed")
        b = estimate_phase(np.exp(1j * 7 * math.pi / 6) * PAIR.pilot, PAIR.pilot, "printed")
        assert a == pytest.approx(b)

    def test_zero_pilot(self):
        with pytest.raises(UnusablePilotError):
            estimate_phase(np.ones(3), np.zeros(3))

    def test_rms_decreases_with_pilot_energy(self):
        rng = np.random.default_rng(0)
        rms = []
        for c_p in np.geomspace(0.25, 8, 6):
            pilot = PulsePair.from_params(PulseParams(6, 6, c_p, 1.0)).pilot
            th = rng.uniform(0, 2 * np.pi, 20_000)
            y = np.exp(1j * th)[:, None] * pilot + awgn(20_000 * 6, 1.0, rng.integers(2**31)).reshape(-1, 6)
            e = np.angle(np.exp(1j * (estimate_phase(y, pilot) - th)))
            rms.append(math.sqrt(np.mean(e**2)))
        assert all(b < a for a, b in zip(rms, rms[1:]))


class TestDemod:
    def test_symbol_one(self):
        r_I, r_Q, bits = demod_slot(PAIR.waveform(1, 0.0)[6:], 0.0, PAIR.data)
        assert r_I > 0 and r_Q > 0 and bits.tolist() == [0, 0]

    @pytest.mark.parametrize("x,expected", [(1, [0, 0]), (2, [0, 1]), (3, [1, 1]), (4, [1, 0])])
    def test_gray_constellation(self, x, expected):
        theta = 1.1
        _, _, bits = demod_slot(PAIR.waveform(x, theta)[6:], theta, PAIR.data)
        assert bits.tolist() == expected
        _, _, flipped = demod_slot(PAIR.waveform(x, theta)[6:], theta + math.pi, PAIR.data)
        assert flipped.tolist() == [1 - b for b in expected]

    def test_tie(self):
        _, _, bits = demod_slot(np.zeros(6), 0.0, PAIR.data)
        assert bits.tolist() == [0, 0]

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            demod_slot(np.zeros(5), 0.0, PAIR.data)

    def test_branch_ber_matches_q_function(self):
        # branch amplitude a c_q / sqrt(2) against noise std sigma ||c_q|| / c_q
        rng = np.random.default_rng(1)
        n = 100_000
        for gamma_db in (0.0, 6.0):
            gamma = 10 ** (gamma_db / 10)
            s2 = 1.0 / (2 * gamma)
            x = rng.integers(1, 5, n)
            y = PAIR.waveforms(x, np.zeros(n))[:, 6:] + awgn(n * 6, s2, rng.integers(2**31)).reshape(n, 6)
            _, _, bits = demod_slot(y, np.zeros(n), PAIR.data)
            truth = np.array([[0, 0], [0, 1], [1, 1], [1, 0]])[x - 1]
            ber = np.mean(bits != truth)
            p = float(q_func(math.sqrt(gamma)))
            assert abs(ber - p) < 3 * math.sqrt(p * (1 - p) / (2 * n))


def _noisy_frame(sigma2, c_p=1.0, seed=0, alpha=0.5, T=0.5):
    params = PulseParams(6, 6, c_p, 1.0)
    tx = alice_transmission(params, T, 1e5, alpha, seed=seed)
    on = tx.frame.alice_on
    n = tx.frame.meta["n"]
    rx = transmit(on[:n].reshape(-1, 12), ChannelParams(1.0, sigma2), seed=seed + 1).reshape(-1)
    return params, tx, rx


class TestDecode:
    def test_noiseless(self):
        params, tx, _ = _noisy_frame(0.0)
        rx = transmit(tx.frame.alice_on[: tx.frame.meta["n"]].reshape(-1, 12), ChannelParams(1.0, 0.0, 0.7), 0)
        rep = decode_frame(rx.reshape(-1), tx.key, params, tx.data_bits)
        assert rep.p_e_bsc == 0 and rep.B_bsc == 2 * tx.key.n_t

    def test_random_truth_useless(self):
        rep = report_from_errors(1000, 1000)
        assert rep.p_e_bsc == 0.5 and rep.C_bsc == 0 and rep.B_bsc == 0

    def test_empty_key(self):
        rep = report_from_errors(0, 0)
        assert rep.n_t == 0 and rep.B_bsc == 0.0

    def test_p_e_near_one_tenth(self):
        # with a strong pilot the phase is close to known: p_e = Q(sqrt(gamma))
        gamma = norm.isf(0.1) ** 2
        params, tx, rx = _noisy_frame(1.0 / (2 * gamma), c_p=10.0, seed=3, alpha=1.0, T=1.5)
        assert tx.key.n_t >= 10**4
        rep = decode_frame(rx, tx.key, params, tx.data_bits)
        assert rep.p_e_bsc == pytest.approx(0.1, abs=0.02)

    def test_bsc_symmetry(self):
        params, tx, rx = _noisy_frame(0.5, seed=5, alpha=1.0, T=1.0)
        rep = decode_frame(rx, tx.key, params, tx.data_bits)
        sent = tx.data_bits
        decided = rep.per_pulse["bits"].reshape(-1) ^ tx.key.s
        p10 = np.mean(decided[sent == 0] == 1)
        p01 = np.mean(decided[sent == 1] == 0)
        se = math.sqrt(p10 * (1 - p10) / np.sum(sent == 0) + p01 * (1 - p01) / np.sum(sent == 1))
        assert abs(p10 - p01) < 3 * se

    def test_throughput_formula(self):
        params, tx, rx = _noisy_frame(0.8, seed=6)
        rep = decode_frame(rx, tx.key, params, tx.data_bits)
        assert rep.B_bsc == pytest.approx(2 * rep.n_t * (1 - h2(rep.p_e_bsc)), rel=1e-12)

    def test_slotwise_matches_batch(self):
        params, tx, rx = _noisy_frame(0.8, seed=7)
        rep = decode_frame(rx, tx.key, params, tx.data_bits)
        slots = rx[: tx.key.n_p * 12].reshape(-1, 12)
        for j, i in enumerate(tx.key.indices[:50]):
            th = estimate_phase(slots[i, :6], PAIR.pilot)
            r_I, r_Q, b = demod_slot(slots[i, 6:], th, PAIR.data)
            assert th == rep.per_pulse["theta_hat"][j]
            assert r_I == rep.per_pulse["r_I"][j] and b.tolist() == rep.per_pulse["bits"][j].tolist()

    def test_wrong_truth_length(self):
        params, tx, rx = _noisy_frame(0.8, seed=8)
        with pytest.raises(InvalidInputError):
            decode_frame(rx, tx.key, params, tx.data_bits[:-2])

    def test_pad_roundtrip(self):
        params = PulseParams(6, 6, 1.0, 1.0)
        key = gen_secret(500, 0.3, seed=1)
        data = np.random.default_rng(2).integers(0, 2, 2 * key.n_t).astype(np.uint8)
        sym = encode_message(data, key.s)
        slots = np.zeros((500, 12), complex)
        slots[key.indices] = PAIR.waveforms(sym, np.zeros(key.n_t))
        assert decode_frame(slots.reshape(-1), key, params, data).bit_errors == 0


class TestSync:
    template = build_preamble()

    def test_exact(self):
        assert sync_preamble(self.template, self.template) == 0
        assert correlate(self.template, self.template)[0] == pytest.approx(1.0)

    def test_planted_offset(self):
        rng = np.random.default_rng(0)
        p = np.mean(np.abs(self.template) ** 2)
        s2 = p / 10 / 2  # 10 dB: preamble power over complex noise power
        rx = awgn(40_000, s2, rng.integers(2**31))
        rx[1234 : 1234 + self.template.size] += np.exp(1j * 2.0) * self.template
        assert sync_preamble(rx, self.template) == 1234

    def test_pure_noise(self):
        with pytest.raises(SyncFailureError) as exc:
            sync_preamble(awgn(40_000, 1.0, seed=1), self.template)
        assert exc.value.ratio < 5

    def test_short_input(self):
        with pytest.raises(InvalidInputError):
            sync_preamble(np.zeros(10), self.template)

    def test_search_window(self):
        rx = awgn(60_000, 1e-4, seed=2)
        rx[500 : 500 + self.template.size] += self.template
        rx[30_000 : 30_000 + self.template.size] += self.template
        assert sync_preamble(rx, self.template) in (500, 30_000)
        assert sync_preamble(rx, self.template, search=(20_000, 40_000), threshold=1.0) == 30_000

    def test_receive(self):
        params = PulseParams(6, 6, 1.0, 1.0)
        tx = alice_transmission(params, 0.1, 1e5, 0.3, seed=4)
        stream = np.concatenate([np.zeros(321), tx.frame.samples])
        off, rep = receive(stream, tx.frame.preamble, tx.key, params, tx.data_bits)
        assert off == 321 and rep.p_e_bsc == 0
