"""End-to-end protocol: calibration, per-T budgeting, the trial sweep, fits and reports.

Each (T, trial) item derives its own seed from the master seed, so results do
not depend on the number of workers or on execution order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import covertness_budget as cb
from .channel import ChannelParams, awgn, transmit_stream
from .errors import CovertSRLError, FitImpossibleError, InvalidParameterError
from .pulse_shaping import PulseParams
from .receiver import receive
from .transmitter import PREAMBLE_LEN, alice_transmission, build_preamble
from .warden import (
    error_rates,
    estimate_snr,
    frame_llr,
    hellinger_bound,
    radiometer,
    radiometer_threshold,
    to_slots,
)

log = logging.getLogger(__name__)

COLUMNS = (
    "T", "trial", "n", "n_p", "alpha_n", "n_t", "p_e_bsc", "B_bsc", "snr_db",
    "pe_w_bound", "pe_w_empirical", "llr_on", "llr_off", "rad_on", "rad_off",
    "sync_offset", "seed", "error",
)
Z95 = 1.959963984540054


@dataclass
class ExperimentConfig:
    """Sweep settings. Channel gains and noise are per receiver.

    ``preamble_snr_db`` sets the preamble amplitude from Bob's noise level
    (mean preamble power per sample over 2 sigma_b^2); when ``None`` the
    preamble amplitude is ``preamble_gain * c_q``.
    """

    T_values: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6, 7, 8])
    N: int = 30
    sample_rate: float = 1e5
    delta: float = 0.05
    pulse: dict = field(default_factory=lambda: {"n_s_pilot": 6, "n_s_data": 6, "c_p": 1.0, "c_q": 1.0})
    bob: dict = field(default_factory=lambda: {"a": 1.0, "sigma2": 1.0})
    willie: dict = field(default_factory=lambda: {"a": 1.0, "sigma2": 100.0})
    seed: int = 20240607
    preamble_snr_db: float | None = 20.0
    preamble_gain: float = 10.0
    max_pre_buffer: int = 1000
    sync_threshold: float = 5.0
    calibration_frames: int = 50
    calibration_duration: float = 0.5
    calibrate: bool = True
    statistic: str = "qpsk"
    phase_convention: str = "atan2"
    ci: str = "normal"

    def __post_init__(self):
        T = list(self.T_values)
        if not T or any(b <= a for a, b in zip(T, T[1:])) or T[0] <= 0:
            raise InvalidParameterError("T_values must be a nonempty ascending list of positive durations")
        if self.N < 1:
            raise InvalidParameterError("N must be >= 1")
        if not (0 < self.delta < 1 / math.sqrt(2)):
            raise InvalidParameterError("delta must lie in (0, 1/sqrt(2))")
        if self.ci not in ("normal", "exact"):
            raise InvalidParameterError("ci must be 'normal' or 'exact'")

    @property
    def pulse_params(self) -> PulseParams:
        return PulseParams.from_dict(self.pulse)

    @property
    def bob_channel(self) -> ChannelParams:
        return ChannelParams.from_dict(self.bob)

    @property
    def willie_channel(self) -> ChannelParams:
        return ChannelParams.from_dict(self.willie)

    def preamble_amplitude(self) -> float:
        if self.preamble_snr_db is None:
            return self.preamble_gain * self.pulse_params.c_q
        unit = build_preamble(1.0)
        power = float(np.mean(np.abs(unit) ** 2))
        target = 10 ** (self.preamble_snr_db / 10) * 2 * self.bob_channel.sigma2
        return math.sqrt(target / power)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- calibration -----------------------------------------------------------------


@dataclass
class Calibration:
    a_w2_hat: float
    sigma_w2_hat: float
    snr_hat: float
    snr_db: float
    frames: int
    n_on: int

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate(config: ExperimentConfig, seed=None, frames: int | None = None) -> Calibration:
    """Willie-side SNR calibration over packets with every fifth slot active.

    The transmitter phase is zero and each packet sees one constant channel
    phase, so the coherent estimator is used per packet; the squared gain
    estimates are averaged and the noise variance pooled across packets.
    """
    params = config.pulse_params
    willie = config.willie_channel
    frames = config.calibration_frames if frames is None else frames
    root = np.random.SeedSequence(config.seed if seed is None else seed, spawn_key=(0xCA1,))
    a2, s2, n_on = [], [], 0
    for ss in root.spawn(frames):
        s_tx, s_phase, s_ch = ss.spawn(3)
        tx = alice_transmission(
            params, config.calibration_duration, config.sample_rate, 0.0, s_tx,
            preamble_amplitude=0.0, calibration=True,
        )
        phase = float(np.random.default_rng(s_phase).uniform(0, 2 * math.pi))
        on = tx.frame.alice_on[: tx.key.n_p * params.n_s]
        w = transmit_stream(on, willie.with_phase(phase), s_ch)
        est = estimate_snr(to_slots(w, params.n_s), tx.key.t, tx.symbols, tx.thetas, params)
        a2.append(est.a_w2_hat)
        s2.append(est.sigma_w2_hat)
        n_on += est.n_on
    a2_hat, s2_hat = float(np.mean(a2)), float(np.mean(s2))
    snr = a2_hat * params.c_q**2 / s2_hat
    return Calibration(a2_hat, s2_hat, snr, 10 * math.log10(snr) if snr > 0 else -math.inf, frames, n_on)


# -- per-trial work -----------------------------------------------------------------


@dataclass(frozen=True)
class TrialSpec:
    T: float
    t_index: int
    trial: int
    alpha: float
    pe_w_bound: float


def _trial_seed(master: int, t_index: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(t_index, trial))


def trial_seed_value(master: int, t_index: int, trial: int) -> int:
    """Compact integer identifying the trial's random streams (for the CSV)."""
    return int(_trial_seed(master, t_index, trial).generate_state(1, np.uint32)[0])


def run_trial(config: ExperimentConfig, spec: TrialSpec) -> dict:
    """Alice -> (Bob, Willie) for one (T, trial) item; failures are reported, not raised."""
    params = config.pulse_params
    bob, willie = config.bob_channel, config.willie_channel
    ss = _trial_seed(config.seed, spec.t_index, spec.trial)
    s_alice, s_buf, s_bob, s_wil = ss.spawn(4)
    row = {k: "" for k in COLUMNS}
    row.update(T=spec.T, trial=spec.trial, alpha_n=spec.alpha, pe_w_bound=spec.pe_w_bound,
               seed=trial_seed_value(config.seed, spec.t_index, spec.trial))
    try:
        tx = alice_transmission(
            params, spec.T, config.sample_rate, spec.alpha, s_alice,
            preamble_amplitude=config.preamble_amplitude(),
        )
        frame, key = tx.frame, tx.key
        n_p = key.n_p
        row.update(n=n_p * params.n_s, n_p=n_p, n_t=key.n_t)

        # Bob: random lead-in, preamble, Alice-on segment
        buf_rng = np.random.default_rng(s_buf)
        lead = int(buf_rng.integers(0, config.max_pre_buffer + 1))
        stream = np.concatenate([np.zeros(lead, complex), frame.preamble, frame.alice_on])
        starts = np.unique(np.concatenate([[0], lead + frame.block_starts()]))
        rx = transmit_stream(stream, bob, s_bob, starts)
        offset, rep = receive(
            rx, frame.preamble, key, params, tx.data_bits, threshold=config.sync_threshold,
            search=(0, config.max_pre_buffer + 1), convention=config.phase_convention,
        )
        if offset != lead:
            log.warning("T=%s trial=%s: sync offset %d, expected %d", spec.T, spec.trial, offset, lead)
        row.update(sync_offset=offset - lead, p_e_bsc=rep.p_e_bsc, B_bsc=rep.B_bsc)

        # Willie: Alice-on (H1) and Alice-off (H0) segments with known timing
        s_on, s_off = s_wil.spawn(2)
        n = n_p * params.n_s
        w_on = transmit_stream(frame.alice_on[:n], willie, s_on, params.n_s * np.arange(max(n_p, 1)))
        w_off = awgn(n, willie.sigma2, s_off)
        llr_on = frame_llr(w_on, params, spec.alpha, willie.a, willie.sigma2, n_p, config.statistic)
        llr_off = frame_llr(w_off, params, spec.alpha, willie.a, willie.sigma2, n_p, config.statistic)
        thr = radiometer_threshold(n_p, params, spec.alpha, willie.a, willie.sigma2)
        row.update(
            llr_on=llr_on, llr_off=llr_off,
            rad_on=radiometer(w_on, params.n_s, n_p) - thr,
            rad_off=radiometer(w_off, params.n_s, n_p) - thr,
            pe_w_empirical=0.5 * (float(llr_off > 0) + float(llr_on <= 0)),
        )
        if key.n_t and key.n_t < n_p:
            est = estimate_snr(to_slots(w_on, params.n_s, n_p), key.t, tx.symbols, tx.thetas,
                               params, method="energy")
            row["snr_db"] = est.snr_db if math.isfinite(est.snr_db) else ""
    except CovertSRLError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


# -- sweep ---------------------------------------------------------------------------


@dataclass
class SrlFit:
    intercept: float
    r2: float
    slope_free: float
    intercept_free: float
    r2_free: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepResult:
    rows: list
    config: dict = field(default_factory=dict)
    calibration: dict | None = None
    budgets: list = field(default_factory=list)
    fit: SrlFit | None = None
    elapsed: float = 0.0

    @property
    def n_errors(self) -> int:
        return sum(1 for r in self.rows if r.get("error"))


def plan(config: ExperimentConfig, snr: float) -> tuple[list[TrialSpec], list[dict]]:
    """Per-T occupancy rates from the (calibrated) SNR plus the Hellinger bound at the true channel."""
    params = config.pulse_params
    willie = config.willie_channel
    specs, budgets = [], []
    for i, T in enumerate(config.T_values):
        n_p = int(math.floor(T * config.sample_rate + 1e-9)) // params.n_s
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha = cb.alpha_n_from_snr(config.delta, n_p, snr, params.r_pq)
        bound, bound_err = hellinger_bound(params, alpha, willie.a, willie.sigma2, n_p,
                                           statistic=config.statistic)
        budgets.append({"T": T, "n_p": n_p, "n": n_p * params.n_s, "alpha_n": alpha,
                        "zeta": cb.zeta(alpha, n_p * params.n_s), "pe_w_bound": bound,
                        "pe_w_bound_err": bound_err})
        specs.extend(TrialSpec(T, i, k, alpha, bound) for k in range(config.N))
    return specs, budgets


def _run_one(args):
    config, spec = args
    return run_trial(config, spec)


def run_sweep(config: ExperimentConfig, workers: int = 1, progress=None) -> SweepResult:
    """Calibrate (optional), budget each T, run every (T, trial) item and fit the scaling law."""
    t0 = time.perf_counter()
    params = config.pulse_params
    cal = None
    if config.calibrate:
        cal = calibrate(config)
        snr = cal.snr_hat
    else:
        snr = config.willie_channel.snr(params.c_q)
    specs, budgets = plan(config, snr)
    items = [(config, s) for s in specs]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, items, chunksize=max(1, len(items) // (4 * workers))))
    else:
        rows = []
        for k, it in enumerate(items):
            rows.append(_run_one(it))
            if progress:
                progress(k + 1, len(items))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for row in rows:
            if row["n_p"]:
                expected = cb.alpha_n_from_snr(config.delta, row["n_p"], snr, params.r_pq)
                assert math.isclose(row["alpha_n"], expected, rel_tol=1e-12), "occupancy rate drifted from the budget"
    res = SweepResult(rows, config.to_dict(), cal.to_dict() if cal else None, budgets)
    try:
        res.fit = fit_srl(rows)
    except FitImpossibleError as exc:
        log.warning("scaling fit impossible: %s", exc)
    res.elapsed = time.perf_counter() - t0
    return res


# -- fit -------------------------------------------------------------------------------


def _valid(rows):
    return [r for r in rows if not r.get("error") and r.get("B_bsc") not in ("", None)]


def fit_srl(rows) -> SrlFit:
    """Fit log2 of the mean throughput per n against log2 n.

    The fixed-slope model is log2 B = log2(n)/2 + b; ``r2`` is its coefficient
    of determination. A free-slope least-squares line is reported alongside.
    """
    groups: dict[int, list[float]] = {}
    for r in _valid(rows):
        groups.setdefault(int(r["n"]), []).append(float(r["B_bsc"]))
    pts = []
    for n, vals in sorted(groups.items()):
        m = float(np.mean(vals))
        if m > 0:
            pts.append((n, m))
        else:
            warnings.warn(f"mean throughput at n={n} is {m}; excluded from the fit", stacklevel=2)
    if len(pts) < 2:
        raise FitImpossibleError(f"need at least 2 distinct n with positive mean throughput, got {len(pts)}")
    x = np.log2([p[0] for p in pts])
    y = np.log2([p[1] for p in pts])
    b = float(np.mean(y - 0.5 * x))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - 0.5 * x - b) ** 2))
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -math.inf)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res_free = float(np.sum((y - slope * x - icpt) ** 2))
    r2_free = 1 - ss_res_free / ss_tot if ss_tot > 0 else 1.0
    return SrlFit(b, r2, float(slope), float(icpt), r2_free, len(pts))


# -- reporting ------------------------------------------------------------------------


def ci_halfwidth(values) -> float:
    """Normal-approximation 95% half-width 1.96 s / sqrt(N)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float("nan")
    return Z95 * float(np.std(v, ddof=1)) / math.sqrt(v.size)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = (1 - level) / 2
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a, k + 1, n - k))
    return lo, hi


def summarize(result: SweepResult) -> dict:
    cfg = result.config
    ci_mode = cfg.get("ci", "normal")
    per_T = []
    by_T: dict[float, list[dict]] = {}
    for r in result.rows:
        by_T.setdefault(float(r["T"]), []).append(r)
    for T, rows in sorted(by_T.items()):
        ok = _valid(rows)
        entry = {"T": T, "trials": len(rows), "errors": len(rows) - len(ok)}
        for key in ("n", "n_t", "alpha_n", "p_e_bsc", "B_bsc", "snr_db", "pe_w_bound", "pe_w_empirical"):
            vals = [float(r[key]) for r in ok if r.get(key) not in ("", None)]
            entry[key] = float(np.mean(vals)) if vals else float("nan")
            entry[f"{key}_ci95"] = ci_halfwidth(vals)
        if ok:
            fa, miss, pe, se = error_rates([r["llr_on"] for r in ok], [r["llr_off"] for r in ok])
            entry.update(false_alarm=fa, miss=miss, pe_w_stderr=se)
            if ci_mode == "exact":
                errs = int(sum(2 * r["n_t"] * r["p_e_bsc"] for r in ok))
                bits = int(sum(2 * r["n_t"] for r in ok))
                entry["p_e_bsc_exact_ci"] = clopper_pearson(errs, bits) if bits else None
                k = int(round(sum(2 * r["pe_w_empirical"] for r in ok)))
                entry["pe_w_empirical_exact_ci"] = clopper_pearson(k, 2 * len(ok))
        per_T.append(entry)
    ok = _valid(result.rows)
    overall = {}
    if ok:
        fa, miss, pe, se = error_rates([r["llr_on"] for r in ok], [r["llr_off"] for r in ok])
        rfa, rmiss, rpe, rse = error_rates([r["rad_on"] for r in ok], [r["rad_off"] for r in ok])
        overall = {"balanced_trials": 2 * len(ok), "pe_w_empirical": pe, "pe_w_stderr": se,
                   "radiometer_pe": rpe, "radiometer_stderr": rse,
                   "pe_w_bound_min": min(float(r["pe_w_bound"]) for r in ok)}
    return {
        "rows": len(result.rows),
        "errors": result.n_errors,
        "per_T": per_T,
        "overall": overall,
        "fit": result.fit.to_dict() if result.fit else None,
        "calibration": result.calibration,
        "budgets": result.budgets,
        "config": cfg,
        "elapsed_s": result.elapsed,
    }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in COLUMNS])


def read_results_csv(path) -> list[dict]:
    numeric_int = {"trial", "n", "n_p", "n_t", "seed", "sync_offset"}
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v == "" or k == "error":
                    row[k] = v
                elif k in numeric_int:
                    row[k] = int(float(v))
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def report(result: SweepResult, out_dir) -> dict:
    """Write results.csv, summary.json and the two figure data files.

    Returns the summary. The figure files are skipped when there are no rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(result.rows, out / "results.csv")
    summary = summarize(result)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
    if result.rows:
        with open(out / "fig9_throughput.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "n", "B_bsc", "B_bsc_ci95", "p_e_bsc", "p_e_bsc_ci95"])
            for e in summary["per_T"]:
                w.writerow([e["T"], e["n"], e["B_bsc"], e["B_bsc_ci95"], e["p_e_bsc"], e["p_e_bsc_ci95"]])
        with open(out / "fig10_covertness.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "pe_w_bound", "pe_w_empirical", "pe_w_empirical_ci95", "snr_db", "snr_db_ci95"])
            for e in summary["per_T"]:
                w.writerow([e["T"], e["pe_w_bound"], e["pe_w_empirical"], e["pe_w_empirical_ci95"],
                            e["snr_db"], e["snr_db_ci95"]])
    return summary


def result_from_csv(path, config: dict | None = None) -> SweepResult:
    rows = read_results_csv(path)
    res = SweepResult(rows, config or {})
    try:
        res.fit = fit_srl(rows)
    except FitImpossibleError:
        res.fit = None
    return res


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
