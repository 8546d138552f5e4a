"""Command-line entry point: ``covert-srl <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import covertness_budget as cb
from . import experiments as ex
from .channel import transmit_stream
from .errors import CovertSRLError, FitImpossibleError
from .iqfile import read_iq, read_sidecar, write_iq, write_sidecar
from .optimizer import Bounds, DesignPoint, evaluate_design, optimize
from .pulse_shaping import PulseParams
from .receiver import receive
from .transmitter import SecretKey, alice_transmission, build_preamble, pack_bits_hex, unpack_bits_hex
from .warden import empirical_pe, estimate_snr, frame_llr, hellinger_bound, to_slots

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL, EXIT_FIT = 0, 1, 2, 3
DECODE_CSV_COLUMNS = ("T", "n", "n_t", "p_e_bsc", "B_bsc", "seed")


def _config(path) -> ex.ExperimentConfig:
    return ex.ExperimentConfig.load(path) if path else ex.ExperimentConfig()


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# -- gen / decode ------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _config(args.config)
    params = cfg.pulse_params
    seed = cfg.seed if args.seed is None else args.seed
    root = np.random.SeedSequence(seed)
    s_tx, s_lead, s_ch, s_phase = root.spawn(4)
    n_p = int(math.floor(args.T * cfg.sample_rate + 1e-9)) // params.n_s
    if args.alpha is not None:
        alpha = args.alpha
    else:
        alpha = cb.alpha_n(cfg.delta, n_p, cfg.willie_channel.sigma2, cfg.willie_channel.a,
                           params.c_q, params.r_pq)
    tx = alice_transmission(params, args.T, cfg.sample_rate, alpha, s_tx,
                            preamble_amplitude=cfg.preamble_amplitude(), calibration=args.calibration)
    lead = int(np.random.default_rng(s_lead).integers(0, cfg.max_pre_buffer + 1))
    samples = np.concatenate([np.zeros(lead, complex), tx.frame.samples])
    if args.receiver == "none":
        rx = samples
    else:
        ch = cfg.bob_channel if args.receiver == "bob" else cfg.willie_channel
        if args.calibration:
            ch = ch.with_phase(float(np.random.default_rng(s_phase).uniform(0, 2 * math.pi)))
        starts = np.unique(np.concatenate([[0], lead + tx.frame.block_starts()]))
        rx = transmit_stream(samples, ch, s_ch, starts)
    write_iq(args.out, rx, cfg.sample_rate)
    meta = {
        "seed": seed,
        "T": args.T,
        "alpha_n": alpha,
        "lead": lead,
        "receiver": args.receiver,
        "calibration": args.calibration,
        "key": tx.key.to_dict(),
        "symbols": tx.symbols.tolist(),
        "thetas": tx.thetas.tolist(),
        "data_hex": pack_bits_hex(tx.data_bits),
        "data_len": int(tx.data_bits.size),
        "preamble_amplitude": tx.frame.meta["preamble_amplitude"],
        "layout": {"preamble": len(tx.frame.preamble), "on": len(tx.frame.alice_on),
                   "off": len(tx.frame.alice_off)},
        "config": cfg.to_dict(),
    }
    write_sidecar(args.out, meta)
    print(f"wrote {len(rx)} samples to {args.out} (n_t={tx.key.n_t}, n_p={tx.key.n_p})")
    return EXIT_OK


def _load_capture(path):
    rx, rate = read_iq(path)
    meta = read_sidecar(path)
    cfg = ex.ExperimentConfig.from_dict(meta["config"])
    return rx, rate, meta, cfg


def cmd_decode(args) -> int:
    rx, _, meta, cfg = _load_capture(args.iq)
    params = cfg.pulse_params
    key = SecretKey.from_dict(meta["key"])
    truth = unpack_bits_hex(meta["data_hex"], meta["data_len"])
    preamble = build_preamble(meta["preamble_amplitude"])
    offset, rep = receive(rx, preamble, key, params, truth, threshold=args.threshold,
                          convention=cfg.phase_convention)
    out = {"sync_offset": offset, "lead": meta["lead"], **rep.to_dict(per_pulse=args.per_pulse)}
    _dump(out, args.out)
    if args.csv:
        path = Path(args.csv)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(DECODE_CSV_COLUMNS)
            w.writerow([meta["T"], key.n_p * params.n_s, rep.n_t, rep.p_e_bsc, rep.B_bsc, meta["seed"]])
    return EXIT_OK


# -- budget / detect / calibrate --------------------------------------------------------


BUDGET_KEYS = ("delta", "n_p", "n_s_pilot", "n_s_data", "c_p", "c_q", "a_w", "sigma_w2", "snr_db")
BUDGET_DEFAULTS = {"delta": 0.05, "n_s_pilot": 6, "n_s_data": 6, "c_p": 1.0, "c_q": 1.0, "a_w": 1.0}


def cmd_budget(args) -> int:
    """Values come from the defaults, then the JSON input, then explicit flags."""
    v = dict(BUDGET_DEFAULTS)
    if args.input:
        spec = json.loads(Path(args.input).read_text())
        unknown = set(spec) - set(BUDGET_KEYS)
        if unknown:
            print(f"error: unknown budget keys {sorted(unknown)}", file=sys.stderr)
            return EXIT_ERROR
        v.update(spec)
    flags = {"delta": args.delta, "n_p": args.n_p, "n_s_pilot": args.n_s_pilot, "n_s_data": args.n_s_data,
             "c_p": args.c_p, "c_q": args.c_q, "a_w": args.a, "sigma_w2": args.sigma2, "snr_db": args.snr_db}
    v.update({k: x for k, x in flags.items() if x is not None})
    if "n_p" not in v or ("sigma_w2" not in v and "snr_db" not in v):
        print("error: need n_p and one of sigma_w2 / snr_db", file=sys.stderr)
        return EXIT_ERROR
    params = PulseParams(int(v["n_s_pilot"]), int(v["n_s_data"]), float(v["c_p"]), float(v["c_q"]))
    if args.snr_db is not None or "sigma_w2" not in v:
        v["sigma_w2"] = (v["a_w"] * params.c_q) ** 2 / 10 ** (v["snr_db"] / 10)
    b = cb.CovertBudget.compute(float(v["delta"]), int(v["n_p"]), params, float(v["a_w"]),
                                float(v["sigma_w2"]), oracle=not args.no_oracle)
    _dump(b.to_dict(), args.out)
    return EXIT_OK


def cmd_detect(args) -> int:
    on, off = [], []
    bound = bound_err = None
    for path in args.iq:
        rx, _, meta, cfg = _load_capture(path)
        params = cfg.pulse_params
        w = cfg.willie_channel
        n_p = meta["key"]["n_p"]
        start = meta["lead"] + meta["layout"]["preamble"]
        seg_on = rx[start : start + meta["layout"]["on"]]
        seg_off = rx[start + meta["layout"]["on"] : start + meta["layout"]["on"] + meta["layout"]["off"]]
        on.append(frame_llr(seg_on, params, meta["alpha_n"], w.a, w.sigma2, n_p, cfg.statistic))
        if len(seg_off) >= n_p * params.n_s:
            off.append(frame_llr(seg_off, params, meta["alpha_n"], w.a, w.sigma2, n_p, cfg.statistic))
        b, e = hellinger_bound(params, meta["alpha_n"], w.a, w.sigma2, n_p, statistic=cfg.statistic)
        bound = b if bound is None else min(bound, b)
        bound_err = e if bound_err is None else max(bound_err, e)
    rep = empirical_pe(on, off, bound, bound_err or 0.0)
    _dump(rep.to_dict(with_llrs=True), args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    rx, _, meta, cfg = _load_capture(args.iq)
    params = cfg.pulse_params
    key = SecretKey.from_dict(meta["key"])
    start = meta["lead"] + meta["layout"]["preamble"]
    slots = to_slots(rx[start:], params.n_s, key.n_p)
    est = estimate_snr(slots, key.t, np.asarray(meta["symbols"]), np.asarray(meta["thetas"]), params,
                       method=args.method)
    _dump(est.to_dict(), args.out)
    return EXIT_OK


# -- optimize / sweep / report -----------------------------------------------------------


def cmd_optimize(args) -> int:
    spec = json.loads(Path(args.bounds).read_text())
    bounds = Bounds.from_dict(spec)
    budget = args.budget if args.budget is not None else int(spec.get("budget", 20))
    cfg = _config(args.config)
    trials = args.trials if args.trials is not None else int(spec.get("trials", 5))
    duration = args.duration if args.duration is not None else float(spec.get("duration", 0.5))

    def objective(d, seed):
        return evaluate_design(d, trials, duration, seed, cfg.sample_rate, cfg.bob_channel,
                               cfg.willie_channel, cfg.delta)

    hist_fh = open(args.history, "w") if args.history else None

    def on_point(p: DesignPoint):
        if hist_fh:
            hist_fh.write(json.dumps(p.to_dict()) + "\n")
            hist_fh.flush()

    try:
        best, _ = optimize(objective, bounds, budget, args.seed, callback=on_point)
    finally:
        if hist_fh:
            hist_fh.close()
    _dump(best.to_dict(), args.best)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    res = ex.run_sweep(cfg, workers=args.workers)
    summary = ex.report(res, args.out)
    fit = summary["fit"]
    msg = f"{summary['rows']} rows, {summary['errors']} errors"
    if fit:
        msg += f"; fixed-slope R2={fit['r2']:.3f}, free slope={fit['slope_free']:.3f}"
    print(msg)
    if not summary["rows"] or res.fit is None:
        return EXIT_FIT
    return EXIT_PARTIAL if res.n_errors else EXIT_OK


def cmd_report(args) -> int:
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    res = ex.result_from_csv(args.results, config)
    summary = ex.report(res, args.out)
    print(f"{summary['rows']} rows summarized into {args.out}")
    if res.fit is None:
        return EXIT_FIT
    return EXIT_PARTIAL if res.n_errors else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covert-srl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a packet and write an IQ capture plus sidecar")
    g.add_argument("--config")
    g.add_argument("--T", type=float, default=1.0, help="Alice-on duration in seconds")
    g.add_argument("--seed", type=int)
    g.add_argument("--alpha", type=float, help="override the occupancy rate")
    g.add_argument("--receiver", choices=("bob", "willie", "none"), default="bob")
    g.add_argument("--calibration", action="store_true", help="every fifth slot, zero phase")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("decode", help="synchronize and decode a capture at Bob")
    d.add_argument("iq")
    d.add_argument("--out")
    d.add_argument("--csv", help="append a summary row to this CSV")
    d.add_argument("--threshold", type=float, default=5.0)
    d.add_argument("--per-pulse", action="store_true")
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("budget", help="occupancy rate and detection-error bounds")
    b.add_argument("--delta", type=float)
    b.add_argument("input", nargs="?", help="JSON with delta, n_p, n_s_pilot, n_s_data, c_p, c_q, a_w, sigma_w2")
    b.add_argument("--n-p", type=int)
    b.add_argument("--n-s-pilot", type=int)
    b.add_argument("--n-s-data", type=int)
    b.add_argument("--c-p", type=float)
    b.add_argument("--c-q", type=float)
    b.add_argument("--a", type=float)
    grp = b.add_mutually_exclusive_group()
    grp.add_argument("--sigma2", type=float)
    grp.add_argument("--snr-db", type=float)
    b.add_argument("--no-oracle", action="store_true")
    b.add_argument("--out")
    b.set_defaults(func=cmd_budget)

    t = sub.add_parser("detect", help="likelihood-ratio detection on Willie captures")
    t.add_argument("iq", nargs="+")
    t.add_argument("--out")
    t.set_defaults(func=cmd_detect)

    c = sub.add_parser("calibrate", help="SNR estimate from a Willie calibration capture")
    c.add_argument("iq")
    c.add_argument("--method", choices=("coherent", "energy"), default="coherent")
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    o = sub.add_parser("optimize", help="Bayesian optimization of the pulse design")
    o.add_argument("--bounds", required=True, help="JSON with lower, upper, integer and optional budget")
    o.add_argument("--config")
    o.add_argument("--budget", type=int)
    o.add_argument("--trials", type=int)
    o.add_argument("--duration", type=float)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--history", help="JSONL file, one design point per line")
    o.add_argument("--best", help="JSON file for the best design")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", help="run the full T sweep")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="regenerate summaries from results.csv")
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except FitImpossibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (CovertSRLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
