"""Command-line entry point: run, sweep, theory and convert-trace commands.

Outputs are byte-stable: CSV rows are newline-terminated with '.' decimals
and floats printed with 9 significant digits, JSON is written with sorted
keys, so identical (config, seed) invocations produce identical bytes.
Figures are rendered next to the tables unless --no-plots is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, LoadedConfig, load_config
from .engine import run, sweep
from .mobility import TraceError, parse_fcd, write_trace
from .theory import CovSequence, first_passage_pmf, predict_only_cov, qq_points, \
    steady_state_posterior
from .ukf import GaussianState

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def _write_csv(path: Path, header: str, rows):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


SLOTS_HEADER = ("slot,network_error_m,p95_error_m,undetected,misdetected,"
                "neighbors,tx_attempted,tx_sent,tx_collided")
SWEEP_HEADER = "policy,parameter,eff_intertx_s,mean_error_m,p95_error_m,detection_error,seeds"
TXLOG_HEADER = "vehicle,tx_slot"


def _write_run_outputs(result, slot_s, outdir: Path):
    _write_csv(outdir / "slots.csv", SLOTS_HEADER,
               [(r.slot, r.network_error, r.p95_error, r.undetected, r.misdetected,
                 r.neighbors, r.tx_attempted, r.tx_sent, r.tx_collided)
                for r in result.records])
    _write_json(outdir / "summary.json", result.summary.to_dict())
    tx_rows = []
    for vid in sorted(result.tx_log.sent_slots):
        tx_rows.extend((vid, s) for s in result.tx_log.sent_slots[vid])
    _write_csv(outdir / "txlog.csv", TXLOG_HEADER, tx_rows)


def _cmd_run(args) -> int:
    loaded = load_config(args.config)
    scenario = loaded.scenario
    if args.ideal_channel:
        scenario = replace(scenario, channel=replace(scenario.channel, ideal=True))
    seed = args.seed if args.seed is not None else scenario.seeds[0]
    try:
        result = run(scenario, seed)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_run_outputs(result, scenario.slot_s, outdir)
    if not args.no_plots:
        from . import plots
        plots.plot_run(result.records, scenario.slot_s, outdir)
    print(f"run complete: mean error {result.summary.mean_error_m:.3f} m, "
          f"eff inter-tx {result.summary.eff_intertx_s:.3f} s -> {outdir}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    loaded = load_config(args.config)
    scenario = loaded.scenario
    grid = loaded.sweep_grid()
    if not grid:
        raise ConfigError("config declares no sweep grid (sweep.periodic_s / "
                          "sweep.threshold_m)")
    seeds = scenario.seeds
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    try:
        rows, best = sweep(scenario, grid, seeds=seeds,
                           include_ideal=args.ideal_channel, jobs=args.jobs)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "sweep.csv", SWEEP_HEADER,
               [(r.policy, r.parameter, r.eff_intertx_s, r.mean_error_m,
                 r.p95_error_m, r.detection_error, r.seeds) for r in rows])
    _write_json(outdir / "sweep_summary.json", {
        "best": {pol: {"parameter": row.parameter,
                       "mean_error_m": row.mean_error_m,
                       "p95_error_m": row.p95_error_m,
                       "worst5_mean_error_m": row.worst5_mean_error_m,
                       "eff_intertx_s": row.eff_intertx_s}
                 for pol, row in sorted(best.items())},
        "rows": len(rows),
        "seeds": list(seeds),
    })
    if not args.no_plots:
        from . import plots
        plots.plot_sweep(rows, outdir)
    for pol, row in sorted(best.items()):
        print(f"best {pol}: parameter {row.parameter:g} -> "
              f"mean error {row.mean_error_m:.3f} m")
    return EXIT_OK


def _read_txlog(path) -> np.ndarray:
    """Pooled inter-transmission gaps (slots) from a txlog.csv file."""
    per_vehicle = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TXLOG_HEADER:
            raise ConfigError(f"{path}: expected header {TXLOG_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                vid_s, slot_s = line.split(",")
                per_vehicle.setdefault(int(vid_s), []).append(int(slot_s))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad txlog record") from None
    gaps = []
    for slots in per_vehicle.values():
        slots.sort()
        gaps.extend(b - a for a, b in zip(slots, slots[1:]))
    return np.asarray(gaps, dtype=int)


def _cmd_theory(args) -> int:
    loaded = load_config(args.config)
    scenario = loaded.scenario
    tcfg = loaded.theory
    try:
        mean = np.asarray(tcfg.initial_state, dtype=float)
        if tcfg.initial_cov_diag is not None:
            initial = GaussianState(mean, np.diag(tcfg.initial_cov_diag))
        else:
            steady = steady_state_posterior(mean, scenario.ctra, scenario.ukf,
                                            scenario.noise)
            initial = GaussianState(mean, steady.cov)
        seq = predict_only_cov(initial, tcfg.horizon_steps, scenario.ctra, scenario.ukf)
        pmfs = [(thr, first_passage_pmf(seq, thr)) for thr in tcfg.thresholds_m]
        gaps = None
        txlog_path = args.tx_log or tcfg.tx_log
        if txlog_path:
            gaps = _read_txlog(txlog_path)
            if gaps.size == 0:
                raise ConfigError(f"{txlog_path}: no inter-transmission gaps")
    except ConfigError:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    multi = len(pmfs) > 1
    qq_all = []
    for k, (thr, pmf) in enumerate(pmfs, start=1):
        name = f"pmf_{k}.csv" if multi else "pmf.csv"
        _write_csv(outdir / name, "step,p_tx",
                   [(i + 1, p) for i, p in enumerate(pmf.probs)])
        if gaps is not None:
            pairs = qq_points(pmf, gaps)
            qq_all.append((thr, [(t * scenario.slot_s, e * scenario.slot_s)
                                 for t, e in pairs]))
            qname = f"qq_{k}.csv" if multi else "qq.csv"
            _write_csv(outdir / qname, "theoretical_s,empirical_s", qq_all[-1][1])
    if not args.no_plots:
        from . import plots
        plots.plot_theory(pmfs, scenario.slot_s, outdir)
        if qq_all:
            plots.plot_qq(qq_all, outdir)
    print(f"theory tables written for {len(pmfs)} threshold(s) -> {outdir}")
    return EXIT_OK


def _cmd_convert(args) -> int:
    try:
        trajectories = parse_fcd(args.input, dt=args.slot_s)
    except TraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_trace(trajectories, args.output)
    print(f"converted {len(trajectories)} trajectories -> {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beaconsim",
                                description="Cooperative position-tracking simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="single simulation run")
    pr.add_argument("config")
    pr.add_argument("--out", default="out")
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--ideal-channel", action="store_true")
    pr.add_argument("--no-plots", action="store_true")
    pr.set_defaults(func=_cmd_run)

    ps = sub.add_parser("sweep", help="policy-parameter sweep")
    ps.add_argument("config")
    ps.add_argument("--out", default="out")
    ps.add_argument("--seeds", default=None, help="comma-separated seed override")
    ps.add_argument("--ideal-channel", action="store_true",
                    help="include the ideal-bound row")
    ps.add_argument("--jobs", type=int, default=1)
    ps.add_argument("--no-plots", action="store_true")
    ps.set_defaults(func=_cmd_sweep)

    pt = sub.add_parser("theory", help="analytical inter-transmission model")
    pt.add_argument("config")
    pt.add_argument("--out", default="out")
    pt.add_argument("--tx-log", default=None,
                    help="txlog.csv from a run, for the Q-Q comparison")
    pt.add_argument("--no-plots", action="store_true")
    pt.set_defaults(func=_cmd_theory)

    pc = sub.add_parser("convert-trace", help="floating-car-data XML to internal trace")
    pc.add_argument("input")
    pc.add_argument("output")
    pc.add_argument("--slot-s", type=float, default=0.1)
    pc.set_defaults(func=_cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
