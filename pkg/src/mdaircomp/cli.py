"""Command-line entry point.

Subcommands::

    mdaircomp detect-bench --snr 0 5 20 --trials 100
    mdaircomp feel --scheme ifed pa mdaircomp --rounds 200 --seeds 0 1 2
    mdaircomp sweep --target detect-bench --axis L=15,20 --axis M=1,4,8
    mdaircomp overhead --w 269722 --q 20 --l 20 --k 40 --p 1024

Every command writes CSV plus a ``<command>-manifest.json`` into ``--out``
(default: ``$MDAIRCOMP_OUT`` or ``./results``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import feel, harness, metrics
from .harness import ConfigError

OVERHEAD_FIELDS = ("W", "Q", "L", "K", "P", "vq_ofdma", "fsk_mv", "obda", "md_aircomp")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config seeds)")
    p.add_argument("--workers", type=int, default=None, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdaircomp", description="Digital over-the-air aggregation experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect-bench", help="synthetic AMP-DA benchmark: NMSE and K_a estimate PMF")
    _common(p)
    p.add_argument("--snr", type=float, nargs="+", default=None, help="SNR points in dB")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--M", type=int, default=None)

    p = sub.add_parser("feel", help="federated training with the selected aggregation arms")
    _common(p)
    p.add_argument("--scheme", nargs="+", choices=feel.SCHEMES, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--ideal-channel", action="store_true",
                   help="noiseless channel with an orthogonal codebook (L = N)")

    p = sub.add_parser("sweep", help="grid over config axes")
    _common(p)
    p.add_argument("--target", choices=("detect-bench", "feel"), default="detect-bench")
    p.add_argument("--axis", action="append", required=True, metavar="KEY=V1,V2,...")

    p = sub.add_parser("overhead", help="uplink time slots per round for each scheme")
    p.add_argument("--w", type=int, required=True, help="model size W")
    p.add_argument("--q", type=int, required=True, help="VQ block length Q")
    p.add_argument("--l", type=int, required=True, help="sequence length L")
    p.add_argument("--k", type=int, required=True, help="number of devices K")
    p.add_argument("--p", type=int, required=True, help="OFDM subcarriers")
    p.add_argument("--out", type=Path, default=None)
    return ap


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    cfg = harness.parse_assignments(args.overrides, cfg)
    changes = {}
    for name in ("trials", "L", "M", "rounds", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "scheme", None):
        changes["schemes"] = tuple(args.scheme)
    if getattr(args, "seeds", None):
        changes["seeds"] = tuple(args.seeds)
    elif args.seed is not None:
        changes["seeds"] = (args.seed,)
    return cfg.replace(**changes)


def _out_dir(args) -> Path:
    out = args.out if args.out is not None else harness.default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_detect_bench(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    snrs = args.snr if args.snr is not None else [cfg.snr_db]
    seed = cfg.seeds[0]
    paths = [out / "detect_bench.csv", out / "ka_pmf.csv"]
    status = "failed"
    try:
        with harness.CsvSink(paths[0], harness.BENCH_FIELDS) as sink, \
                harness.CsvSink(paths[1], harness.PMF_FIELDS) as pmf:
            rows = harness.detect_bench(cfg, snrs, seed, sink, pmf)
        status = "complete"
    finally:
        harness.write_manifest(out / "detect-bench-manifest.json",
                               harness.make_manifest("detect-bench", cfg, [seed], paths, status,
                                                     {"snr_db": [float(s) for s in snrs]}))
    for s in harness.summarize_bench(rows):
        print(f"snr={s['snr_db']:g} dB L={s['L']} M={s['M']}: median NMSE {s['median_nmse_db']:.2f} dB, "
              f"K_a exact (MV) {s['mv_hit_rate']:.2f}, (mean) {s['mean_hit_rate']:.2f}")
    return 0


def _cmd_feel(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    paths = [out / "feel.csv", out / "feel_weights.csv"]
    status = "failed"
    try:
        with harness.CsvSink(paths[0], feel.RoundRecord.FIELDS) as sink, \
                harness.CsvSink(paths[1], harness.WEIGHT_FIELDS) as wsink:
            results = harness.run_feel_experiment(cfg, sink, wsink, ideal=args.ideal_channel)
        status = "complete"
    finally:
        harness.write_manifest(out / "feel-manifest.json",
                               harness.make_manifest("feel", cfg, cfg.seeds, paths, status,
                                                     {"ideal_channel": args.ideal_channel}))
    for scheme, acc in harness.final_accuracy(results).items():
        print(f"{scheme}: mean final accuracy {acc:.4f} over {len(cfg.seeds)} seed(s)")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    axes = [harness.parse_axis(a) for a in args.axis]
    points = harness.sweep_points(cfg, axes)
    base = harness.BENCH_FIELDS if args.target == "detect-bench" else feel.RoundRecord.FIELDS
    path = out / "sweep.csv"
    status = "failed"
    try:
        with harness.CsvSink(path, ("point", "setting") + tuple(base)) as sink:
            for i, (setting, pcfg) in enumerate(points):
                if args.target == "detect-bench":
                    rows = harness.detect_bench(pcfg, [pcfg.snr_db], pcfg.seeds[0])
                    for r in rows:
                        sink.write([i, setting] + [r[f] for f in base])
                    s = harness.summarize_bench(rows)[0]
                    print(f"[{i}] {setting}: median NMSE {s['median_nmse_db']:.2f} dB, "
                          f"K_a exact (MV) {s['mv_hit_rate']:.2f}")
                else:
                    res = harness.run_feel_experiment(pcfg)
                    for recs in res.values():
                        for r in recs:
                            sink.write([i, setting] + r.as_row())
                    accs = ", ".join(f"{k} {v:.4f}" for k, v in harness.final_accuracy(res).items())
                    print(f"[{i}] {setting}: {accs}")
        status = "complete"
    finally:
        harness.write_manifest(out / "sweep-manifest.json",
                               harness.make_manifest("sweep", cfg, cfg.seeds if args.target == "feel" else cfg.seeds[:1],
                                                     [path], status,
                                                     {"target": args.target,
                                                      "axes": {k: [str(v) for v in vals] for k, vals in axes}}))
    return 0


def _cmd_overhead(args) -> int:
    tab = metrics.overhead_table(args.w, args.q, args.l, args.k, args.p)
    for name, label in (("vq_ofdma", "VQ+OFDMA"), ("fsk_mv", "FSK-MV"), ("obda", "OBDA"),
                        ("md_aircomp", "MD-AirComp")):
        print(f"{label}: {tab[name]}")
    out = args.out if args.out is not None else harness.default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    path = out / "overhead.csv"
    with harness.CsvSink(path, OVERHEAD_FIELDS) as sink:
        sink.write([args.w, args.q, args.l, args.k, args.p] + [tab[k] for k in OVERHEAD_FIELDS[5:]])
    cfg = harness.ExperimentConfig()
    harness.write_manifest(out / "overhead-manifest.json",
                           harness.make_manifest("overhead", cfg, [], [path], "complete",
                                                 {"W": args.w, "Q": args.q, "L": args.l, "K": args.k, "P": args.p}))
    return 0


COMMANDS = {
    "detect-bench": _cmd_detect_bench,
    "feel": _cmd_feel,
    "sweep": _cmd_sweep,
    "overhead": _cmd_overhead,
}


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run the subcommand; returns the process exit code."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"mdaircomp {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
