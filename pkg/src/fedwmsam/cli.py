"""Command-line driver.

    fedwmsam run           one experiment -> <out>/<name>.csv (+ .svg)
    fedwmsam scan          rate-trend scan along S, K or R
    fedwmsam check-lemma3  subset-sampling second-moment identity
    fedwmsam check-lemma4  perturbed-gradient variance bound
    fedwmsam compare       same scenario for several optimizers, joined CSV + SVG

``FEDWMSAM_OUT`` overrides the configured output directory; ``--out`` wins
over both.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import analysis
from .algorithms import KINDS, ConfigError
from .config import PRESETS, ExperimentSpec, load_config, parse_config
from .engine import run
from .output import CSV_COLUMNS, emit_csv, emit_svg_lines, fmt, record_row

OUT_ENV = "FEDWMSAM_OUT"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="INI experiment file")
    p.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS),
                   help="base preset: " + ", ".join(sorted(PRESETS)))
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--workers", type=int, help="client worker threads (results do not change)")
    p.add_argument("--out", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedwmsam", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run one experiment")
    _common(p)
    p = sub.add_parser("scan", help="rate-trend scan")
    _common(p)
    p.add_argument("--axis", choices=("S", "K", "R"))
    p.add_argument("--values", help="comma-separated, strictly increasing")
    p = sub.add_parser("check-lemma3", help="sampling second-moment identity")
    _common(p)
    p.add_argument("--families", type=int, default=100)
    p.add_argument("--max-clients", type=int, default=8)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-10)
    p = sub.add_parser("check-lemma4", help="perturbed-gradient variance bound")
    _common(p)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--L", type=float, default=1.0)
    p = sub.add_parser("compare", help="one scenario, several optimizers")
    _common(p)
    p.add_argument("--kinds", help="comma-separated optimizer kinds")
    return ap


def _spec(args) -> ExperimentSpec:
    if args.config:
        spec = load_config(args.config, args.preset)
    else:
        spec = parse_config("", args.preset)
    r = spec.run
    if args.seed is not None:
        r = replace(r, seed=args.seed)
    if args.workers is not None:
        r = replace(r, workers=args.workers)
    return replace(spec, run=r)


def _outdir(args, spec: ExperimentSpec | None) -> str:
    out = args.out or os.environ.get(OUT_ENV) or (spec.outputs if spec else "results")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_run(args) -> int:
    spec = _spec(args)
    out = _outdir(args, spec)
    res = run(spec.run)
    path = os.path.join(out, f"{spec.name}.csv")
    emit_csv(res.records, res.ledger, path, f"diverged: {res.message}" if res.diverged else None)
    if spec.emit_plots and any(not r.diverged for r in res.records):
        emit_svg_lines([("grad_norm", [(r.round, r.global_grad_norm) for r in res.records])],
                       os.path.join(out, f"{spec.name}.svg"), spec.name, "round", "grad norm")
    if res.diverged:
        print(f"DIVERGED {res.message}; partial records in {path}", file=sys.stderr)
        return 1
    last = res.records[-1]
    print(f"{spec.run.optimizer.kind}: round {last.round} grad_norm {fmt(last.global_grad_norm)} "
          f"eval {fmt(last.eval_accuracy)} -> {path}")
    return 0


def cmd_scan(args) -> int:
    spec = _spec(args)
    out = _outdir(args, spec)
    axis = args.axis or spec.scan.axis
    values = ([int(v) for v in args.values.split(",")] if args.values else list(spec.scan.values))
    pts = analysis.rate_trend_scan(spec.run, axis, values, spec.scan.seeds,
                                   workers=spec.run.workers)
    path = os.path.join(out, f"{spec.name}-scan-{axis}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis, "mean_grad_norm", "stderr", "diverged"])
        for p in pts:
            w.writerow([p.value, fmt(p.mean), fmt(p.stderr), int(p.diverged)])
    ok, inv = analysis.trend_is_decreasing(pts)
    for p in pts:
        print(f"{axis}={p.value}: {fmt(p.mean)} +- {fmt(p.stderr)}")
    print(f"{'PASS' if ok else 'FAIL'} trend along {axis} ({inv} inversion(s)) -> {path}")
    return 0 if ok else 1


def cmd_lemma3(args) -> int:
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    worst = 0.0
    for _ in range(args.families):
        for N in range(2, args.max_clients + 1):
            V = rng.standard_normal((N, args.dim)) * rng.uniform(0.1, 10)
            for s in range(1, N + 1):
                lhs, rhs = analysis.check_sampling_identity(V, s)
                worst = max(worst, abs(lhs - rhs))
    ok = worst <= args.tol
    print(f"{'PASS' if ok else 'FAIL'} sampling identity: max |lhs - rhs| = {worst:.3e} "
          f"(tol {args.tol:g})")
    return 0 if ok else 1


def cmd_lemma4(args) -> int:
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    ok = True
    for sigma in (0.0, 0.1, 0.5):
        for rho in (0.0, 0.01, 0.1, 1.0):
            rep = analysis.check_perturbation_variance(args.L, sigma, rho, args.trials, rng)
            ok &= rep.passed
            print(f"sigma={sigma:g} rho={rho:g}: empirical {rep.empirical:.6g} "
                  f"bound {rep.bound:.6g} {'ok' if rep.passed else 'VIOLATED'}")
    print(f"{'PASS' if ok else 'FAIL'} perturbation variance bound")
    return 0 if ok else 1


def cmd_compare(args) -> int:
    spec = _spec(args)
    out = _outdir(args, spec)
    kinds = args.kinds.split(",") if args.kinds else list(spec.compare_kinds)
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"--kinds: unknown optimizer {k!r} (known: {', '.join(KINDS)})")
    results = {k: run(replace(spec.run, optimizer=replace(spec.run.optimizer, kind=k)))
               for k in kinds}
    metrics = CSV_COLUMNS[1:]
    by_round = {}
    for k, res in results.items():
        for rec in res.records:
            by_round.setdefault(rec.round, {})[k] = record_row(rec)[1:]
    path = os.path.join(out, f"{spec.name}-compare.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round"] + [f"{k}.{m}" for k in kinds for m in metrics])
        for rnd in sorted(by_round):
            row = [str(rnd)]
            for k in kinds:
                row += by_round[rnd].get(k, [""] * len(metrics))
            w.writerow(row)
    series = [(k, [(r.round, r.global_grad_norm) for r in res.records if not r.diverged])
              for k, res in results.items()]
    series = [s for s in series if s[1]]
    if spec.emit_plots and series:
        emit_svg_lines(series, os.path.join(out, f"{spec.name}-compare.svg"), spec.name,
                       "round", "grad norm")
    bad = [k for k, res in results.items() if res.diverged]
    for k, res in results.items():
        last = res.records[-1]
        print(f"{k}: grad_norm {fmt(last.global_grad_norm)} eval {fmt(last.eval_accuracy)}"
              + (" DIVERGED" if res.diverged else ""))
    print(f"-> {path}")
    return 1 if bad else 0


_COMMANDS = {"run": cmd_run, "scan": cmd_scan, "check-lemma3": cmd_lemma3,
             "check-lemma4": cmd_lemma4, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
