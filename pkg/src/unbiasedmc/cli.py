"""Command line: ``unbiasedmc {betas estimate | dist solve | bench run | report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import bench
from .samplers import model_from_dict
from .solver import adaptive_solve, subcanonical, truncated_law
from .variance import DEFAULT_FLOOR, DEFAULT_SAMPLES, estimate_betas


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), float(value)


def cmd_betas_estimate(args) -> int:
    spec = model_from_dict(args.model, dict(args.param or []))
    samples = args.samples or DEFAULT_SAMPLES[args.kind]
    betas = estimate_betas(spec, args.kind, args.levels, args.proxy_level, samples,
                           args.seed, args.floor, args.workers)
    bench.save_betas(args.out, betas, spec)
    print(" ".join(f"{b:.4g}" for b in betas.values))
    if betas.provenance.clamp_warnings:
        print(f"clamped: {list(betas.provenance.clamp_warnings)}", file=sys.stderr)
    return 0


def cmd_dist_solve(args) -> int:
    mode = args.mode
    kind, m = bench.parse_distribution(mode)
    if kind == "subcanonical":
        law = subcanonical(args.p, bench.HEAD_WIDTH - 1)
    else:
        betas = bench.load_betas(args.betas)
        if kind == "truncated":
            law = truncated_law(betas, m, args.p)
        else:
            m_max = min(args.m_max, len(betas) - 2)
            law, report = adaptive_solve(betas.values, args.p, args.epsilon, m_max)
            if report.hit_m_max:
                print(f"warning: stopping rule not met by m_max={m_max}", file=sys.stderr)
    if args.out:
        bench.save_law(args.out, law)
    print(f"m={law.m} tail_ratio={law.tail_ratio:.6g}")
    print(" ".join(f"{f:.4f}" for f in law.head))
    return 0


def cmd_bench_run(args) -> int:
    with open(args.config) as fh:
        doc = yaml.safe_load(fh) or {}
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.samples is not None:
        doc.setdefault("bench", {})["samples"] = args.samples
    if args.workers is not None:
        doc["workers"] = args.workers
    config = bench.ExperimentConfig.from_dict(doc)
    result = bench.run_experiment(config, args.out_dir)
    print(bench.render_table(result))
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.results).read_text())
    print(bench.render_table(bench.ExperimentResult.from_dict(doc)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unbiasedmc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="group", required=True)

    betas = sub.add_parser("betas").add_subparsers(dest="action", required=True)
    est = betas.add_parser("estimate", help="estimate level coefficients")
    est.add_argument("--model", choices=["bs", "heston", "hhw"], required=True)
    est.add_argument("--param", type=_param, action="append", metavar="KEY=VALUE",
                     help="override a model parameter (repeatable)")
    est.add_argument("--kind", choices=["coupled", "independent"], default="coupled")
    est.add_argument("--levels", type=int, default=7)
    est.add_argument("--proxy-level", type=int, default=10)
    est.add_argument("--samples", type=int)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--floor", type=float, default=DEFAULT_FLOOR)
    est.add_argument("--workers", type=int, default=1)
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_betas_estimate)

    dist = sub.add_parser("dist").add_subparsers(dest="action", required=True)
    solve = dist.add_parser("solve", help="solve for a randomization law")
    solve.add_argument("--betas")
    solve.add_argument("--mode", default="adaptive", help="subcanonical | truncated:<m> | adaptive")
    solve.add_argument("--p", type=float, default=1.0)
    solve.add_argument("--epsilon", type=float, default=0.5)
    solve.add_argument("--m-max", type=int, default=10)
    solve.add_argument("--out")
    solve.set_defaults(func=cmd_dist_solve)

    run = sub.add_parser("bench").add_subparsers(dest="action", required=True)
    brun = run.add_parser("run", help="run an experiment from a YAML config")
    brun.add_argument("--config", required=True)
    brun.add_argument("--out-dir")
    brun.add_argument("--seed", type=int)
    brun.add_argument("--samples", type=int, help="override bench.samples")
    brun.add_argument("--workers", type=int)
    brun.set_defaults(func=cmd_bench_run)

    rep = sub.add_parser("report", help="re-render a saved results.json")
    rep.add_argument("results")
    rep.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.group == "dist" and args.mode != "subcanonical" and not args.betas:
        print("error: --betas is required unless --mode subcanonical", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
