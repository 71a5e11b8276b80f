"""Command line entry point: ``interdelay <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .errors import InputError, NumericalError
from .synthgen import GenConfig, write_generated

log = logging.getLogger("interdelay")


def _inputs(p):
    p.add_argument("--papers")
    p.add_argument("--taxonomy")
    p.add_argument("--ranks")


def _scope(p):
    p.add_argument("--min-field-refs", type=int, dest="min_field_refs")
    p.add_argument("--max-year", type=int, dest="max_year")


def _dynamics_opts(p):
    p.add_argument("--sd", choices=("sample", "population"))
    p.add_argument("--smooth-window", type=int, dest="smooth_window")


def _cohort_opts(p):
    p.add_argument("--bins", type=int)
    p.add_argument("--n-boot", type=int, dest="n_boot")
    p.add_argument("--tail-q", type=float, dest="tail_q")
    p.add_argument("--statistic", choices=("peak", "mean_tm"), dest="bootstrap_statistic")


def _regress_opts(p):
    p.add_argument("--responses", help="comma separated, e.g. t_m,c_m")
    p.add_argument("--inter-coding", choices=("rs", "percentile", "high"), dest="inter_coding")
    p.add_argument("--export-design", action="store_true", default=None, dest="export_design")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value options file")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--seed", type=int, help="bootstrap / generator seed")
    common.add_argument("--window", type=int, help="citation window in years")
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="interdelay", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", parents=[common], help="validate and index a corpus")
    _inputs(ing)
    _scope(ing)
    for name, text in (("distances", "field distance matrix"),
                       ("score", "per-paper interdisciplinarity"),
                       ("dynamics", "per-paper citation dynamics"),
                       ("cohort", "group curves, bootstrap tests, tail ratios"),
                       ("regress", "fixed-effect regressions and margins")):
        s = sub.add_parser(name, parents=[common], help=text)
        if name in ("distances", "score", "dynamics"):
            _scope(s)
        if name == "dynamics":
            _dynamics_opts(s)
        if name == "cohort":
            _cohort_opts(s)
        if name == "regress":
            _regress_opts(s)

    run = sub.add_parser("run", parents=[common], help="run several stages in order")
    run.add_argument("stages", nargs="*", default=list(pl.STAGES))
    for add in (_inputs, _scope, _dynamics_opts, _cohort_opts, _regress_opts):
        add(run)

    sim = sub.add_parser("simulate", parents=[common], help="write a synthetic corpus")
    sim.add_argument("--papers-count", type=int, dest="n_papers")
    sim.add_argument("--delay-coupling", type=float, dest="delay_coupling")
    sim.add_argument("--truth", action="store_true", help="also write per-paper ground truth")

    sub.add_parser("report", parents=[common], help="summarize a finished run")
    return p


_PIPELINE_KEYS = {f for f in pl.PipelineConfig.__dataclass_fields__}


def _pipeline_config(args) -> pl.PipelineConfig:
    overrides = {k: v for k, v in vars(args).items() if k in _PIPELINE_KEYS and v is not None}
    if args.config:
        return pl.PipelineConfig.from_file(args.config, **overrides)
    return pl.PipelineConfig(**overrides)


def _simulate(args) -> int:
    if args.seed is None and not args.config:
        raise InputError("simulate needs --seed (or a config file that sets it)")
    overrides = {k: getattr(args, k) for k in ("n_papers", "delay_coupling", "seed")
                 if getattr(args, k) is not None}
    cfg = GenConfig.from_file(args.config, **overrides) if args.config else GenConfig(**overrides)
    out = Path(args.output or "synthetic")
    paths = write_generated(cfg, out, truth=args.truth)
    cfg.to_file(out / "generator.cfg")
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return _simulate(args)
        if args.command == "report":
            out = args.output
            if out is None:
                out = _pipeline_config(args).output
            report = pl.build_report(out)
            text = json.dumps(report, indent=2, sort_keys=True) + "\n"
            Path(out, "report.json").write_text(text, encoding="utf-8")
            sys.stdout.write(text)
            return 0
        cfg = _pipeline_config(args)
        stages = args.stages if args.command == "run" else [args.command]
        bundle = pl.run_pipeline(cfg, stages)
        for stage in bundle.stages_run:
            for rel in bundle.outputs[stage]:
                print(f"{stage}\t{bundle.output / rel}")
        return 0
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
