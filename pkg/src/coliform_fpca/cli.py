"""Command-line entry point.

    coliform-fpca run --config run.cfg
    coliform-fpca fit --config run.cfg --fve_threshold 0.9
    coliform-fpca simulate --output_dir synth --n_sites 400 --seed 0

Every config key is also a flag of the same name (dashes work too).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from typing import Sequence

from . import pipeline
from .config import RunConfig, load_config
from .errors import ColiformFpcaError, StageError
from .synth import standard_params, write_synthetic

log = logging.getLogger("coliform_fpca")

_STAGE_FUNCS = {
    "ingest": pipeline.ingest,
    "preprocess": pipeline.preprocess,
    "fit": pipeline.fit,
    "scores": pipeline.scores,
    "associate": pipeline.associate,
    "export": pipeline.export,
    "run": pipeline.run_pipeline,
}

_HELP = {
    "ingest": "parse and validate all inputs",
    "preprocess": "exclusions, weekly pooling, windows, gap filter",
    "fit": "fit the FPCA model (model.json, fve.csv)",
    "scores": "per-site scores, percentiles and decile bins (scores.csv)",
    "associate": "regressions, correlations and extrema groups",
    "export": "GeoJSON maps and SVG plots",
    "run": "every stage in order",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        p.add_argument(*flags, dest=f.name, default=None, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coliform-fpca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _HELP.items():
        _add_config_flags(sub.add_parser(name, help=help_text))
    sim = sub.add_parser("simulate", help="write a synthetic dataset (samples, sites, truth.json)")
    sim.add_argument("--output_dir", "--output-dir", default="synthetic")
    sim.add_argument("--n_sites", "--n-sites", type=int, default=400)
    sim.add_argument("--observe_prob", "--observe-prob", type=float, default=0.6)
    sim.add_argument("--max_gap", "--max-gap", type=int, default=4)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--sigma2", type=float, default=0.04)
    sim.add_argument("--lambdas", default="1.0,0.25", help="comma separated eigenvalues")
    sim.add_argument("--with_covariates", "--with-covariates", action="store_true",
                     help="also write precipitation, flow and site/covariate map files")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            params = standard_params(tuple(float(v) for v in args.lambdas.split(",")), args.sigma2)
            written = write_synthetic(args.output_dir, args.n_sites, args.observe_prob, args.seed, params,
                                      args.with_covariates, args.max_gap)
            for path in written.values():
                print(path)
            return 0
        overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
        cfg = load_config(args.config, overrides)
        _STAGE_FUNCS[args.command](cfg)
        print(f"{args.command}: outputs in {cfg.output_dir}")
        return 0
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (ColiformFpcaError, OSError) as exc:
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
