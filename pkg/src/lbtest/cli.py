"""Command-line entry point: ``lbtest <subcommand> --config run.json``.

Exit status is 0 on success, 2 for a bad config or command line and 3 when
a stage fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import ConfigError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _common(p, methods=False):
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    if methods:
        p.add_argument("--method", action="append",
                       help="restrict to this method (lbt or a baseline name); repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="lbtest", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "train-mut": "train the model under test",
        "gen-adv": "tune the attack into the accuracy band and write the adversarial set",
        "build-surrogate": "learn a behavioral model from oracle labels",
        "calibrate": "grow the mutant pool and calibrate zeta_h and n_max",
        "prioritize": "rank the adversarial inputs with LBT and the baselines",
        "retrain": "fine-tune the model under test on each method's selection",
        "evaluate": "compute FDR, APFD and RAUC for every method",
        "report": "print the per-method results table",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text),
                methods=name in ("prioritize", "retrain", "evaluate"))
    p = sub.add_parser("run", help="run the whole pipeline, reusing cached stages")
    _common(p)
    p.add_argument("--stage", choices=pipeline.STAGES, help="stop after this stage")
    return ap


def _print_table(rows, out):
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(str(c).rjust(w) for c, w in zip(r, widths)), file=out)


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.command == "run":
            pipeline.run_pipeline(cfg, args.out, until=args.stage)
            run = pipeline.Run(cfg, args.out)
            if run.path("table.csv").exists() and args.stage in (None, "report"):
                run.stage_report()
                _print_table(run._memo["table"], out)
            return EXIT_OK
        run = pipeline.Run(cfg, args.out, methods=getattr(args, "method", None))
        with pipeline.output_lock(run.out):
            run.run_stage(args.command, force=True)
        if args.command == "calibrate":
            c = json.loads(run.path("calibration.json").read_text())
            print(json.dumps({k: c[k] for k in ("zeta_h", "n_max", "pool_size", "sprt", "mutation")},
                             indent=1, sort_keys=True), file=out)
        elif args.command == "report":
            _print_table(run._memo["table"], out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"lbtest: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"lbtest: {exc}", file=sys.stderr)
        return EXIT_STAGE


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
