"""Command-line entry point: ``cohkge {pmi,train,eval,intrude,report,grid,synth}``."""

import argparse
import logging
import os
import sys

from . import pipeline
from .config import dump_config, load_config
from .errors import CohKGEError


def _common(parser):
    parser.add_argument("--config", help="YAML/JSON experiment config")
    parser.add_argument("--seed", type=int, help="override seed_base")
    parser.add_argument("--lambda-c", type=float, help="override train.lambda_c")
    parser.add_argument("--lambda-r", type=float, help="override train.lambda_r")
    parser.add_argument("--dim", type=int, help="override train.dim")
    parser.add_argument("--filtered-ranking", action="store_true", default=None,
                        help="also report filtered link-prediction metrics")
    parser.add_argument("--num-seeds", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--output-dir", help="override paths.output_dir")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="cohkge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("pmi", help="build the entity-pair PMI matrix"))
    _common(sub.add_parser("train", help="train models for num_seeds seeds"))
    p = sub.add_parser("eval", help="evaluate trained models")
    _common(p)
    p.add_argument("models", nargs="*", help="model files (default: all in the manifest)")
    p = sub.add_parser("intrude", help="export word-intrusion tasks or score annotations")
    _common(p)
    p.add_argument("--model", help="model file (default: first in the manifest)")
    p.add_argument("--annotations", nargs="+", help="annotation files to score")
    p = sub.add_parser("report", help="render figures and summary tables")
    _common(p)
    p.add_argument("--baseline", help="output directory of a baseline run to compare against")
    _common(sub.add_parser("grid", help="hyper-parameter grid over lambda_c, lambda_r, dim"))
    p = sub.add_parser("synth", help="write a small planted-cluster dataset and config")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args):
    output_dir = os.path.abspath(args.output_dir) if args.output_dir else None
    overrides = {"seed": args.seed, "lambda_c": args.lambda_c, "lambda_r": args.lambda_r,
                 "dim": args.dim, "filtered_ranking": args.filtered_ranking,
                 "num_seeds": args.num_seeds, "workers": args.workers, "output_dir": output_dir}
    cfg = load_config(args.config, overrides)
    logging.getLogger(__name__).info("resolved config: %s", cfg.to_dict())
    return cfg


def _synth(args):
    from .config import ExperimentConfig
    from .synthetic import write_planted_kg

    paths = write_planted_kg(args.directory, seed=args.seed)
    cfg = ExperimentConfig.from_dict({
        "paths": {"train": "train.txt", "valid": "valid.txt", "test": "test.txt",
                  "textual": "text.txt", "output_dir": "run"},
        "train": {"dim": 10, "max_epochs": 300, "learning_rate": 0.05},
        "eval": {"intrusion_dims": 10},
        "num_seeds": 3})
    path = os.path.join(args.directory, "config.yaml")
    dump_config(cfg, path)
    print(f"wrote {', '.join(sorted(paths.values()))} and {path}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            _synth(args)
            return 0
        cfg = _config(args)
        if args.command == "pmi":
            summary = pipeline.cmd_pmi(cfg)
            for key, value in summary.items():
                print(f"{key}\t{value}")
        elif args.command == "train":
            manifest = pipeline.cmd_train(cfg)
            for run in manifest["runs"]:
                print(f"seed {run['seed']}\tepochs {run['epochs']}\tconverged {run['converged']}"
                      f"\tvalid MRR {run['valid_mrr']:.3f}")
        elif args.command == "eval":
            _, aggregate = pipeline.cmd_eval(cfg, args.models)
            from .evaluation import format_metrics_text
            sys.stdout.write(format_metrics_text(aggregate))
        elif args.command == "intrude":
            result = pipeline.cmd_intrude(cfg, args.model, args.annotations)
            if args.annotations:
                print(f"ManualWI\t{result:.2f}")
            else:
                print(f"exported {len(result)} tasks to "
                      f"{os.path.join(cfg.paths.output_dir, 'intrusion')}")
        elif args.command == "report":
            for path in pipeline.cmd_report(cfg, args.baseline):
                print(path)
        elif args.command == "grid":
            rows, best = pipeline.cmd_grid(cfg)
            for row in rows:
                print("\t".join(map(str, row[:4])))
            print(f"best\tlambda_c={best[0]}\tlambda_r={best[1]}\tdim={best[2]}\tvalid_mrr={best[3]:.3f}")
    except CohKGEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
