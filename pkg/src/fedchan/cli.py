"""``fedchan`` command line: gen-data, train-link, train, eval, report."""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment file")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--paper-scale", action="store_true", help="36k/25.8k/23k links instead of 5k per city")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fedchan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate per-city datasets")
    sub.add_parser("train-link", parents=[common], help="train one link-state model per city")
    t = sub.add_parser("train", parents=[common], help="train standalone or federated path models")
    t.add_argument("--mode", required=True, choices=pipeline.MODES)
    t.add_argument("--city", help="city for standalone modes")
    sub.add_parser("eval", parents=[common], help="distances between generated and test path losses")
    sub.add_parser("report", parents=[common], help="summary table with published reference values")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, seed=args.seed, out=args.out, paper_scale=args.paper_scale)
        if args.command == "gen-data":
            for path in pipeline.cmd_gen_data(cfg):
                print(path)
        elif args.command == "train-link":
            for city, acc in pipeline.cmd_train_link(cfg).items():
                print(f"{city}\taccuracy={acc:.4f}")
        elif args.command == "train":
            pipeline.cmd_train(cfg, args.mode, args.city)
            print(f"trained {args.mode}" + (f" for {args.city}" if args.city else ""))
        elif args.command == "eval":
            for r in pipeline.cmd_eval(cfg).rows:
                print(f"{r.city}\t{r.method}\tkl={r.kl:.4f}\tw1={r.wasserstein:.3f}")
        elif args.command == "report":
            print(pipeline.cmd_report(cfg))
    except Exception as exc:  # one machine-parsable line, no traceback
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
