"""Command-line entry point: ``fedprint {generate,train,attack,report,run}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error or refused
overwrite, 4 protocol or data error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from fedprint import experiment
from fedprint.errors import ConfigError, FedPrintError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PROTOCOL = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedprint",
        description="Federated training of a frame classifier and a speaker-identity attack on its updates.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="INI file (default: OUT/config.ini if present, else built-in defaults)")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--threads", type=int, help="worker threads for client training")
        p.add_argument("--corpus", help="corpus directory (default: OUT)")

    p = sub.add_parser("generate", help="generate the synthetic corpus")
    common(p)
    p = sub.add_parser("train", help="run federated training")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite earlier training output")
    p = sub.add_parser("attack", help="score enrollment models against uploaded models")
    common(p)
    p = sub.add_parser("report", help="summarize an output directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--corpus", help="corpus directory (default: OUT)")
    p = sub.add_parser("run", help="generate, train, attack and report in one go")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite earlier training output")
    return parser


def dispatch(args) -> str | None:
    if args.command == "report":
        return experiment.cmd_report(args.out, args.corpus)
    cfg, out = experiment.resolve_config(args.config, args.out, args.seed, args.threads)
    corpus = args.corpus
    if args.command == "generate":
        experiment.cmd_generate(cfg, out, corpus)
    elif args.command == "train":
        experiment.cmd_train(cfg, out, force=args.force, corpus_dir=corpus)
    elif args.command == "attack":
        experiment.cmd_attack(cfg, out, corpus)
    elif args.command == "run":
        experiment.cmd_generate(cfg, out, corpus)
        experiment.cmd_train(cfg, out, force=args.force, corpus_dir=corpus)
        experiment.cmd_attack(cfg, out, corpus)
        return experiment.cmd_report(out, corpus)
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = dispatch(args)
    except ConfigError as exc:
        print(f"fedprint: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fedprint: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FedPrintError as exc:
        print(f"fedprint: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", EXIT_PROTOCOL)
    except (ValueError, RuntimeError) as exc:
        print(f"fedprint: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    if text:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
