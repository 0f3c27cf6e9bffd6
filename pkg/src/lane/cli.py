"""Command-line entry point.

    lane <command> --config <path> [--seed N] [--set key=value]...

Commands: prepare, extract-prefs, train, evaluate, explain, sweep, serve.
Exit codes: 0 ok, 1 user error (bad input/config/missing artifact),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import LaneError


class _Parser(argparse.ArgumentParser):
    # usage problems are user errors: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the YAML run config")
    sub.add_argument("--seed", type=int, default=None, help="override the run seed")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (dotted path), repeatable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lane", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("prepare", "ingest, filter and split the raw interaction file"),
        ("extract-prefs", "extract per-user preferences through the LLM client"),
        ("train", "train the aligned recommender and write a checkpoint"),
        ("sweep", "vary one hyperparameter over a grid and plot the metrics"),
    ]:
        sub = commands.add_parser(name, help=help_text)
        _add_common(sub)

    evaluate = commands.add_parser("evaluate", help="rank held-out targets and report HR/NDCG")
    _add_common(evaluate)
    evaluate.add_argument("--split", choices=["valid", "test"], default="test")

    explain = commands.add_parser("explain", help="generate explanations for evaluation users")
    _add_common(explain)
    explain.add_argument("--limit", type=int, default=None, help="number of users to explain")

    serve = commands.add_parser("serve", help="serve recommendations + explanations over HTTP")
    _add_common(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config(args.config, overrides=args.overrides, seed=args.seed)

    from . import pipeline

    if args.command == "prepare":
        out = pipeline.prepare(config)
    elif args.command == "extract-prefs":
        out = pipeline.extract_prefs(config)
    elif args.command == "train":
        out = pipeline.train(config)
    elif args.command == "evaluate":
        out = pipeline.evaluate(config, split=args.split)
    elif args.command == "explain":
        out = pipeline.explain_users(config, limit=args.limit)
    elif args.command == "sweep":
        out = pipeline.sweep(config)
    elif args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(config), host=args.host, port=args.port)
        return 0
    else:  # pragma: no cover - argparse enforces the choices
        raise AssertionError(args.command)

    print(json.dumps(out, indent=2, sort_keys=True, default=str))
    return 0


def main() -> None:
    try:
        sys.exit(run())
    except LaneError as exc:
        print(f"lane: error: {exc}", file=sys.stderr)
        sys.exit(1)
    except SystemExit:
        raise
    except Exception as exc:  # internal fault
        print(f"lane: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        sys.exit(2)


if __name__ == "__main__":
    main()
