"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 external
detector failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .characterize import CharacterizationError, UnknownConditionError
from .config import KEYS, ConfigError, load_config
from .detectors import ExternalDetectorError, KeypointParseError
from .image import ImageError, PnmParseError
from .model import ModelFormatError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _external(value: str):
    name, sep, template = value.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError("expected NAME=COMMAND")
    return name.strip(), template.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in KEYS:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        common.add_argument(*flags, dest=key, default=None, metavar="VALUE")
    common.add_argument(
        "--external", action="append", type=_external, default=None, metavar="NAME=CMD",
        help="external detector command with {input} and {output} placeholders",
    )

    parser = _Parser(prog="detsel", description="Pick the local feature detector expected to repeat best on a degraded image.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write procedural scenes into the corpus directory")
    p.add_argument("--count", type=int, default=20)
    sub.add_parser("generate", parents=[common], help="degrade every corpus scene along the amount ladders")
    sub.add_parser("train", parents=[common], help="train the type and amount classifiers")
    sub.add_parser("characterize", parents=[common], help="measure detector repeatability and build the rule table")
    p = sub.add_parser("select", parents=[common], help="select a detector for a reference/target pair")
    p.add_argument("reference")
    p.add_argument("target")
    p.add_argument("--timing", action="store_true", help="append per-stage milliseconds")
    p.add_argument("--csv", action="store_true", help="also print a CSV row")
    p = sub.add_parser("evaluate", parents=[common], help="replay the test split and report selection gaps")
    p.add_argument("--oracle", action="store_true", help="use true operating conditions instead of predictions")
    p.add_argument("--no-measure", dest="measure", action="store_false", help="skip detection on the test scenes")
    p.add_argument("--output", help="gap CSV path (default: WORK_DIR/gap.csv)")
    return parser


def _config(args):
    overrides = {k: getattr(args, k) for k in KEYS}
    if args.external:
        overrides["external"] = dict(args.external)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"detsel: {exc}", file=sys.stderr)
        return EXIT_USAGE

    from . import pipeline

    try:
        if args.command == "synth":
            paths = pipeline.synthesize_corpus(cfg, args.count)
            print(f"wrote {len(paths)} scenes to {cfg.corpus_dir}")
        elif args.command == "generate":
            manifest = pipeline.run_generate(cfg)
            print(f"wrote {len(manifest.rows)} targets to {cfg.manifest_path}")
        elif args.command == "train":
            _, report = pipeline.run_train(cfg)
            print("\n".join(report.lines()))
        elif args.command == "characterize":
            char, table = pipeline.run_characterize(cfg)
            print(f"characterized {len(char.detectors)} detectors over {len(table.rules)} conditions")
            for (kind, level), rule in table.rules.items():
                print(f"{kind.value}:{level} -> {rule.detector} ({rule.winning_avg:.4f}, margin {rule.margin:.4f})")
        elif args.command == "select":
            report = pipeline.run_select(cfg, args.reference, args.target)
            sys.stdout.write(report.to_text(timing=args.timing))
            if args.csv:
                csv.writer(sys.stdout, lineterminator="\n").writerow(report.csv_row())
        elif args.command == "evaluate":
            out = args.output or cfg.work_dir / "gap.csv"
            rows, char = pipeline.run_evaluate(cfg, oracle=args.oracle, measure=args.measure, out_path=out)
            gaps = [r.gap for r in rows]
            print(f"conditions {len(rows)}")
            print(f"mean_abs_gap {sum(abs(g) for g in gaps) / len(gaps):.6f}")
            print(f"worst_gap {min(gaps):.6f}")
            print(f"max_adjacent_difference {char.max_adjacent_difference():.6f}")
            print(f"gap_csv {out}")
    except (ExternalDetectorError, CharacterizationError) as exc:
        print(f"detsel: external detector failure: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    except (
        pipeline.DataError,
        ImageError,
        PnmParseError,
        KeypointParseError,
        ModelFormatError,
        UnknownConditionError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"detsel: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
