"""Command line entry point: ``chartfit <command> [options]``.

Exit codes: 0 on success, 1 for an invalid configuration or input file,
2 when an upstream artifact is missing.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .ingest import SchemaError
from .pipeline import ConfigError, MissingArtifact, RunConfig

logger = logging.getLogger("chartfit")


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML or JSON run configuration")
    parser.add_argument("--seed", type=int, help="random seed for balancing, splitting and models")
    parser.add_argument("--out", help="output directory for artifacts (default: out)")
    parser.add_argument(
        "--model", choices=(*pipeline.MODEL_NAMES, "all"), help="model family (default: all)"
    )
    parser.add_argument("--force", action="store_true", help="rerun even if up to date")
    parser.add_argument("--threshold", type=float, help="decision threshold on P(charted)")
    parser.add_argument("--bandwidth", type=float, help="KDE bandwidth (default: Silverman)")
    parser.add_argument("-v", "--verbose", action="store_true")


def _row_caps(parser: argparse.ArgumentParser):
    parser.add_argument("--shap-rows", type=int, dest="shap_rows", help="rows to explain (0 = all)")
    parser.add_argument("--pdp-rows", type=int, dest="pdp_rows", help="rows to average (0 = all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartfit", description="Predict chart inclusion from catalog audio features."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize the catalog and chart archive")
    _common(p)
    p.add_argument("--catalog", help="catalog CSV")
    p.add_argument("--archive", help="chart archive CSV")
    p.add_argument("--schema", help="column mapping file or preset name (canonical, spotify30k)")
    p.add_argument("--clamp", action="store_true", default=None, help="clamp out-of-range values")

    p = sub.add_parser("link", help="label tracks by key match and balance the classes")
    _common(p)
    p.add_argument("--descriptors", help="file of descriptor phrases, one per line")

    p = sub.add_parser("split", help="stratified train/validation split")
    _common(p)
    p.add_argument("--ratio", type=float, dest="split_ratio", help="validation share (default 0.2)")

    p = sub.add_parser("featurize", help="build feature matrices from the split")
    _common(p)
    p.add_argument("--drop-loudness", action="store_true", default=None, dest="drop_loudness")

    for name, text in (
        ("train", "fit models on the training features"),
        ("evaluate", "score models on the validation features"),
        ("report", "assemble the classification reports"),
    ):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("explain", help="KDE, SHAP, partial dependence or monthly analyses")
    _common(p)
    p.add_argument("analysis", choices=("kde", "shap", "pdp", "monthly", "all"))
    _row_caps(p)

    p = sub.add_parser("demo", help="run every stage on a synthetic dataset")
    _common(p)
    _row_caps(p)
    return parser


_OVERRIDES = (
    "seed",
    "out",
    "model",
    "threshold",
    "bandwidth",
    "catalog",
    "archive",
    "schema",
    "clamp",
    "descriptors",
    "split_ratio",
    "drop_loudness",
    "shap_rows",
    "pdp_rows",
)


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    return RunConfig.load(args.config, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command == "demo" else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        config = _config(args)
        force = args.force
        if args.command == "explain":
            pipeline.run_explain(config, args.analysis, force)
        else:
            runner = getattr(pipeline, f"run_{args.command}")
            runner(config, force)
    except MissingArtifact as exc:
        logger.error("%s", exc)
        return 2
    except (ConfigError, SchemaError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return 1
    if args.command in ("report", "demo"):
        sys.stdout.write((Path(config.out) / "report.txt").read_text(encoding="utf-8"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
