"""
Command-line entry point.

Run from ``backend/``:
    python -m app.cli dist --left a.json --right b.json --depth 2
    python -m app.cli pairwise --tudataset data --name MUTAG --out mutag.csv --degrees
    python -m app.cli knn --tudataset data --name MUTAG --splits 10 --seed 0
    python -m app.cli sbm-correlate --signal constant --model gin --hidden 16
    python -m app.cli lipschitz-check --tudataset data --name MUTAG --models 100
    python -m app.cli gen-sbm --blocks 15,15 --p 0.5 --q 0.3 --out g.json
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from app.config import configure_logging, get_settings
from app.didm_metric import (
    didm_distance,
    pairwise_distance_matrix,
    read_distance_csv,
    write_distance_csv,
)
from app.errors import ContractViolation, DidmError
from app.graph_model import SbmSpec, generate_sbm, load_graph_json, save_graph_json
from app.harness import (
    ExperimentConfig,
    dataset_correlation_experiment,
    knn_experiment,
    lipschitz_check_experiment,
    load_config_dataset,
    sbm_correlation_experiment,
)
from app.mpnn_engine import (
    build_model,
    generalization_bound_log,
    generalization_constants,
    lipschitz_constants,
)
from app.schemas import CoveringSpec, ModelSpec

logger = logging.getLogger("app.cli")


def _blocks(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated block sizes, got {text!r}")


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tudataset", required=True, help="TU dataset root directory")
    p.add_argument("--name", required=True, help="Dataset name, e.g. MUTAG")
    p.add_argument("--degrees", action="store_true", help="Use node degrees as attributes")
    p.add_argument("--normalize-degrees", action="store_true", help="Degrees divided by N")


def _model_args(p: argparse.ArgumentParser, choices=("gin", "gc")) -> None:
    p.add_argument("--model", choices=choices, default="gin")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    depth = settings.default_depth

    ap = argparse.ArgumentParser(prog="didm", description="DIDM mover's distance and MPNN experiments")
    ap.add_argument("--workers", type=int, default=None, help="Worker processes (capped by DIDM_THREADS)")
    ap.add_argument("--log-level", default=None)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="Distance between two graph JSON files")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--depth", type=int, default=depth)

    p = sub.add_parser("pairwise", help="Pairwise distance matrix of a TU dataset")
    _dataset_args(p)
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--out", required=True)

    p = sub.add_parser("knn", help="1-NN classification accuracy")
    _dataset_args(p)
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--train-frac", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matrix", default=None, help="Reuse a CSV written by 'pairwise'")

    p = sub.add_parser("sbm-correlate", help="SBM distance vs output-distance correlation")
    p.add_argument("--signal", choices=["constant", "community", "gaussian"], default="constant")
    _model_args(p)
    p.add_argument("--layers", type=int, default=depth)
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--blocks", type=_blocks, default=[15, 15])
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--q-start", type=float, default=0.1)
    p.add_argument("--q-end", type=float, default=0.5)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--out", default=settings.output_dir)

    p = sub.add_parser("lipschitz-check", help="Random MPNNs against the Lipschitz bound")
    _dataset_args(p)
    _model_args(p, choices=("gin", "gc", "both"))
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--models", type=int, default=100)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--out", default=settings.output_dir)

    p = sub.add_parser("dataset-correlate", help="Anchor-graph distance vs output-distance correlation")
    _dataset_args(p)
    _model_args(p)
    p.add_argument("--layers", type=int, default=depth)
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--anchor", type=int, default=None)
    p.add_argument("--out", default=settings.output_dir)

    p = sub.add_parser("gen-sbm", help="Sample one SBM graph to JSON")
    p.add_argument("--blocks", type=_blocks, default=[15, 15])
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--q", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("constants", help="Lipschitz and generalization constants")
    p.add_argument("--spec", default=None, help="Model spec JSON file")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--A1", type=float, default=None, help="Uniform Lipschitz bound of the model class")
    p.add_argument("--A2", type=float, default=0.0)
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--C-loss", type=float, default=1.0)
    p.add_argument("--loss-at-zero", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--confidence", type=float, default=0.05)
    p.add_argument("--c", type=float, default=2.0, help="Covering constant c > 1")
    p.add_argument("--num-classes", type=int, default=0)
    return ap


def _config(args: argparse.Namespace, kind: str, **extra) -> ExperimentConfig:
    fields = {
        "kind": kind,
        "depth": args.depth,
        "workers": args.workers,
    }
    for name in ("tudataset", "name", "degrees", "normalize_degrees", "hidden", "layers"):
        if hasattr(args, name):
            fields[name] = getattr(args, name)
    if hasattr(args, "model"):
        fields["model"] = args.model
    if args.command in ("sbm-correlate", "lipschitz-check", "dataset-correlate"):
        fields["output_dir"] = args.out
    fields.update(extra)
    return ExperimentConfig(**fields)


def _run(args: argparse.Namespace) -> int:
    if args.command == "dist":
        value = didm_distance(load_graph_json(args.left), load_graph_json(args.right), args.depth)
        print(f"{value:.17g}")

    elif args.command == "pairwise":
        config = _config(args, "knn")
        ds = load_config_dataset(config)
        matrix, report = pairwise_distance_matrix(ds, args.depth, args.workers)
        write_distance_csv(matrix, args.out, config.header())
        print(report.model_dump_json())

    elif args.command == "knn":
        config = _config(args, "knn", splits=args.splits, train_frac=args.train_frac, split_seed=args.seed)
        ds = load_config_dataset(config)
        matrix = read_distance_csv(args.matrix) if args.matrix else None
        result = knn_experiment(ds, args.depth, args.splits, args.train_frac, args.seed, matrix, args.workers)
        print(f"{ds.name}: {100 * result.mean_accuracy:.2f} +/- {100 * result.std_accuracy:.2f}")

    elif args.command == "sbm-correlate":
        config = _config(
            args,
            "sbm_correlate",
            signal=args.signal,
            block_sizes=args.blocks,
            intra_p=args.p,
            q_start=args.q_start,
            q_end=args.q_end,
            graph_count=args.count,
            model_seed=args.seed,
            graph_seed=args.graph_seed,
        )
        _, result = sbm_correlation_experiment(config)
        print(result.model_dump_json())

    elif args.command == "lipschitz-check":
        config = _config(args, "lipschitz_check", models=args.models, pairs=args.pairs,
                         model_seed=args.seed, split_seed=args.seed)
        _, result = lipschitz_check_experiment(load_config_dataset(config), config)
        print(result.model_dump_json())
        return 1 if result.violations else 0

    elif args.command == "dataset-correlate":
        config = _config(args, "dataset_correlate", anchor=args.anchor, model_seed=args.seed, split_seed=args.seed)
        _, result = dataset_correlation_experiment(load_config_dataset(config), config)
        print(result.model_dump_json())

    elif args.command == "gen-sbm":
        spec = SbmSpec(block_sizes=args.blocks, intra_p=args.p, inter_q=args.q, seed=args.seed)
        save_graph_json(generate_sbm(spec), args.out)
        logger.info("Wrote SBM graph %s to %s.", spec.model_dump_json(), args.out)

    elif args.command == "constants":
        if args.spec is None and args.A1 is None:
            raise ContractViolation("constants needs --spec and/or --A1")
        out: dict = {}
        if args.spec is not None:
            spec = ModelSpec.model_validate_json(Path(args.spec).read_text(encoding="utf-8"))
            out["model"] = lipschitz_constants(build_model(spec), args.radius).model_dump()
        if args.A1 is not None:
            gen = generalization_constants(args.A1, args.A2, args.depth, args.radius, args.C_loss, args.loss_at_zero)
            covering = CoveringSpec(c=args.c, num_classes=args.num_classes)
            bound = generalization_bound_log(args.samples, args.confidence, gen.C, gen.B, covering)
            out["generalization"] = {**gen.model_dump(), **bound.model_dump()}
        print(json.dumps(out, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        return _run(args)
    except (DidmError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
