"""Command-line entry point: ``shade generate | fit | evaluate | cut``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
input, failed pipeline stage).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dc_core
from .datasets import DatasetSpec, generate, load_csv, save_csv
from .hierarchy import NOISE, ClusterAssignment, cut_at_epsilon, read_labels, write_labels
from .metrics import ari, evaluate_with_noise, nmi
from .neuralnet import TrainConfig, save_checkpoint
from .pipeline import StageError, save_result, shade_fit

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return vals


def _seed_range(text: str) -> list[int]:
    """``a..b`` (inclusive) or a comma list."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return _int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b or a,b,c, got {text!r}") from None


def _label_column(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--config", type=Path, help="config.json to start from; flags override it")
    g.add_argument("--mu", type=int, help=f"density parameter (default {d.mu})")
    g.add_argument("--batch-size", type=int, help=f"default {d.batch_size}")
    g.add_argument("--embed-dim", type=int, help=f"default {d.embed_dim}")
    g.add_argument("--epochs", type=int, help=f"default {d.epochs}")
    g.add_argument("--learning-rate", type=float, help=f"default {d.learning_rate}")
    g.add_argument("--lambda-rec", type=float, help=f"default {d.lambda_rec}")
    g.add_argument("--lambda-d", type=float, help=f"default {d.lambda_d}")
    g.add_argument("--hidden-dims", type=_int_list, help="comma-separated, default "
                   + ",".join(map(str, d.hidden_dims)))
    g.add_argument("--seed", type=int, help=f"default {d.seed}")
    g.add_argument("--pretrain-epochs", type=int, help=f"default {d.pretrain_epochs}")
    g.add_argument("--rescale-ddc", action=argparse.BooleanOptionalAction, default=None,
                   help=f"divide dc-distances by the tree height (default {d.rescale_ddc})")
    g.add_argument("--dense-cache-threshold", type=int, help=f"default {d.dense_cache_threshold}")


def _config_from_args(args) -> TrainConfig:
    base = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    for name in TrainConfig.__dataclass_fields__:
        val = getattr(args, name, None)
        if val is not None:
            base[name] = val
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shade", description="Density-connectivity autoencoder clustering.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage timings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    p.add_argument("generator", choices=["rings_s", "blobs_noise"])
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.05, help="rings_s jitter")
    p.add_argument("--k", type=int, default=5, help="blobs_noise cluster count")
    p.add_argument("--d", type=int, default=50, help="blobs_noise dimensionality")
    p.add_argument("--spread", type=float, default=1.0, help="blobs_noise cluster std")
    p.add_argument("--noise-ratio", type=float, default=0.3, help="blobs_noise noise fraction")

    p = sub.add_parser("fit", help="train, cluster and write a result directory")
    p.add_argument("data", type=Path, help="input CSV")
    p.add_argument("-o", "--outdir", type=Path, required=True)
    p.add_argument("--label-column", type=_label_column,
                   help="ground-truth column (name or index); scored into metrics.json")
    p.add_argument("--normalize", choices=["feature-wise", "global"], default="feature-wise")
    p.add_argument("--dump-trees", action="store_true", help="also write the tree dumps")
    p.add_argument("--seeds", type=_seed_range,
                   help="run one fit per seed (a..b or a,b,c) into OUTDIR/seed_<s>")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="score a labels file against ground truth")
    p.add_argument("labels", type=Path, help="point_index,label CSV")
    p.add_argument("truth", type=Path, help="CSV holding the truth column")
    p.add_argument("--truth-column", type=_label_column, default="label")
    p.add_argument("--embedding", type=Path, help="embedding.csv, enables the 1nn scores")
    p.add_argument("-o", "--output", type=Path, help="metrics.json path (default: stdout only)")

    p = sub.add_parser("cut", help="flat clustering of a dc-tree dump at a fixed height")
    p.add_argument("tree", type=Path, help="tree dump written by fit --dump-trees")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--mu", type=int, default=TrainConfig().mu,
                   help="components smaller than this become noise")
    p.add_argument("-o", "--output", type=Path, required=True)
    return parser


def _cmd_generate(args) -> int:
    if args.generator == "rings_s":
        spec = DatasetSpec("rings_s", args.n or 1500, seed=args.seed,
                           params={"noise_sigma": args.noise_sigma})
    else:
        spec = DatasetSpec("blobs_noise", args.n or 3000, args.noise_ratio, args.d, args.seed,
                           {"k": args.k, "spread": args.spread})
    save_csv(generate(spec), args.output)
    return EXIT_OK


def _fit_one(x, truth, config: TrainConfig, args, outdir: Path) -> dict:
    result = shade_fit(x, config, normalize=args.normalize)
    metrics = save_result(result, outdir, truth=truth, dump_trees=args.dump_trees)
    save_checkpoint(result.state, outdir / "model.npz")
    return metrics


def _cmd_fit(args) -> int:
    config = _config_from_args(args)
    data = load_csv(args.data, label_column=args.label_column)
    if args.seeds is None:
        metrics = _fit_one(data.x, data.labels, config, args, args.outdir)
        _summary(metrics)
        return EXIT_OK
    for seed in args.seeds:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        metrics = _fit_one(data.x, data.labels, cfg, args, args.outdir / f"seed_{seed}")
        print(f"seed {seed}: ", end="")
        _summary(metrics)
    return EXIT_OK


def _summary(metrics: dict) -> None:
    parts = [f"k={metrics['k_detected']}", f"noise={metrics['noise_ratio']:.3f}"]
    for key in ("ari_1nn", "nmi_1nn"):
        if metrics.get(key) is not None:
            parts.append(f"{key}={metrics[key]:.4f}")
    print(" ".join(parts))


def _cmd_evaluate(args) -> int:
    labels = read_labels(args.labels)
    truth = load_csv(args.truth, label_column=args.truth_column).labels
    if len(truth) != len(labels):
        raise ValueError(f"{args.truth}: {len(truth)} truth labels for {len(labels)} predictions")
    assignment = ClusterAssignment(labels)
    if args.embedding is not None:
        emb = load_csv(args.embedding).x
        if len(emb) != len(labels):
            raise ValueError(f"{args.embedding}: {len(emb)} rows for {len(labels)} labels")
        metrics = evaluate_with_noise(truth, assignment, emb)
    else:
        keep = labels != NOISE
        metrics = {
            "ari": ari(truth, labels),
            "nmi": nmi(truth, labels),
            "ari_nonnoise": ari(truth[keep], labels[keep]) if keep.any() else None,
            "nmi_nonnoise": nmi(truth[keep], labels[keep]) if keep.any() else None,
            "k_detected": assignment.k,
            "noise_ratio": assignment.noise_ratio,
        }
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.output is not None:
        args.output.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_cut(args) -> int:
    if args.mu < 1:
        raise UsageError(f"--mu must be >= 1, got {args.mu}")
    tree = dc_core.read_tree(args.tree)
    result = cut_at_epsilon(tree, args.epsilon, args.mu)
    write_labels(result.labels, args.output)
    print(f"k={result.k} noise={result.noise_ratio:.3f}")
    return EXIT_OK


_COMMANDS = {"generate": _cmd_generate, "fit": _cmd_fit, "evaluate": _cmd_evaluate, "cut": _cmd_cut}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"shade {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, StageError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"shade {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
