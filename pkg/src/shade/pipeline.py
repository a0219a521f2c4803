"""End-to-end SHADE run and its on-disk result layout."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dc_core
from .dc_core import DcTree
from .hierarchy import (
    ClusterAssignment,
    StructureTree,
    assign_noise_1nn,
    build_structure_tree,
    extract_clusters,
    write_labels,
    write_structure_tree,
)
from .metrics import evaluate_with_noise
from .neuralnet import TrainConfig, train, write_loss_history

__all__ = ["Normalizer", "znormalize", "ShadeResult", "shade_fit", "cluster_embedding", "save_result"]

log = logging.getLogger(__name__)


@dataclass
class Normalizer:
    mode: str
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


def znormalize(data, mode: str = "feature-wise") -> tuple[np.ndarray, Normalizer]:
    """Standardise to zero mean, unit variance (population std).

    ``feature-wise`` scales each column; constant columns become zeros.
    ``global`` uses one mean and one std over every entry.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need a 2-d array with at least 2 rows, got shape {x.shape}")
    if mode == "feature-wise":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        norm = Normalizer(mode, mean, np.where(std > 0, std, 1.0))
        out = (x - mean) / norm.scale
        out[:, std == 0] = 0.0
        return out, norm
    if mode == "global":
        mean = np.array(x.mean())
        std = x.std()
        scale = np.array(std if std > 0 else 1.0)
        out = (x - mean) / scale if std > 0 else np.zeros_like(x)
        return out, Normalizer(mode, mean, scale)
    raise ValueError(f"unknown normalisation mode {mode!r}")


@dataclass
class ShadeResult:
    embedding: np.ndarray
    assignment: ClusterAssignment
    assignment_1nn: ClusterAssignment
    input_tree: DcTree
    embedding_tree: DcTree
    structure_tree: StructureTree
    loss_history: list[dict]
    config: TrainConfig
    timings: dict[str, float] = field(default_factory=dict)
    state: object = None

    @property
    def k(self) -> int:
        return self.assignment.k


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def cluster_embedding(embedding, mu: int, dense_cache_threshold: int = dc_core.DEFAULT_DENSE_CACHE_THRESHOLD):
    """dc-tree, structure tree and most stable clustering of an embedding."""
    tree, _ = dc_core.dc_tree_from_data(embedding, mu, dense_cache_threshold)
    stree = build_structure_tree(tree, mu)
    return tree, stree, extract_clusters(stree)


def shade_fit(data, config: TrainConfig | None = None, normalize: str = "feature-wise") -> ShadeResult:
    config = config or TrainConfig()
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d data matrix, got shape {x.shape}")
    if len(x) < 2 * config.mu:
        raise ValueError(f"need at least 2*mu = {2 * config.mu} points, got {len(x)}")
    timings: dict[str, float] = {}

    def stage(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - t0
        log.info("%s: %.2fs", name, timings[name])
        return out

    if not np.all(np.isfinite(x)):
        raise StageError("normalize", ValueError("data contains non-finite values"))
    xn, _ = stage("normalize", znormalize, x, normalize)
    input_tree, _ = stage(
        "input_tree", dc_core.dc_tree_from_data, xn, config.mu, config.dense_cache_threshold
    )
    state, embedding, history = stage("train", train, xn, input_tree, config)
    emb_tree, stree, assignment = stage(
        "cluster", cluster_embedding, embedding, config.mu, config.dense_cache_threshold
    )
    filled = stage("assign_1nn", assign_noise_1nn, embedding, assignment)
    return ShadeResult(
        embedding, assignment, filled, input_tree, emb_tree, stree, history, config, timings, state
    )


def _write_matrix(x: np.ndarray, path: Path, prefix: str = "z") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"{prefix}{j}" for j in range(x.shape[1])) + "\n")
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def save_result(result: ShadeResult, outdir, truth=None, dump_trees: bool = False) -> dict:
    """Write the result directory; returns the metrics that went into metrics.json."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(result.embedding, out / "embedding.csv")
    write_labels(result.assignment.labels, out / "labels.csv")
    write_labels(result.assignment_1nn.labels, out / "labels_1nn.csv")
    write_loss_history(result.loss_history, out / "losses.csv")
    metrics = {"k_detected": result.assignment.k, "noise_ratio": result.assignment.noise_ratio}
    if truth is not None:
        metrics = evaluate_with_noise(truth, result.assignment, result.embedding)
    metrics["timings"] = result.timings
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(result.config.to_dict(), fh, indent=2, sort_keys=True)
    if dump_trees:
        dc_core.write_tree(result.input_tree, out / "input_tree.txt")
        dc_core.write_tree(result.embedding_tree, out / "embedding_tree.txt")
        write_structure_tree(result.structure_tree, out / "structure_tree.txt")
    return metrics
