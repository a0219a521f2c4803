"""Synthetic datasets and CSV input/output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["DataMatrix", "DatasetSpec", "gen_rings_s", "gen_blobs_noise", "generate", "load_csv", "save_csv"]


@dataclass
class DataMatrix:
    x: np.ndarray
    labels: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass
class DatasetSpec:
    generator: str
    n: int
    noise_ratio: float = 0.0
    d: int = 3
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.noise_ratio < 1:
            raise ValueError(f"noise_ratio must lie in [0, 1), got {self.noise_ratio}")


def _split_counts(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (i < extra) for i in range(k)]


def gen_rings_s(n: int = 1500, noise_sigma: float = 0.05, seed: int = 0) -> DataMatrix:
    """Two interlocked unit rings and an S-shaped curve in 3-d.

    Ring 0 lies in the xy-plane around the origin, ring 1 in the xz-plane
    around (1, 0, 0), so each passes through the other's centre. The S-curve
    lies in the xz-plane around (4, 0, 0). Gaussian jitter of standard
    deviation `noise_sigma` is added to every coordinate.
    """
    if n < 30:
        raise ValueError(f"n must be >= 30, got {n}")
    rng = np.random.default_rng(seed)
    n0, n1, n2 = _split_counts(n, 3)
    t0 = rng.uniform(0, 2 * np.pi, n0)
    ring0 = np.c_[np.cos(t0), np.sin(t0), np.zeros(n0)]
    t1 = rng.uniform(0, 2 * np.pi, n1)
    ring1 = np.c_[1 + np.cos(t1), np.zeros(n1), np.sin(t1)]
    t2 = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, n2)
    s_curve = np.c_[4 + np.sin(t2), np.zeros(n2), np.sign(t2) * (np.cos(t2) - 1)]
    x = np.r_[ring0, ring1, s_curve]
    if noise_sigma > 0:
        x = x + rng.normal(scale=noise_sigma, size=x.shape)
    labels = np.repeat([0, 1, 2], [n0, n1, n2])
    return DataMatrix(x, labels, ["x", "y", "z"])


def gen_blobs_noise(
    k: int = 5,
    n: int = 3000,
    d: int = 50,
    spread: float = 1.0,
    noise_ratio: float = 0.3,
    seed: int = 0,
    max_tries: int = 1000,
) -> DataMatrix:
    """Gaussian blobs plus uniform background noise labelled -1.

    Centres are drawn uniformly from ``[-R, R]^d`` with
    ``R = 10 * spread * k**(1/d)`` and kept at pairwise distance at least
    ``10 * spread``. Blob points that would be closer to a foreign centre
    are redrawn, so nearest-centre classification recovers every label.
    ``ceil(noise_ratio * n)`` noise points are uniform over the bounding box
    of the blobs, widened by 20%.
    """
    if k < 1 or d < 1:
        raise ValueError(f"k and d must be >= 1, got k={k}, d={d}")
    if not 0 <= noise_ratio < 1:
        raise ValueError(f"noise_ratio must lie in [0, 1), got {noise_ratio}")
    rng = np.random.default_rng(seed)
    radius = 10 * spread * k ** (1 / d)
    min_sep = 10 * spread
    centers = []
    tries = 0
    while len(centers) < k:
        c = rng.uniform(-radius, radius, d)
        if all(np.linalg.norm(c - o) >= min_sep for o in centers):
            centers.append(c)
            continue
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {k} centres {min_sep} apart in {max_tries} tries")
    centers = np.array(centers)

    n_noise = math.ceil(noise_ratio * n)
    sizes = _split_counts(n - n_noise, k)
    parts, labels = [], []
    for j, size in enumerate(sizes):
        pts = centers[j] + rng.normal(scale=spread, size=(size, d))
        while True:
            d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            bad = np.argmin(d2, axis=1) != j
            if not bad.any():
                break
            pts[bad] = centers[j] + rng.normal(scale=spread, size=(int(bad.sum()), d))
        parts.append(pts)
        labels.append(np.full(size, j))
    x = np.concatenate(parts) if parts else np.empty((0, d))
    if n_noise:
        lo, hi = x.min(axis=0), x.max(axis=0)
        pad = 0.1 * (hi - lo)
        x = np.r_[x, rng.uniform(lo - pad, hi + pad, size=(n_noise, d))]
        labels.append(np.full(n_noise, -1))
    return DataMatrix(x, np.concatenate(labels), [f"x{i}" for i in range(d)])


GENERATORS = {"rings_s": gen_rings_s, "blobs_noise": gen_blobs_noise}


def generate(spec: DatasetSpec) -> DataMatrix:
    if spec.generator == "rings_s":
        return gen_rings_s(spec.n, spec.params.get("noise_sigma", 0.05), spec.seed)
    if spec.generator == "blobs_noise":
        return gen_blobs_noise(
            k=spec.params.get("k", 5),
            n=spec.n,
            d=spec.d,
            spread=spec.params.get("spread", 1.0),
            noise_ratio=spec.noise_ratio,
            seed=spec.seed,
        )
    raise ValueError(f"unknown generator {spec.generator!r}; choose from {sorted(GENERATORS)}")


def save_csv(data: DataMatrix, path, label_name: str = "label") -> None:
    """Header row, full-precision features, labels (if any) in the last column."""
    names = data.feature_names or [f"x{i}" for i in range(data.d)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ([label_name] if data.labels is not None else []))
        for i, row in enumerate(data.x):
            vals = [repr(float(v)) for v in row]
            if data.labels is not None:
                vals.append(str(int(data.labels[i])))
            w.writerow(vals)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: str | int | None = None) -> DataMatrix:
    """Read a numeric CSV with an optional header row.

    `label_column` selects a column (by header name, or by 0-based index;
    negative indices count from the end) that is returned as integer labels
    instead of a feature.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: file is empty")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])
    for lineno, r in enumerate(rows, 2 if header else 1):
        if len(r) != width:
            raise ValueError(f"{path}: row {lineno} has {len(r)} columns, expected {width}")

    col = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise ValueError(f"{path}: no label column named {label_column!r}")
            col = header.index(label_column)
        else:
            col = int(label_column)
            if not -width <= col < width:
                raise ValueError(f"{path}: label column {col} out of range for {width} columns")
            col %= width

    values = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        for j, c in enumerate(r):
            try:
                values[i, j] = float(c)
            except ValueError:
                lineno = i + (2 if header else 1)
                raise ValueError(f"{path}: row {lineno}, column {j + 1}: not a number: {c!r}") from None
    labels = None
    names = header or [f"x{j}" for j in range(width)]
    if col is not None:
        raw = values[:, col]
        if not np.all(raw == np.round(raw)):
            raise ValueError(f"{path}: label column {col} holds non-integer values")
        labels = raw.astype(np.int64)
        values = np.delete(values, col, axis=1)
        names = names[:col] + names[col + 1 :]
    return DataMatrix(values, labels, names)
