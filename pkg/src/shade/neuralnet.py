"""Fully connected autoencoder with hand-written backprop and Adam.

Hidden layers use ReLU; the embedding layer and the reconstruction layer
are linear. Everything is float64.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dc_core import DcTree, dc_distance_submatrix

__all__ = [
    "Layer",
    "AutoencoderState",
    "TrainConfig",
    "init_autoencoder",
    "encode",
    "decode",
    "loss_reconstruction",
    "loss_density",
    "grad_combined",
    "adam_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_history",
]

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
DIST_CLAMP = 1e-12
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    relu: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


@dataclass
class AutoencoderState:
    encoder: list[Layer]
    decoder: list[Layer]
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params()]
            self.v = [np.zeros_like(p) for p in self.params()]

    @property
    def layers(self) -> list[Layer]:
        return self.encoder + self.decoder

    @property
    def input_dim(self) -> int:
        return self.encoder[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.encoder[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: weight, bias per layer, encoder first."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def param_names(self) -> list[str]:
        names = []
        for part, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i in range(len(layers)):
                names += [f"{part}.{i}.weight", f"{part}.{i}.bias"]
        return names

    def copy(self) -> "AutoencoderState":
        def dup(layers):
            return [Layer(l.weight.copy(), l.bias.copy(), l.relu) for l in layers]

        return AutoencoderState(
            dup(self.encoder), dup(self.decoder), [a.copy() for a in self.m], [a.copy() for a in self.v], self.step
        )


@dataclass
class TrainConfig:
    mu: int = 5
    batch_size: int = 500
    embed_dim: int = 10
    epochs: int = 100
    learning_rate: float = 1e-3
    lambda_rec: float = 1.0
    lambda_d: float = 1.0
    hidden_dims: list[int] = field(default_factory=lambda: [256, 128])
    seed: int = 0
    dense_cache_threshold: int = 2048
    pretrain_epochs: int = 0
    rescale_ddc: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lambda_rec < 0 or self.lambda_d < 0:
            raise ValueError("loss weights must be >= 0")
        if self.mu < 2:
            raise ValueError(f"mu must be >= 2, got {self.mu}")
        self.hidden_dims = [int(h) for h in self.hidden_dims]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def init_autoencoder(input_dim: int, hidden_dims: Sequence[int], embed_dim: int, seed: int) -> AutoencoderState:
    """Mirror-image encoder/decoder, weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    dims = [input_dim, *hidden_dims, embed_dim]
    if any(d < 1 for d in dims):
        raise ValueError(f"all layer sizes must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)

    def stack(sizes):
        layers = []
        for k, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(d_in)
            w = rng.uniform(-bound, bound, size=(d_in, d_out))
            layers.append(Layer(w, np.zeros(d_out), relu=k < len(sizes) - 2))
        return layers

    encoder = stack(dims)
    decoder = stack(dims[::-1])
    return AutoencoderState(encoder, decoder)


def _check_input(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected an array with {dim} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def _forward(layers: list[Layer], x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return the output and the per-layer inputs (needed for backprop)."""
    inputs = []
    h = x
    for layer in layers:
        inputs.append(h)
        h = h @ layer.weight + layer.bias
        if layer.relu:
            h = np.maximum(h, 0.0)
    return h, inputs


def _backward(layers: list[Layer], inputs: list[np.ndarray], out: np.ndarray, g_out: np.ndarray):
    """Gradients for each layer's (weight, bias) and for the stack input."""
    grads = []
    g = g_out
    h = out
    for layer, x in zip(reversed(layers), reversed(inputs)):
        if layer.relu:
            g = g * (h > 0)
        grads.append((x.T @ g, g.sum(axis=0)))
        g = g @ layer.weight.T
        h = x
    grads.reverse()
    return grads, g


def encode(state: AutoencoderState, batch) -> np.ndarray:
    x = _check_input(batch, state.input_dim)
    return _forward(state.encoder, x)[0]


def decode(state: AutoencoderState, embedding) -> np.ndarray:
    z = _check_input(embedding, state.embed_dim)
    return _forward(state.decoder, z)[0]


def loss_reconstruction(batch, reconstruction) -> float:
    x = np.asarray(batch, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != r.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {r.shape}")
    return float(((x - r) ** 2).sum() / len(x))


def loss_density(embedding, ddc) -> float:
    """Mean over ordered batch pairs of (d_dc - ||z_i - z_j||)^2, normalised by |B|^2."""
    z = np.asarray(embedding, dtype=np.float64)
    d = np.asarray(ddc, dtype=np.float64)
    b = len(z)
    if d.shape != (b, b):
        raise ValueError(f"ddc has shape {d.shape}, expected {(b, b)}")
    e = cdist(z, z)
    return float(((d - e) ** 2).sum() / b**2)


def _density_grad(z: np.ndarray, d: np.ndarray) -> np.ndarray:
    b = len(z)
    e = cdist(z, z)
    coeff = -4.0 * (d - e) / np.maximum(e, DIST_CLAMP)
    np.fill_diagonal(coeff, 0.0)
    # Sum coeff_ij * (z_i - z_j) over explicit differences. The shortcut
    # rowsum(coeff) * z - coeff @ z cancels catastrophically when clamped
    # pairs give coefficients near 1e12.
    out = np.empty_like(z)
    for k in range(z.shape[1]):
        out[:, k] = (coeff * (z[:, k, None] - z[None, :, k])).sum(axis=1)
    return out / b**2


def grad_combined(state: AutoencoderState, batch, ddc, lambda_rec: float, lambda_d: float):
    """Analytic gradient of ``lambda_rec * L_rec + lambda_d * L_d``.

    Returns ``(grads, losses)`` where `grads` follows ``state.params()`` order
    and `losses` has keys ``loss_rec``, ``loss_d``, ``loss_total``.
    """
    x = _check_input(batch, state.input_dim)
    z, enc_inputs = _forward(state.encoder, x)
    xr, dec_inputs = _forward(state.decoder, z)
    b = len(x)

    l_rec = loss_reconstruction(x, xr)
    l_d = loss_density(z, ddc)

    g_xr = lambda_rec * 2.0 * (xr - x) / b
    dec_grads, g_z = _backward(state.decoder, dec_inputs, xr, g_xr)
    if lambda_d:
        g_z = g_z + lambda_d * _density_grad(z, np.asarray(ddc, dtype=np.float64))
    enc_grads, _ = _backward(state.encoder, enc_inputs, z, g_z)

    grads = []
    for gw, gb in enc_grads + dec_grads:
        grads += [gw, gb]
    losses = {"loss_rec": l_rec, "loss_d": l_d, "loss_total": lambda_rec * l_rec + lambda_d * l_d}
    return grads, losses


def adam_step(state: AutoencoderState, grads: Sequence[np.ndarray], learning_rate: float) -> AutoencoderState:
    """Bias-corrected Adam update, in place. Returns `state` for chaining."""
    params = state.params()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    names = state.param_names()
    for name, p, g in zip(names, params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    for i, (name, p, g) in enumerate(zip(names, params, grads)):
        state.m[i] = BETA1 * state.m[i] + (1 - BETA1) * g
        state.v[i] = BETA2 * state.v[i] + (1 - BETA2) * g * g
        m_hat = state.m[i] / (1 - BETA1**t)
        v_hat = state.v[i] / (1 - BETA2**t)
        p -= learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"parameter {name} became non-finite at step {t}")
    return state


def _batches(rng: np.random.Generator, n: int, size: int):
    perm = rng.permutation(n)
    for s in range(0, n, size):
        idx = perm[s : s + size]
        if len(idx) >= 2:
            yield idx


def train(
    data,
    dctree: DcTree,
    config: TrainConfig,
    state: AutoencoderState | None = None,
) -> tuple[AutoencoderState, np.ndarray, list[dict]]:
    """Mini-batch training on the combined loss.

    The dc-tree must be built on the same (normalised) `data`; its distances
    are the fixed targets for the embedding. Returns the trained state, the
    embedding of every point and one loss record per epoch (pretraining
    epochs, if any, are numbered negative).
    """
    x = _check_input(data, np.asarray(data).shape[1])
    n = len(x)
    if dctree.n != n:
        raise ValueError(f"dc-tree covers {dctree.n} points but data has {n}")
    if state is None:
        state = init_autoencoder(x.shape[1], config.hidden_dims, config.embed_dim, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    scale = float(dctree.height[dctree.root]) if config.rescale_ddc else 1.0
    if scale <= 0:
        scale = 1.0

    history: list[dict] = []
    schedule = [(e - config.pretrain_epochs, True) for e in range(config.pretrain_epochs)]
    schedule += [(e + 1, False) for e in range(config.epochs)]
    for epoch, pretrain in schedule:
        sums = {"loss_rec": 0.0, "loss_d": 0.0, "loss_total": 0.0}
        steps = 0
        for idx in _batches(rng, n, config.batch_size):
            ddc = dc_distance_submatrix(dctree, idx) / scale
            lam_d = 0.0 if pretrain else config.lambda_d
            lam_r = 1.0 if pretrain else config.lambda_rec
            grads, losses = grad_combined(state, x[idx], ddc, lam_r, lam_d)
            adam_step(state, grads, config.learning_rate)
            for k in sums:
                sums[k] += losses[k]
            steps += 1
        record = {"epoch": epoch, **{k: v / max(steps, 1) for k, v in sums.items()}}
        history.append(record)
        log.debug("epoch %d rec=%.5g d=%.5g", epoch, record["loss_rec"], record["loss_d"])
    return state, encode(state, x), history


def save_checkpoint(state: AutoencoderState, path) -> None:
    arrays = {"format_version": np.array(CHECKPOINT_VERSION), "step": np.array(state.step)}
    arrays["relu_encoder"] = np.array([l.relu for l in state.encoder])
    arrays["relu_decoder"] = np.array([l.relu for l in state.decoder])
    for name, p, m, v in zip(state.param_names(), state.params(), state.m, state.v):
        arrays[name] = p
        arrays[name + ".adam_m"] = m
        arrays[name + ".adam_v"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> AutoencoderState:
    with np.load(path) as f:
        version = int(f["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")

        def layers(part):
            flags = f[f"relu_{part}"]
            return [
                Layer(f[f"{part}.{i}.weight"].copy(), f[f"{part}.{i}.bias"].copy(), bool(flags[i]))
                for i in range(len(flags))
            ]

        state = AutoencoderState(layers("encoder"), layers("decoder"))
        state.m = [f[name + ".adam_m"].copy() for name in state.param_names()]
        state.v = [f[name + ".adam_v"].copy() for name in state.param_names()]
        state.step = int(f["step"])
    return state


def write_loss_history(history: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss_rec,loss_d,loss_total\n")
        for r in history:
            fh.write(f"{r['epoch']},{r['loss_rec']!r},{r['loss_d']!r},{r['loss_total']!r}\n")
