"""Distillation student: a fixed-shape MLP over image embeddings.

Architecture is input_dim -> 128 -> 128 -> 128 -> 1 with rectifier hidden
activations and a sigmoid output, trained with AdamW on mean binary
cross-entropy. Everything runs in float64 and is deterministic given the
config seed; finished models are quantized to float32-representable values so
the on-disk format (little-endian float32) round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotator import Decision
from .errors import (
    ChecksumMismatchError,
    DimensionMismatchError,
    NonFiniteLossError,
    PreconditionError,
    SingleClassDatasetError,
    StoreIoError,
    VersionMismatchError,
)
from .gateway import EmbeddingVector
from .textnorm import sha256_hex

HIDDEN_SIZES = (128, 128, 128)
MODEL_MAGIC = b"MCDM"
MODEL_FORMAT_VERSION = 1


class LabelSource(str, Enum):
    USER = "user"
    CROWD = "crowd"
    ANNOTATOR = "annotator"


@dataclass(frozen=True)
class LabeledExample:
    image_id: str
    embedding: EmbeddingVector
    label: Decision
    source: LabelSource


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 512
    max_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    early_stop_patience: int | None = 20

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise PreconditionError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise PreconditionError("max_epochs must be >= 1")

    def canonical_hash(self) -> str:
        return sha256_hex(json.dumps(asdict(self), sort_keys=True))


@dataclass
class DistilledModel:
    input_dim: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_sizes: tuple[int, ...] = HIDDEN_SIZES
    train_provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.hidden_sizes) != HIDDEN_SIZES:
            raise PreconditionError(f"hidden layout is fixed at {HIDDEN_SIZES}")
        dims = [self.input_dim, *self.hidden_sizes, 1]
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise PreconditionError("layer count does not match the fixed layout")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise PreconditionError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not match "
                    f"({dims[i]}, {dims[i + 1]})"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise PreconditionError(f"layer {i} has non-finite parameters")

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_model(input_dim: int, seed: int) -> DistilledModel:
    """Seeded uniform init in ±sqrt(6 / (fan_in + fan_out)) per layer."""
    if input_dim < 1:
        raise PreconditionError("input_dim must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x1217])))
    dims = [input_dim, *HIDDEN_SIZES, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DistilledModel(input_dim=input_dim, weights=weights, biases=biases)


def _forward(model: DistilledModel, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (logits, activations); activations[i] is layer i's input."""
    activations = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    logits = (h @ model.weights[-1] + model.biases[-1]).reshape(-1)
    return logits, activations


def _bce(logits: np.ndarray, targets: np.ndarray) -> float:
    # max(z,0) - z*y + log1p(exp(-|z|)) is the overflow-safe cross-entropy.
    losses = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(np.mean(losses))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _gradients(
    model: DistilledModel, x: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    logits, activations = _forward(model, x)
    loss = _bce(logits, targets)
    n = x.shape[0]
    delta = ((_sigmoid(logits) - targets) / n).reshape(-1, 1)
    grad_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        inp = activations[layer]
        grad_w[layer] = inp.T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (activations[layer] > 0)
    return loss, grad_w, grad_b


def _quantize_f32(model: DistilledModel) -> None:
    for i in range(len(model.weights)):
        model.weights[i] = model.weights[i].astype(np.float32).astype(np.float64)
        model.biases[i] = model.biases[i].astype(np.float32).astype(np.float64)


@dataclass
class TrainMetrics:
    rows: list[tuple[int, float, float | None]] = field(default_factory=list)

    def to_table(self) -> str:
        lines = ["epoch\tloss\tval_loss"]
        for epoch, loss, val_loss in self.rows:
            val = "" if val_loss is None else repr(val_loss)
            lines.append(f"{epoch}\t{loss!r}\t{val}")
        return "\n".join(lines) + "\n"


def train(
    examples: Sequence[LabeledExample],
    config: TrainConfig | None = None,
    teacher_source: str = "",
) -> tuple[DistilledModel, TrainMetrics]:
    config = config or TrainConfig()
    if not examples:
        raise PreconditionError("examples must be non-empty")
    labels = np.array([1.0 if e.label is Decision.POSITIVE else 0.0 for e in examples])
    if labels.min() == labels.max():
        raise SingleClassDatasetError("training needs at least one example per class")
    dims = {e.embedding.dim for e in examples}
    if len(dims) != 1:
        raise DimensionMismatchError(f"examples carry mixed dims {sorted(dims)}")
    input_dim = dims.pop()
    x = np.vstack([e.embedding.as_array() for e in examples])

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(seeds[0]))
    split_rng = np.random.Generator(np.random.PCG64(seeds[1]))

    n = len(examples)
    val_idx = np.array([], dtype=int)
    if config.early_stop_patience is not None and n >= 20:
        n_val = max(1, n // 10)
        perm = split_rng.permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        # Both classes must survive the split or early stopping is skipped.
        if labels[train_idx].min() == labels[train_idx].max():
            val_idx = np.array([], dtype=int)
    train_idx = (
        np.setdiff1d(np.arange(n), val_idx, assume_unique=False) if val_idx.size else np.arange(n)
    )
    x_train, y_train = x[train_idx], labels[train_idx]
    x_val, y_val = (x[val_idx], labels[val_idx]) if val_idx.size else (None, None)

    model = init_model(input_dim, config.seed)
    params = model.parameters()
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    batch = min(config.batch_size, len(x_train))

    metrics = TrainMetrics()
    initial_loss = _bce(_forward(model, x_train)[0], y_train)
    initial_val_loss = _bce(_forward(model, x_val)[0], y_val) if x_val is not None else np.inf
    metrics.rows.append((0, initial_loss, None))

    best_val = np.inf
    best_params: list[np.ndarray] | None = None
    stale = 0
    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            loss, grad_w, grad_b = _gradients(model, x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"loss became non-finite at epoch {epoch}", epoch=epoch, step=step
                )
            step += 1
            grads = []
            for gw, gb in zip(grad_w, grad_b):
                grads.extend([gw, gb])
            bias1 = 1.0 - config.beta1**step
            bias2 = 1.0 - config.beta2**step
            for p, g, m, v in zip(params, grads, m_state, v_state):
                m *= config.beta1
                m += (1.0 - config.beta1) * g
                v *= config.beta2
                v += (1.0 - config.beta2) * g * g
                update = (m / bias1) / (np.sqrt(v / bias2) + config.epsilon)
                p -= config.learning_rate * (update + config.weight_decay * p)
        epochs_run = epoch
        epoch_loss = _bce(_forward(model, x_train)[0], y_train)
        val_loss = _bce(_forward(model, x_val)[0], y_val) if x_val is not None else None
        metrics.rows.append((epoch, epoch_loss, val_loss))
        if val_loss is not None and config.early_stop_patience is not None:
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_params = [p.copy() for p in params]
                stale = 0
            elif best_val < initial_val_loss - 1e-12:
                # Patience only counts once validation has improved over its
                # starting value; stopping during the initial plateau would
                # hand back a near-init model.
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    if best_params is not None and best_val < initial_val_loss - 1e-12:
        for p, best in zip(params, best_params):
            p[...] = best

    _quantize_f32(model)
    sources = sorted({e.source.value for e in examples})
    model.train_provenance = {
        "seed": config.seed,
        "epochs": epochs_run,
        "config_hash": config.canonical_hash(),
        "teacher_source": teacher_source or "+".join(sources),
    }
    return model, metrics


def predict_batch(model: DistilledModel, embeddings: Sequence[EmbeddingVector] | np.ndarray) -> np.ndarray:
    """Probabilities in the open interval (0, 1), one per input."""
    if isinstance(embeddings, np.ndarray):
        x = np.atleast_2d(embeddings.astype(np.float64))
    else:
        if not embeddings:
            return np.array([])
        for e in embeddings:
            if e.dim != model.input_dim:
                raise DimensionMismatchError(
                    f"embedding dim {e.dim} != model input_dim {model.input_dim}"
                )
        x = np.vstack([e.as_array() for e in embeddings])
    if x.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            f"input dim {x.shape[1]} != model input_dim {model.input_dim}"
        )
    probs = _sigmoid(_forward(model, x)[0])
    return np.clip(probs, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def predict(model: DistilledModel, embedding: EmbeddingVector) -> float:
    return float(predict_batch(model, [embedding])[0])


def gradient_check(model: DistilledModel, example: LabeledExample, step: float) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    Parameters with |analytic| <= 1e-8 are excluded from the max, and so are
    parameters whose perturbation flips a rectifier's active/inactive state:
    the loss is not differentiable across the kink, so the central difference
    carries no information about the gradient there.
    """
    if not 0.0 < step <= 1e-2:
        raise PreconditionError("step must be in (0, 1e-2]")
    if example.embedding.dim != model.input_dim:
        raise DimensionMismatchError("example dim does not match model")
    x = example.embedding.as_array().reshape(1, -1)
    target = np.array([1.0 if example.label is Decision.POSITIVE else 0.0])
    _, grad_w, grad_b = _gradients(model, x, target)
    analytic = []
    for gw, gb in zip(grad_w, grad_b):
        analytic.extend([gw, gb])

    def loss_and_mask() -> tuple[float, tuple[bytes, ...]]:
        logits, activations = _forward(model, x)
        mask = tuple((a > 0).tobytes() for a in activations[1:])
        return _bce(logits, target), mask

    _, base_mask = loss_and_mask()
    worst = 0.0
    for param, grad in zip(model.parameters(), analytic):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_p.size):
            a = flat_g[i]
            if abs(a) <= 1e-8:
                continue
            original = flat_p[i]
            flat_p[i] = original + step
            plus, plus_mask = loss_and_mask()
            flat_p[i] = original - step
            minus, minus_mask = loss_and_mask()
            flat_p[i] = original
            if plus_mask != base_mask or minus_mask != base_mask:
                continue
            numeric = (plus - minus) / (2.0 * step)
            rel = abs(a - numeric) / max(abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst


# --- model file format -------------------------------------------------------


def save_model(model: DistilledModel, path: str | Path) -> None:
    path = Path(path)
    body = bytearray()
    body += MODEL_MAGIC
    body += struct.pack("<III", MODEL_FORMAT_VERSION, model.input_dim, len(model.hidden_sizes))
    body += struct.pack(f"<{len(model.hidden_sizes)}I", *model.hidden_sizes)
    for w, b in zip(model.weights, model.biases):
        body += w.astype("<f4").tobytes(order="C")
        body += b.astype("<f4").tobytes(order="C")
    digest = bytes.fromhex(sha256_hex(bytes(body)))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(bytes(body) + digest)
    except OSError as exc:
        raise StoreIoError(f"cannot write model file {path}: {exc}") from exc


def load_model(path: str | Path) -> DistilledModel:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise StoreIoError(f"cannot read model file {path}: {exc}") from exc
    if len(blob) < len(MODEL_MAGIC) + 12 + 32:
        raise ChecksumMismatchError(f"model file {path} is truncated")
    if blob[:4] != MODEL_MAGIC:
        raise VersionMismatchError(f"{path} is not a model file (bad magic)")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported model format version {version}")
    body, digest = blob[:-32], blob[-32:]
    if bytes.fromhex(sha256_hex(body)) != digest:
        raise ChecksumMismatchError(f"model file {path} failed its checksum")
    input_dim, n_hidden = struct.unpack_from("<II", body, 8)
    offset = 16
    hidden = struct.unpack_from(f"<{n_hidden}I", body, offset)
    offset += 4 * n_hidden
    dims = [input_dim, *hidden, 1]
    weights, biases = [], []
    try:
        for fan_in, fan_out in zip(dims, dims[1:]):
            w_count, b_count = fan_in * fan_out, fan_out
            w = np.frombuffer(body, dtype="<f4", count=w_count, offset=offset)
            offset += 4 * w_count
            b = np.frombuffer(body, dtype="<f4", count=b_count, offset=offset)
            offset += 4 * b_count
            weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
            biases.append(b.astype(np.float64))
    except ValueError as exc:
        raise ChecksumMismatchError(f"model file {path} is truncated: {exc}") from exc
    return DistilledModel(
        input_dim=input_dim, weights=weights, biases=biases, hidden_sizes=tuple(hidden)
    )
