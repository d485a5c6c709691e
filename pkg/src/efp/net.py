"""The twin embedding network: ReLU MLP, contrastive loss, backprop, training.

Both branches of the twin share one parameter set, so every pair gradient is
the sum of the contributions backpropagated through each branch. All training
math runs in float64; models are persisted (and therefore quantized) at
float32.
"""

from __future__ import annotations

import hashlib
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import binio
from .errors import DataError, NumericError
from .features import FeatureCache
from .pairs import PairExample

logger = logging.getLogger(__name__)

DEFAULT_LAYER_DIMS = (13509, 512, 256, 128)

MODEL_MAGIC = b"EFPM"
MODEL_VERSION = 1


@dataclass
class MlpParams:
    """Weights and biases; weights[l] has shape (out_dim, in_dim)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty parallel lists")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input dim breaks the layer chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    dropout_rate: float = 0.3
    seed: int = 0
    # per-feature normalization stats; computed from the training clips
    # when left unset
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def init_params(seed: int, layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS) -> MlpParams:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng([seed])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases)


@dataclass
class ForwardCache:
    """Per-branch state needed to backpropagate one batch."""

    inputs: list[np.ndarray]   # input to each layer, after previous dropout
    gates: list[np.ndarray]    # ReLU derivative per layer (pre-activation > 0)
    masks: list[np.ndarray]    # inverted-dropout masks for all but the last layer


def forward_train(
    params: MlpParams,
    X: np.ndarray,
    dropout_rate: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, ForwardCache]:
    """Training-mode forward pass: ReLU everywhere, dropout after every
    hidden layer (never on the output embedding), inverted scaling so
    eval mode needs none."""
    h = np.asarray(X, dtype=np.float64)
    inputs, gates, masks = [], [], []
    keep = 1.0 - dropout_rate
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        gate = z > 0
        h = np.where(gate, z, 0.0)
        gates.append(gate)
        if l < params.n_layers - 1:
            if dropout_rate > 0.0:
                mask = (rng.random(h.shape) >= dropout_rate) / keep
            else:
                mask = np.ones_like(h)
            masks.append(mask)
            h = h * mask
    return h, ForwardCache(inputs=inputs, gates=gates, masks=masks)


def forward_eval(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass: no dropout, no scaling, deterministic."""
    h = np.asarray(X, dtype=np.float64)
    for w, b in zip(params.weights, params.biases):
        h = np.maximum(h @ w.T + b, 0.0)
    return h


def embed_one(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward_eval(params, np.asarray(x, dtype=np.float64)[np.newaxis, :])[0]


def pair_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """Euclidean distance between two embeddings."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    return float(np.sqrt(np.sum(np.square(e1 - e2))))


def contrastive_loss(y: int, d: float, cfg: LossConfig = LossConfig()) -> float:
    """0.5*d^2 for similar pairs; 0.5*max(0, margin - d)^2 for dissimilar."""
    if d < 0:
        raise ValueError(f"distance must be >= 0, got {d}")
    if y == 1:
        return 0.5 * d * d
    hinge = max(0.0, cfg.margin - d)
    return 0.5 * hinge * hinge


def _zero_grads(params: MlpParams) -> tuple[list[np.ndarray], list[np.ndarray]]:
    return (
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def _backprop_into(
    params: MlpParams,
    cache: ForwardCache,
    grad_out: np.ndarray,
    dws: list[np.ndarray],
    dbs: list[np.ndarray],
) -> None:
    """Accumulate d(loss)/d(params) for one branch given d(loss)/d(embedding)."""
    delta = grad_out
    for l in range(params.n_layers - 1, -1, -1):
        delta = delta * cache.gates[l]
        dws[l] += delta.T @ cache.inputs[l]
        dbs[l] += delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * cache.masks[l - 1]


def batch_loss_and_grads(
    params: MlpParams,
    X1: np.ndarray,
    X2: np.ndarray,
    y: np.ndarray,
    loss_cfg: LossConfig,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean contrastive loss over a batch of pairs plus its exact gradient.

    Subgradient conventions: at the hinge (d == margin, y=0) and at d == 0
    (y=0) the contribution is zero. Gradients flow through both branches and
    are summed, since the branches share every parameter.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    e1, cache1 = forward_train(params, X1, dropout_rate, rng)
    e2, cache2 = forward_train(params, X2, dropout_rate, rng)
    y = np.asarray(y, dtype=np.float64)
    diff = e1 - e2
    d = np.sqrt(np.sum(np.square(diff), axis=1))
    hinge = np.maximum(0.0, loss_cfg.margin - d)
    losses = y * 0.5 * d * d + (1.0 - y) * 0.5 * hinge * hinge
    loss = float(losses.mean())
    # d(loss_i)/d(e1_i) = coef_i * (e1_i - e2_i); similar pairs pull together
    # (coef 1), dissimilar pairs inside the margin push apart
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_coef = np.where(d > 0.0, -hinge / d, 0.0)
    coef = np.where(y == 1.0, 1.0, neg_coef) / len(d)
    grad_e1 = coef[:, np.newaxis] * diff
    dws, dbs = _zero_grads(params)
    _backprop_into(params, cache1, grad_e1, dws, dbs)
    _backprop_into(params, cache2, -grad_e1, dws, dbs)
    return loss, dws, dbs


def pair_loss_and_grads(
    params: MlpParams,
    x1: np.ndarray,
    x2: np.ndarray,
    y: int,
    loss_cfg: LossConfig,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Single-pair convenience wrapper around batch_loss_and_grads."""
    return batch_loss_and_grads(
        params,
        np.asarray(x1, dtype=np.float64)[np.newaxis, :],
        np.asarray(x2, dtype=np.float64)[np.newaxis, :],
        np.array([y]),
        loss_cfg,
        dropout_rate,
        rng,
    )


def grad_check(
    params: MlpParams,
    x1: np.ndarray,
    x2: np.ndarray,
    y: int,
    loss_cfg: LossConfig = LossConfig(),
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Dropout is disabled. With max_coords set, that many coordinates are
    sampled (seeded) instead of sweeping every parameter; intended for
    spot-checking the full-size network.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    _, dws, dbs = pair_loss_and_grads(params, x1, x2, y, loss_cfg)

    def loss_now() -> float:
        e1 = embed_one(params, x1)
        e2 = embed_one(params, x2)
        return contrastive_loss(y, pair_distance(e1, e2), loss_cfg)

    coords = []
    for l in range(params.n_layers):
        coords.extend(("w", l, i) for i in range(params.weights[l].size))
        coords.extend(("b", l, i) for i in range(params.biases[l].size))
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng([seed])
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(i)] for i in picks]
    max_rel = 0.0
    for kind, l, i in coords:
        arr = params.weights[l] if kind == "w" else params.biases[l]
        grad = dws[l] if kind == "w" else dbs[l]
        flat = arr.reshape(-1)
        saved = flat[i]
        flat[i] = saved + eps
        loss_hi = loss_now()
        flat[i] = saved - eps
        loss_lo = loss_now()
        flat[i] = saved
        numeric = (loss_hi - loss_lo) / (2.0 * eps)
        analytic = grad.reshape(-1)[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        max_rel = max(max_rel, rel)
    return max_rel


class SgdOptimizer:
    def __init__(self, params: MlpParams, learning_rate: float):
        self.params = params
        self.lr = learning_rate

    def step(self, dws: list[np.ndarray], dbs: list[np.ndarray]) -> None:
        for l in range(self.params.n_layers):
            self.params.weights[l] -= self.lr * dws[l]
            self.params.biases[l] -= self.lr * dbs[l]


class AdamOptimizer:
    def __init__(
        self,
        params: MlpParams,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in params.weights]
        self.v_w = [np.zeros_like(w) for w in params.weights]
        self.m_b = [np.zeros_like(b) for b in params.biases]
        self.v_b = [np.zeros_like(b) for b in params.biases]

    def step(self, dws: list[np.ndarray], dbs: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for l in range(self.params.n_layers):
            for target, g, m, v in (
                (self.params.weights[l], dws[l], self.m_w[l], self.v_w[l]),
                (self.params.biases[l], dbs[l], self.m_b[l], self.v_b[l]),
            ):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * np.square(g)
                target -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, params: MlpParams, learning_rate: float):
    if name == "sgd":
        return SgdOptimizer(params, learning_rate)
    if name == "adam":
        return AdamOptimizer(params, learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")


def _quantize_f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class SiameseModel:
    """Trained network bundled with its margin and normalization stats.

    All arrays are quantized to float32-representable values on construction
    so that a model behaves identically before and after a save/load
    round-trip.
    """

    params: MlpParams
    margin: float
    feature_means: np.ndarray
    feature_stds: np.ndarray

    def __post_init__(self):
        self.params = MlpParams(
            weights=[_quantize_f32(w) for w in self.params.weights],
            biases=[_quantize_f32(b) for b in self.params.biases],
        )
        self.feature_means = _quantize_f32(self.feature_means)
        self.feature_stds = _quantize_f32(self.feature_stds)
        if self.feature_means.shape != self.feature_stds.shape or self.feature_means.ndim != 1:
            raise ValueError("normalization stats must be 1-D and equally sized")
        if self.feature_means.shape[0] != self.params.layer_dims[0]:
            raise ValueError("normalization stats do not match network input dim")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature_stds must be positive")

    @property
    def input_dim(self) -> int:
        return self.params.layer_dims[0]

    def normalize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.feature_means) / self.feature_stds

    def embed(self, X: np.ndarray) -> np.ndarray:
        """Eval-mode embeddings for raw (unnormalized) feature rows."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        E = forward_eval(self.params, self.normalize(np.atleast_2d(X)))
        return E[0] if single else E

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        binio.write_u32(buf, MODEL_VERSION)
        dims = self.params.layer_dims
        binio.write_u32(buf, len(dims))
        for dim in dims:
            binio.write_u32(buf, dim)
        binio.write_f64(buf, self.margin)
        binio.write_f32_array(buf, self.feature_means)
        binio.write_f32_array(buf, self.feature_stds)
        for w, b in zip(self.params.weights, self.params.biases):
            binio.write_f32_array(buf, w)
            binio.write_f32_array(buf, b)
        return buf.getvalue()

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SiameseModel":
        try:
            f = open(path, "rb")
        except OSError as exc:
            raise DataError(f"{path}: cannot open model file ({exc})") from exc
        with f:
            binio.expect_magic(f, MODEL_MAGIC, path)
            version = binio.read_u32(f)
            if version != MODEL_VERSION:
                raise DataError(f"{path}: unsupported model version {version}")
            n_dims = binio.read_u32(f)
            if not 2 <= n_dims <= 64:
                raise DataError(f"{path}: implausible layer count {n_dims}")
            dims = [binio.read_u32(f) for _ in range(n_dims)]
            margin = binio.read_f64(f)
            means = binio.read_f32_array(f, dims[0]).astype(np.float64)
            stds = binio.read_f32_array(f, dims[0]).astype(np.float64)
            weights, biases = [], []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                w = binio.read_f32_array(f, fan_out * fan_in).astype(np.float64)
                weights.append(w.reshape(fan_out, fan_in))
                biases.append(binio.read_f32_array(f, fan_out).astype(np.float64))
        try:
            params = MlpParams(weights=weights, biases=biases)
            return cls(params=params, margin=margin,
                       feature_means=means, feature_stds=stds)
        except ValueError as exc:
            raise DataError(f"{path}: inconsistent model contents ({exc})") from exc


@dataclass
class TrainResult:
    model: SiameseModel
    history: list[tuple[int, float, float]]
    best_epoch: int


def _feature_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    # round to f32 up front so training sees the same normalization the
    # persisted model will apply
    return _quantize_f32(means), _quantize_f32(stds)


def train(
    train_pairs: Sequence[PairExample],
    val_pairs: Sequence[PairExample],
    cache: FeatureCache,
    train_cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    layer_dims: Sequence[int] | None = None,
) -> TrainResult:
    """Minibatch training; returns the checkpoint with lowest validation loss.

    Deterministic given the config seed: shuffling, dropout, and
    initialization all derive from it.
    """
    if not train_pairs or not val_pairs:
        raise DataError("need non-empty train and validation pair lists")
    train_ids = sorted({cid for p in train_pairs for cid in (p.clip_a, p.clip_b)})
    val_ids = sorted({cid for p in val_pairs for cid in (p.clip_a, p.clip_b)})
    for cid in train_ids + val_ids:
        if cid not in cache:
            raise DataError(f"clip {cid!r} referenced by a pair is not in the feature cache")
    if layer_dims is None:
        layer_dims = (cache.dim,) + tuple(DEFAULT_LAYER_DIMS[1:])
    X_train = np.asarray([cache.vector(cid) for cid in train_ids], dtype=np.float64)
    X_val = np.asarray([cache.vector(cid) for cid in val_ids], dtype=np.float64)
    if train_cfg.feature_means is not None and train_cfg.feature_stds is not None:
        means = _quantize_f32(train_cfg.feature_means)
        stds = _quantize_f32(train_cfg.feature_stds)
    else:
        means, stds = _feature_stats(X_train)
    Z_train = (X_train - means) / stds
    Z_val = (X_val - means) / stds
    row_train = {cid: i for i, cid in enumerate(train_ids)}
    row_val = {cid: i for i, cid in enumerate(val_ids)}
    tr_a = np.array([row_train[p.clip_a] for p in train_pairs])
    tr_b = np.array([row_train[p.clip_b] for p in train_pairs])
    tr_y = np.array([p.label for p in train_pairs], dtype=np.float64)
    va_a = np.array([row_val[p.clip_a] for p in val_pairs])
    va_b = np.array([row_val[p.clip_b] for p in val_pairs])
    va_y = np.array([p.label for p in val_pairs], dtype=np.float64)

    params = init_params(train_cfg.seed, layer_dims)
    optimizer = make_optimizer(train_cfg.optimizer, params, train_cfg.learning_rate)
    n = len(train_pairs)
    history: list[tuple[int, float, float]] = []
    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0
    for epoch in range(1, train_cfg.epochs + 1):
        perm = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        dropout_rng = np.random.default_rng([train_cfg.seed, epoch, 1])
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start : start + train_cfg.batch_size]
            loss, dws, dbs = batch_loss_and_grads(
                params,
                Z_train[tr_a[idx]],
                Z_train[tr_b[idx]],
                tr_y[idx],
                loss_cfg,
                train_cfg.dropout_rate,
                dropout_rng,
            )
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {start // train_cfg.batch_size}"
                )
            optimizer.step(dws, dbs)
            loss_sum += loss * len(idx)
        train_loss = loss_sum / n
        e_val = forward_eval(params, Z_val)
        d_val = np.sqrt(np.sum(np.square(e_val[va_a] - e_val[va_b]), axis=1))
        hinge = np.maximum(0.0, loss_cfg.margin - d_val)
        val_loss = float(
            np.mean(va_y * 0.5 * d_val**2 + (1.0 - va_y) * 0.5 * hinge**2)
        )
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
    model = SiameseModel(
        params=best_params,
        margin=loss_cfg.margin,
        feature_means=means,
        feature_stds=stds,
    )
    return TrainResult(model=model, history=history, best_epoch=best_epoch)


def save_history(history: Sequence[tuple[int, float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, train_loss, val_loss in history:
            f.write(f"{epoch},{float(train_loss)!r},{float(val_loss)!r}\n")
