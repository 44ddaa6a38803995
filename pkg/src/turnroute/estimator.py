"""Trainable outcome estimator over joint history--model features.

The network is a hand-written numpy MLP: a model encoder (attribute MLP,
per-model residuals, linear projection) feeding a fusion MLP with rectifier
activations, inverted dropout, and a scalar linear head. Training uses
mini-batch AdamW with decoupled weight decay, a cosine-annealed learning
rate, seeded shuffling, and early stopping on validation loss. The backward
pass is validated against central finite differences by ``grad_check``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .encoding import (
    ATTR_HIDDEN_DIM,
    MODEL_EMBED_DIM,
    ModelEncoderParams,
    init_model_encoder,
)
from .exceptions import DataError, NumericError
from .pool import ModelDescriptor, attr_features

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    residual_l2: float = 0.001
    dropout_rate: float = 0.1
    seed: int = 0
    hidden_sizes: tuple[int, int] = (256, 64)
    lr_floor_fraction: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass(frozen=True)
class TrainExample:
    z_x: np.ndarray
    model_id: str
    target: float


@dataclass
class EpochStats:
    epoch: int
    learning_rate: float
    train_loss: float
    val_loss: float


def _pad_to(vec: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.float64)
    out[: vec.shape[0]] = vec
    return out


class RouterNet:
    """Outcome estimator: scores a (history embedding, candidate model) pair.

    ``encoder_mode`` is ``"learned"`` (attribute MLP + residuals + projection)
    or ``"hardcoded"`` (model embedding fixed to the raw attribute features,
    zero-padded; no trainable encoder parameters).
    """

    def __init__(
        self,
        pool: Sequence[ModelDescriptor],
        dim_x: int,
        rng: np.random.Generator,
        hidden_sizes: tuple[int, int] = (256, 64),
        dropout_rate: float = 0.1,
        encoder_mode: str = "learned",
    ):
        if encoder_mode not in ("learned", "hardcoded"):
            raise ValueError(f"unknown encoder mode {encoder_mode!r}")
        self.pool = list(pool)
        self.ids = [d.id for d in self.pool]
        self._index = {mid: i for i, mid in enumerate(self.ids)}
        self.dim_x = dim_x
        self.hidden_sizes = tuple(hidden_sizes)
        self.dropout_rate = dropout_rate
        self.encoder_mode = encoder_mode
        self.attr_matrix = np.stack([attr_features(d) for d in self.pool])

        self.encoder: ModelEncoderParams | None = None
        if encoder_mode == "learned":
            self.encoder = init_model_encoder(self.ids, rng)

        joint = dim_x + MODEL_EMBED_DIM
        h1, h2 = self.hidden_sizes

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        self.fusion = [
            [uniform((h1, joint), joint), np.zeros(h1)],
            [uniform((h2, h1), h1), np.zeros(h2)],
            [uniform((1, h2), h2), np.zeros(1)],
        ]

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.encoder is not None:
            out["attr.w"] = self.encoder.w_attr
            out["attr.b"] = self.encoder.b_attr
            out["proj.w"] = self.encoder.w_proj
            out["proj.b"] = self.encoder.b_proj
            for mid in self.ids:
                out[f"res.{mid}"] = self.encoder.residuals[mid]
        for layer, (w, b) in enumerate(self.fusion):
            out[f"fusion.{layer}.w"] = w
            out[f"fusion.{layer}.b"] = b
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        current = self.params()
        for name, array in values.items():
            current[name][...] = array

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: array.copy() for name, array in self.params().items()}

    def assert_finite(self) -> None:
        for name, array in self.params().items():
            if not np.all(np.isfinite(array)):
                raise NumericError(f"parameter {name!r} contains non-finite values")

    # -- forward / backward ---------------------------------------------------

    def _encode_all_models(self) -> tuple[np.ndarray, dict]:
        """Model embeddings for the whole pool (pool order), with cache."""
        if self.encoder is None:
            za = np.stack([_pad_to(row, MODEL_EMBED_DIM) for row in self.attr_matrix])
            return za, {}
        enc = self.encoder
        pre_attr = self.attr_matrix @ enc.w_attr.T + enc.b_attr
        hidden = np.maximum(pre_attr, 0.0)
        residual_matrix = np.stack([enc.residuals[mid] for mid in self.ids])
        combined = np.concatenate([hidden, residual_matrix], axis=1)
        za = combined @ enc.w_proj.T + enc.b_proj
        cache = {"pre_attr": pre_attr, "combined": combined}
        return za, cache

    def _forward(
        self,
        zx: np.ndarray,
        model_idx: np.ndarray,
        dropout_rng: np.random.Generator | None = None,
        check_finite: bool = False,
    ) -> tuple[np.ndarray, dict]:
        za, enc_cache = self._encode_all_models()
        joint = np.concatenate([zx, za[model_idx]], axis=1)

        (w1, b1), (w2, b2), (w3, b3) = self.fusion
        pre1 = joint @ w1.T + b1
        act1 = np.maximum(pre1, 0.0)
        pre2 = None
        mask1 = mask2 = None
        if dropout_rng is not None and self.dropout_rate > 0.0:
            keep = 1.0 - self.dropout_rate
            mask1 = (dropout_rng.random(act1.shape) < keep) / keep
            act1 = act1 * mask1
        pre2 = act1 @ w2.T + b2
        act2 = np.maximum(pre2, 0.0)
        if dropout_rng is not None and self.dropout_rate > 0.0:
            keep = 1.0 - self.dropout_rate
            mask2 = (dropout_rng.random(act2.shape) < keep) / keep
            act2 = act2 * mask2
        out = (act2 @ w3.T + b3)[:, 0]

        if check_finite:
            for name, tensor in (("model encoder", za), ("fusion layer 1", pre1),
                                 ("fusion layer 2", pre2), ("output head", out)):
                if not np.all(np.isfinite(tensor)):
                    raise NumericError(f"{name} produced non-finite values")

        cache = {
            "joint": joint, "pre1": pre1, "act1": act1, "pre2": pre2, "act2": act2,
            "mask1": mask1, "mask2": mask2, "model_idx": model_idx, "za": za,
            **enc_cache,
        }
        return out, cache

    def loss_and_grads(
        self,
        zx: np.ndarray,
        model_idx: np.ndarray,
        targets: np.ndarray,
        residual_l2: float,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared error plus the residual-embedding L2 penalty, with grads."""
        out, cache = self._forward(zx, model_idx, dropout_rng=dropout_rng)
        n = len(targets)
        diff = out - targets
        loss = float(np.mean(diff**2))
        grads: dict[str, np.ndarray] = {}

        (w1, _), (w2, _), (w3, _) = self.fusion
        d_out = (2.0 / n) * diff
        grads["fusion.2.w"] = d_out[None, :] @ cache["act2"]
        grads["fusion.2.b"] = np.array([d_out.sum()])
        d_act2 = d_out[:, None] @ w3
        if cache["mask2"] is not None:
            d_act2 = d_act2 * cache["mask2"]
        d_pre2 = d_act2 * (cache["pre2"] > 0.0)
        grads["fusion.1.w"] = d_pre2.T @ cache["act1"]
        grads["fusion.1.b"] = d_pre2.sum(axis=0)
        d_act1 = d_pre2 @ w2
        if cache["mask1"] is not None:
            d_act1 = d_act1 * cache["mask1"]
        d_pre1 = d_act1 * (cache["pre1"] > 0.0)
        grads["fusion.0.w"] = d_pre1.T @ cache["joint"]
        grads["fusion.0.b"] = d_pre1.sum(axis=0)
        d_joint = d_pre1 @ w1
        d_za_rows = d_joint[:, self.dim_x:]

        if self.encoder is not None:
            enc = self.encoder
            n_models = len(self.ids)
            d_za = np.zeros((n_models, MODEL_EMBED_DIM))
            np.add.at(d_za, cache["model_idx"], d_za_rows)
            grads["proj.w"] = d_za.T @ cache["combined"]
            grads["proj.b"] = d_za.sum(axis=0)
            d_combined = d_za @ enc.w_proj
            d_hidden = d_combined[:, :ATTR_HIDDEN_DIM]
            d_residual = d_combined[:, ATTR_HIDDEN_DIM:]
            d_pre_attr = d_hidden * (cache["pre_attr"] > 0.0)
            grads["attr.w"] = d_pre_attr.T @ self.attr_matrix
            grads["attr.b"] = d_pre_attr.sum(axis=0)
            penalty = 0.0
            for i, mid in enumerate(self.ids):
                e = enc.residuals[mid]
                penalty += float(e @ e)
                grads[f"res.{mid}"] = d_residual[i] + 2.0 * residual_l2 * e
            loss += residual_l2 * penalty

        return loss, grads

    # -- inference ------------------------------------------------------------

    def score_candidates(self, z_x: np.ndarray) -> np.ndarray:
        """Predicted outcome for every pool model given one history embedding."""
        zx = np.tile(z_x[None, :], (len(self.ids), 1))
        out, _ = self._forward(zx, np.arange(len(self.ids)), check_finite=True)
        return out

    def predict(self, z_x: np.ndarray, descriptor: ModelDescriptor) -> float:
        if descriptor.id not in self._index:
            raise DataError(f"model {descriptor.id!r} not in the net's pool")
        idx = np.array([self._index[descriptor.id]])
        out, _ = self._forward(z_x[None, :], idx, check_finite=True)
        return float(out[0])

    def model_embeddings(self) -> np.ndarray:
        """Current model embeddings in pool order (for export/analysis)."""
        za, _ = self._encode_all_models()
        return za


def loss(net: RouterNet, batch: Sequence[TrainExample], residual_l2: float = 0.0) -> float:
    """Batch loss in evaluation mode (no dropout)."""
    if not batch:
        raise DataError("loss requires a non-empty batch")
    zx, idx, y = _pack(net, batch)
    value, _ = net.loss_and_grads(zx, idx, y, residual_l2)
    return value


def _pack(net: RouterNet, batch: Sequence[TrainExample]):
    zx = np.stack([ex.z_x for ex in batch])
    try:
        idx = np.array([net._index[ex.model_id] for ex in batch])
    except KeyError as exc:
        raise DataError(f"training example references unknown model {exc}") from exc
    y = np.array([ex.target for ex in batch], dtype=np.float64)
    return zx, idx, y


class AdamW:
    """Adam with decoupled weight decay applied to every parameter tensor."""

    def __init__(self, param_names, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: None for name in param_names}
        self.v = {name: None for name in param_names}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, weight_decay: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if self.m[name] is None:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g**2
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + weight_decay * p)


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    floor = config.learning_rate * config.lr_floor_fraction
    span = config.learning_rate - floor
    return floor + 0.5 * span * (1.0 + math.cos(math.pi * epoch / config.max_epochs))


def evaluate_mse(net: RouterNet, zx: np.ndarray, idx: np.ndarray, y: np.ndarray,
                 batch_size: int = 4096) -> float:
    total = 0.0
    for start in range(0, len(y), batch_size):
        out, _ = net._forward(zx[start:start + batch_size], idx[start:start + batch_size])
        total += float(np.sum((out - y[start:start + batch_size]) ** 2))
    return total / len(y)


def train(
    train_set: Sequence[TrainExample],
    val_set: Sequence[TrainExample],
    pool: Sequence[ModelDescriptor],
    config: TrainConfig,
    init_net: RouterNet | None = None,
    encoder_mode: str = "learned",
) -> tuple[RouterNet, list[EpochStats]]:
    """Fit the estimator; returns the best-validation checkpoint and loss history."""
    if not train_set or not val_set:
        raise DataError("train and validation sets must both be non-empty")

    rng = np.random.default_rng(config.seed)
    if init_net is not None:
        net = init_net
    else:
        dim_x = train_set[0].z_x.shape[0]
        net = RouterNet(pool, dim_x, rng, hidden_sizes=config.hidden_sizes,
                        dropout_rate=config.dropout_rate, encoder_mode=encoder_mode)

    zx_tr, idx_tr, y_tr = _pack(net, train_set)
    zx_va, idx_va, y_va = _pack(net, val_set)

    optimizer = AdamW(net.params().keys(), config.adam_beta1, config.adam_beta2, config.adam_eps)
    history: list[EpochStats] = []
    best_val = math.inf
    best_params = net.copy_params()
    stagnant = 0
    n = len(train_set)

    for epoch in range(config.max_epochs):
        lr = cosine_lr(epoch, config)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            take = perm[start:start + config.batch_size]
            batch_loss, grads = net.loss_and_grads(
                zx_tr[take], idx_tr[take], y_tr[take], config.residual_l2, dropout_rng=rng,
            )
            if not math.isfinite(batch_loss):
                raise NumericError(f"training diverged at epoch {epoch}, batch {n_batches}")
            optimizer.step(net.params(), grads, lr, config.weight_decay)
            epoch_loss += batch_loss
            n_batches += 1

        val_loss = evaluate_mse(net, zx_va, idx_va, y_va)
        history.append(EpochStats(epoch, lr, epoch_loss / n_batches, val_loss))

        if val_loss < best_val:
            best_val = val_loss
            best_params = net.copy_params()
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= config.patience:
                break

    net.set_params(best_params)
    net.assert_finite()
    return net, history


def grad_check(
    net: RouterNet,
    batch: Sequence[TrainExample],
    epsilon: float = 1e-5,
    residual_l2: float = 0.0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Dropout is disabled; intended for small nets in double precision.
    """
    zx, idx, y = _pack(net, batch)
    _, analytic = net.loss_and_grads(zx, idx, y, residual_l2)

    def loss_at() -> float:
        value, _ = net.loss_and_grads(zx, idx, y, residual_l2)
        return value

    worst = 0.0
    for name, param in net.params().items():
        grad = analytic[name]
        flat = param.reshape(-1)
        grad_flat = np.asarray(grad).reshape(-1)
        for i in range(flat.shape[0]):
            original = flat[i]
            flat[i] = original + epsilon
            up = loss_at()
            flat[i] = original - epsilon
            down = loss_at()
            flat[i] = original
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(1e-8, abs(grad_flat[i]) + abs(numeric))
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Ridge baseline (closed-form linear head over hardcoded joint features)
# ---------------------------------------------------------------------------


class RidgeNet:
    """Linear least-squares head over [history embedding; padded raw attributes]."""

    def __init__(self, pool: Sequence[ModelDescriptor], dim_x: int, alpha: float = 1.0):
        self.pool = list(pool)
        self.ids = [d.id for d in self.pool]
        self._index = {mid: i for i, mid in enumerate(self.ids)}
        self.dim_x = dim_x
        self.alpha = alpha
        self.za = np.stack([_pad_to(attr_features(d), MODEL_EMBED_DIM) for d in self.pool])
        self.weights = np.zeros(dim_x + MODEL_EMBED_DIM)
        self.intercept = 0.0

    def fit(self, examples: Sequence[TrainExample]) -> None:
        if not examples:
            raise DataError("ridge fit requires a non-empty training set")
        zx = np.stack([ex.z_x for ex in examples])
        idx = np.array([self._index[ex.model_id] for ex in examples])
        y = np.array([ex.target for ex in examples])
        x = np.concatenate([zx, self.za[idx]], axis=1)
        x_aug = np.concatenate([x, np.ones((len(y), 1))], axis=1)
        d = x_aug.shape[1]
        penalty = np.eye(d) * self.alpha
        penalty[-1, -1] = 0.0  # intercept unpenalized
        solution = np.linalg.solve(x_aug.T @ x_aug + penalty, x_aug.T @ y)
        self.weights = solution[:-1]
        self.intercept = float(solution[-1])

    def score_candidates(self, z_x: np.ndarray) -> np.ndarray:
        joint = np.concatenate([np.tile(z_x[None, :], (len(self.ids), 1)), self.za], axis=1)
        return joint @ self.weights + self.intercept

    def predict(self, z_x: np.ndarray, descriptor: ModelDescriptor) -> float:
        if descriptor.id not in self._index:
            raise DataError(f"model {descriptor.id!r} not in the net's pool")
        return float(self.score_candidates(z_x)[self._index[descriptor.id]])

    def model_embeddings(self) -> np.ndarray:
        return self.za


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


def save_checkpoint(net, path, train_config: TrainConfig | None = None) -> None:
    """Persist all parameter tensors, shapes, config, pool ids, dim, and a digest."""
    if isinstance(net, RidgeNet):
        arrays = {"ridge.weights": net.weights, "ridge.intercept": np.array([net.intercept])}
        kind = "ridge"
        extra = {"alpha": net.alpha}
    else:
        arrays = {f"param/{name}": array for name, array in net.params().items()}
        kind = "mlp"
        extra = {"hidden_sizes": list(net.hidden_sizes), "dropout_rate": net.dropout_rate,
                 "encoder_mode": net.encoder_mode}
    arrays = dict(arrays)
    arrays["attr_matrix"] = net.attr_matrix if hasattr(net, "attr_matrix") else net.za
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "dim_x": net.dim_x,
        "pool_ids": net.ids,
        "train_config": asdict(train_config) if train_config else None,
        "digest": _digest(arrays),
        **extra,
    }
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_checkpoint(path, pool: Sequence[ModelDescriptor], provider_dim: int | None = None):
    """Load a checkpoint, rejecting digest, pool, or dimension mismatches."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            arrays = {name: data[name] for name in data.files if name != "meta"}
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint {path} is not readable: {exc}") from exc

    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported format version {meta.get('format_version')}")
    if meta["digest"] != _digest(arrays):
        raise DataError(f"checkpoint {path}: content digest mismatch")
    pool_ids = [d.id for d in pool]
    if meta["pool_ids"] != pool_ids:
        raise DataError(
            f"checkpoint {path}: pool model ids mismatch "
            f"(checkpoint {meta['pool_ids']}, pool {pool_ids})"
        )
    if provider_dim is not None and meta["dim_x"] != provider_dim:
        raise DataError(
            f"checkpoint {path}: provider dimension mismatch "
            f"(checkpoint {meta['dim_x']}, provider {provider_dim})"
        )

    if meta["kind"] == "ridge":
        net = RidgeNet(pool, meta["dim_x"], alpha=meta.get("alpha", 1.0))
        net.weights = arrays["ridge.weights"]
        net.intercept = float(arrays["ridge.intercept"][0])
        return net, meta

    rng = np.random.default_rng(0)
    net = RouterNet(
        pool,
        meta["dim_x"],
        rng,
        hidden_sizes=tuple(meta["hidden_sizes"]),
        dropout_rate=meta["dropout_rate"],
        encoder_mode=meta["encoder_mode"],
    )
    net.set_params({name[len("param/"):]: arrays[name]
                    for name in arrays if name.startswith("param/")})
    return net, meta
