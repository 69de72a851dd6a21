"""Training loop, evaluation metrics, autoregressive generation and the
parametric sweep over compaction effort."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import (DataError, Dataset, N_POINTS, Scaler, SoilSample,
                   assemble_tensors)
from .models import Model, SEQ2SEQ_KINDS
from .tensor import Adam, Tensor, mse_loss


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int | None = None   # default: 10 feed-forward, 100 seq2seq
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    target_train_mse: float | None = None   # optional early exit once reached

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    def resolved_batch(self, kind: str, n_train: int) -> int:
        default = 100 if kind in SEQ2SEQ_KINDS else 10
        batch = self.batch_size if self.batch_size is not None else default
        return max(1, min(batch, n_train))   # clamp to the train split size

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "seed": self.seed,
                "target_train_mse": self.target_train_mse}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Metrics:
    mae: float
    rmse: float
    mape: float
    mae_scaled: float
    rmse_scaled: float
    per_depth_mae: np.ndarray
    per_depth_rmse: np.ndarray

    def to_dict(self) -> dict:
        return {"mae_mpa": self.mae, "rmse_mpa": self.rmse, "mape_pct": self.mape,
                "mae_scaled": self.mae_scaled, "rmse_scaled": self.rmse_scaled,
                "per_depth_mae_mpa": list(self.per_depth_mae),
                "per_depth_rmse_mpa": list(self.per_depth_rmse)}


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    clamped_batch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch] if self.val_loss else float("nan")


def mae(pred, actual) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.size != actual.size or pred.size == 0:
        raise DataError(f"length mismatch or empty: {pred.size} vs {actual.size}")
    return float(np.mean(np.abs(pred - actual)))


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.size != actual.size or pred.size == 0:
        raise DataError(f"length mismatch or empty: {pred.size} vs {actual.size}")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def mape(pred, actual) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.size != actual.size or pred.size == 0:
        raise DataError(f"length mismatch or empty: {pred.size} vs {actual.size}")
    if np.any(actual == 0):
        raise DataError("mape undefined: actual contains zero values")
    return float(np.mean(np.abs(pred - actual) / np.abs(actual)) * 100.0)


def _batch_forward(model: Model, x: np.ndarray, shifted: np.ndarray | None,
                   train: bool, rng) -> Tensor:
    if model.is_seq2seq:
        return model.forward_seq2seq(x, shifted, train=train, rng=rng)
    return model.forward(x, train=train, rng=rng)


def _epoch_loss(model: Model, tensors: dict) -> float:
    pred = _batch_forward(model, tensors["x"], tensors.get("y_shifted"), False, None)
    target = tensors["y"]
    if not model.is_seq2seq and target.ndim == 2 and pred.shape != target.shape:
        target = target.reshape(pred.shape)
    return mse_loss(pred, Tensor(target)).item()


def train(model: Model, dataset: Dataset, config: TrainConfig,
          scaler: Scaler | None = None) -> tuple[Model, TrainHistory]:
    """Seeded mini-batch training with teacher forcing for seq2seq kinds.

    The validation split (when present) is monitored every epoch and the
    best-validation parameters are restored at the end; with no validation
    samples the final parameters are kept.
    """
    if scaler is None:
        scaler = Scaler().fit(dataset)
    kind = model.kind
    if dataset.splits is not None:
        train_tensors = assemble_tensors(dataset, kind, scaler, split="train")
        try:
            val_tensors = assemble_tensors(dataset, kind, scaler, split="val")
        except DataError:
            val_tensors = None
    else:
        train_tensors = assemble_tensors(dataset, kind, scaler)
        val_tensors = None
    x, y = train_tensors["x"], train_tensors["y"]
    shifted = train_tensors.get("y_shifted")
    n = x.shape[0]
    if n == 0:
        raise DataError("empty train split")

    batch = config.resolved_batch(kind, n)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.param_tensors(), lr=config.lr, beta1=config.beta1,
               beta2=config.beta2, eps=config.eps)
    history = TrainHistory(clamped_batch=batch)
    best_state = None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            xb = x[idx]
            yb = y[idx]
            sb = shifted[idx] if shifted is not None else None
            pred = _batch_forward(model, xb, sb, True, rng)
            loss = mse_loss(pred, Tensor(yb))
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(idx)
            count += len(idx)
        epoch_train = total / count
        history.train_loss.append(epoch_train)
        if val_tensors is not None:
            vl = _epoch_loss(model, val_tensors)
            if not np.isfinite(vl):
                raise TrainingDiverged(epoch)
            history.val_loss.append(vl)
            if history.best_epoch < 0 or vl < history.val_loss[history.best_epoch]:
                history.best_epoch = epoch
                best_state = model.state_dict()
        history.epoch_seconds.append(time.perf_counter() - t0)
        # early exit on the deterministic (eval-mode) train MSE, not the
        # dropout-noisy running average
        if (config.target_train_mse is not None
                and _epoch_loss(model, train_tensors) < config.target_train_mse):
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    elif history.val_loss:
        history.best_epoch = int(np.argmin(history.val_loss))
    else:
        history.best_epoch = len(history.train_loss) - 1
    return model, history


def evaluate(model: Model, dataset: Dataset, scaler: Scaler,
             split: str | None = "test") -> Metrics:
    """Teacher-forced evaluation for seq2seq kinds; metrics in MPa after
    inverse scaling, scaled-space values reported alongside."""
    tensors = assemble_tensors(dataset, model.kind, scaler, split=split)
    if tensors["x"].shape[0] == 0:
        raise DataError(f"empty split {split!r}")
    pred = _batch_forward(model, tensors["x"], tensors.get("y_shifted"), False, None).data
    actual = tensors["y"]
    if pred.shape != actual.shape:
        actual = actual.reshape(pred.shape)
    pred_profiles = pred.reshape(-1, N_POINTS)
    actual_profiles = actual.reshape(pred_profiles.shape)
    pred_mpa = scaler.inverse("qc_post", pred_profiles)
    actual_mpa = scaler.inverse("qc_post", actual_profiles)
    return Metrics(
        mae=mae(pred_mpa, actual_mpa),
        rmse=rmse(pred_mpa, actual_mpa),
        mape=mape(pred_mpa, actual_mpa),
        mae_scaled=mae(pred, actual),
        rmse_scaled=rmse(pred, actual),
        per_depth_mae=np.mean(np.abs(pred_mpa - actual_mpa), axis=0),
        per_depth_rmse=np.sqrt(np.mean((pred_mpa - actual_mpa) ** 2, axis=0)),
    )


def generate(model: Model, qc_ini: np.ndarray, features, scaler: Scaler) -> np.ndarray:
    """Autoregressive inference: encode the initial profile once, then decode
    depth by depth, feeding each prediction back as the next input token.
    Returns the predicted post-improvement profile in MPa."""
    if not model.is_seq2seq:
        raise DataError("generative inference requires a sequence-to-sequence model")
    sample = SoilSample(sample_id="generate", qc_ini=np.asarray(qc_ini, dtype=np.float64),
                        features=features)
    tensors = assemble_tensors(Dataset([sample]), model.kind, scaler,
                               require_targets=False)
    cache = model.encode(tensors["x"])
    shifted = np.zeros((1, N_POINTS))
    preds = np.zeros(N_POINTS)
    for t in range(N_POINTS):
        out = model.decode(cache, shifted).data
        preds[t] = out[0, t]
        if t + 1 < N_POINTS:
            shifted[0, t + 1] = preds[t]
    return scaler.inverse("qc_post", preds)


def parametric_sweep(model: Model, qc_ini: np.ndarray, feature_grid,
                     scaler: Scaler) -> list[dict]:
    """One generated profile per grid point; rows keyed by feature values
    and depth."""
    feature_grid = list(feature_grid)
    if not feature_grid:
        raise DataError("empty feature grid")
    from .data import DEPTHS
    rows = []
    for features in feature_grid:
        profile = generate(model, qc_ini, features, scaler)
        for depth, value in zip(DEPTHS, profile):
            rows.append({"blows": features.blows,
                         "fill_thickness_m": features.fill_thickness,
                         "fine_content_pct": features.fine_content,
                         "depth_m": float(depth),
                         "qc_pred_mpa": float(value)})
    return rows
