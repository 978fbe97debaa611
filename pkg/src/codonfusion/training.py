"""End-to-end optimization of fusion and head parameters.

Adam with decoupled weight decay, a reduce-on-plateau learning-rate
schedule, and early stopping on the validation metric (Spearman for
regression, accuracy for classification). Every source of randomness is
derived from the run seed, so identical configurations reproduce identical
epoch logs and checkpoints bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, add, embedding_slice, log, mul, scale, softmax_over_axis, sum_over_axis, zero_grads
from .fusion import TAU_MAX, TAU_MIN
from .metrics import accuracy, spearman
from .models import STRATEGIES, FusionModel, ModelConfig
from .trackio import DatasetManifest, ManifestError, _load_sample, iter_record_batches

__all__ = [
    "TrainConfig",
    "TrainRun",
    "EpochLog",
    "EvalResult",
    "NonFiniteGradientError",
    "loss",
    "AdamState",
    "adam_step",
    "PlateauScheduler",
    "EarlyStopper",
    "derive_splits",
    "train",
    "evaluate_samples",
    "worker_count",
    "config_hash",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
]

VAL_FRACTION = 0.1
_LOG_FLOOR = 1e-300

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, param: str):
        super().__init__(f"non-finite gradient in parameter {param}")
        self.param = param


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    weight_decay: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 500
    early_stop_patience: int = 20
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    lambda_entropy: float = 0.0
    task: str = "regression"
    strategy: str = "mil"
    seed: int = 0

    def validate(self) -> None:
        for name in ("learning_rate", "weight_decay", "plateau_factor"):
            if getattr(self, name) < 0 or (name != "weight_decay" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("batch_size", "max_epochs", "early_stop_patience", "plateau_patience"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.lambda_entropy < 0:
            raise ValueError(f"lambda_entropy must be non-negative, got {self.lambda_entropy}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "weight_decay": self.weight_decay,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "plateau_patience": self.plateau_patience, "plateau_factor": self.plateau_factor,
            "lambda_entropy": self.lambda_entropy, "task": self.task,
            "strategy": self.strategy, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train-config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg


def worker_count() -> int:
    """Worker-thread cap from BLF_THREADS; defaults to 1."""
    raw = os.environ.get("BLF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BLF_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"BLF_THREADS must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def loss(preds, targets, entropies, lam: float, task: str) -> Tensor:
    """Mean task loss plus lam times the mean attention entropy.

    Regression uses mean squared error, classification mean cross entropy
    over softmaxed logits. The entropy term is omitted when no attention
    weights were produced; with lam = 0 the result is exactly the task loss.
    """
    if len(preds) == 0 or len(preds) != len(targets):
        raise ValueError(f"got {len(preds)} predictions for {len(targets)} targets")
    total = None
    for pred, target in zip(preds, targets):
        if task == "regression":
            diff = add(pred, Tensor([-float(target)]))
            term = sum_over_axis(mul(diff, diff))
        else:
            index = int(target)
            if index != target or not 0 <= index < pred.shape[0]:
                raise ValueError(f"class index {target!r} out of range for {pred.shape[0]} classes")
            prob = embedding_slice(softmax_over_axis(pred, axis=0), index, index + 1)
            term = scale(sum_over_axis(log(add(prob, Tensor([_LOG_FLOOR])))), -1.0)
        total = term if total is None else add(total, term)
    result = scale(total, 1.0 / len(preds))
    if lam != 0.0 and entropies:
        ent = None
        for e in entropies:
            ent = e if ent is None else add(ent, e)
        result = add(result, scale(ent, lam / len(entropies)))
    return result


# ---------------------------------------------------------------------------
# optimizer and schedules
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, named_params: dict):
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in named_params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in named_params.items()}

    def snapshot(self) -> dict:
        return {"t": self.t,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}


def adam_step(named_params: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0, clamps=()) -> None:
    """Bias-corrected Adam with decoupled weight decay.

    Parameters without a gradient are skipped. Weight decay multiplies the
    parameter by (1 - lr * wd) before the adaptive update. ``clamps`` are
    (tensor, lo, hi) triples projected after the step.
    """
    live = {name: p for name, p in named_params.items() if p.grad is not None}
    for name, p in live.items():
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(name)
    state.t += 1
    bias1 = 1.0 - ADAM_BETA1 ** state.t
    bias2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in live.items():
        g = p.grad
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
    for tensor, lo, hi in clamps:
        np.clip(tensor.data, lo, hi, out=tensor.data)


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` non-improving epochs."""

    def __init__(self, lr: float, patience: int, factor: float):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = -np.inf
        self.bad_epochs = 0

    def observe(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.bad_epochs = 0

    def observe(self, metric: float) -> bool:
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# ---------------------------------------------------------------------------
# splits and evaluation
# ---------------------------------------------------------------------------


def derive_splits(manifest: DatasetManifest, seed: int) -> dict:
    """Resolve train/val/test record lists.

    When the manifest carries no validation split, 10% of the training
    samples (at least one) are carved off deterministically from the seed.
    """
    splits = {name: manifest.split_samples(name) for name in ("train", "val", "test")}
    if not splits["train"]:
        raise ManifestError("manifest has no training samples")
    if not splits["val"]:
        train = splits["train"]
        if len(train) < 2:
            raise ManifestError("cannot carve a validation split from a single training sample")
        n_val = max(1, int(round(VAL_FRACTION * len(train))))
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        chosen = set(rng.permutation(len(train))[:n_val].tolist())
        splits["val"] = [rec for i, rec in enumerate(train) if i in chosen]
        splits["train"] = [rec for i, rec in enumerate(train) if i not in chosen]
    return splits


@dataclass
class EvalResult:
    metric: float
    predictions: np.ndarray
    labels: np.ndarray
    mean_entropy: float | None
    alpha_means: np.ndarray | None
    sample_alphas: list  # (sample_id, alpha triple) pairs; empty without attention


def evaluate_samples(model: FusionModel, samples, task: str) -> EvalResult:
    """Deterministic eval-mode pass over samples in their given order."""
    if not samples:
        raise ManifestError("cannot evaluate an empty sample list")

    def run(sample):
        return model.forward(sample, train=False)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, samples))
    else:
        outputs = [run(s) for s in samples]

    labels = np.array([s.label for s in samples])
    sample_alphas = []
    entropies = []
    scores = np.empty(len(samples))
    for i, (sample, (pred, result)) in enumerate(zip(samples, outputs)):
        if task == "regression":
            scores[i] = pred.data[0]
        else:
            scores[i] = int(np.argmax(pred.data))
        if result.alpha is not None:
            alpha = model.sequence_alpha(result)
            sample_alphas.append((sample.sample_id, alpha))
            entropies.append(result.entropy.item())

    if task == "regression":
        try:
            metric = spearman(scores, labels)
        except ValueError:
            metric = 0.0  # degenerate tiny-split case: constant ranks
    else:
        metric = accuracy(scores.astype(int), labels.astype(int))

    alpha_means = None
    mean_entropy = None
    if sample_alphas:
        alpha_means = np.mean([a for _, a in sample_alphas], axis=0)
        mean_entropy = float(np.mean(entropies))
    return EvalResult(metric=metric, predictions=scores, labels=labels,
                      mean_entropy=mean_entropy, alpha_means=alpha_means,
                      sample_alphas=sample_alphas)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


def load_records(records, base_dir, cache: dict | None = None):
    """Load SampleData for explicit records, preserving order."""
    base_dir = Path(base_dir)
    return [_load_sample(rec, base_dir, cache) for rec in records]


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_metric: float
    lr: float
    mean_entropy: float | None
    alpha_means: tuple | None

    CSV_HEADER = "epoch,train_loss,val_metric,lr,mean_entropy,alpha_dna,alpha_rna,alpha_prot"

    def to_csv_row(self) -> str:
        cells = [str(self.epoch), repr(self.train_loss), repr(self.val_metric), repr(self.lr)]
        cells.append("" if self.mean_entropy is None else repr(self.mean_entropy))
        if self.alpha_means is None:
            cells.extend(["", "", ""])
        else:
            cells.extend(repr(a) for a in self.alpha_means)
        return ",".join(cells)


@dataclass
class TrainRun:
    config: TrainConfig
    model_meta: dict
    epochs: list
    best_epoch: int
    best_metric: float
    stop_reason: str
    best_params: dict = field(repr=False, default_factory=dict)
    best_adam: dict = field(repr=False, default_factory=dict)

    def log_text(self) -> str:
        lines = [EpochLog.CSV_HEADER]
        lines.extend(row.to_csv_row() for row in self.epochs)
        return "\n".join(lines) + "\n"


def _infer_dims(sample) -> dict:
    return {m.name.lower(): track.dim for m, track in sample.tracks.items()}


def _class_count(manifest: DatasetManifest) -> int:
    labels = {int(rec.label) for rec in manifest.samples}
    count = max(labels) + 1
    if count < 2:
        raise ManifestError("classification manifest needs at least 2 classes")
    return count


def train(manifest: DatasetManifest, base_dir, train_cfg: TrainConfig,
          model_cfg: ModelConfig | None = None) -> TrainRun:
    """Optimize one strategy on a manifest; fully deterministic per seed."""
    train_cfg.validate()
    model_cfg = model_cfg or ModelConfig()
    if manifest.task != train_cfg.task:
        raise ManifestError(f"manifest task {manifest.task!r} != configured task {train_cfg.task!r}")

    splits = derive_splits(manifest, train_cfg.seed)
    cache: dict = {}
    val_samples = load_records(splits["val"], base_dir, cache)
    first = load_records(splits["train"][:1], base_dir, cache)[0]
    dims = _infer_dims(first)
    targets = 1 if train_cfg.task == "regression" else _class_count(manifest)

    model = FusionModel(strategy=train_cfg.strategy, dims=dims, targets=targets,
                        config=model_cfg, seed=train_cfg.seed)
    named = model.named_parameters()
    adam = AdamState(named)
    scheduler = PlateauScheduler(train_cfg.learning_rate, train_cfg.plateau_patience,
                                 train_cfg.plateau_factor)
    stopper = EarlyStopper(train_cfg.early_stop_patience)
    clamps = [(model.gate.tau, TAU_MIN, TAU_MAX)] if model.gate is not None else []

    logs: list[EpochLog] = []
    best_metric = -np.inf
    best_epoch = -1
    best_params: dict = {}
    best_adam: dict = {}
    stop_reason = "max_epochs"

    for epoch in range(train_cfg.max_epochs):
        epoch_seed = np.random.SeedSequence(train_cfg.seed, spawn_key=(2, epoch))
        loss_sum = 0.0
        seen = 0
        try:
            for batch_idx, batch in enumerate(iter_record_batches(
                    splits["train"], base_dir, train_cfg.batch_size, epoch_seed, cache)):
                drop_rng = np.random.default_rng(
                    np.random.SeedSequence(train_cfg.seed, spawn_key=(3, epoch, batch_idx)))
                preds, entropies = [], []
                for sample in batch.samples:
                    pred, result = model.forward(sample, train=True, rng=drop_rng)
                    preds.append(pred)
                    if result.entropy is not None:
                        entropies.append(result.entropy)
                batch_loss = loss(preds, batch.labels, entropies,
                                  train_cfg.lambda_entropy, train_cfg.task)
                zero_grads(named.values())
                batch_loss.backward()
                adam_step(named, adam, lr=scheduler.lr,
                          weight_decay=train_cfg.weight_decay, clamps=clamps)
                loss_sum += batch_loss.item() * len(batch)
                seen += len(batch)
        except NonFiniteGradientError as exc:
            stop_reason = f"non_finite_grads:{exc.param}"
            break

        train_loss = loss_sum / seen
        evaluation = evaluate_samples(model, val_samples, train_cfg.task)
        metric = evaluation.metric
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = model.state_arrays()
            best_adam = adam.snapshot()
        lr_now = scheduler.observe(metric)
        logs.append(EpochLog(
            epoch=epoch, train_loss=float(train_loss), val_metric=float(metric), lr=float(lr_now),
            mean_entropy=evaluation.mean_entropy,
            alpha_means=None if evaluation.alpha_means is None
            else tuple(float(a) for a in evaluation.alpha_means),
        ))
        if stopper.observe(metric):
            stop_reason = "early_stop"
            break

    if best_epoch < 0:
        raise ManifestError("training never completed an epoch")
    model.load_state(best_params)
    return TrainRun(config=train_cfg, model_meta=model.meta(), epochs=logs,
                    best_epoch=best_epoch, best_metric=best_metric,
                    stop_reason=stop_reason, best_params=best_params, best_adam=best_adam)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BLFC"
CHECKPOINT_VERSION = 1


def config_hash(train_cfg: TrainConfig, model_cfg: ModelConfig) -> str:
    doc = {"train": train_cfg.to_dict(), "model": model_cfg.to_dict()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, run: TrainRun) -> None:
    """Versioned binary: header JSON, then f64 param / moment buffers."""
    model_cfg = ModelConfig.from_dict(run.model_meta["config"])
    names = list(run.best_params)
    header = {
        "version": CHECKPOINT_VERSION,
        "model": run.model_meta,
        "train_config": run.config.to_dict(),
        "config_hash": config_hash(run.config, model_cfg),
        "best_epoch": run.best_epoch,
        "best_metric": run.best_metric,
        "stop_reason": run.stop_reason,
        "adam_t": run.best_adam["t"],
        "params": [{"name": n, "shape": list(run.best_params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob]
    for n in names:
        chunks.append(np.ascontiguousarray(run.best_params[n], dtype="<f8").tobytes())
    for n in names:
        chunks.append(np.ascontiguousarray(run.best_adam["m"][n], dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(run.best_adam["v"][n], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + header_len].decode())
    offset = 12 + header_len
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.astype(np.float64)
        offset += 8 * count
    adam = {"t": header["adam_t"], "m": {}, "v": {}}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        adam["m"][entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
        adam["v"][entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing checkpoint bytes")
    header["param_arrays"] = params
    header["adam"] = adam
    return header


def model_from_checkpoint(header: dict) -> FusionModel:
    model = FusionModel.from_meta(header["model"])
    model.load_state(header["param_arrays"])
    return model
