"""Adam, dataset splitting, and the GAE / MLP / fine-tuning loops."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, Parameter
from .layers import GaeModel, MlpHead, flatten_latent
from .losses import LossWeights, autoencoder_loss, classification_loss
from .sitegraph import GraphSample

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDivergence(NumericalError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 5e-4
    fine_tune_lr: float = 5e-5
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if self.lr < 0 or self.fine_tune_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ConfigError("fractions must be three non-negative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.fractions}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


# -- data --------------------------------------------------------------------


@dataclass
class GraphSet:
    """Samples of one home stacked into a B x N x 6 array, sharing one adjacency."""

    a_norm: np.ndarray
    x: np.ndarray
    window_starts: tuple[datetime, ...] = ()
    home_id: str = ""

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.a_norm.shape[0]

    def subset(self, idx) -> "GraphSet":
        idx = np.asarray(idx, dtype=np.int64)
        starts = tuple(self.window_starts[i] for i in idx) if self.window_starts else ()
        return GraphSet(self.a_norm, self.x[idx], starts, self.home_id)

    def flat_features(self) -> np.ndarray:
        return self.x.reshape(len(self), -1)


@dataclass
class LabeledGraphSet(GraphSet):
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_samples(cls, samples: Sequence[GraphSample]) -> "LabeledGraphSet":
        if not samples:
            raise ValueError("no samples")
        a = samples[0].a_norm
        if any(s.a_norm is not a and not np.array_equal(s.a_norm, a) for s in samples):
            raise ValueError("samples of one set must share their adjacency")
        return cls(
            a,
            np.stack([s.x for s in samples]),
            tuple(s.window_start for s in samples),
            samples[0].home_id,
            np.array([s.label for s in samples], dtype=np.int64),
        )

    def subset(self, idx) -> "LabeledGraphSet":
        base = GraphSet.subset(self, idx)
        return LabeledGraphSet(base.a_norm, base.x, base.window_starts, base.home_id,
                               self.labels[np.asarray(idx, dtype=np.int64)])

    def unlabeled(self) -> GraphSet:
        return GraphSet(self.a_norm, self.x, self.window_starts, self.home_id)


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_indices(n: int, fractions: Sequence[float], seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniformly random disjoint train/val/test indices; val and test sizes are floored."""
    if n < 1:
        raise ValueError("cannot split an empty dataset")
    n_train, n_val, n_test = split_counts(n, fractions)
    for name, count, frac in (("train", n_train, fractions[0]), ("val", n_val, fractions[1]),
                              ("test", n_test, fractions[2])):
        if count == 0 and frac > 0:
            raise ValueError(f"{name} split is empty for {n} samples; collect more data")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(samples, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0):
    """Split a list of samples or a labelled graph set into (train, val, test)."""
    parts = split_indices(len(samples), fractions, seed)
    if isinstance(samples, GraphSet):
        return tuple(samples.subset(p) for p in parts)
    return tuple([samples[i] for i in p] for p in parts)


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray | None], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape:
            raise ad.ShapeError(f"{p.name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {p.name}")
        if p.name not in state.m:
            state.m[p.name] = np.zeros(p.shape)
            state.v[p.name] = np.zeros(p.shape)
        m = state.m[p.name] = beta1 * state.m[p.name] + (1.0 - beta1) * g
        v = state.v[p.name] = beta2 * state.v[p.name] + (1.0 - beta2) * (g * g)
        p.value = p.value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()

    @classmethod
    def from_config(cls, params, config: TrainConfig, lr: float | None = None) -> "Adam":
        return cls(params, config.lr if lr is None else lr, config.beta1, config.beta2, config.eps)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr,
                  self.beta1, self.beta2, self.eps)


# -- loops -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    stopped_early: bool = False


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    initial_val: float = math.inf
    best_val: float = math.inf
    best_epoch: int = 0
    stopped_early: bool = False
    steps: list[dict] = field(default_factory=list)
    initial_train_loss: float = math.nan
    final_train_loss: float = math.nan


class _EarlyStopper:
    def __init__(self, params, patience: int, initial: float | None = None):
        self.params = params
        self.patience = patience
        self.best = math.inf if initial is None else initial
        self.best_epoch = 0
        self.best_state = {p.name: p.value.copy() for p in params} if initial is not None else None
        self.wait = 0

    def update(self, epoch: int, val: float) -> bool:
        """Record ``val``; True when training should stop."""
        if val < self.best:
            self.best, self.best_epoch, self.wait = val, epoch, 0
            self.best_state = {p.name: p.value.copy() for p in self.params}
            return False
        self.wait += 1
        return self.wait >= self.patience

    def restore(self) -> None:
        if self.best_state is not None:
            for p in self.params:
                p.value = self.best_state[p.name].copy()


def _draw(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.choice(n, size=k, replace=n < k)


def _checked(value: float, step: int, what: str) -> float:
    if not math.isfinite(value):
        raise TrainingDivergence(f"{what} became non-finite", step)
    return value


def _ae_value(model, source: LabeledGraphSet, target: GraphSet, weights: LossWeights, step: int = 0) -> float:
    try:
        terms = autoencoder_loss(model, (source.a_norm, source.x, source.labels), (target.a_norm, target.x), weights)
    except TrainingDivergence:
        raise
    except NumericalError as exc:
        raise TrainingDivergence(str(exc), step) from exc
    return _checked(terms.value, step, "L_ae")


def train_gae(
    model: GaeModel,
    source: LabeledGraphSet,
    target: GraphSet,
    config: TrainConfig,
    weights: LossWeights | None = None,
    source_val: LabeledGraphSet | None = None,
    target_val: GraphSet | None = None,
) -> TrainResult:
    """Minimize L_ae on paired source/target batches with early stopping.

    ``target`` is a plain :class:`GraphSet`; target labels are not accepted.
    One epoch is ``ceil(len(source) / batch_size)`` steps. The parameters with
    the lowest validation L_ae are restored at the end.
    """
    if isinstance(target, LabeledGraphSet):
        target = target.unlabeled()
    if target_val is not None and isinstance(target_val, LabeledGraphSet):
        target_val = target_val.unlabeled()
    if len(source) == 0 or len(target) == 0:
        raise ValueError("train_gae needs non-empty source and target data")
    weights = weights or LossWeights()
    source_val = source_val if source_val is not None and len(source_val) else source
    target_val = target_val if target_val is not None and len(target_val) else target

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam.from_config(params, config)
    result = TrainResult()
    result.initial_train_loss = _ae_value(model, source, target, weights)
    result.initial_val = _ae_value(model, source_val, target_val, weights)
    stopper = _EarlyStopper(params, config.patience, result.initial_val)
    steps_per_epoch = math.ceil(len(source) / config.batch_size)

    step = 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for _ in range(steps_per_epoch):
            step += 1
            si = _draw(rng, len(source), config.batch_size)
            ti = _draw(rng, len(target), config.batch_size)
            opt.zero_grad()
            try:
                terms = autoencoder_loss(model, (source.a_norm, source.x[si], source.labels[si]),
                                         (target.a_norm, target.x[ti]), weights)
                _checked(terms.value, step, "L_ae")
                ad.backward(terms.total)
                opt.step()
            except TrainingDivergence:
                raise
            except NumericalError as exc:
                raise TrainingDivergence(str(exc), step) from exc
            losses.append(terms.value)
            result.steps.append({"step": step, "epoch": epoch, **terms.row()})
        val = _ae_value(model, source_val, target_val, weights, step)
        stop = stopper.update(epoch, val)
        result.history.append(EpochRecord(epoch, float(np.mean(losses)), val, stop))
        if stop:
            result.stopped_early = True
            break

    stopper.restore()
    result.best_val, result.best_epoch = stopper.best, stopper.best_epoch
    result.final_train_loss = _ae_value(model, source, target, weights, step)
    return result


def encode_dataset(model: GaeModel, data: GraphSet, chunk: int = 256) -> np.ndarray:
    """Flattened latent code (length N_H * F_H) per sample."""
    if len(data) == 0:
        return np.zeros((0, model.hyper.latent_size))
    parts = [model.encode(data.a_norm, data.x[i:i + chunk]) for i in range(0, len(data), chunk)]
    return np.concatenate(parts, axis=0)


def _mlp_objective(mlp: MlpHead, features, labels, l2: float):
    return classification_loss(mlp(features), labels, l2, mlp.weights())


def _minibatches(rng: np.random.Generator, n: int, batch_size: int):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_mlp(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    val_features: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    l2_weight: float = 1e-4,
    mlp: MlpHead | None = None,
) -> tuple[MlpHead, TrainResult]:
    """Cross-entropy + L2 with Adam and early stopping on the validation objective.

    Without a validation set the training objective is monitored instead.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(features) != len(labels) or len(labels) == 0:
        raise ValueError("features must be a non-empty 2-D array with one label per row")
    if val_features is None or len(val_features) == 0:
        val_features, val_labels = features, labels
    mlp = mlp or MlpHead(features.shape[1], seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    params = mlp.parameters()
    opt = Adam.from_config(params, config)
    result = TrainResult()
    stopper = _EarlyStopper(params, config.patience)

    step = 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for idx in _minibatches(rng, len(features), config.batch_size):
            step += 1
            opt.zero_grad()
            try:
                loss = _mlp_objective(mlp, features[idx], labels[idx], l2_weight)
                ad.backward(loss)
                opt.step()
            except NumericalError as exc:
                raise TrainingDivergence(str(exc), step) from exc
            losses.append(loss.value.item())
        val = _checked(_mlp_objective(mlp, val_features, val_labels, l2_weight).value.item(), step, "validation loss")
        stop = stopper.update(epoch, val)
        result.history.append(EpochRecord(epoch, float(np.mean(losses)), val, stop))
        if stop:
            result.stopped_early = True
            break

    stopper.restore()
    result.best_val, result.best_epoch = stopper.best, stopper.best_epoch
    return mlp, result


def _joint_objective(model: GaeModel, mlp: MlpHead, data: LabeledGraphSet, idx, l2: float):
    codes = flatten_latent(model.encoder(data.a_norm, data.x[idx]).z)
    return classification_loss(mlp(codes), data.labels[idx], l2, mlp.weights())


def fine_tune_gae_mlp(
    model: GaeModel,
    mlp: MlpHead,
    source: LabeledGraphSet,
    config: TrainConfig,
    source_val: LabeledGraphSet | None = None,
    l2_weight: float = 1e-4,
) -> TrainResult:
    """End-to-end classification training of encoder + head on source labels at ``fine_tune_lr``.

    The starting point counts as a candidate, so the best validation loss
    never ends above where fine-tuning began.
    """
    source_val = source_val if source_val is not None and len(source_val) else source
    rng = np.random.default_rng(config.seed + 2)
    params = model.encoder.parameters() + mlp.parameters()
    opt = Adam.from_config(params, config, lr=config.fine_tune_lr)
    all_val = np.arange(len(source_val))
    result = TrainResult()
    result.initial_val = _joint_objective(model, mlp, source_val, all_val, l2_weight).value.item()
    stopper = _EarlyStopper(params, config.patience, result.initial_val)

    step = 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for idx in _minibatches(rng, len(source), config.batch_size):
            step += 1
            opt.zero_grad()
            try:
                loss = _joint_objective(model, mlp, source, idx, l2_weight)
                ad.backward(loss)
                opt.step()
            except NumericalError as exc:
                raise TrainingDivergence(str(exc), step) from exc
            losses.append(loss.value.item())
        val = _checked(_joint_objective(model, mlp, source_val, all_val, l2_weight).value.item(), step,
                       "validation loss")
        stop = stopper.update(epoch, val)
        result.history.append(EpochRecord(epoch, float(np.mean(losses)), val, stop))
        if stop:
            result.stopped_early = True
            break

    stopper.restore()
    result.best_val, result.best_epoch = stopper.best, stopper.best_epoch
    return result


# -- logs --------------------------------------------------------------------

STEP_COLUMNS = ("step", "epoch", "L_total", "L_rec", "L_pool", "L_walker", "L_visit")
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "stopped_early")


def write_history_csv(result: TrainResult, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in result.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), int(r.stopped_early)])


def write_steps_csv(result: TrainResult, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=STEP_COLUMNS)
        w.writeheader()
        for row in result.steps:
            w.writerow(row)
