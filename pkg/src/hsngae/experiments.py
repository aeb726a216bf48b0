"""Per-seed baseline and transfer runs, plus their configuration and result files."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifiers import dt_train, knn_fit
from .events import LabelMap, load_event_log
from .layers import GaeModel, MlpHead, save_checkpoint
from .losses import LossWeights
from .metrics import RunSummary, f1_from_labels, mean_ci95, relative_score
from .sitegraph import DEFAULT_WINDOW_SECONDS, AdjacencyDesign, SiteLayout, build_dataset
from .training import (
    ConfigError,
    LabeledGraphSet,
    TrainConfig,
    TrainResult,
    encode_dataset,
    fine_tune_gae_mlp,
    split_indices,
    train_gae,
    train_mlp,
    write_history_csv,
    write_steps_csv,
)

logger = logging.getLogger(__name__)

CLASSIFIERS = ("dt", "knn", "mlp")
MAX_LEAVES = 500
KNN_K = 3
RESULT_COLUMNS = ("model", "source", "target", "seed", "f1", "relative_score")
AGGREGATE_COLUMNS = ("model", "source", "target", "runs", "f1_mean", "f1_ci95", "relative_score")


@dataclass(frozen=True)
class HomePaths:
    events: str
    layout: str

    def check(self) -> None:
        for p in (self.events, self.layout):
            if not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")


@dataclass(frozen=True)
class ExperimentConfig:
    source: HomePaths
    target: HomePaths
    name: str = "experiment"
    adjacency: AdjacencyDesign = AdjacencyDesign.DEFAULT
    classifier: str = "mlp"
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    repetitions: int = 10
    seed: int = 0
    out: str = "runs"
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    target_points: int | None = None
    label_map: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "adjacency", AdjacencyDesign.parse(self.adjacency))
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.target_points is not None and self.target_points < 1:
            raise ConfigError("target_points must be >= 1")
        if self.window_seconds <= 0:
            raise ConfigError("window_seconds must be positive")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.repetitions)]

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.name

    def check_files(self) -> None:
        self.source.check()
        self.target.check()
        if self.label_map and not Path(self.label_map).is_file():
            raise ConfigError(f"file not found: {self.label_map}")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        data = dict(data)
        base = Path(base_dir) if base_dir else Path(".")

        def resolve(p):
            return str(p if Path(p).is_absolute() else base / p)

        def home(d):
            try:
                return HomePaths(resolve(d["events"]), resolve(d["layout"]))
            except (KeyError, TypeError):
                raise ConfigError("source/target need 'events' and 'layout' paths") from None

        try:
            source, target = home(data.pop("source")), home(data.pop("target"))
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from None
        train = data.pop("train", {}) or {}
        weights = data.pop("weights", {}) or {}
        data.pop("synth", None)
        if data.get("label_map"):
            data["label_map"] = resolve(data["label_map"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(source=source, target=target, train=TrainConfig(**train), weights=LossWeights(**weights),
                       **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        train = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(self.train).items()}
        return {
            "name": self.name,
            "source": vars(self.source),
            "target": vars(self.target),
            "adjacency": self.adjacency.value,
            "classifier": self.classifier,
            "train": train,
            "weights": dict(vars(self.weights)),
            "repetitions": self.repetitions,
            "seed": self.seed,
            "out": self.out,
            "window_seconds": self.window_seconds,
            "target_points": self.target_points,
            "label_map": self.label_map,
        }


# -- data --------------------------------------------------------------------


def load_home(paths: HomePaths, design, window_seconds: float, label_map: LabelMap | None = None) -> LabeledGraphSet:
    layout = SiteLayout.from_json(paths.layout)
    log = load_event_log(paths.events, label_map, layout.home_id)
    samples = build_dataset(log, layout, design, window_seconds)
    if not samples:
        raise ConfigError(f"{paths.events}: no non-empty windows for layout {paths.layout}")
    return LabeledGraphSet.from_samples(samples)


def load_experiment_data(config: ExperimentConfig) -> tuple[LabeledGraphSet, LabeledGraphSet]:
    config.check_files()
    label_map = LabelMap.from_json(config.label_map) if config.label_map else LabelMap.default()
    return (
        load_home(config.source, config.adjacency, config.window_seconds, label_map),
        load_home(config.target, config.adjacency, config.window_seconds, label_map),
    )


@dataclass
class Splits:
    train: LabeledGraphSet
    val: LabeledGraphSet
    test: LabeledGraphSet


def make_splits(data: LabeledGraphSet, config: TrainConfig) -> Splits:
    tr, va, te = split_indices(len(data), config.fractions, config.seed)
    return Splits(data.subset(tr), data.subset(va), data.subset(te))


def first_windows(data: LabeledGraphSet, k: int | None) -> LabeledGraphSet:
    """The ``k`` chronologically earliest samples (all of them when k is None)."""
    if k is None or k >= len(data):
        return data
    order = sorted(range(len(data)), key=lambda i: data.window_starts[i])
    return data.subset(sorted(order[:k]))


# -- runs --------------------------------------------------------------------


def fit_classifier(kind: str, features, labels, config: TrainConfig, val_features=None, val_labels=None,
                   l2_weight: float = 1e-4):
    if kind == "dt":
        return dt_train(features, labels, MAX_LEAVES), None
    if kind == "knn":
        return knn_fit(features, labels, min(KNN_K, len(features))), None
    if kind == "mlp":
        return train_mlp(features, labels, config, val_features, val_labels, l2_weight)
    raise ConfigError(f"unknown classifier {kind!r}")


@dataclass
class BaselineOutcome:
    kind: str
    seed: int
    f1: float
    classifier: object
    history: TrainResult | None = None


def baseline_run(kind: str, target: LabeledGraphSet, config: TrainConfig, weights: LossWeights | None = None
                 ) -> BaselineOutcome:
    """Classifier trained and scored on raw flattened features of the target home's own splits."""
    weights = weights or LossWeights()
    sp = make_splits(target, config)
    clf, hist = fit_classifier(kind, sp.train.flat_features(), sp.train.labels, config,
                               sp.val.flat_features(), sp.val.labels, weights.mlp_l2)
    pred = clf.predict(sp.test.flat_features())
    return BaselineOutcome(kind, config.seed, f1_from_labels(sp.test.labels, pred), clf, hist)


@dataclass
class TransferOutcome:
    kind: str
    seed: int
    f1: float
    model: GaeModel
    classifier: object
    gae_history: TrainResult
    clf_history: TrainResult | None = None
    fine_tune_history: TrainResult | None = None
    predictions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def transfer_run(kind: str, source: LabeledGraphSet, target: LabeledGraphSet, config: TrainConfig,
                 weights: LossWeights | None = None, target_points: int | None = None) -> TransferOutcome:
    """GAE on labelled source + unlabelled target, classifier on encoded source, score on target test.

    Target labels are read only for the final score on the target test split.
    """
    weights = weights or LossWeights()
    src = make_splits(source, config)
    tgt = make_splits(target, config)
    tgt_train = first_windows(tgt.train, target_points).unlabeled()
    tgt_val = tgt.val.unlabeled()
    tgt_test_x = tgt.test.unlabeled()

    model = GaeModel(seed=config.seed)
    gae_hist = train_gae(model, src.train, tgt_train, config, weights, src.val, tgt_val)
    z_train = encode_dataset(model, src.train)
    z_val = encode_dataset(model, src.val)
    clf, clf_hist = fit_classifier(kind, z_train, src.train.labels, config, z_val, src.val.labels, weights.mlp_l2)
    ft_hist = None
    if kind == "mlp":
        ft_hist = fine_tune_gae_mlp(model, clf, src.train, config, src.val, weights.mlp_l2)
    pred = clf.predict(encode_dataset(model, tgt_test_x))
    return TransferOutcome(kind, config.seed, f1_from_labels(tgt.test.labels, pred), model, clf,
                           gae_hist, clf_hist, ft_hist, pred)


# -- result files ------------------------------------------------------------


def model_name(kind: str, gae: bool) -> str:
    return ("GAE+" if gae else "") + kind.upper()


def write_results(rows: Sequence[RunSummary], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r.row())


def read_results(path) -> list[RunSummary]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            RunSummary(r["model"], r["source"], r["target"], int(r["seed"]), float(r["f1"]),
                       float(r["relative_score"]) if r["relative_score"] not in ("", "nan") else math.nan)
            for r in csv.DictReader(fh)
        ]


@dataclass
class Aggregate:
    model: str
    source: str
    target: str
    runs: int
    f1_mean: float
    f1_ci95: float | None
    relative_score: float | None = None

    def row(self) -> dict:
        return {
            "model": self.model,
            "source": self.source,
            "target": self.target,
            "runs": self.runs,
            "f1_mean": self.f1_mean,
            "f1_ci95": "" if self.f1_ci95 is None else self.f1_ci95,
            "relative_score": "" if self.relative_score is None else self.relative_score,
        }


def aggregate(rows: Sequence[RunSummary], baseline_means: dict[str, float] | None = None) -> list[Aggregate]:
    """Mean F1 (+ t-based 95% half-width when >= 2 runs) per model/source/target.

    The aggregate relative score is the ratio of mean F1 to the baseline's mean F1.
    """
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in rows:
        groups[(r.model, r.source, r.target)].append(r.f1)
    out = []
    for (model, source, target), f1s in groups.items():
        mean, ci = (mean_ci95(f1s) if len(f1s) >= 2 else (float(f1s[0]), None))
        rel = None
        if baseline_means is not None and model in baseline_means:
            rel = relative_score(mean, baseline_means[model])
        out.append(Aggregate(model, source, target, len(f1s), mean, ci, rel))
    return out


def write_aggregate(aggs: Sequence[Aggregate], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
        w.writeheader()
        for a in aggs:
            w.writerow(a.row())


def save_transfer_artifacts(outcome: TransferOutcome, seed_dir: Path) -> None:
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(outcome.model, seed_dir / "gae.ckpt")
    write_history_csv(outcome.gae_history, seed_dir / "gae_history.csv")
    write_steps_csv(outcome.gae_history, seed_dir / "gae_steps.csv")
    if isinstance(outcome.classifier, MlpHead):
        save_checkpoint(outcome.classifier, seed_dir / "mlp.ckpt")
    else:
        (seed_dir / f"{outcome.kind}.json").write_text(json.dumps(outcome.classifier.to_dict()), encoding="utf-8")
    if outcome.clf_history is not None:
        write_history_csv(outcome.clf_history, seed_dir / "mlp_history.csv")
    if outcome.fine_tune_history is not None:
        write_history_csv(outcome.fine_tune_history, seed_dir / "fine_tune_history.csv")


def seed_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    return replace(config.train, seed=seed)
