"""Metrics and the experiment harness.

Implements the confusion matrix and macro-F1 scoring, stratified k-fold
cross-validation, the scaler-by-algorithm sweep, learning curves over
per-class training-set sizes, the loss/C grid search, cluster-level
scoring under an alloy taxonomy, the single-positive-score assignment
analysis for one-vs-rest models, and prediction timing.

Experiment cells are pure functions of (data, seed, hyperparameters), so
they may run in parallel; aggregation is by cell index and results never
depend on the worker count.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import LabelOutOfRange, TooFewRows, UnmappedClass
from .features import ScalerKind
from .learn import (
    KnnModel,
    LinearModel,
    LossKind,
    Model,
    decision_matrix,
    predict,
    train_knn,
    train_linear_svm,
    train_logreg,
    train_mlp,
)
from .preprocess import AlloyTaxonomy, subsample_per_class
from .rng import derive_seed, stream
from .spectra_io import LabeledDataset

try:  # optional: pins BLAS threads during timing runs when available
    from threadpoolctl import threadpool_limits  # type: ignore
except ImportError:  # pragma: no cover - absence is the common case
    threadpool_limits = None


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts[t][p] = spectra of true class t predicted as class p."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        names = tuple(self.class_names)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got {counts.shape}")
        if counts.shape[0] != len(names):
            raise ValueError(
                f"{counts.shape[0]}x{counts.shape[0]} counts vs {len(names)} names"
            )
        if counts.size and counts.min() < 0:
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv_text(self) -> str:
        """CSV with true classes as rows and predicted classes as columns."""
        lines = ["true\\predicted," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "counts": self.counts.tolist(),
        }


def confusion_matrix(
    y_true: Sequence[int] | np.ndarray,
    y_pred: Sequence[int] | np.ndarray,
    n_classes: int,
    class_names: Sequence[str] | None = None,
) -> ConfusionMatrix:
    """Tally predictions into an n_classes x n_classes matrix."""
    yt = np.asarray(y_true, dtype=np.int64).reshape(-1)
    yp = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if yt.shape != yp.shape:
        raise ValueError(f"length mismatch: {yt.shape[0]} true vs {yp.shape[0]} predicted")
    for name, arr in (("true", yt), ("predicted", yp)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(
                f"{name} labels must lie in [0, {n_classes - 1}], "
                f"got [{arr.min()}, {arr.max()}]"
            )
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (yt, yp), 1)
    if class_names is None:
        class_names = tuple(f"class{i}" for i in range(n_classes))
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per class with the 0-when-undefined convention throughout."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=(tp + fn) > 0)
    pr = precision + recall
    return np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the per-class F1 scores."""
    return float(per_class_f1(cm).mean()) if len(cm.class_names) else 0.0


def collapse_confusion(cm: ConfusionMatrix, taxonomy: AlloyTaxonomy) -> ConfusionMatrix:
    """Sum rows/columns within taxonomy clusters into a cluster-level matrix."""
    missing = [n for n in cm.class_names if n not in taxonomy.cluster_of]
    if missing:
        raise UnmappedClass(f"taxonomy does not map classes: {missing}")
    clusters = taxonomy.cluster_order(cm.class_names)
    index = {c: i for i, c in enumerate(clusters)}
    member = np.asarray([index[taxonomy.cluster(n)] for n in cm.class_names])
    k = len(clusters)
    collapsed = np.zeros((k, k), dtype=np.int64)
    np.add.at(collapsed, (member[:, None], member[None, :]), cm.counts)
    return ConfusionMatrix(counts=collapsed, class_names=tuple(clusters))


def cluster_f1(cm: ConfusionMatrix, taxonomy: AlloyTaxonomy) -> float:
    """Macro F1 after collapsing the matrix to taxonomy clusters."""
    return macro_f1(collapse_confusion(cm, taxonomy))


@dataclass(frozen=True, eq=False)
class UnambiguousReport:
    """Single-positive-score analysis of a one-vs-rest linear model."""

    n_total: int
    n_unambiguous: int
    n_correct_unambiguous: int

    @property
    def fraction_unambiguous(self) -> float:
        return self.n_unambiguous / self.n_total if self.n_total else 0.0

    @property
    def accuracy_on_unambiguous(self) -> float | None:
        if self.n_unambiguous == 0:
            return None
        return self.n_correct_unambiguous / self.n_unambiguous

    def to_json_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_unambiguous": self.n_unambiguous,
            "fraction_unambiguous": self.fraction_unambiguous,
            "accuracy_on_unambiguous": self.accuracy_on_unambiguous,
        }


def unambiguous_report(
    m: LinearModel, X: np.ndarray, y: Sequence[int] | np.ndarray
) -> UnambiguousReport:
    """Count spectra with exactly one strictly positive class score.

    Such spectra are "clearly assigned" to that single class; the report
    carries how many there are and how many of those assignments match y.
    """
    scores = decision_matrix(m, np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != scores.shape[0]:
        raise ValueError("X and y row counts differ")
    positive = scores > 0.0
    clear = positive.sum(axis=1) == 1
    assigned = np.argmax(positive, axis=1)
    correct = clear & (assigned == y)
    return UnambiguousReport(
        n_total=int(y.shape[0]),
        n_unambiguous=int(clear.sum()),
        n_correct_unambiguous=int(correct.sum()),
    )


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    confusion: ConfusionMatrix
    per_class_f1: np.ndarray
    macro_f1: float
    cluster_f1: float | None = None
    coverage: UnambiguousReport | None = None
    predict_seconds: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "confusion": self.confusion.to_json_dict(),
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "macro_f1": self.macro_f1,
            "cluster_f1": self.cluster_f1,
            "coverage": self.coverage.to_json_dict() if self.coverage else None,
            "predict_seconds": self.predict_seconds,
        }


def evaluate_predictions(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    class_names: Sequence[str],
    taxonomy: AlloyTaxonomy | None = None,
) -> EvaluationReport:
    """Bundle confusion, per-class/macro F1, and optional cluster F1."""
    cm = confusion_matrix(y_true, y_pred, len(class_names), class_names)
    return EvaluationReport(
        confusion=cm,
        per_class_f1=per_class_f1(cm),
        macro_f1=macro_f1(cm),
        cluster_f1=cluster_f1(cm, taxonomy) if taxonomy is not None else None,
    )


# --------------------------------------------------------------------------
# Pipelines (algorithm + scaler + hyperparameters)
# --------------------------------------------------------------------------

ALGORITHMS = ("linear-svm", "logreg", "knn", "mlp")


@dataclass(frozen=True)
class PipelineSpec:
    """What to train in one experiment cell."""

    algorithm: str
    scaler_kind: ScalerKind = ScalerKind.NoScaler
    hyperparams: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}"
            )

    def train(self, train: LabeledDataset, seed: int) -> Model:
        hp = dict(self.hyperparams)
        if self.algorithm == "linear-svm":
            return train_linear_svm(
                train,
                C=float(hp.get("C", 1.0)),
                loss=LossKind(hp.get("loss", LossKind.SquaredHinge)),
                scaler_kind=self.scaler_kind,
                seed=seed,
            )
        if self.algorithm == "logreg":
            return train_logreg(
                train,
                lam=float(hp.get("lam", 1.0)),
                scaler_kind=self.scaler_kind,
                seed=seed,
            )
        if self.algorithm == "knn":
            return train_knn(train, k=int(hp.get("k", 5)), scaler_kind=self.scaler_kind)
        return train_mlp(
            train,
            hidden_units=int(hp.get("hidden_units", 100)),
            epochs=int(hp.get("epochs", 200)),
            learning_rate=float(hp.get("learning_rate", 0.01)),
            batch_size=int(hp.get("batch_size", 32)),
            seed=seed,
            scaler_kind=self.scaler_kind,
        )

    def describe(self) -> dict:
        hp = {
            k: (v.value if isinstance(v, LossKind) else v)
            for k, v in sorted(self.hyperparams.items())
        }
        return {
            "algorithm": self.algorithm,
            "scaler": self.scaler_kind.value,
            "hyperparams": hp,
        }


def _parallel_map(fn: Callable, n_items: int, jobs: int) -> list:
    """Index-ordered map; identical output for any worker count."""
    if jobs <= 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    results = [None] * n_items
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        for i, res in zip(range(n_items), ex.map(fn, range(n_items))):
            results[i] = res
    return results


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CVReport:
    fold_f1: tuple[float, ...]
    mean_f1: float
    std_f1: float
    folds: str
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "fold_f1": list(self.fold_f1),
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
            "folds": self.folds,
            "seed": self.seed,
        }


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Assign each row a fold in 0..k-1, stratified per class.

    Each class's row indices are shuffled with the "cv-shuffle" stream and
    dealt round-robin, so per-class fold counts differ by at most one.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = stream(seed, "cv-shuffle")
    fold_of = np.full(labels.shape[0], -1, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise TooFewRows(
                f"class index {int(c)} has {idx.size} rows, needs >= {k} for {k}-fold CV"
            )
        perm = rng.permutation(idx.size)
        fold_of[idx[perm]] = np.arange(idx.size) % k
    return fold_of


def kfold_cv(
    ds: LabeledDataset,
    k: int,
    pipeline: PipelineSpec,
    seed: int,
    fold_assignment: np.ndarray | None = None,
    jobs: int = 1,
) -> CVReport:
    """Stratified k-fold cross-validation scored by macro F1 per fold."""
    folds = stratified_folds(ds.labels, k, seed) if fold_assignment is None else fold_assignment

    def run_fold(i: int) -> float:
        train = ds.take(np.flatnonzero(folds != i))
        test = ds.take(np.flatnonzero(folds == i))
        model = pipeline.train(train, seed=derive_seed(seed, f"cv-fold{i}-train"))
        report = evaluate_predictions(
            test.labels, predict(model, test.rows), ds.class_names
        )
        return report.macro_f1

    fold_f1 = _parallel_map(run_fold, k, jobs)
    mean = float(np.mean(fold_f1))
    std = float(np.std(fold_f1))
    return CVReport(
        fold_f1=tuple(float(v) for v in fold_f1),
        mean_f1=mean,
        std_f1=std,
        folds=f"stratified round-robin, k={k}, per-class shuffle stream 'cv-shuffle'",
        seed=seed,
    )


# --------------------------------------------------------------------------
# Experiment 1: scaler x algorithm sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SweepReport:
    cells: tuple[tuple[str, str, CVReport], ...]  # (algorithm, scaler, report)
    seed: int

    def cell(self, algorithm: str, scaler: str) -> CVReport:
        for a, s, r in self.cells:
            if a == algorithm and s == scaler:
                return r
        raise KeyError((algorithm, scaler))

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cells": [
                {"algorithm": a, "scaler": s, **r.to_json_dict()}
                for a, s, r in self.cells
            ],
        }

    def to_table_text(self) -> str:
        scalers = sorted({s for _, s, _ in self.cells})
        algos = sorted({a for a, _, _ in self.cells})
        width = max(len(s) for s in scalers + algos) + 2
        head = "algorithm".ljust(12) + "".join(s.rjust(width) for s in scalers)
        lines = [head]
        for a in algos:
            row = a.ljust(12)
            for s in scalers:
                r = self.cell(a, s)
                row += f"{r.mean_f1:.4f}±{r.std_f1:.3f}".rjust(width)
            lines.append(row)
        return "\n".join(lines) + "\n"


def sweep(
    ds: LabeledDataset,
    algorithms: Sequence[PipelineSpec | str],
    scaler_kinds: Sequence[ScalerKind],
    k: int,
    seed: int,
    jobs: int = 1,
) -> SweepReport:
    """Cross-validate every (algorithm, scaler) cell on identical folds."""
    folds = stratified_folds(ds.labels, k, seed)
    specs: list[PipelineSpec] = []
    for algo in algorithms:
        base = algo if isinstance(algo, PipelineSpec) else PipelineSpec(algorithm=algo)
        for kind in scaler_kinds:
            specs.append(
                PipelineSpec(base.algorithm, kind, dict(base.hyperparams))
            )

    def run_cell(i: int) -> CVReport:
        return kfold_cv(ds, k, specs[i], seed, fold_assignment=folds, jobs=1)

    reports = _parallel_map(run_cell, len(specs), jobs)
    cells = tuple(
        (spec.algorithm, spec.scaler_kind.value, rep)
        for spec, rep in zip(specs, reports)
    )
    return SweepReport(cells=cells, seed=seed)


# --------------------------------------------------------------------------
# Experiment 2: learning curve on a sample-held-out split
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CurveReport:
    sizes: tuple[int, ...]
    f1: tuple[float, ...]
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "points": [{"size": s, "macro_f1": f} for s, f in zip(self.sizes, self.f1)],
        }


def learning_curve(
    train: LabeledDataset,
    test: LabeledDataset,
    sizes: Sequence[int],
    pipeline: PipelineSpec,
    seed: int,
    jobs: int = 1,
) -> CurveReport:
    """Macro F1 on a fixed test set for growing per-class training sizes.

    Subsamples nest (the size-s selection is a prefix of any larger one),
    so successive points differ only by added training rows.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError(f"sizes must be ascending, got {sizes}")

    def run_point(i: int) -> float:
        sub = subsample_per_class(train, sizes[i], seed)
        model = pipeline.train(sub, seed=derive_seed(seed, f"curve-size{sizes[i]}"))
        report = evaluate_predictions(
            test.labels, predict(model, test.rows), train.class_names
        )
        return report.macro_f1

    f1 = _parallel_map(run_point, len(sizes), jobs)
    return CurveReport(sizes=tuple(sizes), f1=tuple(float(v) for v in f1), seed=seed)


# --------------------------------------------------------------------------
# Experiment 3: grid search over loss and C
# --------------------------------------------------------------------------

GRID_LOSSES = (LossKind.Hinge, LossKind.SquaredHinge)
GRID_CS = (0.1, 1.0, 10.0, 100.0, 1000.0)

_LOSS_ORDER = {LossKind.Hinge: 0, LossKind.SquaredHinge: 1}


@dataclass(frozen=True, eq=False)
class GridCell:
    loss: LossKind
    C: float
    cv_mean_f1: float
    cv_std_f1: float
    test_f1: float

    def to_json_dict(self) -> dict:
        return {
            "loss": self.loss.value,
            "C": self.C,
            "cv_mean_f1": self.cv_mean_f1,
            "cv_std_f1": self.cv_std_f1,
            "test_f1": self.test_f1,
        }


@dataclass(frozen=True, eq=False)
class GridSearchReport:
    cells: tuple[GridCell, ...]
    chosen_loss: LossKind
    chosen_C: float
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cells": [c.to_json_dict() for c in self.cells],
            "chosen": {"loss": self.chosen_loss.value, "C": self.chosen_C},
        }


def choose_grid_cell(cells: Sequence[GridCell]) -> GridCell:
    """Best test F1; ties prefer smaller C, then the plain hinge."""
    return min(cells, key=lambda c: (-c.test_f1, c.C, _LOSS_ORDER[c.loss]))


def grid_search(
    train: LabeledDataset,
    test: LabeledDataset,
    losses: Sequence[LossKind] = GRID_LOSSES,
    Cs: Sequence[float] = GRID_CS,
    k: int = 10,
    scaler_kind: ScalerKind = ScalerKind.NoScaler,
    seed: int = 0,
    jobs: int = 1,
) -> GridSearchReport:
    """Score each (loss, C): k-fold CV mean on train plus held-out test F1."""
    folds = stratified_folds(train.labels, k, seed)
    grid = [(loss, float(C)) for loss in losses for C in Cs]

    def run_cell(i: int) -> GridCell:
        loss, C = grid[i]
        spec = PipelineSpec("linear-svm", scaler_kind, {"loss": loss, "C": C})
        cv = kfold_cv(train, k, spec, seed, fold_assignment=folds, jobs=1)
        model = spec.train(train, seed=derive_seed(seed, f"grid-{loss.value}-C{C}"))
        test_f1 = evaluate_predictions(
            test.labels, predict(model, test.rows), train.class_names
        ).macro_f1
        return GridCell(
            loss=loss, C=C, cv_mean_f1=cv.mean_f1, cv_std_f1=cv.std_f1, test_f1=test_f1
        )

    cells = tuple(_parallel_map(run_cell, len(grid), jobs))
    best = choose_grid_cell(cells)
    return GridSearchReport(
        cells=cells, chosen_loss=best.loss, chosen_C=best.C, seed=seed
    )


# --------------------------------------------------------------------------
# Timing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingEntry:
    name: str
    median_seconds: float
    repeats: int

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "median_seconds": self.median_seconds,
            "repeats": self.repeats,
        }


def timing_report(
    models: Sequence[tuple[str, Model]] | Sequence[Model],
    X: np.ndarray,
    repeats: int = 5,
) -> list[TimingEntry]:
    """Median wall-clock seconds to predict all rows of X, per model.

    Prediction is pinned to one compute thread when threadpoolctl is
    importable, for comparable numbers across models.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    named: list[tuple[str, Model]] = []
    for i, entry in enumerate(models):
        if isinstance(entry, tuple):
            named.append(entry)
        else:
            named.append((f"{type(entry).__name__}-{i}", entry))

    X = np.asarray(X, dtype=np.float64)
    entries = []
    for name, model in named:
        times = []
        for _ in range(repeats):
            if threadpool_limits is not None:
                with threadpool_limits(limits=1):
                    t0 = time.perf_counter()
                    predict(model, X)
                    times.append(time.perf_counter() - t0)
            else:
                t0 = time.perf_counter()
                predict(model, X)
                times.append(time.perf_counter() - t0)
        entries.append(
            TimingEntry(name=name, median_seconds=statistics.median(times), repeats=repeats)
        )
    return entries
