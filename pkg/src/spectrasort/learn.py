"""Seedable classifiers trained from scratch, plus model persistence.

The one-vs-rest linear SVM and the multinomial logistic regression share a
deterministic full-batch descent: step size eta0 / (1 + t / T0), zero
initialization, and a monotonicity guard that halves a step until the
objective does not increase.  Training therefore never depends on row
order, thread count, or hidden global state.

Model files are versioned, self-describing text with a trailing checksum;
numeric arrays are printed with 17 significant digits so that a loaded
model predicts bit-for-bit like the in-memory one.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    BadK,
    CorruptModel,
    DimensionMismatch,
    SingleClass,
    VersionUnsupported,
)
from .features import _STAT_KEYS, ScalerKind, ScalerParams, fit_scaler, transform
from .rng import stream
from .spectra_io import LabeledDataset, WavelengthGrid

# Descent schedule and stopping rule shared by the SVM and logreg solvers.
ETA0 = 0.1
T0 = 100.0
MAX_ITER = 2000
REL_TOL = 1e-6
PATIENCE = 10
_OBJ_SLACK = 1e-12
_MAX_HALVINGS = 60


class LossKind(Enum):
    Hinge = "hinge"
    SquaredHinge = "squared-hinge"


@dataclass(frozen=True)
class ClassSolverReport:
    iterations: int
    final_objective: float
    converged: bool


@dataclass(frozen=True)
class SolverReport:
    per_class: tuple[ClassSolverReport, ...]

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.per_class)

    def to_json_dict(self) -> dict:
        return {
            "per_class": [
                {
                    "iterations": r.iterations,
                    "final_objective": r.final_objective,
                    "converged": r.converged,
                }
                for r in self.per_class
            ]
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SolverReport":
        return cls(
            per_class=tuple(
                ClassSolverReport(
                    iterations=int(r["iterations"]),
                    final_objective=float(r["final_objective"]),
                    converged=bool(r["converged"]),
                )
                for r in d["per_class"]
            )
        )


@dataclass(frozen=True, eq=False)
class LinearModel:
    """One-vs-rest linear separators: score_c(x) = W[c] . scale(x) + b[c]."""

    W: np.ndarray
    b: np.ndarray
    C: float
    loss: LossKind
    class_names: tuple[str, ...]
    scaler: ScalerParams
    grid: WavelengthGrid
    solver_report: SolverReport

    def __post_init__(self) -> None:
        _freeze_linear(self)
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")


@dataclass(frozen=True, eq=False)
class LogRegModel:
    """Multinomial softmax classifier with L2 penalty strength lam."""

    W: np.ndarray
    b: np.ndarray
    lam: float
    class_names: tuple[str, ...]
    scaler: ScalerParams
    grid: WavelengthGrid
    solver_report: SolverReport

    def __post_init__(self) -> None:
        _freeze_linear(self)
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass(frozen=True, eq=False)
class KnnModel:
    """k-nearest-neighbor over the scaled training rows (odd k)."""

    train_rows: np.ndarray
    train_labels: np.ndarray
    k: int
    class_names: tuple[str, ...]
    scaler: ScalerParams
    grid: WavelengthGrid

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(np.asarray(self.train_rows, dtype=np.float64))
        labels = np.asarray(self.train_labels, dtype=np.int64).reshape(-1)
        if rows.shape[0] != labels.shape[0]:
            raise ValueError("train_rows and train_labels row counts differ")
        if not (1 <= self.k <= rows.shape[0]):
            raise BadK(f"k={self.k} outside 1..{rows.shape[0]}")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "train_rows", rows)
        object.__setattr__(self, "train_labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))


@dataclass(frozen=True, eq=False)
class MlpModel:
    """One-hidden-layer rectifier network with softmax output."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    class_names: tuple[str, ...]
    scaler: ScalerParams
    grid: WavelengthGrid
    training_report: dict

    def __post_init__(self) -> None:
        W1 = np.asarray(self.W1, dtype=np.float64)
        b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        W2 = np.asarray(self.W2, dtype=np.float64)
        b2 = np.asarray(self.b2, dtype=np.float64).reshape(-1)
        if W1.shape[0] != b1.shape[0] or W2.shape != (b2.shape[0], W1.shape[0]):
            raise ValueError(
                f"layer shapes do not chain: W1 {W1.shape}, W2 {W2.shape}"
            )
        if b2.shape[0] != len(self.class_names):
            raise ValueError("output width must equal the number of classes")
        for a in (W1, b1, W2, b2):
            a.setflags(write=False)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "W2", W2)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "class_names", tuple(self.class_names))


Model = LinearModel | LogRegModel | KnnModel | MlpModel


def _freeze_linear(m) -> None:
    W = np.asarray(m.W, dtype=np.float64)
    b = np.asarray(m.b, dtype=np.float64).reshape(-1)
    names = tuple(m.class_names)
    if W.ndim != 2 or W.shape[0] != len(names) or b.shape[0] != len(names):
        raise ValueError(
            f"W must be ({len(names)}, d) and b ({len(names)},), "
            f"got {W.shape} and {b.shape}"
        )
    W.setflags(write=False)
    b.setflags(write=False)
    object.__setattr__(m, "W", W)
    object.__setattr__(m, "b", b)
    object.__setattr__(m, "class_names", names)


# --------------------------------------------------------------------------
# Objectives and gradients (canonical definitions, also used by the tests'
# finite-difference checks).
# --------------------------------------------------------------------------

def svm_objective_grad(
    W: np.ndarray,
    b: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    C: float,
    loss: LossKind,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class objective 0.5||w||^2 + C * sum_i l(1 - y_i (w.x_i + b)).

    ``Y`` is an (n, k) matrix of +-1 targets, one column per class.  Returns
    (objective per class, dW, db); for the hinge the gradient is a
    subgradient (0 at the kink).
    """
    S = X @ W.T + b
    T = 1.0 - Y * S
    pos = np.maximum(T, 0.0)
    if loss is LossKind.Hinge:
        obj = 0.5 * np.einsum("ij,ij->i", W, W) + C * pos.sum(axis=0)
        coef = np.where(T > 0.0, -C * Y, 0.0)
    else:
        obj = 0.5 * np.einsum("ij,ij->i", W, W) + C * np.einsum("ij,ij->j", pos, pos)
        coef = -2.0 * C * Y * pos
    dW = W + coef.T @ X
    db = coef.sum(axis=0)
    return obj, dW, db


def _log_softmax(S: np.ndarray) -> np.ndarray:
    m = S.max(axis=1, keepdims=True)
    return S - m - np.log(np.exp(S - m).sum(axis=1, keepdims=True))


def logreg_objective_grad(
    W: np.ndarray,
    b: np.ndarray,
    X: np.ndarray,
    labels: np.ndarray,
    lam: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed softmax cross-entropy plus (lam/2)||W||^2 (bias unpenalized)."""
    S = X @ W.T + b
    logp = _log_softmax(S)
    n = X.shape[0]
    obj = -logp[np.arange(n), labels].sum() + 0.5 * lam * float((W * W).sum())
    P = np.exp(logp)
    P[np.arange(n), labels] -= 1.0
    dW = P.T @ X + lam * W
    db = P.sum(axis=0)
    return float(obj), dW, db


def mlp_objective_grad(
    W1: np.ndarray,
    b1: np.ndarray,
    W2: np.ndarray,
    b2: np.ndarray,
    X: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy of the rectifier network, with gradients."""
    n = X.shape[0]
    H = np.maximum(X @ W1.T + b1, 0.0)
    S = H @ W2.T + b2
    logp = _log_softmax(S)
    loss = -logp[np.arange(n), labels].mean()
    P = np.exp(logp)
    P[np.arange(n), labels] -= 1.0
    P /= n
    dW2 = P.T @ H
    db2 = P.sum(axis=0)
    dH = P @ W2
    dH[H <= 0.0] = 0.0
    dW1 = dH.T @ X
    db1 = dH.sum(axis=0)
    return float(loss), dW1, db1, dW2, db2


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------

def _svm_loss_term(S: np.ndarray, Y: np.ndarray, C: float, loss: LossKind) -> np.ndarray:
    pos = np.maximum(1.0 - Y * S, 0.0)
    if loss is LossKind.Hinge:
        return C * pos.sum(axis=0)
    return C * np.einsum("ij,ij->j", pos, pos)


def _solve_ovr_svm(
    X: np.ndarray, Y: np.ndarray, C: float, loss: LossKind
) -> tuple[np.ndarray, np.ndarray, SolverReport]:
    """Monotone subgradient descent on all one-vs-rest problems at once.

    Classes are advanced jointly for BLAS efficiency but evolve
    independently: each keeps its own step halving, convergence streak, and
    stopping point, so results match training them one at a time.
    """
    n, d = X.shape
    k = Y.shape[1]
    W = np.zeros((k, d))
    b = np.zeros(k)
    S = np.zeros((n, k))
    obj = 0.5 * np.einsum("ij,ij->i", W, W) + _svm_loss_term(S, Y, C, loss)

    active = np.ones(k, dtype=bool)
    streak = np.zeros(k, dtype=np.int64)
    iters = np.zeros(k, dtype=np.int64)
    converged = np.zeros(k, dtype=bool)

    for t in range(MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        eta = ETA0 / (1.0 + t / T0)
        Sa, Ya, Wa = S[:, idx], Y[:, idx], W[idx]
        pos = np.maximum(1.0 - Ya * Sa, 0.0)
        if loss is LossKind.Hinge:
            coef = np.where(pos > 0.0, -C * Ya, 0.0)
        else:
            coef = -2.0 * C * Ya * pos
        Gw = Wa + coef.T @ X
        Gb = coef.sum(axis=0)
        D = X @ Gw.T + Gb

        # ||W - eta*G||^2 from three dot products, so halving retries stay cheap.
        ww = np.einsum("ij,ij->i", Wa, Wa)
        wg = np.einsum("ij,ij->i", Wa, Gw)
        gg = np.einsum("ij,ij->i", Gw, Gw)

        step = np.full(idx.size, eta)
        new_obj = obj[idx].copy()
        accepted = np.zeros(idx.size, dtype=bool)
        pending = np.arange(idx.size)
        for _ in range(_MAX_HALVINGS):
            sp = step[pending]
            reg = 0.5 * (ww[pending] - 2.0 * sp * wg[pending] + sp * sp * gg[pending])
            trial = reg + _svm_loss_term(
                Sa[:, pending] - sp * D[:, pending], Ya[:, pending], C, loss
            )
            ok = trial <= obj[idx[pending]] + _OBJ_SLACK
            new_obj[pending[ok]] = trial[ok]
            accepted[pending[ok]] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            step[pending] *= 0.5
        step[~accepted] = 0.0  # no descent step found; stand still

        W[idx] = Wa - step[:, None] * Gw
        b[idx] -= step * Gb
        S[:, idx] = Sa - step * D
        old = obj[idx]
        obj[idx] = np.where(accepted, new_obj, old)
        rel_dec = (old - obj[idx]) / np.maximum(np.abs(old), np.finfo(float).tiny)
        small = rel_dec < REL_TOL
        streak[idx] = np.where(small, streak[idx] + 1, 0)
        iters[idx] = t + 1
        done = streak[idx] >= PATIENCE
        converged[idx[done]] = True
        active[idx[done]] = False

    report = SolverReport(
        per_class=tuple(
            ClassSolverReport(
                iterations=int(iters[c]),
                final_objective=float(obj[c]),
                converged=bool(converged[c]),
            )
            for c in range(k)
        )
    )
    return W, b, report


def _require_multiclass(train: LabeledDataset) -> None:
    if np.unique(train.labels).size < 2:
        raise SingleClass("training requires at least two distinct classes present")


def train_linear_svm(
    train: LabeledDataset,
    C: float = 1.0,
    loss: LossKind = LossKind.SquaredHinge,
    scaler_kind: ScalerKind = ScalerKind.NoScaler,
    seed: int = 0,
) -> LinearModel:
    """Fit one-vs-rest linear SVMs (hinge or squared hinge, parameter C).

    The scaler is fitted on ``train`` only and embedded into the model; the
    solver is full-batch and zero-initialized, so the result is
    deterministic and independent of row order (``seed`` is accepted for
    interface symmetry but never consumed).
    """
    del seed
    _require_multiclass(train)
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    scaler = fit_scaler(scaler_kind, train)
    X = transform(scaler, train.rows)
    k = train.n_classes
    Y = np.where(train.labels[:, None] == np.arange(k)[None, :], 1.0, -1.0)
    W, b, report = _solve_ovr_svm(X, Y, C, loss)
    return LinearModel(
        W=W, b=b, C=float(C), loss=loss, class_names=train.class_names,
        scaler=scaler, grid=train.grid, solver_report=report,
    )


def train_logreg(
    train: LabeledDataset,
    lam: float = 1.0,
    scaler_kind: ScalerKind = ScalerKind.NoScaler,
    seed: int = 0,
) -> LogRegModel:
    """Fit multinomial logistic regression by full-batch descent."""
    del seed
    _require_multiclass(train)
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    scaler = fit_scaler(scaler_kind, train)
    X = transform(scaler, train.rows)
    n, k = X.shape[0], train.n_classes
    labels = train.labels
    W = np.zeros((k, X.shape[1]))
    b = np.zeros(k)
    S = np.zeros((n, k))

    def objective(S_: np.ndarray, w_sq: float) -> float:
        logp = _log_softmax(S_)
        return float(-logp[np.arange(n), labels].sum() + 0.5 * lam * w_sq)

    obj = objective(S, 0.0)
    streak = 0
    iterations = 0
    converged = False
    for t in range(MAX_ITER):
        logp = _log_softmax(S)
        P = np.exp(logp)
        P[np.arange(n), labels] -= 1.0
        Gw = P.T @ X + lam * W
        Gb = P.sum(axis=0)
        D = X @ Gw.T + Gb
        ww = float((W * W).sum())
        wg = float((W * Gw).sum())
        gg = float((Gw * Gw).sum())

        step = ETA0 / (1.0 + t / T0)
        new_obj = obj
        accepted = False
        for _ in range(_MAX_HALVINGS):
            trial = objective(S - step * D, ww - 2.0 * step * wg + step * step * gg)
            if trial <= obj + _OBJ_SLACK:
                accepted = True
                new_obj = trial
                break
            step *= 0.5
        if accepted:
            W -= step * Gw
            b -= step * Gb
            S -= step * D
        rel_dec = (obj - new_obj) / max(abs(obj), np.finfo(float).tiny)
        obj = new_obj
        streak = streak + 1 if rel_dec < REL_TOL else 0
        iterations = t + 1
        if streak >= PATIENCE:
            converged = True
            break

    report = SolverReport(
        per_class=(ClassSolverReport(iterations, float(obj), converged),)
    )
    return LogRegModel(
        W=W, b=b, lam=float(lam), class_names=train.class_names,
        scaler=scaler, grid=train.grid, solver_report=report,
    )


def train_knn(
    train: LabeledDataset,
    k: int = 5,
    scaler_kind: ScalerKind = ScalerKind.NoScaler,
) -> KnnModel:
    """Store the scaled training set for k-NN prediction; k must be odd."""
    if k < 1 or k > train.n_rows:
        raise BadK(f"k={k} outside 1..{train.n_rows}")
    if k % 2 == 0:
        raise BadK(f"k must be odd to limit vote ties, got {k}")
    scaler = fit_scaler(scaler_kind, train)
    return KnnModel(
        train_rows=transform(scaler, train.rows),
        train_labels=train.labels,
        k=k,
        class_names=train.class_names,
        scaler=scaler,
        grid=train.grid,
    )


def train_mlp(
    train: LabeledDataset,
    hidden_units: int = 100,
    epochs: int = 200,
    learning_rate: float = 0.01,
    batch_size: int = 32,
    seed: int = 0,
    scaler_kind: ScalerKind = ScalerKind.NoScaler,
) -> MlpModel:
    """Train the one-hidden-layer network with seeded mini-batch descent.

    Weights start symmetric-uniform scaled by 1/sqrt(fan_in) from the
    "mlp-init" stream; epoch shuffles come from "mlp-shuffle".  With one
    compute thread the result is bit-reproducible for a fixed seed.
    """
    _require_multiclass(train)
    if hidden_units < 1:
        raise ValueError(f"hidden_units must be >= 1, got {hidden_units}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    scaler = fit_scaler(scaler_kind, train)
    X = transform(scaler, train.rows)
    labels = train.labels
    n, d = X.shape
    k = train.n_classes

    init_rng = stream(seed, "mlp-init")
    W1 = init_rng.uniform(-1.0, 1.0, size=(hidden_units, d)) / np.sqrt(d)
    b1 = np.zeros(hidden_units)
    W2 = init_rng.uniform(-1.0, 1.0, size=(k, hidden_units)) / np.sqrt(hidden_units)
    b2 = np.zeros(k)

    initial_loss = mlp_objective_grad(W1, b1, W2, b2, X, labels)[0]
    shuffle_rng = stream(seed, "mlp-shuffle")
    for _ in range(epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = perm[start:start + batch_size]
            _, dW1, db1, dW2, db2 = mlp_objective_grad(
                W1, b1, W2, b2, X[sel], labels[sel]
            )
            W1 -= learning_rate * dW1
            b1 -= learning_rate * db1
            W2 -= learning_rate * dW2
            b2 -= learning_rate * db2
    final_loss = mlp_objective_grad(W1, b1, W2, b2, X, labels)[0]

    return MlpModel(
        W1=W1, b1=b1, W2=W2, b2=b2, class_names=train.class_names,
        scaler=scaler, grid=train.grid,
        training_report={
            "epochs": epochs,
            "initial_loss": initial_loss,
            "final_loss": final_loss,
        },
    )


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------

def _check_width(m: Model, X: np.ndarray) -> None:
    if X.shape[-1] != m.grid.n_points:
        raise DimensionMismatch(
            f"input has {X.shape[-1]} features, model grid has {m.grid.n_points}"
        )


def decision_values(m: LinearModel | LogRegModel, x: np.ndarray) -> np.ndarray:
    """Per-class scores W . scale(x) + b for one spectrum, in class order."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single spectrum vector, got shape {x.shape}")
    _check_width(m, x)
    return decision_matrix(m, x[None, :])[0]


def decision_matrix(m: LinearModel | LogRegModel, X: np.ndarray) -> np.ndarray:
    """Per-class score matrix (n, n_classes) for a batch of spectra."""
    X = np.asarray(X, dtype=np.float64)
    _check_width(m, X)
    return transform(m.scaler, X) @ m.W.T + m.b


def _mlp_logits(m: MlpModel, X: np.ndarray) -> np.ndarray:
    Xs = transform(m.scaler, X)
    H = np.maximum(Xs @ m.W1.T + m.b1, 0.0)
    return H @ m.W2.T + m.b2


def _knn_predict(m: KnnModel, X: np.ndarray) -> np.ndarray:
    Xs = transform(m.scaler, X)
    R = m.train_rows
    r_sq = np.einsum("ij,ij->i", R, R)
    k = m.k
    n_classes = len(m.class_names)
    out = np.empty(Xs.shape[0], dtype=np.int64)
    chunk = max(1, int(2**24 // max(R.shape[0], 1)))
    for lo in range(0, Xs.shape[0], chunk):
        Q = Xs[lo:lo + chunk]
        d_sq = np.maximum(
            np.einsum("ij,ij->i", Q, Q)[:, None] - 2.0 * (Q @ R.T) + r_sq, 0.0
        )
        for i in range(Q.shape[0]):
            # Sort by (distance, label) so equidistant neighbors resolve the
            # same way under any permutation of the stored rows.
            order = np.lexsort((m.train_labels, d_sq[i]))[:k]
            neigh_labels = m.train_labels[order]
            votes = np.bincount(neigh_labels, minlength=n_classes)
            best = votes.max()
            tied = np.flatnonzero(votes == best)
            if tied.size > 1:
                dists = np.sqrt(d_sq[i][order])
                sums = np.asarray(
                    [dists[neigh_labels == c].sum() for c in tied]
                )
                tied = tied[np.flatnonzero(sums == sums.min())]
            out[lo + i] = tied[0]
    return out


def predict(m: Model, X: np.ndarray) -> np.ndarray:
    """Predicted class indices for a batch of spectra (rows of X).

    Linear models and the MLP take the argmax score with ties resolved to
    the lowest class index; k-NN majority-votes its k nearest rows, breaking
    vote ties by smallest summed distance, then lowest class index.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected an (n, d) matrix, got shape {X.shape}")
    _check_width(m, X)
    if isinstance(m, (LinearModel, LogRegModel)):
        return np.argmax(decision_matrix(m, X), axis=1).astype(np.int64)
    if isinstance(m, MlpModel):
        return np.argmax(_mlp_logits(m, X), axis=1).astype(np.int64)
    if isinstance(m, KnnModel):
        return _knn_predict(m, X)
    raise TypeError(f"unsupported model type {type(m).__name__}")


def predict_proba(m: LogRegModel | MlpModel, X: np.ndarray) -> np.ndarray:
    """Softmax class probabilities (logreg and MLP only)."""
    X = np.asarray(X, dtype=np.float64)
    _check_width(m, X)
    if isinstance(m, LogRegModel):
        logits = decision_matrix(m, X)
    elif isinstance(m, MlpModel):
        logits = _mlp_logits(m, X)
    else:
        raise TypeError(f"{type(m).__name__} has no probability output")
    return np.exp(_log_softmax(logits))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

_MAGIC = "spectrasort-model"
_VERSION = 1

_KIND_TAGS = {
    LinearModel: "linear-svm",
    LogRegModel: "logreg",
    KnnModel: "knn",
    MlpModel: "mlp",
}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _emit_array(out: list[str], name: str, arr: np.ndarray) -> None:
    a = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    out.append(f"array {name} {a.shape[0]} {a.shape[1]}")
    for row in a:
        out.append(" ".join(_fmt(v) for v in row))


def _emit_scaler(out: list[str], p: ScalerParams) -> None:
    out.append(f"scaler {p.kind.value}")
    for key in sorted(p.stats):
        vals = p.stats[key]
        out.append(f"scaler-stat {key} {vals.shape[0]} " + " ".join(_fmt(v) for v in vals))


def save_model(m: Model, destination) -> None:
    """Serialize a trained model to the versioned text format."""
    kind = _KIND_TAGS.get(type(m))
    if kind is None:
        raise TypeError(f"unsupported model type {type(m).__name__}")
    out: list[str] = [f"{_MAGIC} {_VERSION}", f"kind {kind}"]
    out.append("classes " + json.dumps(list(m.class_names)))
    out.append(
        f"grid {_fmt(m.grid.start_nm)} {_fmt(m.grid.end_nm)} {m.grid.n_points}"
    )
    _emit_scaler(out, m.scaler)
    if isinstance(m, LinearModel):
        out.append(f"scalar C {_fmt(m.C)}")
        out.append(f"field loss {json.dumps(m.loss.value)}")
        out.append("json solver_report " + json.dumps(m.solver_report.to_json_dict()))
        _emit_array(out, "W", m.W)
        _emit_array(out, "b", m.b)
    elif isinstance(m, LogRegModel):
        out.append(f"scalar lam {_fmt(m.lam)}")
        out.append("json solver_report " + json.dumps(m.solver_report.to_json_dict()))
        _emit_array(out, "W", m.W)
        _emit_array(out, "b", m.b)
    elif isinstance(m, KnnModel):
        out.append(f"int k {m.k}")
        out.append(
            f"intarray train_labels {m.train_labels.shape[0]} "
            + " ".join(str(int(v)) for v in m.train_labels)
        )
        _emit_array(out, "train_rows", m.train_rows)
    else:
        out.append("json training_report " + json.dumps(m.training_report, sort_keys=True))
        for name in ("W1", "b1", "W2", "b2"):
            _emit_array(out, name, getattr(m, name))

    payload = "\n".join(out) + "\n"
    checksum = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    text = payload + f"checksum {checksum}\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


class _Reader:
    def __init__(self, lines: list[str]):
        self.lines = lines
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise CorruptModel("model file ended unexpectedly")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, prefix: str) -> str:
        line = self.next()
        if not line.startswith(prefix + " "):
            raise CorruptModel(f"expected {prefix!r} line, found {line[:40]!r}")
        return line[len(prefix) + 1:]


def _read_array(r: _Reader, expected_name: str) -> np.ndarray:
    head = r.expect("array").split()
    if len(head) != 3 or head[0] != expected_name:
        raise CorruptModel(f"expected array {expected_name!r}, found {head}")
    rows, cols = int(head[1]), int(head[2])
    data = np.empty((rows, cols), dtype=np.float64)
    for i in range(rows):
        vals = r.next().split()
        if len(vals) != cols:
            raise CorruptModel(f"array {expected_name!r} row {i} has {len(vals)} values")
        data[i] = [float(v) for v in vals]
    return data


def _read_scaler(r: _Reader) -> ScalerParams:
    kind_value = r.expect("scaler")
    try:
        kind = ScalerKind(kind_value)
    except ValueError as exc:
        raise CorruptModel(f"unknown scaler kind {kind_value!r}") from exc
    stats = {}
    for key in sorted(_STAT_KEYS[kind]):
        parts = r.expect("scaler-stat").split()
        if parts[0] != key or int(parts[1]) != len(parts) - 2:
            raise CorruptModel(f"malformed scaler-stat line for {key!r}")
        stats[key] = np.asarray([float(v) for v in parts[2:]])
    return ScalerParams(kind=kind, stats=stats)


def load_model(source) -> Model:
    """Load a model file, verifying version and checksum."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8", newline="") as f:
            text = f.read()

    head, sep, tail = text.rpartition("\nchecksum ")
    if not sep or not tail.strip():
        raise CorruptModel("missing checksum line")
    payload = head + "\n"
    if hashlib.sha256(payload.encode("utf-8")).hexdigest() != tail.strip():
        raise CorruptModel("checksum mismatch")

    r = _Reader(payload.splitlines())
    magic = r.next().split()
    if len(magic) != 2 or magic[0] != _MAGIC:
        raise CorruptModel(f"not a model file (magic {magic!r})")
    if int(magic[1]) != _VERSION:
        raise VersionUnsupported(f"model format version {magic[1]} not supported")
    kind = r.expect("kind")
    class_names = tuple(json.loads(r.expect("classes")))
    g = r.expect("grid").split()
    grid = WavelengthGrid(float(g[0]), float(g[1]), int(g[2]))
    scaler = _read_scaler(r)

    if kind == "linear-svm":
        C = float(r.expect("scalar C"))
        loss = LossKind(json.loads(r.expect("field loss")))
        report = SolverReport.from_json_dict(json.loads(r.expect("json solver_report")))
        W = _read_array(r, "W")
        b = _read_array(r, "b")[0]
        return LinearModel(W=W, b=b, C=C, loss=loss, class_names=class_names,
                           scaler=scaler, grid=grid, solver_report=report)
    if kind == "logreg":
        lam = float(r.expect("scalar lam"))
        report = SolverReport.from_json_dict(json.loads(r.expect("json solver_report")))
        W = _read_array(r, "W")
        b = _read_array(r, "b")[0]
        return LogRegModel(W=W, b=b, lam=lam, class_names=class_names,
                           scaler=scaler, grid=grid, solver_report=report)
    if kind == "knn":
        k = int(r.expect("int k"))
        parts = r.expect("intarray train_labels").split()
        labels = np.asarray([int(v) for v in parts[1:]], dtype=np.int64)
        if len(labels) != int(parts[0]):
            raise CorruptModel("train_labels length mismatch")
        rows = _read_array(r, "train_rows")
        return KnnModel(train_rows=rows, train_labels=labels, k=k,
                        class_names=class_names, scaler=scaler, grid=grid)
    if kind == "mlp":
        training_report = json.loads(r.expect("json training_report"))
        W1 = _read_array(r, "W1")
        b1 = _read_array(r, "b1")[0]
        W2 = _read_array(r, "W2")
        b2 = _read_array(r, "b2")[0]
        return MlpModel(W1=W1, b1=b1, W2=W2, b2=b2, class_names=class_names,
                        scaler=scaler, grid=grid, training_report=training_report)
    raise CorruptModel(f"unknown model kind {kind!r}")
