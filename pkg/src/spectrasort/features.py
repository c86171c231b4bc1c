"""Per-feature scalers with fit-on-train / transform-anywhere semantics.

Five scaler kinds plus a pass-through.  Statistics are always computed from
the training split only; spectra contain many always-dark pixels, so every
zero-spread column maps to 0 instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, EmptyDataset


class ScalerKind(Enum):
    Standard = "standard"
    MinMax = "minmax"
    MaxAbs = "maxabs"
    Robust = "robust"
    Normalizer = "normalizer"
    NoScaler = "none"


#: Statistic names stored per kind.
_STAT_KEYS: dict[ScalerKind, tuple[str, ...]] = {
    ScalerKind.Standard: ("mean", "std"),
    ScalerKind.MinMax: ("min", "max"),
    ScalerKind.MaxAbs: ("max_abs",),
    ScalerKind.Robust: ("median", "iqr"),
    ScalerKind.Normalizer: (),
    ScalerKind.NoScaler: (),
}


@dataclass(frozen=True, eq=False)
class ScalerParams:
    """Fitted statistics for one scaler kind.

    ``stats`` holds one vector per statistic named in ``_STAT_KEYS``;
    Normalizer and NoScaler carry none and accept any feature count.
    """

    kind: ScalerKind
    stats: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = _STAT_KEYS[self.kind]
        if tuple(sorted(self.stats)) != tuple(sorted(expected)):
            raise ValueError(
                f"{self.kind.value} scaler needs stats {expected}, got {tuple(self.stats)}"
            )
        frozen = {}
        d = None
        for key in expected:
            arr = np.asarray(self.stats[key], dtype=np.float64).reshape(-1)
            if d is None:
                d = arr.shape[0]
            elif arr.shape[0] != d:
                raise ValueError("statistic vectors must share one length")
            arr.setflags(write=False)
            frozen[key] = arr
        for key in ("std", "iqr", "max_abs"):
            if key in frozen and np.any(frozen[key] < 0):
                raise ValueError(f"{key} must be non-negative")
        if "min" in frozen and np.any(frozen["max"] - frozen["min"] < 0):
            raise ValueError("max must be >= min")
        object.__setattr__(self, "stats", frozen)

    @property
    def n_features(self) -> int | None:
        """Feature count the scaler was fitted on; None if kind needs none."""
        keys = _STAT_KEYS[self.kind]
        return int(self.stats[keys[0]].shape[0]) if keys else None


def fit_scaler(kind: ScalerKind, train) -> ScalerParams:
    """Fit per-column statistics on the training data.

    ``train`` may be a LabeledDataset or a plain (n, d) matrix.  Standard
    uses the arithmetic mean and the population (1/n) standard deviation;
    Robust uses the median and the q75 - q25 range with linear-interpolation
    quantiles.
    """
    X = np.asarray(getattr(train, "rows", train), dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    n = X.shape[0]
    if n < 1:
        raise EmptyDataset("cannot fit a scaler on an empty dataset")
    if kind is ScalerKind.Standard and n < 2:
        raise EmptyDataset("Standard scaler needs at least 2 rows for a spread")

    if kind is ScalerKind.Standard:
        stats = {"mean": X.mean(axis=0), "std": X.std(axis=0)}
    elif kind is ScalerKind.MinMax:
        stats = {"min": X.min(axis=0), "max": X.max(axis=0)}
    elif kind is ScalerKind.MaxAbs:
        stats = {"max_abs": np.abs(X).max(axis=0)}
    elif kind is ScalerKind.Robust:
        q25, q75 = np.quantile(X, [0.25, 0.75], axis=0, method="linear")
        stats = {"median": np.median(X, axis=0), "iqr": q75 - q25}
    else:
        stats = {}
    return ScalerParams(kind=kind, stats=stats)


def _guarded_divide(numer: np.ndarray, scale: np.ndarray) -> np.ndarray:
    zero = scale == 0.0
    out = numer / np.where(zero, 1.0, scale)
    if np.any(zero):
        out[:, zero] = 0.0
    return out


def transform(p: ScalerParams, X: np.ndarray) -> np.ndarray:
    """Apply fitted scaling to an (n, d) matrix; returns a new matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    if p.n_features is not None and X.shape[1] != p.n_features:
        raise DimensionMismatch(
            f"matrix has {X.shape[1]} columns, scaler was fitted on {p.n_features}"
        )

    if p.kind is ScalerKind.Standard:
        return _guarded_divide(X - p.stats["mean"], p.stats["std"])
    if p.kind is ScalerKind.MinMax:
        return _guarded_divide(X - p.stats["min"], p.stats["max"] - p.stats["min"])
    if p.kind is ScalerKind.MaxAbs:
        return _guarded_divide(X, p.stats["max_abs"])
    if p.kind is ScalerKind.Robust:
        return _guarded_divide(X - p.stats["median"], p.stats["iqr"])
    if p.kind is ScalerKind.Normalizer:
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        return X / np.where(norms == 0.0, 1.0, norms)[:, None]
    return X.copy()
