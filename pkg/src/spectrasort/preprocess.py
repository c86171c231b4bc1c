"""Quality gating, labeling, dataset assembly/merging, and splits.

The gate applies three rejection rules to each spectrum, in a fixed
priority order: saturation (any intensity at the detector ceiling), low
signal (everything below a floor), and no peak (nothing above a minimum
peak height).  Only spectra passing all three enter a dataset.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ClassNameMismatch,
    InsufficientRows,
    LabelOutOfRange,
    MixedGrids,
    UnknownSampleId,
)
from .rng import stream
from .spectra_io import LabeledDataset, Spectrum, WavelengthGrid

__all__ = [
    "GateConfig",
    "GateReason",
    "GateVerdict",
    "GateReport",
    "LabeledDataset",
    "AlloyTaxonomy",
    "quality_gate",
    "assemble",
    "merge",
    "split_by_sample",
    "subsample_per_class",
]


class GateReason(Enum):
    LowSignal = "LowSignal"
    NoPeak = "NoPeak"
    Saturated = "Saturated"
    Accepted = "Accepted"


@dataclass(frozen=True)
class GateConfig:
    """Thresholds for the three-rule quality gate."""

    low_all_threshold: float = 0.1
    peak_threshold: float = 0.2
    saturation_value: float = 1.0
    saturation_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if not (0.0 < self.low_all_threshold < self.peak_threshold < self.saturation_value):
            raise ValueError(
                "thresholds must satisfy 0 < low_all_threshold < peak_threshold "
                f"< saturation_value, got ({self.low_all_threshold}, "
                f"{self.peak_threshold}, {self.saturation_value})"
            )


@dataclass(frozen=True)
class GateVerdict:
    reason: GateReason

    @property
    def accepted(self) -> bool:
        return self.reason is GateReason.Accepted


@dataclass(frozen=True)
class GateReport:
    """Counts per gate reason for a batch of spectra."""

    counts: Mapping[str, int]

    @classmethod
    def empty(cls) -> "GateReport":
        return cls(counts={r.value: 0 for r in GateReason})

    def __add__(self, other: "GateReport") -> "GateReport":
        return GateReport(
            counts={
                r.value: self.counts.get(r.value, 0) + other.counts.get(r.value, 0)
                for r in GateReason
            }
        )

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def accepted(self) -> int:
        return self.counts.get(GateReason.Accepted.value, 0)

    @property
    def accept_rate(self) -> float:
        return self.accepted / self.total if self.total else 0.0

    def to_json_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "total": self.total,
            "accepted": self.accepted,
            "accept_rate": self.accept_rate,
        }


def quality_gate(s: Spectrum, cfg: GateConfig = GateConfig()) -> GateVerdict:
    """Classify one spectrum as Saturated, LowSignal, NoPeak, or Accepted.

    Saturation dominates (instrument fault), then low signal, then missing
    peak.  "Smaller than" and "bigger than" are strict comparisons.
    """
    peak = float(s.intensities.max())
    if peak >= cfg.saturation_value - cfg.saturation_tolerance:
        reason = GateReason.Saturated
    elif peak < cfg.low_all_threshold:
        reason = GateReason.LowSignal
    elif not peak > cfg.peak_threshold:
        reason = GateReason.NoPeak
    else:
        reason = GateReason.Accepted
    return GateVerdict(reason=reason)


def assemble(
    spectra: Sequence[Spectrum],
    alloy_index: int,
    class_names: Sequence[str],
    cfg: GateConfig = GateConfig(),
) -> tuple[LabeledDataset, GateReport]:
    """Gate and label one alloy's spectra into a dataset.

    Only accepted spectra enter the dataset; the report counts every
    verdict.  All spectra must share one grid.
    """
    if alloy_index < 0 or alloy_index >= len(class_names):
        raise LabelOutOfRange(
            f"alloy_index {alloy_index} outside 0..{len(class_names) - 1}"
        )
    grids = {s.grid for s in spectra}
    if len(grids) > 1:
        raise MixedGrids(f"spectra use {len(grids)} different grids")
    grid = spectra[0].grid if spectra else WavelengthGrid()

    counts = {r.value: 0 for r in GateReason}
    kept: list[Spectrum] = []
    for s in spectra:
        verdict = quality_gate(s, cfg)
        counts[verdict.reason.value] += 1
        if verdict.accepted:
            kept.append(s)
    rows = (
        np.stack([s.intensities for s in kept])
        if kept
        else np.empty((0, grid.n_points))
    )
    ds = LabeledDataset(
        grid=grid,
        rows=rows,
        labels=np.full(len(kept), alloy_index, dtype=np.int64),
        sample_ids=np.asarray([s.sample_id for s in kept], dtype=np.int64),
        class_names=tuple(class_names),
    )
    return ds, GateReport(counts=counts)


def merge(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    """Concatenate datasets row-wise, preserving order."""
    if not datasets:
        raise ValueError("merge requires at least one dataset")
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.grid != first.grid:
            raise MixedGrids(f"grids differ: {ds.grid} vs {first.grid}")
        if ds.class_names != first.class_names:
            raise ClassNameMismatch(
                f"class names differ: {ds.class_names} vs {first.class_names}"
            )
    return LabeledDataset(
        grid=first.grid,
        rows=np.concatenate([ds.rows for ds in datasets], axis=0),
        labels=np.concatenate([ds.labels for ds in datasets]),
        sample_ids=np.concatenate([ds.sample_ids for ds in datasets]),
        class_names=first.class_names,
    )


def split_by_sample(
    ds: LabeledDataset, test_sample_ids: Iterable[int]
) -> tuple[LabeledDataset, LabeledDataset]:
    """Partition by physical sample: a row is test iff its sample id is listed."""
    wanted = {int(s) for s in test_sample_ids}
    present = set(int(s) for s in np.unique(ds.sample_ids))
    unknown = wanted - present
    if unknown:
        raise UnknownSampleId(f"sample ids not in dataset: {sorted(unknown)}")
    mask = np.isin(ds.sample_ids, sorted(wanted))
    return ds.take(np.flatnonzero(~mask)), ds.take(np.flatnonzero(mask))


def _canonical_class_order(ds: LabeledDataset, class_idx: np.ndarray) -> np.ndarray:
    """Order class rows by (sample_id, row content hash, original index).

    Content hashing makes the order -- hence any seeded selection from it --
    invariant under permutations of the input rows.
    """
    keys = [
        (int(ds.sample_ids[i]), hashlib.blake2b(ds.rows[i].tobytes(), digest_size=16).digest(), int(i))
        for i in class_idx
    ]
    return class_idx[np.asarray(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)]


def subsample_per_class(
    ds: LabeledDataset, n_per_class: int, seed: int
) -> LabeledDataset:
    """Draw exactly ``n_per_class`` rows per class, uniformly, seeded.

    Selections nest: for a fixed seed, the rows chosen at size n are a
    subset of those chosen at any larger size (each class draws a single
    permutation and takes a prefix), which keeps learning curves comparable.
    """
    if n_per_class < 0:
        raise ValueError(f"n_per_class must be >= 0, got {n_per_class}")
    chosen: list[np.ndarray] = []
    for c in range(ds.n_classes):
        class_idx = np.flatnonzero(ds.labels == c)
        if class_idx.size < n_per_class:
            raise InsufficientRows(
                f"class {ds.class_names[c]!r} has {class_idx.size} rows, "
                f"needs {n_per_class}"
            )
        ordered = _canonical_class_order(ds, class_idx)
        perm = stream(seed, f"subsample/class{c}").permutation(class_idx.size)
        chosen.append(np.sort(ordered[perm[:n_per_class]]))
    return ds.take(np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64))


#: Cluster names used by the default alloy taxonomy.
CLUSTER_HSS_WITHOUT_CO = "HSS_without_Co"
CLUSTER_HSS_WITH_CO = "HSS_with_Co"
CLUSTER_CRMOV = "CrMoV"

_DEFAULT_CLUSTERS = {
    "M1": CLUSTER_HSS_WITHOUT_CO,
    "M2": CLUSTER_HSS_WITHOUT_CO,
    "T1": CLUSTER_HSS_WITHOUT_CO,
    "P9": CLUSTER_HSS_WITHOUT_CO,
    "M35": CLUSTER_HSS_WITH_CO,
    "M36": CLUSTER_HSS_WITH_CO,
    "M42": CLUSTER_HSS_WITH_CO,
    "T4": CLUSTER_HSS_WITH_CO,
    "T42": CLUSTER_HSS_WITH_CO,
    "D2": CLUSTER_CRMOV,
    "H10": CLUSTER_CRMOV,
    "H13": CLUSTER_CRMOV,
}


@dataclass(frozen=True)
class AlloyTaxonomy:
    """Mapping from alloy name to coarse cluster name.

    The default groups the twelve stock alloys into high-speed steels
    without cobalt, high-speed steels with cobalt, and CrMoV tool steels.
    Overridable because cluster membership is a user-domain decision.
    """

    cluster_of: Mapping[str, str] = field(
        default_factory=lambda: dict(_DEFAULT_CLUSTERS)
    )

    @classmethod
    def default(cls) -> "AlloyTaxonomy":
        return cls()

    def cluster(self, alloy: str) -> str:
        return self.cluster_of[alloy]

    def cluster_order(self, class_names: Sequence[str]) -> list[str]:
        """Distinct clusters in order of first appearance over class_names."""
        seen: list[str] = []
        for name in class_names:
            c = self.cluster_of.get(name)
            if c is not None and c not in seen:
                seen.append(c)
        return seen
