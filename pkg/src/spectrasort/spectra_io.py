"""Raw spectrometer CSV parsing, grid resampling, and dataset file IO.

A raw export is a small text file: a handful of metadata lines (software
name, date, integration time, ...) followed by one data row per detector
pixel, ``wavelength<sep>intensity`` with ``<sep>`` either ``;`` or ``,``.
Parsing keeps the metadata, resamples the data rows onto a canonical
wavelength grid, and yields an immutable :class:`Spectrum`.

Merged datasets live in a single CSV file whose layout is fixed:
``alloy_index,sample_id,nm350.000,...,nm700.000`` header, one row per
spectrum, intensities printed with 9 significant digits, LF line endings.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    IntensityOutOfRange,
    LabelOutOfRange,
    NoDataRows,
    NonMonotoneWavelengths,
    SchemaMismatch,
)

#: Tolerance applied when checking parsed intensities against [0, 1].
INTENSITY_TOL = 1e-9

_DATA_LEAD = set("0123456789+-.−")


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform wavelength grid, point i = start + i * (end - start) / (n - 1)."""

    start_nm: float = 350.0
    end_nm: float = 700.0
    n_points: int = 3648

    def __post_init__(self) -> None:
        if not self.start_nm < self.end_nm:
            raise ValueError(
                f"start_nm must be < end_nm, got {self.start_nm} >= {self.end_nm}"
            )
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")

    @property
    def step_nm(self) -> float:
        return (self.end_nm - self.start_nm) / (self.n_points - 1)

    def points(self) -> np.ndarray:
        """Grid wavelengths in nm, strictly increasing."""
        return self.start_nm + self.step_nm * np.arange(self.n_points)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One acquisition: intensities on a grid, plus its physical sample id.

    Intensities are relative units in [0, 1]; 1.0 marks detector saturation
    and is allowed here (the quality gate decides whether to keep it).
    """

    grid: WavelengthGrid
    intensities: np.ndarray
    sample_id: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.grid.n_points:
            raise ValueError(
                f"intensities must have shape ({self.grid.n_points},), got {arr.shape}"
            )
        _check_intensity_range(arr)
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "intensities", arr)
        object.__setattr__(self, "sample_id", int(self.sample_id))


def _check_intensity_range(arr: np.ndarray) -> None:
    if arr.size == 0:
        return
    lo = float(arr.min())
    hi = float(arr.max())
    if lo < -INTENSITY_TOL or hi > 1.0 + INTENSITY_TOL:
        bad = lo if lo < -INTENSITY_TOL else hi
        raise IntensityOutOfRange(f"intensity {bad!r} outside [0, 1]")


def resample_to_grid(
    points: Sequence[tuple[float, float]] | np.ndarray, grid: WavelengthGrid
) -> np.ndarray:
    """Linearly interpolate (wavelength, intensity) pairs onto ``grid``.

    Grid points outside the data's wavelength span get intensity 0.0; input
    wavelengths must be strictly increasing and at least two points long.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError("resampling requires at least 2 data points")
    xs, ys = pts[:, 0], pts[:, 1]
    if not np.all(np.diff(xs) > 0):
        raise NonMonotoneWavelengths("data wavelengths are not strictly increasing")
    return np.interp(grid.points(), xs, ys, left=0.0, right=0.0)


def parse_raw_spectrum(
    text: str | TextIO, grid: WavelengthGrid, sample_id: int
) -> Spectrum:
    """Parse one raw spectrometer export into a :class:`Spectrum`.

    A line whose first non-blank character is not a digit, '+', '-' or '.'
    is metadata and is captured keyed by its 1-based line number; parsing is
    total over metadata.  The column separator (';' or ',') is auto-detected
    from the first data row.  Decimal separator is '.' only.
    """
    if hasattr(text, "read"):
        text = text.read()
    assert isinstance(text, str)

    sep: str | None = None
    metadata: dict[str, str] = {}
    rows: list[tuple[float, float]] = []
    for ordinal, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        line = line.replace("−", "-")
        if line[0] not in _DATA_LEAD:
            metadata[str(ordinal)] = line
            continue
        trial_sep = sep if sep is not None else (";" if ";" in line else ",")
        parts = line.split(trial_sep)
        if len(parts) < 2:
            metadata[str(ordinal)] = line
            continue
        try:
            wavelength = float(parts[0])
            intensity = float(parts[1])
        except ValueError:
            metadata[str(ordinal)] = line
            continue
        sep = trial_sep
        rows.append((wavelength, intensity))

    if not rows:
        raise NoDataRows("no parseable data rows found")
    values = np.asarray([i for _, i in rows], dtype=np.float64)
    _check_intensity_range(values)
    resampled = resample_to_grid(
        np.column_stack([[w for w, _ in rows], np.clip(values, 0.0, 1.0)]), grid
    )
    return Spectrum(grid=grid, intensities=resampled, sample_id=sample_id, metadata=metadata)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Dense intensity matrix on one grid with alloy labels and sample ids."""

    grid: WavelengthGrid
    rows: np.ndarray          # (n, d) float64, every value in [0, 1]
    labels: np.ndarray        # (n,) int64, 0-based alloy indices
    sample_ids: np.ndarray    # (n,) int64, physical sample numbers
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        if rows.ndim != 2 or rows.shape[1] != self.grid.n_points:
            raise ValueError(
                f"rows must be (n, {self.grid.n_points}), got {rows.shape}"
            )
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        sample_ids = np.asarray(self.sample_ids, dtype=np.int64).reshape(-1)
        names = tuple(str(n) for n in self.class_names)
        n = rows.shape[0]
        if labels.shape[0] != n or sample_ids.shape[0] != n:
            raise ValueError(
                f"labels ({labels.shape[0]}) and sample_ids ({sample_ids.shape[0]}) "
                f"must match row count ({n})"
            )
        if n and (labels.min() < 0 or labels.max() >= len(names)):
            raise LabelOutOfRange(
                f"labels must lie in [0, {len(names) - 1}], "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        if n:
            _check_intensity_range(rows)
            rows = np.clip(rows, 0.0, 1.0)
        for a in (rows, labels, sample_ids):
            a.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "class_names", names)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def take(self, indices: np.ndarray | Sequence[int]) -> "LabeledDataset":
        """Row subset (in the given order) as a new dataset."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            grid=self.grid,
            rows=self.rows[idx],
            labels=self.labels[idx],
            sample_ids=self.sample_ids[idx],
            class_names=self.class_names,
        )

    def class_counts(self) -> np.ndarray:
        """Row count per class index, length n_classes."""
        return np.bincount(self.labels, minlength=self.n_classes)


def _header_fields(grid: WavelengthGrid) -> list[str]:
    return ["alloy_index", "sample_id"] + [f"nm{w:.3f}" for w in grid.points()]


def write_dataset(ds: LabeledDataset, destination) -> None:
    """Write ``ds`` to the merged-dataset CSV layout (UTF-8, LF)."""
    header = ",".join(_header_fields(ds.grid))
    own = not hasattr(destination, "write")
    f = open(destination, "w", encoding="utf-8", newline="\n") if own else destination
    try:
        f.write(header + "\n")
        if ds.n_rows:
            data = np.column_stack(
                [ds.labels.astype(np.float64), ds.sample_ids.astype(np.float64), ds.rows]
            )
            fmt = ["%d", "%d"] + ["%.9g"] * ds.n_features
            np.savetxt(f, data, fmt=fmt, delimiter=",", newline="\n")
    finally:
        if own:
            f.close()


def read_dataset(
    source,
    grid: WavelengthGrid | None = None,
    class_names: Sequence[str] | None = None,
) -> LabeledDataset:
    """Read a merged-dataset CSV file back into a :class:`LabeledDataset`.

    When ``grid`` is given the header must match it exactly; otherwise the
    grid is reconstructed from the header (first/last wavelength, count).
    The file stores no class names, so ``class_names`` may be supplied;
    by default placeholder names covering the label range are synthesized.
    """
    own = not hasattr(source, "read")
    f = open(source, "r", encoding="utf-8", newline="") if own else source
    try:
        header = f.readline().rstrip("\r\n")
        fields = header.split(",")
        if len(fields) < 3 or fields[0] != "alloy_index" or fields[1] != "sample_id":
            raise SchemaMismatch(f"unexpected header start: {fields[:3]!r}")
        wl_fields = fields[2:]
        if any(not w.startswith("nm") for w in wl_fields):
            raise SchemaMismatch("wavelength columns must be named nm<value>")
        try:
            wavelengths = np.asarray([float(w[2:]) for w in wl_fields])
        except ValueError as exc:
            raise SchemaMismatch(f"bad wavelength column name: {exc}") from exc
        if grid is None:
            grid = WavelengthGrid(
                start_nm=float(wavelengths[0]),
                end_nm=float(wavelengths[-1]),
                n_points=len(wavelengths),
            )
        expected = _header_fields(grid)[2:]
        if wl_fields != expected:
            raise SchemaMismatch(
                f"header lists {len(wl_fields)} wavelength columns that do not "
                f"match the declared grid ({grid.start_nm}..{grid.end_nm} nm, "
                f"{grid.n_points} points)"
            )
        body = f.read()
    finally:
        if own:
            f.close()

    n_cols = 2 + grid.n_points
    if body.strip():
        try:
            data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        except ValueError as exc:
            raise SchemaMismatch(f"malformed data row: {exc}") from exc
        if data.shape[1] != n_cols:
            raise SchemaMismatch(
                f"rows have {data.shape[1]} fields, header declares {n_cols}"
            )
    else:
        data = np.empty((0, n_cols), dtype=np.float64)

    labels_f, sample_ids_f = data[:, 0], data[:, 1]
    for name, col in (("alloy_index", labels_f), ("sample_id", sample_ids_f)):
        if col.size and not np.all(col == np.floor(col)):
            raise SchemaMismatch(f"{name} column contains non-integer values")
    labels = labels_f.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise LabelOutOfRange(f"negative alloy_index {labels.min()}")
    if class_names is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
        class_names = tuple(f"alloy{i}" for i in range(n_classes))
    elif labels.size and labels.max() >= len(class_names):
        raise LabelOutOfRange(
            f"alloy_index {labels.max()} exceeds the {len(class_names)} known classes"
        )
    return LabeledDataset(
        grid=grid,
        rows=data[:, 2:],
        labels=labels,
        sample_ids=sample_ids_f.astype(np.int64),
        class_names=tuple(class_names),
    )
