"""Synthetic emission-spectrum generation from alloy compositions.

Every element carries a handful of Gaussian emission lines; an alloy's
clean spectrum is the fraction-weighted sum of its elements' lines over a
constant baseline.  Physical-sample variability is modeled by one
multiplicative jitter per (sample, element) plus a per-spectrum global
intensity factor, and detector noise is additive Gaussian.  All randomness
flows through named streams keyed by (alloy, sample ordinal), so changing
one sample's spectrum count never touches any other sample's data.

The shipped element catalog and alloy composition presets are engineered
purely for class structure (shared lines inside a cluster, cluster-distinct
elements); they are not metallurgical data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .errors import PresetFormatError, UnknownElement
from .preprocess import GateConfig, GateReport, assemble, merge
from .rng import stream
from .spectra_io import LabeledDataset, Spectrum, WavelengthGrid

#: Auto-calibration target for the tallest clean peak across all alloys.
TARGET_MAX_CLEAN = 0.7

_CATALOG_SPAN = (350.0, 700.0)


@dataclass(frozen=True)
class ElementLineCatalog:
    """Element symbol -> tuple of (center_nm, relative_strength) lines."""

    lines: Mapping[str, tuple[tuple[float, float], ...]]

    def __post_init__(self) -> None:
        frozen: dict[str, tuple[tuple[float, float], ...]] = {}
        for elem, entries in self.lines.items():
            parsed = tuple((float(c), float(s)) for c, s in entries)
            if not parsed:
                raise ValueError(f"element {elem!r} has no lines")
            for center, strength in parsed:
                if not (_CATALOG_SPAN[0] <= center <= _CATALOG_SPAN[1]):
                    raise ValueError(
                        f"line center {center} nm of {elem!r} outside "
                        f"{_CATALOG_SPAN[0]}..{_CATALOG_SPAN[1]} nm"
                    )
                if not (0.0 < strength <= 1.0):
                    raise ValueError(
                        f"line strength {strength} of {elem!r} outside (0, 1]"
                    )
            frozen[str(elem)] = parsed
        object.__setattr__(self, "lines", frozen)

    @property
    def elements(self) -> tuple[str, ...]:
        return tuple(self.lines)


@dataclass(frozen=True)
class AlloyComposition:
    """Alloy name plus element weight fractions (balance: iron matrix)."""

    name: str
    fractions: Mapping[str, float]

    def __post_init__(self) -> None:
        frozen = {str(e): float(f) for e, f in self.fractions.items()}
        for elem, frac in frozen.items():
            if not (0.0 <= frac <= 1.0):
                raise ValueError(f"{self.name}: fraction of {elem!r} is {frac}")
        if sum(frozen.values()) > 1.0 + 1e-9:
            raise ValueError(
                f"{self.name}: fractions sum to {sum(frozen.values())} > 1"
            )
        object.__setattr__(self, "fractions", frozen)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generator; defaults give gate-clean, separable data."""

    line_sigma_nm: float = 0.8
    baseline: float = 0.02
    noise_std: float = 0.01
    sample_jitter_rel: float = 0.10
    offspec_jitter_rel: float = 0.35
    peak_scale: float | None = None  # None: calibrate so max clean peak ~ 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.line_sigma_nm <= 0:
            raise ValueError("line_sigma_nm must be > 0")
        for name in ("baseline", "noise_std", "sample_jitter_rel", "offspec_jitter_rel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.peak_scale is not None and self.peak_scale <= 0:
            raise ValueError("peak_scale must be > 0")


def clean_signal(
    comp: AlloyComposition,
    cat: ElementLineCatalog,
    grid: WavelengthGrid,
    sigma_nm: float,
    jitter: Mapping[str, float] | None = None,
) -> np.ndarray:
    """Unscaled line sum: sum_e frac_e * sum_lines strength * gauss(center).

    Gaussians have unit peak height.  ``jitter`` optionally multiplies each
    element's fraction (used for per-sample composition variation).
    """
    wavelengths = grid.points()
    total = np.zeros(grid.n_points)
    for elem in sorted(comp.fractions):
        if elem not in cat.lines:
            raise UnknownElement(f"{comp.name}: element {elem!r} not in catalog")
        frac = comp.fractions[elem]
        if jitter is not None:
            frac *= jitter[elem]
        if frac == 0.0:
            continue
        for center, strength in cat.lines[elem]:
            z = (wavelengths - center) / sigma_nm
            total += (frac * strength) * np.exp(-0.5 * z * z)
    return total


def auto_peak_scale(
    alloys: Sequence[AlloyComposition],
    cat: ElementLineCatalog,
    cfg: SynthConfig,
    grid: WavelengthGrid,
) -> float:
    """Scale such that the tallest nominal clean peak reaches ~0.7."""
    peak = max(
        (float(clean_signal(a, cat, grid, cfg.line_sigma_nm).max()) for a in alloys),
        default=0.0,
    )
    if peak <= 0.0:
        return 1.0
    return (TARGET_MAX_CLEAN - cfg.baseline) / peak


def synth_spectrum(
    comp: AlloyComposition,
    cat: ElementLineCatalog,
    cfg: SynthConfig,
    grid: WavelengthGrid,
    rng: np.random.Generator,
    sample_id: int = 0,
    intensity_factor: float = 1.0,
    jitter: Mapping[str, float] | None = None,
) -> Spectrum:
    """One noisy spectrum: clamp(factor * (baseline + scale * lines) + noise)."""
    scale = cfg.peak_scale
    if scale is None:
        scale = auto_peak_scale([comp], cat, cfg, grid)
    clean = cfg.baseline + scale * clean_signal(comp, cat, grid, cfg.line_sigma_nm, jitter)
    noisy = intensity_factor * clean + rng.normal(0.0, cfg.noise_std, grid.n_points)
    return Spectrum(
        grid=grid,
        intensities=np.clip(noisy, 0.0, 1.0),
        sample_id=sample_id,
    )


def synth_physical_sample(
    comp: AlloyComposition,
    cat: ElementLineCatalog,
    cfg: SynthConfig,
    grid: WavelengthGrid,
    sample_id: int,
    n_spectra: int,
    rng: np.random.Generator,
    offspec: bool = False,
    peak_scale: float | None = None,
) -> list[Spectrum]:
    """Spectra of one physical sample: one jittered composition, many arcs.

    Draw order from ``rng``: the per-element jitter factors (elements in
    sorted order), then per spectrum a global intensity factor in
    [0.8, 1.2] followed by the pixel noise vector.
    """
    if n_spectra < 1:
        raise ValueError(f"n_spectra must be >= 1, got {n_spectra}")
    scale = peak_scale if peak_scale is not None else cfg.peak_scale
    if scale is None:
        scale = auto_peak_scale([comp], cat, cfg, grid)
    j = cfg.offspec_jitter_rel if offspec else cfg.sample_jitter_rel
    elements = sorted(comp.fractions)
    factors = rng.uniform(1.0 - j, 1.0 + j, size=len(elements))
    jitter = dict(zip(elements, factors))
    clean = cfg.baseline + scale * clean_signal(
        comp, cat, grid, cfg.line_sigma_nm, jitter
    )
    spectra = []
    for _ in range(n_spectra):
        amp = rng.uniform(0.8, 1.2)
        noise = rng.normal(0.0, cfg.noise_std, grid.n_points)
        spectra.append(
            Spectrum(
                grid=grid,
                intensities=np.clip(amp * clean + noise, 0.0, 1.0),
                sample_id=sample_id,
            )
        )
    return spectra


def synth_dataset(
    alloys: Sequence[AlloyComposition],
    cat: ElementLineCatalog,
    cfg: SynthConfig,
    grid: WavelengthGrid,
    samples_per_alloy: int,
    spectra_per_sample: int,
    seed: int | None = None,
    offspec: bool = False,
    first_sample_id: int = 101,
    gate_config: GateConfig = GateConfig(),
    return_report: bool = False,
):
    """Generate, gate, label, and merge a full synthetic dataset.

    Sample ids are assigned consecutively from ``first_sample_id`` across
    (alloy, sample) pairs.  Each pair draws from its own named stream, so
    the dataset is reproducible piecewise as well as in full.
    """
    if samples_per_alloy < 1:
        raise ValueError(f"samples_per_alloy must be >= 1, got {samples_per_alloy}")
    if seed is None:
        seed = cfg.seed
    scale = cfg.peak_scale
    if scale is None:
        scale = auto_peak_scale(alloys, cat, cfg, grid)
    class_names = tuple(a.name for a in alloys)

    per_alloy = []
    report = GateReport.empty()
    sample_id = first_sample_id
    for alloy_index, comp in enumerate(alloys):
        spectra: list[Spectrum] = []
        for ordinal in range(samples_per_alloy):
            rng = stream(seed, f"synth/{comp.name}/sample{ordinal}")
            spectra.extend(
                synth_physical_sample(
                    comp, cat, cfg, grid, sample_id, spectra_per_sample, rng,
                    offspec=offspec, peak_scale=scale,
                )
            )
            sample_id += 1
        ds, rep = assemble(spectra, alloy_index, class_names, gate_config)
        per_alloy.append(ds)
        report = report + rep
    merged = merge(per_alloy)
    return (merged, report) if return_report else merged


# --------------------------------------------------------------------------
# Preset files
# --------------------------------------------------------------------------

def parse_catalog(text: str) -> ElementLineCatalog:
    """Parse the element-line preset format.

    Blocks start with ``element <symbol>``; each following ``line <center_nm>
    <strength>`` adds one emission line.  '#' starts a comment.
    """
    lines: dict[str, list[tuple[float, float]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        entry = raw.split("#", 1)[0].strip()
        if not entry:
            continue
        parts = entry.split()
        if parts[0] == "element" and len(parts) == 2:
            current = parts[1]
            lines.setdefault(current, [])
        elif parts[0] == "line" and len(parts) == 3:
            if current is None:
                raise PresetFormatError(f"line {lineno}: 'line' before any 'element'")
            try:
                lines[current].append((float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise PresetFormatError(f"line {lineno}: {exc}") from exc
        else:
            raise PresetFormatError(f"line {lineno}: cannot parse {entry!r}")
    try:
        return ElementLineCatalog(lines={e: tuple(v) for e, v in lines.items()})
    except ValueError as exc:
        raise PresetFormatError(str(exc)) from exc


def parse_compositions(text: str) -> list[AlloyComposition]:
    """Parse the composition preset format.

    Blocks start with ``alloy <name>``; each following ``<element>
    <fraction>`` line adds one constituent.  '#' starts a comment.
    """
    alloys: list[tuple[str, dict[str, float]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        entry = raw.split("#", 1)[0].strip()
        if not entry:
            continue
        parts = entry.split()
        if parts[0] == "alloy" and len(parts) == 2:
            alloys.append((parts[1], {}))
        elif len(parts) == 2:
            if not alloys:
                raise PresetFormatError(f"line {lineno}: element before any 'alloy'")
            try:
                alloys[-1][1][parts[0]] = float(parts[1])
            except ValueError as exc:
                raise PresetFormatError(f"line {lineno}: {exc}") from exc
        else:
            raise PresetFormatError(f"line {lineno}: cannot parse {entry!r}")
    try:
        return [AlloyComposition(name=n, fractions=f) for n, f in alloys]
    except ValueError as exc:
        raise PresetFormatError(str(exc)) from exc


def _read_data_text(name: str) -> str:
    return (resources.files("spectrasort") / "data" / name).read_text(encoding="utf-8")


def default_catalog() -> ElementLineCatalog:
    """The packaged synthetic element-line catalog."""
    return parse_catalog(_read_data_text("element_lines.txt"))


def default_compositions() -> list[AlloyComposition]:
    """The packaged twelve synthetic alloy presets."""
    return parse_compositions(_read_data_text("alloy_compositions.txt"))
