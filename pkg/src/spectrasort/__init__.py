"""Alloy identification from optical emission spectra.

Library + CLI covering the full pipeline: raw spectrum ingestion, quality
gating, dataset assembly, feature scaling, linear one-vs-rest SVM /
logistic regression / k-NN / MLP classifiers, an experiment harness
(cross-validation, sweeps, learning curves, grid search, cluster scoring,
assignment-ambiguity analysis, timing), and a synthetic spectra generator
for running everything at desk scale.
"""

__version__ = "0.1.0"

#: Master seed used by the CLI and the shipped experiment defaults.
DEFAULT_SEED = 0

from .errors import SpectraSortError, DataError
from .features import ScalerKind, ScalerParams, fit_scaler, transform
from .learn import (
    KnnModel,
    LinearModel,
    LogRegModel,
    LossKind,
    MlpModel,
    decision_values,
    load_model,
    predict,
    save_model,
    train_knn,
    train_linear_svm,
    train_logreg,
    train_mlp,
)
from .preprocess import (
    AlloyTaxonomy,
    GateConfig,
    GateReason,
    GateReport,
    GateVerdict,
    assemble,
    merge,
    quality_gate,
    split_by_sample,
    subsample_per_class,
)
from .spectra_io import (
    LabeledDataset,
    Spectrum,
    WavelengthGrid,
    parse_raw_spectrum,
    read_dataset,
    resample_to_grid,
    write_dataset,
)

__all__ = [
    "__version__",
    "DEFAULT_SEED",
    "SpectraSortError",
    "DataError",
    "WavelengthGrid",
    "Spectrum",
    "LabeledDataset",
    "parse_raw_spectrum",
    "resample_to_grid",
    "read_dataset",
    "write_dataset",
    "GateConfig",
    "GateReason",
    "GateReport",
    "GateVerdict",
    "AlloyTaxonomy",
    "quality_gate",
    "assemble",
    "merge",
    "split_by_sample",
    "subsample_per_class",
    "ScalerKind",
    "ScalerParams",
    "fit_scaler",
    "transform",
    "LossKind",
    "LinearModel",
    "LogRegModel",
    "KnnModel",
    "MlpModel",
    "train_linear_svm",
    "train_logreg",
    "train_knn",
    "train_mlp",
    "decision_values",
    "predict",
    "save_model",
    "load_model",
]
