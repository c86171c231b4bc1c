"""Command-line interface: spectrasort <command> [flags].

Commands: ingest, gate, train, classify, cv, sweep, curve, grid, validate,
synth.  Exit codes: 0 success, 1 usage error, 2 data error, 3 solver
non-convergence under --strict.

Every experiment report is written to a file (never only to the terminal)
as JSON with sorted keys and no timestamps, so re-running with the same
seed yields byte-identical reports regardless of --jobs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import DEFAULT_SEED, __version__
from .errors import InvalidManifest, SpectraSortError
from .eval import (
    GRID_CS,
    GRID_LOSSES,
    PipelineSpec,
    cluster_f1,
    evaluate_predictions,
    grid_search,
    kfold_cv,
    learning_curve,
    sweep,
    unambiguous_report,
)
from .features import ScalerKind
from .learn import (
    LinearModel,
    LossKind,
    decision_values,
    load_model,
    predict,
    save_model,
)
from .preprocess import (
    AlloyTaxonomy,
    GateConfig,
    GateReport,
    assemble,
    merge,
    quality_gate,
    split_by_sample,
)
from .spectra_io import (
    LabeledDataset,
    WavelengthGrid,
    parse_raw_spectrum,
    read_dataset,
    write_dataset,
)
from .synthgen import (
    SynthConfig,
    default_catalog,
    default_compositions,
    parse_catalog,
    parse_compositions,
    synth_dataset,
)

_SCALER_CHOICES = [k.value for k in ScalerKind]
_ALGO_CHOICES = ["linear-svm", "logreg", "knn", "mlp"]


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits 1 (not 2) on usage errors."""

    def error(self, message):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_report(path: str, command: str, seed: int, config: dict, results: dict) -> None:
    config = _jsonable(config)
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    envelope = {
        "tool": "spectrasort",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "results": _jsonable(results),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(envelope, f, indent=2, sort_keys=True)
        f.write("\n")


def _grid_from_args(args) -> WavelengthGrid:
    return WavelengthGrid(
        start_nm=args.grid_start, end_nm=args.grid_end, n_points=args.grid_points
    )


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-start", type=float, default=350.0, help="grid start in nm")
    p.add_argument("--grid-end", type=float, default=700.0, help="grid end in nm")
    p.add_argument("--grid-points", type=int, default=3648, help="number of grid points")


def _add_gate_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--low-threshold", type=float, default=0.1,
                   help="reject if all intensities are below this")
    p.add_argument("--peak-threshold", type=float, default=0.2,
                   help="reject if no intensity exceeds this")
    p.add_argument("--saturation", type=float, default=1.0,
                   help="reject if any intensity reaches this value")


def _gate_from_args(args) -> GateConfig:
    return GateConfig(
        low_all_threshold=args.low_threshold,
        peak_threshold=args.peak_threshold,
        saturation_value=args.saturation,
    )


def _sidecar_path(dataset_path: str) -> Path:
    return Path(str(dataset_path) + ".meta.json")


def _write_sidecar(dataset_path: str, class_names, grid: WavelengthGrid,
                   seed: int, gate_report: GateReport | None, config: dict) -> None:
    meta = {
        "tool": "spectrasort",
        "version": __version__,
        "class_names": list(class_names),
        "grid": {"start_nm": grid.start_nm, "end_nm": grid.end_nm,
                 "n_points": grid.n_points},
        "seed": seed,
        "gate_report": gate_report.to_json_dict() if gate_report else None,
        "config": _jsonable(config),
    }
    with open(_sidecar_path(dataset_path), "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_dataset(path: str) -> LabeledDataset:
    """Read a dataset file, using its sidecar for class names when present."""
    class_names = None
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as f:
            class_names = json.load(f).get("class_names")
    return read_dataset(path, class_names=class_names)


def _pipeline_from_args(args) -> PipelineSpec:
    scaler = ScalerKind(args.scaler)
    hp: dict = {}
    if args.algo == "linear-svm":
        hp = {"C": args.svm_c, "loss": LossKind(args.loss)}
    elif args.algo == "logreg":
        hp = {"lam": args.reg_lambda}
    elif args.algo == "knn":
        hp = {"k": args.k}
    elif args.algo == "mlp":
        hp = {"hidden_units": args.hidden, "epochs": args.epochs,
              "learning_rate": args.lr, "batch_size": args.batch}
    return PipelineSpec(algorithm=args.algo, scaler_kind=scaler, hyperparams=hp)


def _add_pipeline_flags(p: argparse.ArgumentParser, with_algo: bool = True) -> None:
    if with_algo:
        p.add_argument("--algo", choices=_ALGO_CHOICES, default="linear-svm")
    p.add_argument("--scaler", choices=_SCALER_CHOICES, default="normalizer")
    p.add_argument("--loss", choices=[l.value for l in LossKind],
                   default="squared-hinge", help="linear SVM loss")
    p.add_argument("--C", dest="svm_c", type=float, default=1.0,
                   help="linear SVM regularization trade-off")
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0,
                   help="logistic regression L2 strength")
    p.add_argument("--k", type=int, default=5, help="k-NN neighbor count (odd)")
    p.add_argument("--hidden", type=int, default=100, help="MLP hidden units")
    p.add_argument("--epochs", type=int, default=200, help="MLP epochs")
    p.add_argument("--lr", type=float, default=0.01, help="MLP learning rate")
    p.add_argument("--batch", type=int, default=32, help="MLP batch size")


def _taxonomy_from_arg(value: str) -> AlloyTaxonomy:
    if value == "default":
        return AlloyTaxonomy.default()
    with open(value, "r", encoding="utf-8") as f:
        return AlloyTaxonomy(cluster_of=json.load(f))


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    grid = _grid_from_args(args)
    cat = default_catalog() if args.catalog is None else parse_catalog(
        Path(args.catalog).read_text(encoding="utf-8"))
    alloys = default_compositions() if args.compositions is None else parse_compositions(
        Path(args.compositions).read_text(encoding="utf-8"))
    cfg = SynthConfig(seed=args.seed)
    ds, report = synth_dataset(
        alloys, cat, cfg, grid,
        samples_per_alloy=args.samples_per_alloy,
        spectra_per_sample=args.spectra_per_sample,
        seed=args.seed,
        offspec=args.offspec,
        first_sample_id=args.first_sample_id,
        return_report=True,
    )
    write_dataset(ds, args.out)
    config = {
        "samples_per_alloy": args.samples_per_alloy,
        "spectra_per_sample": args.spectra_per_sample,
        "offspec": args.offspec,
        "first_sample_id": args.first_sample_id,
        "grid": [grid.start_nm, grid.end_nm, grid.n_points],
    }
    _write_sidecar(args.out, ds.class_names, grid, args.seed, report, config)
    print(f"wrote {ds.n_rows} rows x {ds.n_classes} classes to {args.out}")
    print(f"gate: {report.to_json_dict()['counts']} accept_rate={report.accept_rate:.3f}")
    return 0


def _read_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    entries = manifest.get("entries")
    if not entries:
        raise InvalidManifest("manifest has no entries")
    indices = sorted({int(e["alloy_index"]) for e in entries})
    if indices != list(range(len(indices))):
        raise InvalidManifest(f"alloy_index values must be dense 0..n-1, got {indices}")
    names: dict[int, str] = {}
    paths = set()
    for e in entries:
        idx, name = int(e["alloy_index"]), str(e["alloy"])
        if names.setdefault(idx, name) != name:
            raise InvalidManifest(f"alloy_index {idx} maps to both "
                                  f"{names[idx]!r} and {name!r}")
        if e["path"] in paths:
            raise InvalidManifest(f"duplicate directory {e['path']!r}")
        paths.add(e["path"])
    manifest["class_names"] = [names[i] for i in indices]
    return manifest


def _cmd_ingest(args) -> int:
    manifest = _read_manifest(args.manifest)
    g = manifest.get("grid", {})
    grid = WavelengthGrid(
        start_nm=float(g.get("start_nm", 350.0)),
        end_nm=float(g.get("end_nm", 700.0)),
        n_points=int(g.get("n_points", 3648)),
    )
    gate_cfg = GateConfig(**manifest.get("gate", {}))
    class_names = manifest["class_names"]
    seed = int(manifest.get("seed", DEFAULT_SEED))

    by_alloy: dict[int, list] = {i: [] for i in range(len(class_names))}
    for entry in manifest["entries"]:
        directory = Path(entry["path"])
        if not directory.is_dir():
            raise SpectraSortError(f"{directory}: not a directory")
        files = sorted(directory.glob("*.csv"))
        if not files:
            raise SpectraSortError(f"{directory}: no .csv files")
        for path in files:
            try:
                s = parse_raw_spectrum(
                    path.read_text(encoding="utf-8"), grid, int(entry["sample_id"])
                )
            except SpectraSortError as exc:
                raise type(exc)(f"{path}: {exc}") from exc
            by_alloy[int(entry["alloy_index"])].append(s)

    datasets = []
    report = GateReport.empty()
    for idx in range(len(class_names)):
        ds, rep = assemble(by_alloy[idx], idx, class_names, gate_cfg)
        datasets.append(ds)
        report = report + rep
    merged = merge(datasets)
    write_dataset(merged, args.out)
    _write_sidecar(args.out, class_names, grid, seed, report,
                   {"manifest": args.manifest})
    for reason, count in sorted(report.counts.items()):
        print(f"{reason}: {count}")
    print(f"wrote {merged.n_rows} rows to {args.out}")
    return 0


def _cmd_gate(args) -> int:
    grid = _grid_from_args(args)
    cfg = _gate_from_args(args)
    counts = GateReport.empty()
    verdicts = {}
    for path in args.files:
        s = parse_raw_spectrum(Path(path).read_text(encoding="utf-8"), grid, 0)
        v = quality_gate(s, cfg)
        verdicts[str(path)] = v.reason.value
        c = dict(counts.counts)
        c[v.reason.value] += 1
        counts = GateReport(counts=c)
        print(f"{path}: {v.reason.value}")
    if args.out:
        _write_report(args.out, "gate", 0,
                      {"files": [str(p) for p in args.files]},
                      {"verdicts": verdicts, "summary": counts.to_json_dict()})
    print(f"accept_rate={counts.accept_rate:.3f}")
    return 0


def _cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    if args.algo == "knn" and args.k % 2 == 0:
        raise SpectraSortError(f"--k must be odd, got {args.k}")
    pipeline = _pipeline_from_args(args)
    model = pipeline.train(ds, seed=args.seed)
    save_model(model, args.out)
    print(f"trained {args.algo} on {ds.n_rows} rows, saved to {args.out}")
    report = getattr(model, "solver_report", None)
    if report is not None and not report.all_converged:
        print("warning: solver did not converge within the iteration budget")
        if args.strict:
            return 3
    return 0


def _cmd_classify(args) -> int:
    model = load_model(args.model)
    cfg = GateConfig()
    for path in args.files:
        s = parse_raw_spectrum(Path(path).read_text(encoding="utf-8"), model.grid, 0)
        verdict = quality_gate(s, cfg)
        if not verdict.accepted:
            print(f"{path}: REJECTED ({verdict.reason.value})")
            continue
        t0 = time.perf_counter()
        row = s.intensities[None, :]
        label = int(predict(model, row)[0])
        elapsed = time.perf_counter() - t0
        line = f"{path}: alloy={model.class_names[label]}"
        if isinstance(model, LinearModel):
            scores = decision_values(model, s.intensities)
            line += f" unambiguous={str(int((scores > 0).sum()) == 1).lower()}"
            line += " scores=" + ",".join(f"{v:.6g}" for v in scores)
        else:
            line += " unambiguous=n/a"
        if args.timing:
            line += f" seconds={elapsed:.6f}"
        print(line)
    return 0


def _cmd_cv(args) -> int:
    ds = _load_dataset(args.data)
    pipeline = _pipeline_from_args(args)
    report = kfold_cv(ds, args.folds, pipeline, args.seed, jobs=args.jobs)
    config = {"data": args.data, "folds": args.folds, **pipeline.describe()}
    _write_report(args.out, "cv", args.seed, config, report.to_json_dict())
    print(f"cv mean_f1={report.mean_f1:.4f} std={report.std_f1:.4f} -> {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    ds = _load_dataset(args.data)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if args.scalers == "all":
        kinds = list(ScalerKind)
    else:
        kinds = [ScalerKind(s.strip()) for s in args.scalers.split(",") if s.strip()]
    report = sweep(ds, algos, kinds, args.folds, args.seed, jobs=args.jobs)
    config = {
        "data": args.data,
        "folds": args.folds,
        "algorithms": algos,
        "scalers": [k.value for k in kinds],
    }
    _write_report(args.out, "sweep", args.seed, config, report.to_json_dict())
    print(report.to_table_text(), end="")
    print(f"-> {args.out}")
    return 0


def _cmd_curve(args) -> int:
    ds = _load_dataset(args.data)
    train_ds, test_ds = split_by_sample(ds, _int_list(args.test_samples))
    pipeline = _pipeline_from_args(args)
    sizes = _int_list(args.sizes)
    report = learning_curve(train_ds, test_ds, sizes, pipeline, args.seed,
                            jobs=args.jobs)
    config = {
        "data": args.data,
        "test_samples": _int_list(args.test_samples),
        "sizes": sizes,
        **pipeline.describe(),
    }
    _write_report(args.out, "curve", args.seed, config, report.to_json_dict())
    for s, f in zip(report.sizes, report.f1):
        print(f"size={s} macro_f1={f:.4f}")
    print(f"-> {args.out}")
    return 0


def _cmd_grid(args) -> int:
    ds = _load_dataset(args.data)
    train_ds, test_ds = split_by_sample(ds, _int_list(args.test_samples))
    losses = [LossKind(v.strip()) for v in args.losses.split(",") if v.strip()]
    cs = _float_list(args.Cs)
    report = grid_search(
        train_ds, test_ds, losses=losses, Cs=cs, k=args.folds,
        scaler_kind=ScalerKind(args.scaler), seed=args.seed, jobs=args.jobs,
    )
    config = {
        "data": args.data,
        "test_samples": _int_list(args.test_samples),
        "losses": [l.value for l in losses],
        "Cs": cs,
        "folds": args.folds,
        "scaler": args.scaler,
    }
    _write_report(args.out, "grid", args.seed, config, report.to_json_dict())
    for cell in report.cells:
        print(f"loss={cell.loss.value} C={cell.C} cv={cell.cv_mean_f1:.4f} "
              f"test={cell.test_f1:.4f}")
    print(f"chosen loss={report.chosen_loss.value} C={report.chosen_C} -> {args.out}")
    return 0


def _cmd_validate(args) -> int:
    model = load_model(args.model)
    ds = read_dataset(args.data, class_names=model.class_names)
    taxonomy = _taxonomy_from_arg(args.taxonomy)
    t0 = time.perf_counter()
    y_pred = predict(model, ds.rows)
    elapsed = time.perf_counter() - t0
    report = evaluate_predictions(ds.labels, y_pred, model.class_names, taxonomy)
    results = report.to_json_dict()
    if args.timing:
        results["predict_seconds"] = elapsed
    if args.unambiguous:
        if not isinstance(model, LinearModel):
            raise SpectraSortError("--unambiguous requires a linear-svm model")
        results["coverage"] = unambiguous_report(model, ds.rows, ds.labels).to_json_dict()
    csv_path = args.confusion_csv or str(Path(args.out).with_suffix("")) + ".confusion.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(report.confusion.to_csv_text())
    config = {"data": args.data, "model": args.model, "taxonomy": args.taxonomy}
    _write_report(args.out, "validate", args.seed, config, results)
    print(f"alloy macro_f1={report.macro_f1:.4f} cluster_f1={report.cluster_f1:.4f}")
    print(f"-> {args.out} and {csv_path}")
    return 0


# --------------------------------------------------------------------------
# Parser assembly
# --------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="spectrasort", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    _add_grid_flags(p)
    p.add_argument("--catalog", help="element line catalog file (default: packaged)")
    p.add_argument("--compositions", help="alloy preset file (default: packaged)")
    p.add_argument("--samples-per-alloy", type=int, default=3)
    p.add_argument("--spectra-per-sample", type=int, default=200)
    p.add_argument("--first-sample-id", type=int, default=101)
    p.add_argument("--offspec", action="store_true",
                   help="use off-spec composition jitter (validation-style samples)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="parse, gate, label, and merge raw exports")
    p.add_argument("--manifest", required=True, help="JSON run manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("gate", help="report gate verdicts for raw spectrum files")
    _add_grid_flags(p)
    _add_gate_flags(p)
    p.add_argument("--out", help="optional JSON report path")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=_cmd_gate)

    p = sub.add_parser("train", help="train a classifier on a dataset file")
    p.add_argument("--data", required=True)
    _add_pipeline_flags(p)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--strict", action="store_true",
                   help="exit 3 if the solver did not converge")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("classify", help="classify raw spectrum files")
    p.add_argument("--model", required=True)
    p.add_argument("--timing", action="store_true")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--data", required=True)
    _add_pipeline_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("sweep", help="scaler x algorithm cross-validation sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--algos", default=",".join(_ALGO_CHOICES))
    p.add_argument("--scalers", default="all")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("curve", help="learning curve on a sample-held-out split")
    p.add_argument("--data", required=True)
    p.add_argument("--test-samples", required=True,
                   help="comma-separated sample ids held out for testing")
    p.add_argument("--sizes", default="5,50,100,200,400")
    _add_pipeline_flags(p)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("grid", help="grid search over SVM loss and C")
    p.add_argument("--data", required=True)
    p.add_argument("--test-samples", required=True)
    p.add_argument("--losses", default=",".join(l.value for l in GRID_LOSSES))
    p.add_argument("--Cs", default=",".join(str(c) for c in GRID_CS))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--scaler", choices=_SCALER_CHOICES, default="normalizer")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("validate", help="score a model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy", default="default",
                   help='"default" or a JSON file mapping alloy -> cluster')
    p.add_argument("--unambiguous", action="store_true",
                   help="include the single-positive-score analysis")
    p.add_argument("--timing", action="store_true")
    p.add_argument("--confusion-csv", help="confusion matrix CSV path")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpectraSortError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
