"""Sweep protocols over k-fold cross validation, and their result tables.

Three protocols are provided:

* ``complexity_sweep``: DT and RF over a grid of leaf budgets.
* ``da_sweep``: DA-DT (forest teacher) and DA-RF (tree teacher) over the
  student's leaf budget, the teacher fixed at a saturated budget.
* ``lambda_sweep``: one base forest per fold refined with NCL for every
  lambda on the grid.

Growth under a leaf budget is prefix-consistent (see :mod:`rfdescent.tree`),
so each fold grows its models once at the largest budget and truncates them
for the smaller ones; ``reuse_growth=False`` grows every budget from scratch
and gives identical rows.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml
from joblib import Parallel, delayed

from . import __version__
from .complexity import decompose, ensemble_rademacher
from .dataio import DataError, Dataset, load_dataset, read_manifest, default_data_dir, stratified_kfold
from .distill import AugmentConfig, augment
from .forest import Forest, ForestConfig, train_rf, zero_one_error
from .ncforest import NclConfig, diversity_report, refine
from .tree import GrowConfig, grow_tree

log = logging.getLogger(__name__)

PROTOCOLS = ("complexity_sweep", "da_sweep", "lambda_sweep")
SATURATED = 2**30

PAPER_LAMBDAS = [round(-20 + 0.1 * i, 1) for i in range(211)] + [1.001, 1.002, 1.003, 1.004, 1.005]
DESK_LAMBDAS = [-20.0, -10.0, -5.0, -2.0, -1.0, 0.0, 0.5, 0.9, 1.0, 1.001, 1.003, 1.005]

PRESETS = {
    "paper": {
        "complexity_sweep": {"M": 256, "grid": [2**i for i in range(1, 15)]},
        "da_sweep": {"M": 256, "grid": [2**i for i in range(1, 15)]},
        "lambda_sweep": {"M": 256, "grid": PAPER_LAMBDAS, "base_budget": 4096},
    },
    "desk": {
        "complexity_sweep": {"M": 64, "grid": [2**i for i in range(4, 13)]},
        "da_sweep": {"M": 64, "grid": [2**i for i in range(4, 13)]},
        "lambda_sweep": {"M": 64, "grid": DESK_LAMBDAS, "base_budget": 512},
    },
}


class HarnessError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str
    protocol: str
    grid: list = field(default_factory=list)
    M: int = 64
    k: int = 5
    seed: int = 0
    scale: str = "desk"
    output: str = "results"
    data_dir: str | None = None
    feature_budget: int | None = None  # None: ceil(sqrt(d)) for forests
    T: int = 10
    epsilon: float = 0.01
    teacher_budget: int = SATURATED
    base_budget: int = 512
    epochs: int = 50
    step_size: float = 1e-3
    batch_size: int = 64
    optimizer: str = "adam"
    reuse_growth: bool = True
    n_jobs: int = 1
    record_wall_time: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise HarnessError(f"unknown protocol {self.protocol!r}")
        if not self.grid:
            raise HarnessError("grid must not be empty")
        if self.k < 2 or self.M < 1:
            raise HarnessError("need k >= 2 and M >= 1")
        if self.protocol != "lambda_sweep" and any(int(g) < 2 for g in self.grid):
            raise HarnessError("leaf budgets must be >= 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def make_config(protocol: str, dataset: str, scale: str = "desk", **overrides) -> ExperimentConfig:
    """Preset for ``scale`` updated with ``overrides`` (None values ignored)."""
    if scale not in PRESETS:
        raise HarnessError(f"unknown scale {scale!r}")
    if protocol not in PROTOCOLS:
        raise HarnessError(f"unknown protocol {protocol!r}")
    base = dict(PRESETS[scale][protocol])
    base.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(base) - known
    if unknown:
        raise HarnessError(f"unknown config key(s) {sorted(unknown)}")
    base["grid"] = list(base["grid"])
    return ExperimentConfig(dataset=dataset, protocol=protocol, scale=scale, **base).validate()


def load_config(path) -> dict:
    """Read a YAML (or JSON) mapping of ExperimentConfig keys.

    A run manifest written by :func:`emit` is accepted too; its ``config``
    entry is used.
    """
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise HarnessError(f"{path}: expected a mapping")
    return dict(doc.get("config", doc))


# -- rows -------------------------------------------------------------------

ROW_FIELDS = ("dataset", "fold", "protocol", "model", "grid_value", "train_error", "test_error",
              "ensemble_rademacher", "avg_height", "avg_member_mse", "diversity", "ensemble_mse",
              "cbound", "wall_time")
NUMERIC_FIELDS = ROW_FIELDS[5:]


@dataclass
class ResultRow:
    dataset: str
    fold: int
    protocol: str
    model: str
    grid_value: float | None
    train_error: float
    test_error: float
    ensemble_rademacher: float = float("nan")
    avg_height: float = float("nan")
    avg_member_mse: float = float("nan")
    diversity: float = float("nan")
    ensemble_mse: float = float("nan")
    cbound: float = float("nan")
    wall_time: float | None = None


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[ResultRow]
    traces: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence(base, spawn_key=tuple(keys)).generate_state(1)[0])


def _model_row(cfg, fold, model, grid_value, m, ds, train, test, n_train, wall_time=None):
    comp = ensemble_rademacher(m, n_train)
    if isinstance(m, Forest):
        rep = diversity_report(m, ds, train)
        member, div, ens, cb = rep.avg_member_mse, rep.diversity, rep.ensemble_mse, rep.cbound
    else:
        member, div, ens = decompose(m.predict_proba(ds.X[train])[None], ds.Y[train])
        cb = float("nan")
    return ResultRow(cfg.dataset, fold, cfg.protocol, model, grid_value,
                     zero_one_error(m, ds, train), zero_one_error(m, ds, test),
                     comp.ensemble_rademacher, comp.avg_height, member, div, ens, cb, wall_time)


def _sweep_models(cfg, fold, ds, train, test, n_train, models):
    """``models`` holds (tag, fit) pairs where fit(budget) returns a model."""
    rows = []
    budgets = [int(g) for g in cfg.grid]
    for tag, fit in models:
        t0 = time.perf_counter()
        grown = fit(max(budgets)) if cfg.reuse_growth else None
        shared = time.perf_counter() - t0
        for b in budgets:
            t1 = time.perf_counter()
            m = grown.truncate(b) if grown is not None else fit(b)
            wall = shared + time.perf_counter() - t1 if cfg.record_wall_time else None
            rows.append(_model_row(cfg, fold, tag, b, m, ds, train, test, n_train, wall))
    return rows


def _grow_cfg(budget, features, seed):
    return GrowConfig(max_leaf_nodes=budget, feature_sample_size=features, seed=seed)


def _forest_cfg(cfg, budget, seed):
    return ForestConfig(M=cfg.M, grow=_grow_cfg(budget, cfg.feature_budget, 0), seed=seed)


def _complexity_fold(cfg, ds, folds, fold):
    train, test = folds.train_test(fold)
    models = [
        ("DT", lambda b: grow_tree(ds, train, _grow_cfg(b, None, _seed(cfg.seed, fold, 1)))),
        ("RF", lambda b: train_rf(ds, train, _forest_cfg(cfg, b, _seed(cfg.seed, fold, 2)))),
    ]
    return _sweep_models(cfg, fold, ds, train, test, train.size, models), []


def _da_fold(cfg, ds, folds, fold):
    train, test = folds.train_test(fold)
    # teachers are trained once per fold and shared by the whole student grid
    rf_teacher = train_rf(ds, train, _forest_cfg(cfg, cfg.teacher_budget, _seed(cfg.seed, fold, 3, 0)))
    dt_teacher = grow_tree(ds, train, _grow_cfg(cfg.teacher_budget, None, _seed(cfg.seed, fold, 4, 0)))
    aug_rf = augment(ds, train, rf_teacher, AugmentConfig(cfg.T, cfg.epsilon, _seed(cfg.seed, fold, 3, 1)))
    aug_dt = augment(ds, train, dt_teacher, AugmentConfig(cfg.T, cfg.epsilon, _seed(cfg.seed, fold, 4, 1)))
    all_rf, all_dt = np.arange(aug_rf.N), np.arange(aug_dt.N)
    models = [
        ("DA-DT", lambda b: grow_tree(aug_rf, all_rf, _grow_cfg(b, None, _seed(cfg.seed, fold, 3, 2)))),
        ("DA-RF", lambda b: train_rf(aug_dt, all_dt, _forest_cfg(cfg, b, _seed(cfg.seed, fold, 4, 2)))),
    ]
    return _sweep_models(cfg, fold, ds, train, test, train.size, models), []


def _lambda_fold(cfg, ds, folds, fold):
    train, test = folds.train_test(fold)
    t0 = time.perf_counter()
    base = train_rf(ds, train, _forest_cfg(cfg, cfg.base_budget, _seed(cfg.seed, fold, 5)))
    base_time = time.perf_counter() - t0
    rows, traces = [], []
    rows.append(_model_row(cfg, fold, "RF", None, base, ds, train, test, train.size,
                           base_time if cfg.record_wall_time else None))
    for lam in cfg.grid:
        lam = float(lam)
        t1 = time.perf_counter()
        ncl = NclConfig(lam=lam, step_size=cfg.step_size, batch_size=cfg.batch_size,
                        epochs=cfg.epochs, optimizer=cfg.optimizer, seed=_seed(cfg.seed, fold, 6))
        res = refine(base, ds, train, ncl)
        elapsed = time.perf_counter() - t1
        rep = diversity_report(res.forest, ds, train, lam)
        comp = ensemble_rademacher(res.forest, train.size)
        H_test = res.forest.member_outputs(ds.X[test])
        H_train = res.forest.member_outputs(ds.X[train])
        member_train = float(np.mean(np.argmax(H_train, axis=2) != ds.labels[train]))
        member_test = float(np.mean(np.argmax(H_test, axis=2) != ds.labels[test]))
        common = dict(ensemble_rademacher=comp.ensemble_rademacher, avg_height=comp.avg_height,
                      avg_member_mse=rep.avg_member_mse, diversity=rep.diversity,
                      ensemble_mse=rep.ensemble_mse, cbound=rep.cbound)
        wall = elapsed if cfg.record_wall_time else None
        rows.append(ResultRow(cfg.dataset, fold, cfg.protocol, "NCF", lam,
                              zero_one_error(res.forest, ds, train), zero_one_error(res.forest, ds, test),
                              wall_time=wall, **common))
        rows.append(ResultRow(cfg.dataset, fold, cfg.protocol, "NCF-member", lam,
                              member_train, member_test, wall_time=wall, **common))
        traces.extend({"dataset": cfg.dataset, "fold": fold, **t} for t in res.trace)
    return rows, traces


FOLD_RUNNERS = {"complexity_sweep": _complexity_fold, "da_sweep": _da_fold,
                "lambda_sweep": _lambda_fold}


def _run_fold(cfg, ds, folds, fold):
    try:
        rows, traces = FOLD_RUNNERS[cfg.protocol](cfg, ds, folds, fold)
        return fold, rows, traces, None
    except Exception as exc:  # collected and reported as a failed cell
        log.exception("fold %d failed", fold)
        return fold, [], [], {"fold": fold, "error": f"{type(exc).__name__}: {exc}"}


def run(cfg: ExperimentConfig, ds: Dataset | None = None) -> RunResult:
    """Run every fold of ``cfg``; fold results are merged in fold order."""
    cfg.validate()
    if ds is None:
        ds = load_dataset(cfg.dataset, cfg.data_dir)
    folds = stratified_kfold(ds, cfg.k, cfg.seed)
    if cfg.n_jobs == 1:
        parts = [_run_fold(cfg, ds, folds, f) for f in range(cfg.k)]
    else:
        parts = Parallel(n_jobs=cfg.n_jobs)(delayed(_run_fold)(cfg, ds, folds, f) for f in range(cfg.k))
    parts.sort(key=lambda p: p[0])
    result = RunResult(cfg, [], [], [])
    for _, rows, traces, failure in parts:
        result.rows.extend(rows)
        result.traces.extend(traces)
        if failure:
            result.failures.append(failure)
    return result


def run_complexity_sweep(cfg: ExperimentConfig, ds: Dataset | None = None) -> RunResult:
    return run(replace(cfg, protocol="complexity_sweep"), ds)


def run_da_sweep(cfg: ExperimentConfig, ds: Dataset | None = None) -> RunResult:
    return run(replace(cfg, protocol="da_sweep"), ds)


def run_lambda_sweep(cfg: ExperimentConfig, ds: Dataset | None = None) -> RunResult:
    return run(replace(cfg, protocol="lambda_sweep"), ds)


def check_dataset(cfg: ExperimentConfig) -> None:
    """Fail before any training when the dataset cannot be found."""
    data_dir = cfg.data_dir if cfg.data_dir is not None else default_data_dir()
    manifest = read_manifest(data_dir)
    if cfg.dataset not in manifest:
        raise DataError(f"dataset {cfg.dataset!r} not in manifest")
    path = Path(data_dir) / manifest[cfg.dataset]["path"]
    if not path.exists():
        raise DataError(f"dataset {cfg.dataset!r}: file {path} not found")


# -- tables -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])
    return buf.getvalue()


SUMMARY_FIELDS = ("dataset", "protocol", "model", "grid_value", "n_folds") + NUMERIC_FIELDS


def summarize(rows) -> list[dict]:
    """Fold-averaged rows keyed by (dataset, protocol, model, grid value), first-seen order."""
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.dataset, r.protocol, r.model, r.grid_value), []).append(r)
    out = []
    for (dataset, protocol, model, gv), members in groups.items():
        entry = {"dataset": dataset, "protocol": protocol, "model": model, "grid_value": gv,
                 "n_folds": len(members)}
        for f in NUMERIC_FIELDS:
            vals = [getattr(m, f) for m in members]
            entry[f] = None if any(v is None for v in vals) else float(np.mean(vals))
        out.append(entry)
    return out


def summary_to_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for s in summary:
        w.writerow([_fmt(s[f]) for f in SUMMARY_FIELDS])
    return buf.getvalue()


def read_rows(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise HarnessError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            num = {f: (None if rec[f] == "" else float(rec[f])) for f in NUMERIC_FIELDS}
            gv = None if rec["grid_value"] == "" else float(rec["grid_value"])
            rows.append(ResultRow(rec["dataset"], int(rec["fold"]), rec["protocol"], rec["model"],
                                  gv, **num))
    return rows


def _versions() -> dict:
    import numba
    import numpy
    return {"rfdescent": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "numba": numba.__version__}


def emit(result: RunResult, out_dir) -> dict[str, Path]:
    """Write results.csv, summary.csv, manifest.json (and trace.jsonl for lambda sweeps)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"results": out / "results.csv", "summary": out / "summary.csv",
                 "manifest": out / "manifest.json"}
        paths["results"].write_text(rows_to_csv(result.rows), encoding="utf-8")
        paths["summary"].write_text(summary_to_csv(summarize(result.rows)), encoding="utf-8")
        manifest = {"config": result.config.to_dict(), "seed": result.config.seed,
                    "versions": _versions(), "rows": len(result.rows),
                    "failures": result.failures, "row_fields": list(ROW_FIELDS)}
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
        if result.traces:
            paths["trace"] = out / "trace.jsonl"
            paths["trace"].write_text("".join(json.dumps(t, sort_keys=True) + "\n"
                                              for t in result.traces), encoding="utf-8")
    except OSError as exc:
        raise HarnessError(f"cannot write results to {out}: {exc}") from exc
    return paths
