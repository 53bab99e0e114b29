import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from rfdescent import harness
from rfdescent.cli import main
from rfdescent.dataio import DataError
from rfdescent.harness import (ROW_FIELDS, HarnessError, emit, load_config, make_config, read_rows,
                               run, summarize)

from conftest import make_blobs


@pytest.fixture
def data_dir(tmp_path):
    ds = make_blobs(n=120, d=3, seed=2, noise=1.5)
    d = tmp_path / "data"
    d.mkdir()
    with open(d / "toy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "c", "label"])
        for row, lab in zip(ds.X, ds.labels):
            w.writerow([repr(float(v)) for v in row] + ["pos" if lab else "neg"])
    (d / "manifest.json").write_text(json.dumps({
        "toy": {"path": "toy.csv", "label": "label",
                "columns": {"a": "numeric", "b": "numeric", "c": "numeric"}},
        "ghost": {"path": "ghost.csv", "label": "y", "columns": {"x": "numeric"}}}))
    return d


def small(protocol, data_dir, **kw):
    base = dict(grid=[2, 4, 16] if protocol != "lambda_sweep" else [-1.0, 0.0, 1.0],
                M=4, k=3, data_dir=str(data_dir), epochs=2, base_budget=8, teacher_budget=32, T=2)
    base.update(kw)
    return make_config(protocol, "toy", **base)


@pytest.mark.parametrize("protocol,models", [
    ("complexity_sweep", {"DT", "RF"}),
    ("da_sweep", {"DA-DT", "DA-RF"}),
    ("lambda_sweep", {"RF", "NCF", "NCF-member"}),
])
def test_row_bookkeeping(protocol, models, data_dir):
    cfg = small(protocol, data_dir)
    res = run(cfg)
    assert res.ok
    assert {r.model for r in res.rows} == models
    keys = {}
    for r in res.rows:
        keys.setdefault((r.model, r.grid_value), []).append(r.fold)
        assert 0 <= r.train_error <= 1 and 0 <= r.test_error <= 1
    # every grid point has exactly k fold rows
    assert all(sorted(f) == list(range(cfg.k)) for f in keys.values())
    expected = len(models) * len(cfg.grid) if protocol != "lambda_sweep" else 1 + 2 * len(cfg.grid)
    assert len(keys) == expected


def test_emit_files_and_summary(data_dir, tmp_path):
    res = run(small("lambda_sweep", data_dir))
    paths = emit(res, tmp_path / "out")
    assert set(paths) == {"results", "summary", "manifest", "trace"}
    with open(paths["results"]) as fh:
        assert tuple(next(csv.reader(fh))) == ROW_FIELDS
    rows = read_rows(paths["results"])
    assert len(rows) == len(res.rows)
    with open(paths["summary"]) as fh:
        summary = list(csv.DictReader(fh))
    for s in summary:
        gv = None if s["grid_value"] == "" else float(s["grid_value"])
        members = [r for r in rows if r.model == s["model"] and r.grid_value == gv]
        assert int(s["n_folds"]) == len(members)
        assert float(s["test_error"]) == pytest.approx(np.mean([m.test_error for m in members]), abs=1e-15)
        assert s["wall_time"] == ""
    trace = [json.loads(line) for line in paths["trace"].read_text().splitlines()]
    assert {t["epoch"] for t in trace} == {0, 1, 2}


def test_rerun_byte_identical(data_dir, tmp_path):
    cfg = small("complexity_sweep", data_dir)
    a = emit(run(cfg), tmp_path / "a")
    b = emit(run(cfg), tmp_path / "b")
    for kind in ("results", "summary"):
        assert a[kind].read_bytes() == b[kind].read_bytes()


def test_parallel_folds_match(data_dir, tmp_path):
    cfg = small("complexity_sweep", data_dir)
    a = emit(run(cfg), tmp_path / "a")
    b = emit(run(replace(cfg, n_jobs=2)), tmp_path / "b")
    assert a["results"].read_bytes() == b["results"].read_bytes()


def test_manifest_round_trip(data_dir, tmp_path):
    out = tmp_path / "first"
    assert main(["sweep-complexity", "--dataset", "toy", "--data-dir", str(data_dir), "--grid", "2,8",
                 "--M", "3", "--folds", "2", "--out", str(out)]) == 0
    again = tmp_path / "again"
    assert main(["sweep-complexity", "--config", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert (out / "results.csv").read_bytes() == (again / "results.csv").read_bytes()
    cfg = load_config(out / "manifest.json")
    assert cfg["grid"] == [2, 8] and cfg["M"] == 3


def test_yaml_config(data_dir, tmp_path):
    (tmp_path / "c.yaml").write_text(f"dataset: toy\ndata_dir: {data_dir}\ngrid: [2, 4]\nM: 2\nk: 2\n")
    assert main(["sweep-complexity", "--config", str(tmp_path / "c.yaml"), "--out",
                 str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "results.csv")
    assert {r.grid_value for r in rows} == {2.0, 4.0}


def test_missing_dataset_fails_before_training(data_dir, tmp_path, capsys):
    assert main(["sweep-complexity", "--dataset", "ghost", "--data-dir", str(data_dir),
                 "--out", str(tmp_path / "x")]) == 2
    assert "not found" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()
    assert main(["sweep-complexity", "--dataset", "nope", "--data-dir", str(data_dir)]) == 2


def test_failed_cell_exit_code(data_dir, tmp_path, monkeypatch, capsys):
    original = harness.FOLD_RUNNERS["complexity_sweep"]

    def flaky(cfg, ds, folds, fold):
        if fold == 1:
            raise RuntimeError("boom")
        return original(cfg, ds, folds, fold)

    monkeypatch.setitem(harness.FOLD_RUNNERS, "complexity_sweep", flaky)
    code = main(["sweep-complexity", "--dataset", "toy", "--data-dir", str(data_dir), "--grid", "2,4",
                 "--M", "2", "--folds", "2", "--out", str(tmp_path / "f")])
    assert code == 1
    assert "boom" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert manifest["failures"][0]["fold"] == 1


def test_report_command(data_dir, tmp_path, capsys):
    out = tmp_path / "r"
    main(["sweep-complexity", "--dataset", "toy", "--data-dir", str(data_dir), "--grid", "2",
          "--M", "2", "--folds", "2", "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("dataset,protocol,model,grid_value,n_folds")
    assert len(lines) == 3


def test_wall_time_opt_in(data_dir):
    res = run(small("complexity_sweep", data_dir, record_wall_time=True))
    assert all(r.wall_time is not None and r.wall_time >= 0 for r in res.rows)


def test_config_validation():
    with pytest.raises(HarnessError):
        make_config("complexity_sweep", "toy", grid=[])
    with pytest.raises(HarnessError):
        make_config("bogus", "toy")
    with pytest.raises(HarnessError):
        make_config("complexity_sweep", "toy", colour="red")
    with pytest.raises(HarnessError):
        make_config("complexity_sweep", "toy", grid=[1, 4])


def test_presets():
    desk = make_config("complexity_sweep", "magic")
    assert desk.M == 64 and desk.grid[0] == 16 and desk.grid[-1] == 4096
    paper = make_config("lambda_sweep", "eeg", scale="paper")
    assert paper.M == 256 and paper.base_budget == 4096
    assert paper.grid[0] == -20.0 and paper.grid[-1] == 1.005 and len(paper.grid) == 216


def test_summarize_none_propagates():
    rows = [harness.ResultRow("t", f, "complexity_sweep", "DT", 2, 0.1 * f, 0.2, 0.0, 1.0, 0.0, 0.0,
                              0.0, float("nan")) for f in range(2)]
    s = summarize(rows)[0]
    assert s["train_error"] == pytest.approx(0.05) and s["wall_time"] is None


def test_run_with_unknown_dataset_raises(tmp_path):
    cfg = make_config("complexity_sweep", "toy", data_dir=str(tmp_path))
    with pytest.raises(DataError):
        run(cfg)


def test_fold_averaged_train_error_monotone(data_dir):
    res = run(small("complexity_sweep", data_dir, grid=[2, 4, 8, 16, 32, 64, 128], M=6))
    for model in ("DT", "RF"):
        means = [s["train_error"] for s in summarize(res.rows) if s["model"] == model]
        assert all(b <= a + 1e-6 for a, b in zip(means, means[1:])), (model, means)
