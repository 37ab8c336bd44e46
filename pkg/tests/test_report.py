"""Report assembly over run directories: loading, rendering, cross-seed
aggregation, and partial reports when a directory is unusable."""

import json
import os

import pytest

import spglab.report as rp
from oracles import mean_std_reference


def _write_run(root, name, seed, kind="baseline", test_acc=0.9, test_loss=0.3,
               summary_extra=None, survival=None, with_summary=True):
    run_dir = os.path.join(str(root), name)
    os.makedirs(run_dir, exist_ok=True)
    records = []
    for epoch in range(2):
        train = {"schema": 1, "epoch": epoch, "split": "train", "phase": "train",
                 "loss": 1.0 - 0.2 * epoch, "accuracy": 0.5 + 0.1 * epoch,
                 "mean_step_length": 1.0, "lr": 1e-3}
        if survival is not None:
            train["survival"] = survival
        records.append(train)
        records.append({"schema": 1, "epoch": epoch, "split": "val",
                        "phase": "train", "loss": 1.1 - 0.2 * epoch,
                        "accuracy": 0.45 + 0.1 * epoch})
    records.append({"schema": 1, "epoch": 2, "split": "test", "phase": "final",
                    "loss": test_loss, "accuracy": test_acc})
    with open(os.path.join(run_dir, "metrics.jsonl"), "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    if with_summary:
        summary = {"schema": 1, "kind": kind, "seed": seed,
                   "task_kind": "classification", "epochs": 2,
                   "test_accuracy": test_acc, "test_loss": test_loss}
        summary.update(summary_extra or {})
        with open(os.path.join(run_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh)
    return run_dir


def test_load_run(tmp_path):
    run_dir = _write_run(tmp_path, "run-a", seed=1)
    run = rp.load_run(run_dir)
    assert run.name == "run-a"
    assert len(run.records) == 5
    assert run.summary["seed"] == 1

    bare = _write_run(tmp_path, "run-b", seed=2, with_summary=False)
    assert rp.load_run(bare).summary is None

    with pytest.raises(rp.ReportError, match="no metrics.jsonl"):
        rp.load_run(str(tmp_path / "nowhere"))
    empty = tmp_path / "empty-run"
    empty.mkdir()
    (empty / "metrics.jsonl").write_text("\n")
    with pytest.raises(rp.ReportError, match="holds no records"):
        rp.load_run(str(empty))


def test_render_run_table(tmp_path):
    run_dir = _write_run(tmp_path, "retrain-seed1", seed=1, kind="retrain",
                         test_acc=0.91, survival=[1.0, 0.8, 0.5],
                         summary_extra={"baseline_test_accuracy": 0.90,
                                        "stripped_test_accuracy": 0.91,
                                        "accuracy_delta": 0.01})
    text = "\n".join(rp.render_run(rp.load_run(run_dir)))
    assert "run: retrain-seed1" in text
    assert "kind=retrain" in text
    assert "epoch" in text and "survival" in text
    assert "1.00/0.80/0.50" in text
    assert "test accuracy 0.9100" in text
    assert "baseline 0.9000 -> stripped 0.9100 (delta +0.0100)" in text


def test_aggregate_matches_reference(tmp_path):
    accs = [0.88, 0.91, 0.93]
    runs = [rp.load_run(_write_run(tmp_path, f"seed{i}", seed=i, test_acc=a))
            for i, a in enumerate(accs)]
    agg = rp.aggregate_runs(runs)
    mean, std = mean_std_reference(accs)
    assert agg["baseline"]["test_accuracy"]["count"] == 3
    assert agg["baseline"]["test_accuracy"]["mean"] == pytest.approx(mean)
    assert agg["baseline"]["test_accuracy"]["std"] == pytest.approx(std)
    # population std: a two-value spread of 0.02 has std 0.01, not 0.0141..
    two = [rp.load_run(_write_run(tmp_path, f"two{i}", seed=i, test_acc=a))
           for i, a in enumerate([0.90, 0.92])]
    pair = rp.aggregate_runs(two)["baseline"]["test_accuracy"]
    assert pair["std"] == pytest.approx(0.01)


def test_aggregate_groups_by_kind(tmp_path):
    runs = [
        rp.load_run(_write_run(tmp_path, "b1", seed=1, kind="baseline",
                               test_acc=0.9)),
        rp.load_run(_write_run(tmp_path, "r1", seed=1, kind="retrain",
                               test_acc=0.92,
                               summary_extra={"accuracy_delta": 0.02})),
    ]
    agg = rp.aggregate_runs(runs)
    assert set(agg) == {"baseline", "retrain"}
    assert "accuracy_delta" not in agg["baseline"]
    assert agg["retrain"]["accuracy_delta"]["mean"] == pytest.approx(0.02)


def test_build_report_partial(tmp_path):
    good = _write_run(tmp_path, "good", seed=1)
    bad = str(tmp_path / "missing")
    result = rp.build_report([good, bad])
    assert not result.complete
    assert result.missing[0][0] == bad
    assert "skipped (no usable metrics)" in result.text
    assert "run: good" in result.text
    assert result.data["missing"][0]["path"] == bad


def test_build_report_errors(tmp_path):
    with pytest.raises(rp.ReportError, match="no run directories"):
        rp.build_report([])
    with pytest.raises(rp.ReportError, match="no usable runs"):
        rp.build_report([str(tmp_path / "a"), str(tmp_path / "b")])


def test_multi_run_comparison_section(tmp_path):
    dirs = [_write_run(tmp_path, f"seed{i}", seed=i, test_acc=0.9 + 0.01 * i)
            for i in range(3)]
    result = rp.build_report(dirs)
    assert "comparison" in result.text
    assert "aggregate (mean +/- std over runs, std divides by n)" in result.text
    assert result.data["schema"] == 1
    assert [r["seed"] for r in result.data["runs"]] == [0, 1, 2]
    single = rp.build_report(dirs[:1])
    assert "comparison" not in single.text


def test_run_report_writes_files(tmp_path):
    dirs = [_write_run(tmp_path, f"seed{i}", seed=i) for i in range(2)]
    out = str(tmp_path / "report-out")
    result = rp.run_report(dirs, out_dir=out)
    assert open(os.path.join(out, "report.txt")).read() == result.text
    on_disk = json.load(open(os.path.join(out, "report.json")))
    assert on_disk == result.data


def test_report_over_real_run(tmp_path, blobs_spec):
    from spglab.config import TrainConfig
    from spglab.training import run_baseline
    cfg = TrainConfig(task=blobs_spec, hidden=8, seed=5, epochs=2)
    out = str(tmp_path / "real")
    summary = run_baseline(cfg, out_dir=out)
    result = rp.build_report([out])
    assert f"test accuracy {summary['test_accuracy']:.4f}" in result.text
    assert result.data["runs"][0]["test_accuracy"] == summary["test_accuracy"]
