from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from panges.cli import main
from panges.data import load_panoptic, load_parts, save_predicted_parts
from panges.pipeline import PipelineConfig, segment_parts
from panges.sources import NoiseConfig, oracle_sources

TOY = Path(__file__).parent / "toy_workers.py"

PERFECT = json.dumps({
    "pipeline": {"max_cycles": 50, "min_unsegmented_fraction": 0.0},
})


@pytest.fixture()
def dataset(tmp_path):
    out = tmp_path / "ds"
    code = main(["synth", "--out", str(out), "--seed", "3", "--images", "2",
                 "--width", "40", "--height", "40"])
    assert code == 0
    return out


def test_synth_writes_a_loadable_dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    code = main(["synth", "--out", str(out), "--seed", "3", "--images", "2",
                 "--width", "40", "--height", "40"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["images"] == 2
    assert summary["seed"] == 3
    records = load_panoptic(out / "panoptic.json")
    assert len(records) == 2
    parts = load_parts(out / "parts.json")
    assert len(parts) == summary["objects"]
    assert (out / "maps").is_dir() and (out / "images").is_dir()


def test_segment_perfect_run_reports_full_marks(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["segment", str(dataset), "--seed", "1", "--out", str(out),
                 "--config", PERFECT, "--overlays"])
    assert code == 0
    table = capsys.readouterr().out
    assert "PQ" in table and "100.00" in table
    assert (out / "predicted.json").exists()
    assert (out / "pq_report.json").exists()
    assert (out / "traces.jsonl").read_text().strip()
    overlays = sorted((out / "overlays").glob("overlay_*.png"))
    assert len(overlays) == 2
    predicted = load_panoptic(out / "predicted.json")
    assert {rec.image_id for rec in predicted} == {0, 1}


def test_eval_pq_between_gt_and_predictions(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["segment", str(dataset), "--seed", "1", "--out", str(out),
                 "--config", PERFECT]) == 0
    capsys.readouterr()
    report_path = tmp_path / "pq.json"
    code = main(["eval-pq", str(dataset), str(out), "--out", str(report_path)])
    assert code == 0
    assert "100.00" in capsys.readouterr().out
    doc = json.loads(report_path.read_text())
    assert doc["all"]["pq"] == 1.0


def test_eval_parts_scores_saved_predictions(dataset, tmp_path, capsys):
    records = load_parts(dataset / "parts.json")
    bundle = oracle_sources(0, NoiseConfig(), exact_evaluator=True,
                            with_refiner=False, with_classifier=False)
    cfg = PipelineConfig.parts_default(seed=1)
    predictions = [segment_parts(rec, bundle, cfg)[0] for rec in records]
    pred_path = tmp_path / "pred_parts.json"
    save_predicted_parts(predictions, pred_path)

    code = main(["eval-parts", str(dataset), str(pred_path)])
    assert code == 0
    table = capsys.readouterr().out
    assert "overall" in table and "IOU" in table


def test_ablate_runs_and_is_byte_identical(dataset, tmp_path, capsys):
    config = json.dumps({
        "synth": {"images": 1, "width": 40, "height": 40, "stuff_classes": 2,
                  "thing_classes": 2, "things_per_image": [1, 1],
                  "stuff_cells": [2, 3]},
        "noise": {"morph_radius": [-1, 1], "score_sigma": 0.1},
        "pipeline": {"max_cycles": 4},
    })
    args = ["ablate", "--trials", "1", "--seed", "4", "--config", config,
            "--modes", "full,no_evaluator"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    for name in ("ablation_report.json", "ablation_report.txt", "traces.jsonl"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"


def test_segment_accepts_worker_endpoints(dataset, tmp_path, capsys):
    workers = json.dumps([{
        "role": "evaluator",
        "command": [sys.executable, str(TOY), "half-evaluator"],
    }])
    code = main(["segment", str(dataset), "--seed", "1", "--workers", workers])
    assert code == 0
    assert "PQ" in capsys.readouterr().out


def test_demo_modularity_single_symbol(capsys):
    code = main(["demo-modularity", "--alphabet", "1", "--length", "5",
                 "--trials", "3"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["modular_mean"] == 5.0
    assert doc["monolithic_log10"] == 0.0
    assert "per_trial" not in doc


def test_usage_errors_emit_json_on_stderr(capsys):
    code = main(["eval-pq", "/nonexistent-gt", "/nonexistent-pred"])
    captured = capsys.readouterr()
    assert code == 2
    doc = json.loads(captured.err)
    assert doc["error"] == "usage"


def test_runtime_errors_emit_json_on_stderr(tmp_path, capsys):
    code = main(["ablate", "--config", "{not json", "--trials", "1"])
    captured = capsys.readouterr()
    assert code == 1
    doc = json.loads(captured.err)
    assert doc["error"] == "JSONDecodeError"
    assert "message" in doc


def test_bad_mode_name_is_a_usage_error(dataset, capsys):
    code = main(["segment", str(dataset), "--mode", "telepathy"])
    captured = capsys.readouterr()
    assert code == 2
    assert json.loads(captured.err)["error"] == "usage"
