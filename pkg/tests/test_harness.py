from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from panges.data import SynthConfig, generate_synthetic, save_panoptic_dataset
from panges.errors import DimensionMismatch
from panges.harness import (
    ALL_MODES,
    AblationMode,
    REPORT_COLUMNS,
    RunConfig,
    ablation_table,
    compare_parts_evaluator,
    emit_overlays,
    modularity_demo,
    run_ablations,
    synth_from_json,
    dataset_spec_json,
    trial_seed,
)
from panges.mask import LabelMap, SegmentInfo
from panges.pipeline import PipelineConfig
from panges.sources import NoiseConfig
from panges.worker import WorkerEndpoint

TOY = Path(__file__).parent / "toy_workers.py"

SMALL_SYNTH = SynthConfig(images=2, width=40, height=40, stuff_classes=2,
                          thing_classes=2, things_per_image=(1, 2),
                          stuff_cells=(2, 3))
NOISY = NoiseConfig(morph_radius=(-2, 2), jitter_sigma=1.5, drop_probability=0.05,
                    blob_probability=0.05, score_sigma=0.15, confusion=0.15)


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

def test_trial_seeds_are_stable_and_distinct():
    seeds = [trial_seed(7, t) for t in range(64)]
    assert seeds == [trial_seed(7, t) for t in range(64)]
    assert len(set(seeds)) == 64
    assert trial_seed(8, 0) != trial_seed(7, 0)


def test_synth_spec_json_roundtrip():
    assert synth_from_json(dataset_spec_json(SMALL_SYNTH)) == SMALL_SYNTH


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

def test_zero_noise_full_mode_scores_perfectly():
    cfg = RunConfig(
        dataset=SMALL_SYNTH,
        pipeline=PipelineConfig(max_cycles=50, min_unsegmented_fraction=0.0),
        noise=NoiseConfig(),
        modes=(AblationMode.FULL,),
        trials=1,
        base_seed=3,
    )
    report = run_ablations(cfg)
    assert list(report["modes"]) == ["full"], "one mode in, one row out"
    row = report["modes"]["full"]
    assert row["failed"] is None
    assert row["mean"][0] == 100.0, f"zero-noise run should be perfect: {row['mean']}"


def test_ablation_report_is_reproducible():
    cfg = RunConfig(dataset=SMALL_SYNTH, noise=NOISY, trials=2, base_seed=9,
                    pipeline=PipelineConfig(max_cycles=6))
    a = run_ablations(cfg)
    b = run_ablations(cfg)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_ablation_report_structure_and_table():
    cfg = RunConfig(dataset=SMALL_SYNTH, noise=NOISY, trials=3, base_seed=1,
                    pipeline=PipelineConfig(max_cycles=6))
    report = run_ablations(cfg)
    assert report["columns"] == list(REPORT_COLUMNS)
    assert set(report["modes"]) == {m.value for m in ALL_MODES}
    for row in report["modes"].values():
        assert row["failed"] is None
        assert len(row["per_trial"]) == 3
        assert len(row["mean"]) == 9 and len(row["std"]) == 9
    table = ablation_table(report)
    for column in REPORT_COLUMNS:
        assert column in table
    for mode in ALL_MODES:
        assert mode.value in table


def test_ablation_writes_report_files(tmp_path):
    cfg = RunConfig(dataset=SMALL_SYNTH, noise=NOISY, trials=1, base_seed=2,
                    pipeline=PipelineConfig(max_cycles=4),
                    modes=(AblationMode.FULL, AblationMode.NO_EVALUATOR),
                    out_dir=tmp_path)
    report = run_ablations(cfg)
    on_disk = json.loads((tmp_path / "ablation_report.json").read_text())
    assert on_disk == json.loads(json.dumps(report))
    assert (tmp_path / "ablation_report.txt").read_text() == ablation_table(report)
    lines = (tmp_path / "traces.jsonl").read_text().splitlines()
    assert lines, "ablate must persist traces"
    for line in lines[:50]:
        row = json.loads(line)
        assert row["mode"] in ("full", "no_evaluator")
        assert row["trial"] == 0
        assert "event" in row


def test_failing_endpoint_marks_only_dependent_modes(tmp_path):
    # an evaluator worker that dies after the handshake sinks every mode that
    # actually consults it; modes that override the evaluator keep running
    endpoint = WorkerEndpoint(
        "evaluator", (sys.executable, str(TOY), "die-after-ready"),
        on_failure="abort",
    )
    cfg = RunConfig(dataset=SMALL_SYNTH, noise=NOISY, trials=1, base_seed=5,
                    pipeline=PipelineConfig(max_cycles=3),
                    endpoints=(endpoint,))
    report = run_ablations(cfg)
    modes = report["modes"]
    for dependent in ("full", "no_refinement", "perfect_classification"):
        assert modes[dependent]["failed"], f"{dependent} should have failed"
    for independent in ("no_evaluator", "perfect_evaluator"):
        assert modes[independent]["failed"] is None, (
            f"{independent} does not use the endpoint and must survive"
        )
        assert len(modes[independent]["per_trial"]) == 1
    table = ablation_table(report)
    assert "FAILED" in table


def test_ablation_on_saved_dataset(tmp_path):
    records, _ = generate_synthetic(SMALL_SYNTH)
    save_panoptic_dataset(records, tmp_path)
    cfg = RunConfig(dataset=tmp_path, noise=NOISY, trials=2, base_seed=0,
                    pipeline=PipelineConfig(max_cycles=4),
                    modes=(AblationMode.FULL,))
    report = run_ablations(cfg)
    assert len(report["modes"]["full"]["per_trial"]) == 2
    assert report["dataset"] == str(tmp_path)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(dataset=SMALL_SYNTH, trials=0)
    with pytest.raises(ValueError):
        RunConfig(dataset=SMALL_SYNTH, modes=())
    twice = (WorkerEndpoint("evaluator", ("x",)), WorkerEndpoint("evaluator", ("y",)))
    with pytest.raises(ValueError):
        RunConfig(dataset=SMALL_SYNTH, endpoints=twice)


# ---------------------------------------------------------------------------
# parts comparison
# ---------------------------------------------------------------------------

def test_parts_comparison_structure_and_pairing():
    report = compare_parts_evaluator(SMALL_SYNTH, NOISY, trials=3, base_seed=2)
    assert set(report["arms"]) == {"with_evaluator", "without_evaluator"}
    for arm in report["arms"].values():
        assert len(arm["per_trial"]) == 3
        assert 0.0 <= arm["mean"] <= 100.0
    again = compare_parts_evaluator(SMALL_SYNTH, NOISY, trials=3, base_seed=2)
    assert report == again, "paired comparison must be reproducible"


# ---------------------------------------------------------------------------
# modularity demo
# ---------------------------------------------------------------------------

def test_single_letter_alphabet_needs_exactly_length_guesses():
    report = modularity_demo(1, 17, 50, np.random.default_rng(0))
    assert report["per_trial"] == [17] * 50
    assert report["modular_mean"] == 17.0
    assert report["modular_std"] == 0.0


@pytest.mark.parametrize("alphabet,length", [(2, 3), (9, 10)])
def test_modular_mean_tracks_alphabet_times_length(alphabet, length):
    trials = 400
    report = modularity_demo(alphabet, length, trials, np.random.default_rng(13))
    expected = alphabet * length
    slack = 3 * report["modular_std"] / np.sqrt(trials)
    assert abs(report["modular_mean"] - expected) <= slack, (
        f"mean {report['modular_mean']} strays from {expected} by more than {slack}"
    )


def test_monolithic_count_is_closed_form_only():
    report = modularity_demo(9, 1000, 1, np.random.default_rng(0))
    assert report["monolithic_log10"] == pytest.approx(1000 * np.log10(9))
    assert report["monolithic_log10"] == pytest.approx(954.2425, abs=1e-4)


def test_modularity_demo_validates_inputs():
    for bad in [(0, 5, 5), (5, 0, 5), (5, 5, 0)]:
        with pytest.raises(ValueError):
            modularity_demo(*bad, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# overlays
# ---------------------------------------------------------------------------

def test_overlay_of_all_void_result_is_black(tmp_path):
    records, _ = generate_synthetic(SMALL_SYNTH)
    rec = records[0]
    empty = LabelMap(np.zeros((rec.height, rec.width), dtype=np.int32), {},
                     validate=False)
    path = emit_overlays(rec, empty, tmp_path)
    pixels = np.asarray(Image.open(path))
    assert pixels.shape == (rec.height, rec.width, 3)
    assert pixels.max() == 0, "an all-void result must render black"


def test_overlay_colors_are_seeded(tmp_path):
    records, _ = generate_synthetic(SMALL_SYNTH)
    rec = records[0]
    a = np.asarray(Image.open(emit_overlays(rec, rec.gt, tmp_path / "a", seed=5)))
    b = np.asarray(Image.open(emit_overlays(rec, rec.gt, tmp_path / "b", seed=5)))
    c = np.asarray(Image.open(emit_overlays(rec, rec.gt, tmp_path / "c", seed=6)))
    assert np.array_equal(a, b), "same seed must give identical overlays"
    assert not np.array_equal(a, c), "different seed should recolor"


def test_overlay_rejects_mismatched_result(tmp_path):
    records, _ = generate_synthetic(SMALL_SYNTH)
    wrong = LabelMap(np.ones((8, 8), dtype=np.int32),
                     {1: SegmentInfo(1, True)})
    with pytest.raises(DimensionMismatch):
        emit_overlays(records[0], wrong, tmp_path)
