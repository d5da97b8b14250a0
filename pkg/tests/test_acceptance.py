"""End-to-end acceptance checks for the whole toolkit.

Each test exercises one headline guarantee -- metric correctness against a
brute-force implementation, exact recovery under perfect sources, the
direction and significance of the ablation gaps, protocol floors, determinism,
round-trips and throughput -- and prints a one-line verdict so a run of this
file reads as a checklist even when everything passes:

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from panges.cli import main
from panges.data import PanopticRecord, PartsRecord, SynthConfig, generate_synthetic
from panges.data import load_panoptic, save_panoptic_dataset
from panges.harness import AblationMode, RunConfig, compare_parts_evaluator
from panges.harness import modularity_demo, run_ablations
from panges.mask import BitMask, LabelMap, SegmentInfo, rle_decode, rle_encode
from panges.metrics import evaluate_parts, pq_of_maps
from panges.pipeline import PipelineConfig, sample_points, segment_panoptic, select_and_stitch
from panges.sources import Candidate, NoiseConfig, oracle_sources

from conftest import random_mask, rect_mask
from pq_reference import reference_pq

# A noise setting strong enough that the ablation gaps are well clear of the
# run-to-run scatter, but mild enough that the full pipeline still works.
CALIBRATED_NOISE = NoiseConfig(
    morph_radius=(-2, 2),
    jitter_sigma=1.5,
    drop_probability=0.10,
    blob_probability=0.15,
    score_sigma=0.30,
    confusion=0.15,
)

# Small scenes keep a 5-mode x 40-trial sweep around a couple of seconds.
ABLATION_SYNTH = SynthConfig(
    images=3, width=40, height=40, stuff_classes=2, thing_classes=2,
    things_per_image=(1, 2), stuff_cells=(2, 3),
)

# The parts comparison needs objects big enough that their pieces clear the
# 100-px reporting floor, hence the larger canvas and thing size.
PARTS_SYNTH = SynthConfig(
    images=2, width=96, height=96, stuff_classes=2, thing_classes=3,
    things_per_image=(1, 2), stuff_cells=(2, 3),
    thing_size=(0.4, 0.7), parts_per_thing=(2, 4),
)


def _verdict(capsys, name: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def _random_label_map(rng: np.random.Generator, width: int, height: int) -> LabelMap:
    labels = np.zeros((height, width), dtype=np.int32)
    table = {}
    for label in range(1, int(rng.integers(1, 7)) + 1):
        w = int(rng.integers(2, width + 1))
        h = int(rng.integers(2, height + 1))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        labels[y0 : y0 + h, x0 : x0 + w] = label
        cat = int(rng.integers(1, 6))
        table[label] = SegmentInfo(cat, cat % 2 == 0)
    present = set(np.unique(labels).tolist()) - {0}
    return LabelMap(labels, {k: v for k, v in table.items() if k in present})


def test_pq_agrees_with_brute_force_on_500_random_pairs(capsys):
    rng = np.random.default_rng(2026)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(500):
        width = int(rng.integers(8, 33))
        height = int(rng.integers(8, 33))
        gt = _random_label_map(rng, width, height)
        pred = _random_label_map(rng, width, height)
        mine = pq_of_maps([(gt, pred)])
        ref = reference_pq([(gt, pred)])
        assert set(mine.per_category) == set(ref["per_category"]), f"trial {trial}"
        for cat, row in mine.per_category.items():
            for key in ("pq", "rq", "sq"):
                diff = abs(getattr(row, key) - ref["per_category"][cat][key])
                worst = max(worst, diff)
        for group, agg in (("all", mine.all), ("things", mine.things), ("stuff", mine.stuff)):
            for key in ("pq", "rq", "sq"):
                worst = max(worst, abs(getattr(agg, key) - ref[group][key]))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 30.0
    _verdict(capsys, "brute-force agreement",
             ok, f"max |diff| {worst:.2e} over 500 pairs in {elapsed:.1f}s")


def test_perfect_sources_recover_ground_truth_exactly(capsys):
    synth = SynthConfig(seed=424, images=50, width=128, height=128,
                        stuff_classes=3, thing_classes=3,
                        things_per_image=(1, 3), stuff_cells=(2, 3))
    records, _ = generate_synthetic(synth)
    sources = oracle_sources(9, exact_evaluator=True)
    cfg = PipelineConfig(seed=9, max_cycles=50, min_unsegmented_fraction=0.0)
    start = time.perf_counter()
    pairs = []
    for record in records:
        predicted, _ = segment_panoptic(record, sources, cfg)
        pairs.append((record.gt, predicted))
    report = pq_of_maps(pairs)
    elapsed = time.perf_counter() - start
    scores = (report.all.pq, report.things.pq, report.stuff.pq)
    ok = scores == (1.0, 1.0, 1.0) and elapsed < 60.0
    _verdict(capsys, "perfect-pipeline identity",
             ok, f"pq/things/stuff = {scores} on 50 images in {elapsed:.1f}s")


def test_ablation_gaps_are_ordered_and_significant(capsys):
    cfg = RunConfig(dataset=ABLATION_SYNTH,
                    pipeline=PipelineConfig(seed=0, max_cycles=8),
                    noise=CALIBRATED_NOISE, trials=40, base_seed=0)
    report = run_ablations(cfg)
    pq = {}
    for mode in AblationMode:
        entry = report["modes"][mode.value]
        assert entry["failed"] is None, f"{mode.value} failed: {entry['failed']}"
        pq[mode.value] = np.array([row[0] for row in entry["per_trial"]])

    orderings = [
        ("perfect_evaluator", "full"),
        ("full", "no_evaluator"),
        ("perfect_classification", "full"),
        ("full", "no_refinement"),
    ]
    ratios = []
    for better, worse in orderings:
        diff = pq[better] - pq[worse]
        se = diff.std(ddof=1) / math.sqrt(len(diff))
        ratios.append(diff.mean() / se if se else math.inf)
    ok = all(r > 2.0 for r in ratios)
    shown = ", ".join(f"{b}>{w}: {r:.1f}x" for (b, w), r in zip(orderings, ratios))
    _verdict(capsys, "ablation ordering", ok, f"gap/se over 40 trials -- {shown}")


def test_parts_scores_improve_with_an_evaluator(capsys):
    report = compare_parts_evaluator(PARTS_SYNTH, CALIBRATED_NOISE,
                                     trials=40, base_seed=0)
    scored = np.array(report["arms"]["with_evaluator"]["per_trial"])
    unscored = np.array(report["arms"]["without_evaluator"]["per_trial"])
    diff = scored - unscored
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    ok = scored.mean() >= unscored.mean() and diff.mean() > 2.0 * se
    _verdict(capsys, "parts evaluator gain", ok,
             f"{scored.mean():.1f} vs {unscored.mean():.1f} IOU, "
             f"gap {diff.mean():.2f} = {diff.mean() / se:.1f}x se over 40 trials")


def test_tiny_parts_never_reach_the_report(capsys):
    # pixel floor: a 3600-px object whose 100-px piece is comfortably over the
    # 1% line, so only the "more than 100 pixels" rule can reject it
    obj_a = rect_mask(60, 60, 0, 0, 60, 60)
    at_floor = rect_mask(60, 60, 0, 0, 25, 4)          # exactly 100 px
    data = np.zeros((60, 60), dtype=bool)
    data[10, :] = True
    data[11, :41] = True
    past_floor = BitMask(data)                          # 101 px
    third = rect_mask(60, 60, 0, 20, 30, 5)             # 150 px
    rec_a = PartsRecord(0, obj_a, 5, [(at_floor, 11), (past_floor, 12), (third, 13)])

    # fraction floor: both pieces are >100 px, one sits exactly at 1% of the
    # 25600-px object and must still vanish
    obj_b = rect_mask(160, 160, 0, 0, 160, 160)
    at_percent = rect_mask(160, 160, 0, 0, 32, 8)       # 256 px = exactly 1%
    past_percent = rect_mask(160, 160, 0, 20, 30, 10)   # 300 px = 1.17%
    rec_b = PartsRecord(1, obj_b, 6, [(at_percent, 21), (past_percent, 22)])

    preds_a = [at_floor, past_floor, third]
    preds_b = [at_percent, past_percent]
    report = evaluate_parts([rec_a, rec_b], [preds_a, preds_b])

    kept = set(report.per_category)
    expected = {("familiar", 12), ("familiar", 13), ("familiar", 22)}
    ok = (kept == expected
          and report.overall.parts == 3
          and report.overall.iou == 1.0)
    _verdict(capsys, "small-part floors", ok,
             f"kept {sorted(c for _, c in kept)}, dropped 11 (100 px) and 21 (1%)")


def test_modular_search_is_astronomically_cheaper(capsys):
    start = time.perf_counter()
    demo = modularity_demo(9, 1000, 200, rng=np.random.default_rng(7))
    elapsed = time.perf_counter() - start
    mean = demo["modular_mean"]
    log_tries = demo["monolithic_log10"]
    ok = (abs(mean - 9000.0) <= 0.05 * 9000.0
          and abs(log_tries - 1000 * math.log10(9)) < 1e-9
          and elapsed < 10.0)
    _verdict(capsys, "modularity demo", ok,
             f"modular mean {mean:.0f} tries vs monolithic 1e{log_tries:.1f}, "
             f"{elapsed:.2f}s")


def test_overlap_rules_on_hand_built_candidates(capsys):
    empty = LabelMap(np.zeros((20, 20), dtype=np.int32), {})
    roi = BitMask(np.ones((20, 20), dtype=bool))
    candidates = [
        Candidate(rect_mask(20, 20, 0, 0, 10, 10), (0, 0), score=0.9, category=1),
        Candidate(rect_mask(20, 20, 5, 0, 10, 10), (5, 0), score=0.8, category=2),
        Candidate(rect_mask(20, 20, 8, 0, 10, 10), (8, 0), score=0.7, category=3),
    ]
    stitched, placed, decisions = select_and_stitch(
        candidates, empty, roi, PipelineConfig())

    outcomes = [(row["decision"], row.get("reason")) for row in decisions]
    areas = {label: stitched.segment_mask(label).area for label, _ in placed}
    # A lands whole; B overlaps A by 50/100 px (allowed, trimmed to 50 px);
    # C would overlap the occupied strip by 70% and must be ignored outright.
    ok = (outcomes == [("stitched", None), ("stitched", None), ("rejected", "overlap")]
          and len(placed) == 2
          and areas[placed[0][0]] == 100
          and areas[placed[1][0]] == 50
          and decisions[2]["overlap"] == pytest.approx(0.7))
    _verdict(capsys, "overlap selection rules", ok,
             f"outcomes {outcomes}, surviving areas {sorted(areas.values())}")


def test_ablate_runs_are_byte_identical(capsys, tmp_path):
    config = json.dumps({
        "synth": {"images": 2, "width": 40, "height": 40, "stuff_classes": 2,
                  "thing_classes": 2, "things_per_image": [1, 2],
                  "stuff_cells": [2, 3]},
        "noise": CALIBRATED_NOISE.to_json(),
        "pipeline": {"max_cycles": 4},
    })
    args = ["ablate", "--trials", "2", "--seed", "0", "--config", config]
    assert main(args + ["--out", str(tmp_path / "first")]) == 0
    assert main(args + ["--out", str(tmp_path / "second")]) == 0
    capsys.readouterr()
    same = {}
    for name in ("ablation_report.json", "ablation_report.txt", "traces.jsonl"):
        first = (tmp_path / "first" / name).read_bytes()
        second = (tmp_path / "second" / name).read_bytes()
        same[name] = first == second
    ok = all(same.values())
    _verdict(capsys, "rerun determinism", ok,
             f"byte-identical: {', '.join(n for n, v in sorted(same.items()))}"
             if ok else f"mismatch in {[n for n, v in same.items() if not v]}")


def test_formats_round_trip_and_ids_pack_into_rgb(capsys, tmp_path):
    rng = np.random.default_rng(77)
    records = []
    for i in range(50):
        gt = _random_label_map(rng, int(rng.integers(8, 33)), int(rng.integers(8, 33)))
        mask = random_mask(rng, gt.width, gt.height)
        assert rle_decode(rle_encode(mask)) == mask, f"fixture {i}"
        records.append(PanopticRecord(i, gt.width, gt.height, gt))
    out = save_panoptic_dataset(records, tmp_path / "roundtrip", write_images=False)
    loaded = load_panoptic(out)
    assert len(loaded) == 50
    for orig, back in zip(records, loaded):
        assert np.array_equal(orig.gt.labels, back.gt.labels), f"image {orig.image_id}"
        assert orig.gt.segments == back.gt.segments, f"image {orig.image_id}"

    from panges.data import decode_segment_ids, encode_segment_ids
    checks = {0: (0, 0, 0), 300: (44, 1, 0), 65536: (0, 0, 1)}
    ok = True
    for value, rgb in checks.items():
        packed = encode_segment_ids(np.array([[value]], dtype=np.int32))
        ok = ok and tuple(int(c) for c in packed[0, 0]) == rgb
        ok = ok and int(decode_segment_ids(packed)[0, 0]) == value
    _verdict(capsys, "format round-trips", ok,
             "50 save/load + rle identities, ids 0/300/65536 <-> rgb verified")


def test_pq_throughput_on_100_large_pairs(capsys):
    side, block = 512, 64
    yy, xx = np.mgrid[0:side, 0:side]
    base = ((yy // block) * (side // block) + xx // block + 1).astype(np.int32)
    table = {int(v): SegmentInfo(int(v) % 7 + 1, (int(v) % 7 + 1) % 2 == 0)
             for v in np.unique(base)}
    gts = [LabelMap(np.roll(base, 7 * k, axis=1), dict(table)) for k in range(4)]
    pairs = []
    for i in range(100):
        shifted = np.roll(np.roll(base, 3 + i % 9, axis=0), 7 * (i % 4) + i % 5, axis=1)
        pairs.append((gts[i % 4], LabelMap(shifted, dict(table))))

    start = time.perf_counter()
    report = pq_of_maps(pairs)
    elapsed = time.perf_counter() - start
    ok = elapsed < 5.0 and 0.0 < report.all.pq < 1.0
    _verdict(capsys, "evaluation throughput", ok,
             f"100 pairs at 512x512 scored in {elapsed:.2f}s (pq {report.all.pq:.3f})")
