"""Experiment drivers: the ablation matrix, the parts-evaluator comparison,
the modularity demo, and overlay rendering.

Everything here is reproducible bit-exactly from its config and base seed:
per-trial seeds are derived, datasets are regenerated per trial, and reports
carry no timestamps or environment state.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .data import PanopticRecord, SynthConfig, generate_synthetic, load_panoptic
from .errors import DimensionMismatch, ProtocolError, WorkerError
from .mask import LabelMap
from .metrics import PqStats, compute_pq, evaluate_parts
from .pipeline import PipelineConfig, segment_panoptic, segment_parts
from .sources import (
    ConstantEvaluator,
    NoiseConfig,
    OracleClassifier,
    OracleEvaluator,
    OracleGenerator,
    SourceBundle,
    oracle_sources,
)
from .worker import WorkerEndpoint, open_worker_source


class AblationMode(str, Enum):
    """One source-configuration override per mode; ``full`` overrides nothing."""

    FULL = "full"
    NO_EVALUATOR = "no_evaluator"
    PERFECT_EVALUATOR = "perfect_evaluator"
    NO_REFINEMENT = "no_refinement"
    PERFECT_CLASSIFICATION = "perfect_classification"


ALL_MODES = tuple(AblationMode)

REPORT_COLUMNS = (
    "pq", "rq", "sq",
    "pq_things", "rq_things", "sq_things",
    "pq_stuff", "rq_stuff", "sq_stuff",
)


@dataclass(frozen=True)
class RunConfig:
    """One ablation campaign: dataset x modes x trials."""

    dataset: SynthConfig | Path | str
    pipeline: PipelineConfig = PipelineConfig()
    noise: NoiseConfig = NoiseConfig()
    modes: tuple[AblationMode, ...] = ALL_MODES
    endpoints: tuple[WorkerEndpoint, ...] = ()
    out_dir: Path | None = None
    trials: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.modes:
            raise ValueError("mode list must not be empty")
        seen_roles = [ep.role for ep in self.endpoints]
        if len(seen_roles) != len(set(seen_roles)):
            raise ValueError("at most one endpoint per role")


def trial_seed(base_seed: int, trial: int) -> int:
    """Independent, order-free seed for one trial of a campaign."""
    return int(np.random.SeedSequence([base_seed, trial]).generate_state(1)[0])


def sources_for_mode(
    mode: AblationMode,
    seed: int,
    noise: NoiseConfig,
    external: dict[str, object],
) -> SourceBundle:
    base = oracle_sources(seed, noise)
    roles = {
        "generator": external.get("generator", base.generator),
        "evaluator": external.get("evaluator", base.evaluator),
        "refiner": external.get("refiner", base.refiner),
        "classifier": external.get("classifier", base.classifier),
    }
    if mode is AblationMode.NO_EVALUATOR:
        roles["evaluator"] = ConstantEvaluator(1.0)
    elif mode is AblationMode.PERFECT_EVALUATOR:
        roles["evaluator"] = OracleEvaluator(seed, 0.0)
    elif mode is AblationMode.PERFECT_CLASSIFICATION:
        roles["classifier"] = OracleClassifier(seed, 0.0)
    return SourceBundle(**roles)


def pipeline_for_mode(mode: AblationMode, cfg: PipelineConfig, seed: int) -> PipelineConfig:
    cfg = replace(cfg, seed=seed)
    if mode is AblationMode.NO_REFINEMENT:
        cfg = replace(cfg, refine_enabled=False)
    return cfg


def _mean_std(rows: list[list[float]]) -> tuple[list[float], list[float]]:
    arr = np.asarray(rows, dtype=float)
    mean = arr.mean(axis=0)
    std = arr.std(axis=0, ddof=1) if arr.shape[0] > 1 else np.zeros(arr.shape[1])
    return [float(v) for v in mean], [float(v) for v in std]


def run_ablations(cfg: RunConfig) -> dict:
    """PQ of every mode x trial on per-trial datasets, with mean +- std rows.

    All modes of one trial share the trial's dataset and candidate noise, so
    mode differences are paired. A worker failure marks its mode failed and
    the remaining modes keep running.
    """
    datasets: dict[int, list[PanopticRecord]] = {}

    def records_for(trial: int) -> list[PanopticRecord]:
        key = trial if isinstance(cfg.dataset, SynthConfig) else -1
        if key not in datasets:
            if isinstance(cfg.dataset, SynthConfig):
                synth = replace(cfg.dataset, seed=trial_seed(cfg.base_seed, trial))
                datasets[key] = generate_synthetic(synth)[0]
            else:
                path = Path(cfg.dataset)
                if path.is_dir():
                    path = path / "panoptic.json"
                datasets[key] = load_panoptic(path)
        return datasets[key]

    external: dict[str, object] = {}
    keep_traces = cfg.out_dir is not None
    trace_rows: list[dict] = []
    modes_report: dict[str, dict] = {}
    try:
        for ep in cfg.endpoints:
            external[ep.role] = open_worker_source(ep)

        for mode in cfg.modes:
            per_trial: list[list[float]] = []
            failed: str | None = None
            for trial in range(cfg.trials):
                seed = trial_seed(cfg.base_seed, trial)
                try:
                    records = records_for(trial)
                    bundle = sources_for_mode(mode, seed, cfg.noise, external)
                    pipe = pipeline_for_mode(mode, cfg.pipeline, seed)
                    stats = PqStats()
                    for rec in records:
                        predicted, trace = segment_panoptic(rec, bundle, pipe)
                        stats.add_image(rec.gt, predicted)
                        if keep_traces:
                            for event in trace.events:
                                trace_rows.append(
                                    {"mode": mode.value, "trial": trial, **event}
                                )
                    per_trial.append(compute_pq(stats).row_values())
                except (WorkerError, ProtocolError) as exc:
                    failed = str(exc)
                    break
            row: dict = {"failed": failed, "per_trial": per_trial}
            if per_trial:
                row["mean"], row["std"] = _mean_std(per_trial)
            modes_report[mode.value] = row
    finally:
        for source in external.values():
            source.close()

    report = {
        "dataset": (dataset_spec_json(cfg.dataset)
                    if isinstance(cfg.dataset, SynthConfig) else str(cfg.dataset)),
        "pipeline": cfg.pipeline.to_json(),
        "noise": cfg.noise.to_json(),
        "trials": cfg.trials,
        "base_seed": cfg.base_seed,
        "columns": list(REPORT_COLUMNS),
        "modes": modes_report,
    }
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation_report.json").write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n"
        )
        (out / "ablation_report.txt").write_text(ablation_table(report))
        with (out / "traces.jsonl").open("w") as fh:
            for row in trace_rows:
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    return report


def dataset_spec_json(synth: SynthConfig) -> dict:
    return {
        "seed": synth.seed,
        "images": synth.images,
        "width": synth.width,
        "height": synth.height,
        "stuff_classes": synth.stuff_classes,
        "thing_classes": synth.thing_classes,
        "part_classes": synth.part_classes,
        "things_per_image": list(synth.things_per_image),
        "parts_per_thing": list(synth.parts_per_thing),
        "stuff_cells": list(synth.stuff_cells),
        "thing_size": list(synth.thing_size),
        "unfamiliar_fraction": synth.unfamiliar_fraction,
        "pixel_noise": synth.pixel_noise,
    }


def synth_from_json(obj: dict) -> SynthConfig:
    kwargs = dict(obj)
    for key in ("things_per_image", "parts_per_thing", "stuff_cells", "thing_size"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return SynthConfig(**kwargs)


def ablation_table(report: dict) -> str:
    """Fixed-width mean +- std table, one row per mode, nine score columns."""
    header = f"{'mode':24s}" + "".join(f"{c:>16s}" for c in REPORT_COLUMNS)
    lines = [header]
    for mode, row in report["modes"].items():
        if row.get("failed"):
            lines.append(f"{mode:24s}{'FAILED: ' + row['failed']}")
            continue
        cells = "".join(
            f"{m:8.2f}+-{s:6.2f}" for m, s in zip(row["mean"], row["std"])
        )
        lines.append(f"{mode:24s}{cells}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parts: does scoring the candidates help at all?
# ---------------------------------------------------------------------------

def compare_parts_evaluator(
    synth: SynthConfig,
    noise: NoiseConfig,
    *,
    trials: int = 30,
    base_seed: int = 0,
    points_per_object: int = 100,
) -> dict:
    """Mean parts IOU with a scoring evaluator vs. with none, paired by trial.

    Both arms see byte-identical candidate streams (generation noise is keyed
    by seed and point, not by call order); only the stitching order differs.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    per_trial: dict[str, list[float]] = {"with_evaluator": [], "without_evaluator": []}
    for trial in range(trials):
        seed = trial_seed(base_seed, trial)
        _, parts_records = generate_synthetic(replace(synth, seed=seed))
        cfg = PipelineConfig.parts_default(seed=seed,
                                           points_per_cycle=points_per_object)
        arms = {
            "with_evaluator": SourceBundle(
                OracleGenerator(seed, noise), OracleEvaluator(seed, noise.score_sigma)
            ),
            "without_evaluator": SourceBundle(
                OracleGenerator(seed, noise), ConstantEvaluator(1.0)
            ),
        }
        for arm, bundle in arms.items():
            predictions = [segment_parts(rec, bundle, cfg)[0] for rec in parts_records]
            report = evaluate_parts(parts_records, predictions)
            per_trial[arm].append(100 * report.overall.iou)

    out: dict = {"trials": trials, "base_seed": base_seed, "arms": {}}
    for arm, values in per_trial.items():
        arr = np.asarray(values)
        std = float(arr.std(ddof=1)) if trials > 1 else 0.0
        out["arms"][arm] = {
            "per_trial": [float(v) for v in values],
            "mean": float(arr.mean()),
            "std": std,
            "stderr": std / math.sqrt(trials) if trials > 1 else 0.0,
        }
    return out


# ---------------------------------------------------------------------------
# the guess-and-check arithmetic behind splitting a problem into stages
# ---------------------------------------------------------------------------

def modularity_demo(
    alphabet: int,
    length: int,
    trials: int,
    rng: np.random.Generator | None = None,
) -> dict:
    """Guess a length-K string one letter at a time vs. all at once.

    Checking letters independently needs Geometric(1/A) guesses per letter
    (expected A, so about A*K total); guessing whole strings needs about A^K,
    which is only ever reported in closed form as a log10.
    """
    if alphabet < 1 or length < 1 or trials < 1:
        raise ValueError("alphabet, length and trials must all be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    guesses = rng.geometric(1.0 / alphabet, size=(trials, length)).sum(axis=1)
    per_trial = guesses.astype(np.int64)
    std = float(per_trial.std(ddof=1)) if trials > 1 else 0.0
    return {
        "alphabet": alphabet,
        "length": length,
        "trials": trials,
        "modular_mean": float(per_trial.mean()),
        "modular_std": std,
        "modular_stderr": std / math.sqrt(trials) if trials > 1 else 0.0,
        "modular_expected": float(alphabet * length),
        "monolithic_log10": length * math.log10(alphabet),
        "per_trial": [int(v) for v in per_trial],
    }


# ---------------------------------------------------------------------------
# overlays
# ---------------------------------------------------------------------------

def emit_overlays(
    record: PanopticRecord,
    result: LabelMap,
    out_dir: Path | str,
    *,
    seed: int = 0,
    alpha: float = 0.5,
) -> Path:
    """Render the result over the image, one seeded color per segment.

    Unsegmented pixels come out black. Works without pixels too (synthetic
    maps with no saved image get a flat gray base).
    """
    if result.labels.shape != (record.height, record.width):
        raise DimensionMismatch(
            f"result is {result.labels.shape}, image {record.image_id} is "
            f"{(record.height, record.width)}"
        )
    try:
        base = record.get_image().astype(float)
    except ValueError:
        base = np.full((record.height, record.width, 3), 128.0)

    out = np.zeros((record.height, record.width, 3), dtype=float)
    for label in sorted(result.segments):
        color = np.random.default_rng([seed, label]).integers(64, 256, size=3)
        idx = result.labels == label
        out[idx] = (1 - alpha) * base[idx] + alpha * color

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"overlay_{record.image_id:06d}.png"
    Image.fromarray(np.clip(np.rint(out), 0, 255).astype(np.uint8)).save(path)
    return path
