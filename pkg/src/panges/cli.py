"""Command-line front end.

Subcommands cover the whole toolkit: `synth` emits a seeded dataset, `segment`
runs the loop over one dataset, `ablate` runs the mode matrix, `eval-pq` and
`eval-parts` score saved predictions, `demo-modularity` prints the
guess-and-check arithmetic. Every command exits 0 on success; failures write
one JSON object to stderr and exit nonzero.
"""
from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .data import (
    SynthConfig,
    generate_synthetic,
    load_panoptic,
    load_parts,
    load_predicted_parts,
    save_panoptic_dataset,
    save_parts,
    save_predicted_parts,
)
from .harness import (
    ALL_MODES,
    AblationMode,
    RunConfig,
    ablation_table,
    emit_overlays,
    modularity_demo,
    run_ablations,
    synth_from_json,
    trial_seed,
    pipeline_for_mode,
    sources_for_mode,
)
from .metrics import PqStats, compute_pq, evaluate_parts
from .pipeline import PipelineConfig, segment_panoptic
from .sources import NoiseConfig
from .worker import WorkerEndpoint, open_worker_source

MODE_NAMES = [m.value for m in ALL_MODES]


def _json_arg(value: str) -> object:
    """Accept either a path to a JSON file or inline JSON text."""
    try:
        is_file = Path(value).exists()
    except OSError:  # e.g. inline JSON longer than the filesystem's name limit
        is_file = False
    if is_file:
        return json.loads(Path(value).read_text())
    return json.loads(value)


def _load_config(config: str | None) -> dict:
    if config is None:
        return {}
    doc = _json_arg(config)
    if not isinstance(doc, dict):
        raise click.UsageError("config must be a JSON object")
    return doc


def _pipeline_from(doc: dict, seed: int | None) -> PipelineConfig:
    cfg = PipelineConfig.from_json(doc.get("pipeline", {})) if doc.get("pipeline") \
        else PipelineConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _noise_from(doc: dict) -> NoiseConfig:
    return NoiseConfig.from_json(doc.get("noise", {}))


def _synth_from(doc: dict, seed: int | None, **overrides) -> SynthConfig:
    cfg = synth_from_json(doc.get("synth", {}))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _endpoints_from(workers: str | None) -> tuple[WorkerEndpoint, ...]:
    if workers is None:
        return ()
    doc = _json_arg(workers)
    if not isinstance(doc, list):
        raise click.UsageError("--workers must be a JSON array of endpoints")
    out = []
    for entry in doc:
        out.append(WorkerEndpoint(
            role=entry["role"],
            command=tuple(entry["command"]),
            version=entry.get("version", 1),
            timeout=entry.get("timeout", 10.0),
            on_failure=entry.get("on_failure", "skip"),
        ))
    return tuple(out)


def _dataset_path(dataset: str) -> Path:
    path = Path(dataset)
    if path.is_dir():
        path = path / "panoptic.json"
    return path


@click.group()
def cli():
    """Segment-proposal pipelines and their evaluation toolkit."""


@cli.command()
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--seed", type=int, default=None)
@click.option("--images", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--config", default=None, help="JSON file or inline JSON with a 'synth' key")
def synth(out, seed, images, width, height, config):
    """Generate a synthetic dataset (panoptic maps, images, parts)."""
    cfg = _synth_from(_load_config(config), seed,
                      images=images, width=width, height=height)
    records, parts_records = generate_synthetic(cfg)
    save_panoptic_dataset(records, out)
    image_files = {rec.image_id: f"images/img_{rec.image_id:06d}.png" for rec in records}
    save_parts(parts_records, Path(out) / "parts.json", image_files=image_files)
    click.echo(json.dumps({
        "out": str(out),
        "images": len(records),
        "objects": len(parts_records),
        "seed": cfg.seed,
    }, sort_keys=True))


@cli.command()
@click.argument("dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--mode", type=click.Choice(MODE_NAMES), default="full")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--config", default=None)
@click.option("--workers", default=None)
@click.option("--overlays", is_flag=True, help="also render one overlay PNG per image")
def segment(dataset, mode, seed, out, config, workers, overlays):
    """Run the loop over DATASET with one mode's sources; report PQ."""
    doc = _load_config(config)
    pipe = _pipeline_from(doc, seed)
    noise = _noise_from(doc)
    mode = AblationMode(mode)
    records = load_panoptic(_dataset_path(dataset))

    external = {}
    opened = []
    try:
        for ep in _endpoints_from(workers):
            source = open_worker_source(ep)
            opened.append(source)
            external[ep.role] = source
        bundle = sources_for_mode(mode, pipe.seed, noise, external)
        run_cfg = pipeline_for_mode(mode, pipe, pipe.seed)

        stats = PqStats()
        traces = []
        predictions = []
        for rec in records:
            predicted, trace = segment_panoptic(rec, bundle, run_cfg)
            stats.add_image(rec.gt, predicted)
            predictions.append(predicted)
            traces.append(trace)
    finally:
        for source in opened:
            source.close()

    report = compute_pq(stats)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_panoptic_dataset(
            [rec.with_map(pred) for rec, pred in zip(records, predictions)],
            out, write_images=False, annotation_name="predicted.json",
        )
        with (out / "traces.jsonl").open("w") as fh:
            for trace in traces:
                fh.write(trace.to_jsonl())
        (out / "pq_report.json").write_text(
            json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
        (out / "pq_report.txt").write_text(report.to_table())
        if overlays:
            for rec, pred in zip(records, predictions):
                emit_overlays(rec, pred, out / "overlays", seed=run_cfg.seed)
    click.echo(report.to_table(), nl=False)


@cli.command()
@click.option("--dataset", type=click.Path(exists=True, path_type=Path), default=None,
              help="run on a saved dataset instead of per-trial synthetic ones")
@click.option("--trials", type=int, default=5)
@click.option("--seed", type=int, default=None, help="base seed for trial derivation")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--config", default=None)
@click.option("--workers", default=None)
@click.option("--modes", default=",".join(MODE_NAMES),
              help="comma-separated subset of " + ",".join(MODE_NAMES))
def ablate(dataset, trials, seed, out, config, workers, modes):
    """Run the mode matrix and report mean +- std PQ per mode."""
    doc = _load_config(config)
    mode_list = tuple(AblationMode(name) for name in modes.split(",") if name)
    cfg = RunConfig(
        dataset=dataset if dataset is not None else _synth_from(doc, None),
        pipeline=_pipeline_from(doc, None),
        noise=_noise_from(doc),
        modes=mode_list,
        endpoints=_endpoints_from(workers),
        out_dir=out,
        trials=trials,
        base_seed=seed if seed is not None else 0,
    )
    report = run_ablations(cfg)
    click.echo(ablation_table(report), nl=False)


@cli.command(name="eval-pq")
@click.argument("gt", type=click.Path(exists=True, path_type=Path))
@click.argument("pred", type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None)
def eval_pq(gt, pred, out):
    """Panoptic quality of PRED against GT (dataset dirs or annotation files)."""
    gt_records = {rec.image_id: rec for rec in load_panoptic(_dataset_path(gt))}
    pred_path = pred / "predicted.json" if pred.is_dir() else pred
    if pred.is_dir() and not pred_path.exists():
        pred_path = _dataset_path(pred)
    pred_records = {rec.image_id: rec for rec in load_panoptic(pred_path)}
    if set(gt_records) != set(pred_records):
        raise click.UsageError(
            f"image ids differ: gt has {sorted(gt_records)}, "
            f"pred has {sorted(pred_records)}"
        )
    stats = PqStats()
    for image_id, rec in sorted(gt_records.items()):
        stats.add_image(rec.gt, pred_records[image_id].gt)
    report = compute_pq(stats)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    click.echo(report.to_table(), nl=False)


@cli.command(name="eval-parts")
@click.argument("gt", type=click.Path(exists=True, path_type=Path))
@click.argument("pred", type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None)
def eval_parts(gt, pred, out):
    """Score predicted part masks (PRED json) against GT parts (GT json)."""
    gt_path = gt / "parts.json" if gt.is_dir() else gt
    records = load_parts(gt_path)
    predictions = load_predicted_parts(pred, len(records))
    report = evaluate_parts(records, predictions)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    click.echo(report.to_table(), nl=False)


@cli.command(name="demo-modularity")
@click.option("--alphabet", type=int, default=9, show_default=True)
@click.option("--length", type=int, default=1000, show_default=True)
@click.option("--trials", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
def demo_modularity(alphabet, length, trials, seed, out):
    """Per-letter guess-and-check versus guessing whole strings."""
    report = modularity_demo(alphabet, length, trials, np.random.default_rng(seed))
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    shown = {k: v for k, v in report.items() if k != "per_trial"}
    click.echo(json.dumps(shown, sort_keys=True, indent=1))


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        sys.stderr.write(json.dumps(
            {"error": "usage", "message": exc.format_message()}, sort_keys=True) + "\n")
        return 2
    except click.Abort:
        return 130
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
