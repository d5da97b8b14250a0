"""The generate -> evaluate -> select loop over unsegmented area.

Each cycle samples pointer points uniformly from the not-yet-segmented
region, asks the generator for one candidate per point, filters candidates by
predicted score, optionally refines the survivors, classifies them, and then
stitches them greedily in descending score order. A candidate overlapping
already-claimed area by more than the overlap threshold is discarded; smaller
overlaps are subtracted from the candidate before it is committed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import PanopticRecord, PartsRecord
from .errors import PipelineError
from .mask import BitMask, LabelMap, Point, SegmentInfo
from .sources import STREAM_SAMPLE, Candidate, ImageContext, SourceBundle, derive_rng


@dataclass(frozen=True)
class PipelineConfig:
    """Loop parameters.

    ``min_unsegmented_fraction`` stops the loop once the uncovered share of
    the image falls below it; 0.0 keeps going until literally every pixel is
    claimed (or the cycle budget runs out). ``rescore_after_refine`` re-runs
    the evaluator on refined masks and re-applies the score filter.
    """

    seed: int = 0
    points_per_cycle: int = 20
    max_cycles: int = 10
    score_threshold: float = 0.5
    overlap_threshold: float = 0.5
    min_unsegmented_fraction: float = 0.01
    refine_enabled: bool = True
    rescore_after_refine: bool = False

    def __post_init__(self):
        if self.points_per_cycle < 1:
            raise ValueError("points_per_cycle must be >= 1")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        for name in ("score_threshold", "overlap_threshold", "min_unsegmented_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def parts_default(cls, **overrides) -> PipelineConfig:
        overrides.setdefault("points_per_cycle", 100)
        return cls(**overrides)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "points_per_cycle": self.points_per_cycle,
            "max_cycles": self.max_cycles,
            "score_threshold": self.score_threshold,
            "overlap_threshold": self.overlap_threshold,
            "min_unsegmented_fraction": self.min_unsegmented_fraction,
            "refine_enabled": self.refine_enabled,
            "rescore_after_refine": self.rescore_after_refine,
        }

    @classmethod
    def from_json(cls, obj: dict) -> PipelineConfig:
        return cls(**obj)


@dataclass
class PipelineTrace:
    """Replayable event log; one JSON object per line when serialised."""

    image_id: int
    events: list[dict] = field(default_factory=list)

    def add(self, event: str, **fields) -> None:
        row = {"event": event, "image_id": self.image_id}
        row.update(fields)
        self.events.append(row)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n"
            for row in self.events
        )


def sample_points(roi: BitMask, count: int, rng: np.random.Generator) -> list[Point]:
    """Uniform points (with replacement) over the set pixels of ``roi``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    flat = np.flatnonzero(roi.data.ravel())
    if flat.size == 0:
        raise ValueError("cannot sample points from an empty roi")
    picks = flat[rng.integers(0, flat.size, size=count)]
    ys, xs = np.divmod(picks, roi.width)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def _stitch_order(candidates: list[Candidate], width: int) -> list[int]:
    def key(i: int):
        c = candidates[i]
        return (-c.score, i, c.point[1] * width + c.point[0])

    return sorted(range(len(candidates)), key=key)


def select_and_stitch(
    candidates: list[Candidate],
    current: LabelMap,
    roi: BitMask,
    cfg: PipelineConfig,
    categories: dict[int, bool] | None = None,
) -> tuple[LabelMap, list[tuple[int, Candidate]], list[dict]]:
    """Greedily commit candidates to the map in descending score order.

    Returns the updated map, the accepted candidates (with their assigned
    labels and overlap-subtracted masks), and one decision row per candidate.
    Ties in score break by generation index, then pointer raster order.
    """
    for c in candidates:
        if c.score is None:
            raise PipelineError("select_and_stitch received an unscored candidate")
        if (c.mask - roi).area > 0:
            raise PipelineError(
                f"candidate at point {c.point} exceeds the roi; "
                f"generation should have clipped it"
            )

    labels = current.labels.copy()
    table = dict(current.segments)
    occupied = labels != 0
    next_label = max(table, default=0) + 1
    accepted: list[tuple[int, Candidate]] = []
    decisions: list[dict] = []

    for index in _stitch_order(candidates, roi.width):
        c = candidates[index]
        row: dict = {"index": index, "point": list(c.point), "score": c.score}
        if c.score < cfg.score_threshold:
            row.update(decision="rejected", reason="below_threshold")
        elif c.mask.is_empty:
            row.update(decision="rejected", reason="empty")
        else:
            overlap = int(np.count_nonzero(c.mask.data & occupied)) / c.mask.area
            if overlap > cfg.overlap_threshold:
                row.update(decision="rejected", reason="overlap", overlap=overlap)
            else:
                remaining = c.mask.data & ~occupied
                if not remaining.any():
                    row.update(decision="rejected", reason="empty_after_subtraction",
                               overlap=overlap)
                else:
                    label = next_label
                    next_label += 1
                    labels[remaining] = label
                    occupied |= remaining
                    category = c.category if c.category is not None else 0
                    is_thing = True
                    if categories is not None and c.category is not None:
                        is_thing = categories.get(c.category, True)
                    table[label] = SegmentInfo(category, is_thing)
                    kept = Candidate(BitMask(remaining), c.point, c.source, c.score, c.category)
                    accepted.append((label, kept))
                    row.update(decision="stitched", label=label, overlap=overlap,
                               area=kept.mask.area, category=c.category)
        decisions.append(row)

    return LabelMap(labels, table, validate=False), accepted, decisions


def _generate_cycle_candidates(
    ctx: ImageContext,
    roi: BitMask,
    points: list[Point],
    sources: SourceBundle,
    trace: PipelineTrace,
    cycle: int,
    object_mask: BitMask | None = None,
) -> list[Candidate]:
    """Generate and score one candidate per point; worker failures skip."""
    out: list[Candidate] = []
    for k, point in enumerate(points):
        cand = sources.generator.generate(ctx, roi, point)
        if cand is None:
            trace.add("candidate_skipped", cycle=cycle, index=k, point=list(point),
                      reason="generator_failure")
            continue
        score = sources.evaluator.score(ctx, cand, object_mask)
        if score is None:
            trace.add("candidate_skipped", cycle=cycle, index=k, point=list(point),
                      reason="evaluator_failure")
            continue
        cand.score = float(score)
        out.append(cand)
    return out


def segment_panoptic(
    record: PanopticRecord,
    sources: SourceBundle,
    cfg: PipelineConfig = PipelineConfig(),
) -> tuple[LabelMap, PipelineTrace]:
    """Run the full loop over one image and return the stitched label map."""
    ctx = ImageContext.from_panoptic(record)
    trace = PipelineTrace(record.image_id)
    trace.add("start", config=cfg.to_json(), width=record.width, height=record.height)
    total = record.width * record.height
    current = LabelMap(
        np.zeros((record.height, record.width), dtype=np.int32), {}, validate=False
    )
    reason = "max_cycles"

    for cycle in range(cfg.max_cycles):
        roi = current.void_mask()
        fraction = roi.area / total
        if roi.is_empty or fraction < cfg.min_unsegmented_fraction:
            reason = "coverage"
            break
        rng = derive_rng(cfg.seed, STREAM_SAMPLE, record.image_id, cycle)
        points = sample_points(roi, cfg.points_per_cycle, rng)
        trace.add("cycle_start", cycle=cycle, roi_area=roi.area,
                  unsegmented_fraction=fraction, points=[list(p) for p in points])

        candidates = _generate_cycle_candidates(ctx, roi, points, sources, trace, cycle)
        survivors = [c for c in candidates if c.score >= cfg.score_threshold]
        for c in candidates:
            if c.score < cfg.score_threshold:
                trace.add("candidate_filtered", cycle=cycle, point=list(c.point),
                          score=c.score, reason="below_threshold")
        if not survivors:
            trace.add("cycle_end", cycle=cycle, stitched=0)
            reason = "no_candidates"
            break

        if cfg.refine_enabled and sources.refiner is not None:
            refined: list[Candidate] = []
            for c in survivors:
                after = sources.refiner.refine(ctx, c)
                if after is None:
                    trace.add("candidate_skipped", cycle=cycle, point=list(c.point),
                              reason="refiner_failure")
                    continue
                after = Candidate(after.mask & roi, after.point, after.source,
                                  after.score, after.category)
                if cfg.rescore_after_refine:
                    score = sources.evaluator.score(ctx, after)
                    if score is None:
                        trace.add("candidate_skipped", cycle=cycle, point=list(c.point),
                                  reason="evaluator_failure")
                        continue
                    after.score = float(score)
                refined.append(after)
            survivors = refined

        if sources.classifier is not None:
            classified: list[Candidate] = []
            for c in survivors:
                if c.mask.is_empty:
                    classified.append(c)  # stitching discards it with its own reason
                    continue
                category = sources.classifier.classify(ctx, c)
                if category is None:
                    trace.add("candidate_skipped", cycle=cycle, point=list(c.point),
                              reason="classifier_failure")
                    continue
                c.category = int(category)
                classified.append(c)
            survivors = classified

        current, accepted, decisions = select_and_stitch(
            survivors, current, roi, cfg, categories=record.categories or None
        )
        for row in decisions:
            trace.add("decision", cycle=cycle, **row)
        trace.add("cycle_end", cycle=cycle, stitched=len(accepted))

    final_fraction = current.void_mask().area / total
    trace.add("end", reason=reason, unsegmented_fraction=final_fraction,
              segments=len(current.segments))
    return current, trace


def segment_parts(
    record: PartsRecord,
    sources: SourceBundle,
    cfg: PipelineConfig | None = None,
) -> tuple[list[BitMask], PipelineTrace]:
    """Single-pass part proposal inside one object mask.

    No refinement or classification; every scored candidate enters one
    selection pass ordered by score, with only the overlap rule deciding
    what is kept (no score-threshold filter).
    """
    if cfg is None:
        cfg = PipelineConfig.parts_default()
    roi = record.object_mask
    if roi.is_empty:
        raise ValueError(f"object mask for image {record.image_id} is empty")

    ctx = ImageContext.from_parts(record)
    trace = PipelineTrace(record.image_id)
    trace.add("start", config=cfg.to_json(), mode="parts", object_area=roi.area)
    rng = derive_rng(cfg.seed, STREAM_SAMPLE, record.image_id, 0)
    points = sample_points(roi, cfg.points_per_cycle, rng)
    trace.add("cycle_start", cycle=0, roi_area=roi.area, unsegmented_fraction=1.0,
              points=[list(p) for p in points])

    candidates = _generate_cycle_candidates(ctx, roi, points, sources, trace, 0,
                                            object_mask=roi)
    empty = LabelMap(np.zeros(roi.data.shape, dtype=np.int32), {}, validate=False)
    no_filter = replace(cfg, score_threshold=0.0)
    _, accepted, decisions = select_and_stitch(candidates, empty, roi, no_filter)
    for row in decisions:
        trace.add("decision", cycle=0, **row)
    trace.add("end", reason="single_pass", parts=len(accepted))
    return [cand.mask for _, cand in accepted], trace
