"""Panoptic quality and ground-truth-side parts scoring.

Matching pairs same-category segments with IOU >= 0.5, greedily by descending
IOU (ties: smaller GT label, then smaller prediction label). Per category:
RQ = TP / (TP + 0.5*(FP + FN)), SQ = mean matched IOU (0 when TP = 0),
PQ = RQ * SQ; aggregates are unweighted means over categories that have any
GT or predicted segment. Void is ordinary unlabelled area: it neither hides
prediction pixels nor adjusts unions.

Parts scoring never penalises false positives: each GT part (above the size
floors) is scored against the best-IOU predicted mask, and one prediction may
serve several GT parts. Means are per part category, then per
familiar/unfamiliar group.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import PartsRecord
from .errors import DimensionMismatch
from .mask import BitMask, LabelMap, iou

MATCH_IOU = 0.5
PART_MIN_PIXELS = 100
PART_MIN_FRACTION = 0.01


@dataclass
class MatchResult:
    matches: list[tuple[int, int, float]]
    unmatched_gt: list[int]
    unmatched_pred: list[int]


def _pair_intersections(gt: LabelMap, pred: LabelMap) -> dict[tuple[int, int], int]:
    sel = (gt.labels != 0) & (pred.labels != 0)
    if not sel.any():
        return {}
    g = gt.labels[sel].astype(np.int64)
    p = pred.labels[sel].astype(np.int64)
    offset = int(p.max()) + 1
    combined, counts = np.unique(g * offset + p, return_counts=True)
    return {
        (int(c // offset), int(c % offset)): int(n)
        for c, n in zip(combined, counts)
    }


def match_segments(gt: LabelMap, pred: LabelMap) -> MatchResult:
    """Greedy same-category matching at IOU >= 0.5.

    Only pixel-backed segments participate; a table entry with no pixels is
    treated as absent.
    """
    if gt.labels.shape != pred.labels.shape:
        raise DimensionMismatch(
            f"label grids differ: {gt.width}x{gt.height} vs {pred.width}x{pred.height}"
        )
    gt_areas = gt.segment_areas()
    pred_areas = pred.segment_areas()
    inter = _pair_intersections(gt, pred)

    candidates = []
    for (g, p), shared in inter.items():
        if gt.segments[g].category_id != pred.segments[p].category_id:
            continue
        value = shared / (gt_areas[g] + pred_areas[p] - shared)
        if value >= MATCH_IOU:
            candidates.append((value, g, p))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))

    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    matches: list[tuple[int, int, float]] = []
    for value, g, p in candidates:
        if g in matched_gt or p in matched_pred:
            continue
        matched_gt.add(g)
        matched_pred.add(p)
        matches.append((g, p, value))

    unmatched_gt = sorted(set(gt_areas) - matched_gt)
    unmatched_pred = sorted(set(pred_areas) - matched_pred)
    return MatchResult(matches, unmatched_gt, unmatched_pred)


@dataclass
class _CategoryTally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0


class PqStats:
    """Per-category TP/FP/FN/IOU accumulator; images merge associatively."""

    def __init__(self):
        self.tallies: dict[int, _CategoryTally] = {}
        self.flags: dict[int, bool] = {}

    def _tally(self, category: int, is_thing: bool) -> _CategoryTally:
        known = self.flags.get(category)
        if known is not None and known != is_thing:
            raise ValueError(f"category {category} is marked both thing and stuff")
        self.flags[category] = is_thing
        return self.tallies.setdefault(category, _CategoryTally())

    def add_image(self, gt: LabelMap, pred: LabelMap) -> MatchResult:
        result = match_segments(gt, pred)
        for g, p, value in result.matches:
            info = gt.segments[g]
            tally = self._tally(info.category_id, info.is_thing)
            tally.tp += 1
            tally.iou_sum += value
        for g in result.unmatched_gt:
            info = gt.segments[g]
            self._tally(info.category_id, info.is_thing).fn += 1
        for p in result.unmatched_pred:
            info = pred.segments[p]
            self._tally(info.category_id, info.is_thing).fp += 1
        return result

    def merge(self, other: PqStats) -> PqStats:
        for category, tally in sorted(other.tallies.items()):
            mine = self._tally(category, other.flags[category])
            mine.tp += tally.tp
            mine.fp += tally.fp
            mine.fn += tally.fn
            mine.iou_sum += tally.iou_sum
        return self


@dataclass
class PqAggregate:
    pq: float = 0.0
    rq: float = 0.0
    sq: float = 0.0
    categories: int = 0


@dataclass
class CategoryPq:
    category_id: int
    is_thing: bool
    tp: int
    fp: int
    fn: int
    rq: float
    sq: float
    pq: float


@dataclass
class PqReport:
    per_category: dict[int, CategoryPq]
    all: PqAggregate
    things: PqAggregate
    stuff: PqAggregate

    def to_json(self) -> dict:
        return {
            "per_category": {
                str(cid): {
                    "is_thing": c.is_thing, "tp": c.tp, "fp": c.fp, "fn": c.fn,
                    "rq": c.rq, "sq": c.sq, "pq": c.pq,
                }
                for cid, c in sorted(self.per_category.items())
            },
            "all": vars(self.all),
            "things": vars(self.things),
            "stuff": vars(self.stuff),
        }

    def row_values(self) -> list[float]:
        """The nine scores (all/things/stuff x PQ/RQ/SQ), scaled by 100."""
        out = []
        for agg in (self.all, self.things, self.stuff):
            out.extend([100 * agg.pq, 100 * agg.rq, 100 * agg.sq])
        return out

    def to_table(self) -> str:
        header = (
            f"{'':10s}{'PQ':>8s}{'RQ':>8s}{'SQ':>8s}"
            f"{'PQ_th':>8s}{'RQ_th':>8s}{'SQ_th':>8s}"
            f"{'PQ_st':>8s}{'RQ_st':>8s}{'SQ_st':>8s}{'n':>6s}"
        )
        values = "".join(f"{v:8.2f}" for v in self.row_values())
        return f"{header}\n{'scores':10s}{values}{self.all.categories:6d}\n"


def compute_pq(stats: PqStats) -> PqReport:
    """Fold accumulated tallies into per-category and aggregate scores."""
    per_category: dict[int, CategoryPq] = {}
    for category, tally in sorted(stats.tallies.items()):
        denom = tally.tp + 0.5 * (tally.fp + tally.fn)
        if denom == 0:
            continue  # category never appeared in GT or prediction
        rq = tally.tp / denom
        sq = tally.iou_sum / tally.tp if tally.tp else 0.0
        per_category[category] = CategoryPq(
            category_id=category,
            is_thing=stats.flags[category],
            tp=tally.tp, fp=tally.fp, fn=tally.fn,
            rq=rq, sq=sq, pq=rq * sq,
        )

    def aggregate(rows: list[CategoryPq]) -> PqAggregate:
        if not rows:
            return PqAggregate()
        n = len(rows)
        return PqAggregate(
            pq=sum(r.pq for r in rows) / n,
            rq=sum(r.rq for r in rows) / n,
            sq=sum(r.sq for r in rows) / n,
            categories=n,
        )

    rows = list(per_category.values())
    return PqReport(
        per_category=per_category,
        all=aggregate(rows),
        things=aggregate([r for r in rows if r.is_thing]),
        stuff=aggregate([r for r in rows if not r.is_thing]),
    )


def pq_of_maps(pairs: list[tuple[LabelMap, LabelMap]]) -> PqReport:
    """Convenience: accumulate (gt, pred) pairs and compute the report."""
    stats = PqStats()
    for gt, pred in pairs:
        stats.add_image(gt, pred)
    return compute_pq(stats)


# ---------------------------------------------------------------------------
# parts
# ---------------------------------------------------------------------------

@dataclass
class _PartTally:
    count: int = 0
    iou_sum: float = 0.0
    precision_sum: float = 0.0
    recall_sum: float = 0.0


@dataclass
class PartsAggregate:
    iou: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    categories: int = 0
    parts: int = 0


@dataclass
class PartsReport:
    per_category: dict[tuple[str, int], dict]
    familiar: PartsAggregate
    unfamiliar: PartsAggregate
    overall: PartsAggregate

    def to_json(self) -> dict:
        return {
            "per_category": {
                f"{group}/{cid}": row
                for (group, cid), row in sorted(self.per_category.items())
            },
            "familiar": vars(self.familiar),
            "unfamiliar": vars(self.unfamiliar),
            "overall": vars(self.overall),
        }

    def to_table(self) -> str:
        header = f"{'group':12s}{'IOU':>8s}{'Prec':>8s}{'Rec':>8s}{'classes':>9s}{'parts':>7s}"
        lines = [header]
        for name, agg in (("unfamiliar", self.unfamiliar), ("familiar", self.familiar),
                          ("overall", self.overall)):
            lines.append(
                f"{name:12s}{100 * agg.iou:8.2f}{100 * agg.precision:8.2f}"
                f"{100 * agg.recall:8.2f}{agg.categories:9d}{agg.parts:7d}"
            )
        return "\n".join(lines) + "\n"


def evaluate_parts(
    records: list[PartsRecord],
    predictions: list[list[BitMask] | None],
    *,
    min_pixels: int = PART_MIN_PIXELS,
    min_fraction: float = PART_MIN_FRACTION,
) -> PartsReport:
    """Score predicted parts against GT parts, object by object.

    ``predictions[i]`` holds the proposed part masks for ``records[i]``
    (None means the object was not processed; its GT parts score zero).
    GT parts at or below ``min_pixels`` pixels, or at or below
    ``min_fraction`` of the object area, are excluded from scoring.
    """
    if len(records) != len(predictions):
        raise ValueError(
            f"{len(predictions)} predictions for {len(records)} objects"
        )
    tallies: dict[tuple[str, int], _PartTally] = {}
    for rec, preds in zip(records, predictions):
        object_area = rec.object_mask.area
        group = "familiar" if rec.familiar else "unfamiliar"
        for gt_mask, category in rec.parts:
            if gt_mask.area <= min_pixels:
                continue
            if gt_mask.area <= min_fraction * object_area:
                continue
            best_iou, best_precision, best_recall = 0.0, 0.0, 0.0
            for pred in preds or []:
                value = iou(gt_mask, pred)
                if value > best_iou:
                    shared = (gt_mask & pred).area
                    best_iou = value
                    best_precision = shared / pred.area
                    best_recall = shared / gt_mask.area
            tally = tallies.setdefault((group, category), _PartTally())
            tally.count += 1
            tally.iou_sum += best_iou
            tally.precision_sum += best_precision
            tally.recall_sum += best_recall

    per_category: dict[tuple[str, int], dict] = {}
    for key, tally in sorted(tallies.items()):
        per_category[key] = {
            "parts": tally.count,
            "iou": tally.iou_sum / tally.count,
            "precision": tally.precision_sum / tally.count,
            "recall": tally.recall_sum / tally.count,
        }

    def aggregate(keys: list[tuple[str, int]]) -> PartsAggregate:
        rows = [per_category[k] for k in keys]
        if not rows:
            return PartsAggregate()
        n = len(rows)
        return PartsAggregate(
            iou=sum(r["iou"] for r in rows) / n,
            precision=sum(r["precision"] for r in rows) / n,
            recall=sum(r["recall"] for r in rows) / n,
            categories=n,
            parts=sum(r["parts"] for r in rows),
        )

    keys = list(per_category)
    return PartsReport(
        per_category=per_category,
        familiar=aggregate([k for k in keys if k[0] == "familiar"]),
        unfamiliar=aggregate([k for k in keys if k[0] == "unfamiliar"]),
        overall=aggregate(keys),
    )
