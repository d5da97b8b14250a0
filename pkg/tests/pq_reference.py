"""Brute-force panoptic quality, kept deliberately naive and separate from the
package: segments become Python pixel sets, every GT/prediction pair is
compared directly, and the formulas are spelled out inline."""
from __future__ import annotations

from panges.mask import LabelMap


def _segments_as_sets(lm: LabelMap):
    out = []
    for label in sorted(lm.segments):
        pixels = set()
        for y in range(lm.height):
            for x in range(lm.width):
                if int(lm.labels[y, x]) == label:
                    pixels.add((x, y))
        if pixels:
            info = lm.segments[label]
            out.append((label, pixels, info.category_id, info.is_thing))
    return out


def reference_pq(pairs: list[tuple[LabelMap, LabelMap]]) -> dict:
    tallies: dict[int, dict] = {}
    flags: dict[int, bool] = {}

    def tally(cat: int, is_thing: bool) -> dict:
        flags[cat] = is_thing
        return tallies.setdefault(cat, {"tp": 0, "fp": 0, "fn": 0, "iou_sum": 0.0})

    for gt, pred in pairs:
        gt_segs = _segments_as_sets(gt)
        pred_segs = _segments_as_sets(pred)
        candidates = []
        for g_label, g_pixels, g_cat, _ in gt_segs:
            for p_label, p_pixels, p_cat, _ in pred_segs:
                if g_cat != p_cat:
                    continue
                inter = len(g_pixels & p_pixels)
                union = len(g_pixels | p_pixels)
                value = inter / union
                if value >= 0.5:
                    candidates.append((value, g_label, p_label))
        candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
        used_g, used_p = set(), set()
        for value, g_label, p_label in candidates:
            if g_label in used_g or p_label in used_p:
                continue
            used_g.add(g_label)
            used_p.add(p_label)
            cat = gt.segments[g_label].category_id
            row = tally(cat, gt.segments[g_label].is_thing)
            row["tp"] += 1
            row["iou_sum"] += value
        for g_label, _, g_cat, g_thing in gt_segs:
            if g_label not in used_g:
                tally(g_cat, g_thing)["fn"] += 1
        for p_label, _, p_cat, p_thing in pred_segs:
            if p_label not in used_p:
                tally(p_cat, p_thing)["fp"] += 1

    per_category = {}
    for cat, row in tallies.items():
        denom = row["tp"] + 0.5 * (row["fp"] + row["fn"])
        if denom == 0:
            continue
        rq = row["tp"] / denom
        sq = row["iou_sum"] / row["tp"] if row["tp"] else 0.0
        per_category[cat] = {"rq": rq, "sq": sq, "pq": rq * sq,
                             "is_thing": flags[cat], **row}

    def mean(cats, key):
        rows = [per_category[c] for c in cats]
        return sum(r[key] for r in rows) / len(rows) if rows else 0.0

    everything = sorted(per_category)
    things = [c for c in everything if per_category[c]["is_thing"]]
    stuff = [c for c in everything if not per_category[c]["is_thing"]]
    return {
        "per_category": per_category,
        "all": {k: mean(everything, k) for k in ("pq", "rq", "sq")},
        "things": {k: mean(things, k) for k in ("pq", "rq", "sq")},
        "stuff": {k: mean(stuff, k) for k in ("pq", "rq", "sq")},
    }
