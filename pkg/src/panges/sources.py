"""Candidate sources: ground-truth oracles with a tunable corruption model.

A source plays one of four roles: generator (point -> mask), evaluator
(mask -> predicted IOU), refiner (mask -> mask), classifier (mask -> category).
Oracles answer from the ground truth; noise knobs let them imitate imperfect
models while staying replayable.

Randomness never depends on evaluation order: every draw comes from a stream
derived from (seed, role, image id, pointer point) for generation and
(seed, role, image id, mask fingerprint) for scoring/classification, so an
external worker given the same seed reproduces the in-process results exactly.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mask import BitMask, LabelMap, Point, rle_encode
from .data import PanopticRecord, PartsRecord

# stream tags keep the per-role derivations from colliding
STREAM_GENERATE = 1
STREAM_SCORE = 2
STREAM_CLASSIFY = 3
STREAM_SAMPLE = 4

_STRUCT_4 = ndimage.generate_binary_structure(2, 1)


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent generator for a tuple of non-negative integer keys."""
    return np.random.default_rng([int(k) for k in keys])


def mask_fingerprint(mask: BitMask) -> int:
    """Stable 32-bit digest of a mask (grid size + canonical runs)."""
    rle = rle_encode(mask)
    head = np.array([rle.height, rle.width], dtype="<u4")
    runs = np.array(rle.runs, dtype="<u4")
    return zlib.crc32(head.tobytes() + runs.tobytes())


@dataclass(frozen=True)
class NoiseConfig:
    """Corruption model for the oracles.

    morph_radius is a signed integer range sampled per candidate: negative
    values erode, positive dilate (4-neighbourhood, image border counts as
    empty). jitter_sigma translates the mask by a rounded normal offset.
    With drop_probability the candidate comes back empty; with
    blob_probability a spurious disc is unioned in before the final clip to
    the ROI. score_sigma perturbs evaluator outputs (clamped to [0, 1]) and
    confusion is the classifier's probability of returning a wrong category.
    """

    morph_radius: tuple[int, int] = (0, 0)
    jitter_sigma: float = 0.0
    drop_probability: float = 0.0
    blob_probability: float = 0.0
    blob_radius: tuple[float, float] = (2.0, 5.0)
    score_sigma: float = 0.0
    confusion: float = 0.0

    def __post_init__(self):
        lo, hi = self.morph_radius
        if hi < lo:
            raise ValueError(f"morph_radius range {lo}..{hi} is invalid")
        if self.blob_radius[1] < self.blob_radius[0] or self.blob_radius[0] < 0:
            raise ValueError(f"blob_radius range {self.blob_radius} is invalid")
        for name in ("jitter_sigma", "score_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("drop_probability", "blob_probability", "confusion"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @property
    def degrades_masks(self) -> bool:
        return (
            self.morph_radius != (0, 0)
            or self.jitter_sigma > 0
            or self.drop_probability > 0
            or self.blob_probability > 0
        )

    def to_json(self) -> dict:
        return {
            "morph_radius": list(self.morph_radius),
            "jitter_sigma": self.jitter_sigma,
            "drop_probability": self.drop_probability,
            "blob_probability": self.blob_probability,
            "blob_radius": list(self.blob_radius),
            "score_sigma": self.score_sigma,
            "confusion": self.confusion,
        }

    @classmethod
    def from_json(cls, obj: dict) -> NoiseConfig:
        kwargs = dict(obj)
        for key in ("morph_radius", "blob_radius"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class Candidate:
    """One proposed segment: a mask tied to the pointer point that spawned it."""

    mask: BitMask
    point: Point
    source: str = "oracle"
    score: float | None = None
    category: int | None = None


@dataclass
class ImageContext:
    """What a source is allowed to see about the image being segmented."""

    image_id: int
    width: int
    height: int
    gt: LabelMap | None = None
    categories: dict[int, bool] | None = None
    image_path: Path | None = None

    @classmethod
    def from_panoptic(cls, record: PanopticRecord) -> ImageContext:
        return cls(
            image_id=record.image_id,
            width=record.width,
            height=record.height,
            gt=record.gt,
            categories=dict(record.categories),
            image_path=record.image_path,
        )

    @classmethod
    def from_parts(cls, record: PartsRecord) -> ImageContext:
        gt = record.parts_label_map()
        return cls(
            image_id=record.image_id,
            width=record.object_mask.width,
            height=record.object_mask.height,
            gt=gt,
            categories=gt.category_flags(),
            image_path=record.image_path,
        )


def _require_gt(ctx: ImageContext) -> LabelMap:
    if ctx.gt is None:
        raise ValueError(f"oracle source needs ground truth for image {ctx.image_id}")
    return ctx.gt


def _morph(data: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0 or not data.any():
        return data
    if radius > 0:
        return ndimage.binary_dilation(data, structure=_STRUCT_4, iterations=radius)
    return ndimage.binary_erosion(data, structure=_STRUCT_4, iterations=-radius,
                                  border_value=0)


def _translate(data: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = data.shape
    out = np.zeros_like(data)
    x0, x1 = max(0, dx), min(w, w + dx)
    y0, y1 = max(0, dy), min(h, h + dy)
    if x0 < x1 and y0 < y1:
        out[y0:y1, x0:x1] = data[y0 - dy : y1 - dy, x0 - dx : x1 - dx]
    return out


def oracle_generate(
    gt: LabelMap,
    roi: BitMask,
    point: Point,
    noise: NoiseConfig,
    rng: np.random.Generator,
) -> Candidate:
    """Propose the GT segment under ``point`` (clipped to ``roi``), corrupted.

    Draw order is fixed: drop -> morph radius -> jitter -> blob -> clip, so a
    given (rng, noise) pair always yields the same mask. A point on GT void
    with zero noise yields an empty candidate.
    """
    if gt.labels.shape != roi.data.shape:
        raise ValueError("ground truth and roi are on different grids")
    if not roi.contains_point(point):
        raise ValueError(f"point {point} lies outside the roi")

    label = gt.label_at(point)
    if label == 0:
        data = np.zeros_like(roi.data)
    else:
        data = (gt.labels == label) & roi.data

    if noise.drop_probability > 0 and rng.random() < noise.drop_probability:
        return Candidate(BitMask(np.zeros_like(data)), point)

    if noise.morph_radius != (0, 0):
        radius = int(rng.integers(noise.morph_radius[0], noise.morph_radius[1] + 1))
        data = _morph(data, radius)
    if noise.jitter_sigma > 0:
        dx, dy = np.rint(rng.normal(0.0, noise.jitter_sigma, size=2)).astype(int)
        data = _translate(data, int(dx), int(dy))
    if noise.blob_probability > 0 and rng.random() < noise.blob_probability:
        h, w = data.shape
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        radius = rng.uniform(*noise.blob_radius)
        ys, xs = np.ogrid[0:h, 0:w]
        data = data | ((xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2)

    return Candidate(BitMask(data & roi.data), point)


def best_segment(mask: BitMask, gt: LabelMap) -> tuple[int | None, float]:
    """The GT segment with maximal IOU against ``mask`` (ties: smallest label)."""
    if mask.is_empty:
        return None, 0.0
    values, counts = np.unique(gt.labels[mask.data], return_counts=True)
    areas = gt.segment_areas()
    best_label, best_iou = None, 0.0
    for value, inter in zip(values.tolist(), counts.tolist()):
        if value == 0:
            continue
        overlap = inter / (areas[value] + mask.area - inter)
        if overlap > best_iou:
            best_label, best_iou = int(value), overlap
    return best_label, best_iou


def oracle_score(
    candidate: Candidate,
    gt: LabelMap,
    *,
    exact: bool = True,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> float:
    """True best IOU of the candidate against any GT segment, optionally noised."""
    _, true_iou = best_segment(candidate.mask, gt)
    if exact or sigma == 0.0:
        return true_iou
    if rng is None:
        raise ValueError("noisy scoring needs an rng")
    return float(np.clip(true_iou + rng.normal(0.0, sigma), 0.0, 1.0))


def oracle_refine(candidate: Candidate, gt: LabelMap, snap_threshold: float = 0.5) -> Candidate:
    """Snap the candidate to its best-matching GT segment when IOU clears the bar.

    A threshold above 1.0 disables snapping. The true best IOU never
    decreases: either the mask is unchanged or it becomes the best segment.
    """
    if snap_threshold > 1.0:
        return candidate
    label, value = best_segment(candidate.mask, gt)
    if label is None or value < snap_threshold:
        return candidate
    return Candidate(
        gt.segment_mask(label), candidate.point, candidate.source,
        candidate.score, candidate.category,
    )


def oracle_classify(
    candidate: Candidate,
    gt: LabelMap,
    confusion: float,
    rng: np.random.Generator | None,
    categories: list[int],
) -> int:
    """Category of the closest GT segment, confused with probability ``confusion``.

    A candidate overlapping no GT segment at all gets the smallest category in
    the space (deterministic fallback). Empty candidates are rejected.
    """
    if candidate.mask.is_empty:
        raise ValueError("cannot classify an empty candidate")
    if not categories:
        raise ValueError("empty category space")
    label, _ = best_segment(candidate.mask, gt)
    true_category = gt.segments[label].category_id if label is not None else min(categories)
    if confusion > 0:
        if rng is None:
            raise ValueError("confusion needs an rng")
        if rng.random() < confusion:
            others = [c for c in sorted(categories) if c != true_category]
            if others:
                return others[int(rng.integers(len(others)))]
    return true_category


# ---------------------------------------------------------------------------
# source objects the pipeline plugs together
# ---------------------------------------------------------------------------

class OracleGenerator:
    def __init__(self, seed: int, noise: NoiseConfig = NoiseConfig()):
        self.seed = seed
        self.noise = noise

    def generate(self, ctx: ImageContext, roi: BitMask, point: Point) -> Candidate | None:
        rng = derive_rng(self.seed, STREAM_GENERATE, ctx.image_id, point[0], point[1])
        return oracle_generate(_require_gt(ctx), roi, point, self.noise, rng)


class OracleEvaluator:
    """Predicted-IOU oracle; ``sigma == 0`` means exact."""

    def __init__(self, seed: int, sigma: float = 0.0):
        self.seed = seed
        self.sigma = sigma

    def score(self, ctx: ImageContext, candidate: Candidate,
              object_mask: BitMask | None = None) -> float | None:
        gt = _require_gt(ctx)
        if self.sigma == 0.0:
            return oracle_score(candidate, gt, exact=True)
        rng = derive_rng(self.seed, STREAM_SCORE, ctx.image_id, mask_fingerprint(candidate.mask))
        return oracle_score(candidate, gt, exact=False, sigma=self.sigma, rng=rng)


class ConstantEvaluator:
    """Scores every candidate identically; used to disable the evaluator."""

    def __init__(self, value: float = 1.0):
        self.value = value

    def score(self, ctx: ImageContext, candidate: Candidate,
              object_mask: BitMask | None = None) -> float | None:
        return self.value


class OracleRefiner:
    def __init__(self, snap_threshold: float = 0.5):
        self.snap_threshold = snap_threshold

    def refine(self, ctx: ImageContext, candidate: Candidate) -> Candidate | None:
        return oracle_refine(candidate, _require_gt(ctx), self.snap_threshold)


class OracleClassifier:
    def __init__(self, seed: int, confusion: float = 0.0):
        self.seed = seed
        self.confusion = confusion

    def classify(self, ctx: ImageContext, candidate: Candidate) -> int | None:
        gt = _require_gt(ctx)
        if ctx.categories:
            space = sorted(ctx.categories)
        else:
            space = sorted(gt.category_flags())
        rng = None
        if self.confusion > 0:
            rng = derive_rng(self.seed, STREAM_CLASSIFY, ctx.image_id,
                             mask_fingerprint(candidate.mask))
        return oracle_classify(candidate, gt, self.confusion, rng, space)


@dataclass
class SourceBundle:
    """The four roles wired together for one pipeline run."""

    generator: object
    evaluator: object
    refiner: object | None = None
    classifier: object | None = None


def oracle_sources(seed: int, noise: NoiseConfig = NoiseConfig(), *,
                   exact_evaluator: bool = False,
                   snap_threshold: float = 0.5,
                   with_refiner: bool = True,
                   with_classifier: bool = True) -> SourceBundle:
    """Bundle of oracles sharing one seed and corruption model."""
    sigma = 0.0 if exact_evaluator else noise.score_sigma
    return SourceBundle(
        generator=OracleGenerator(seed, noise),
        evaluator=OracleEvaluator(seed, sigma),
        refiner=OracleRefiner(snap_threshold) if with_refiner else None,
        classifier=OracleClassifier(seed, noise.confusion) if with_classifier else None,
    )
