"""Binary masks, canonical run-length coding, label maps, and region ops.

Masks are dense boolean numpy arrays in row-major order and are treated as
immutable once wrapped: every operation returns a new object. The run-length
form always starts with the count of zero pixels (possibly 0) and never
contains an interior zero-length run, so each mask has exactly one encoding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, RleError

Point = tuple[int, int]  # (x, y) pixel coordinates

_STRUCT_4 = ndimage.generate_binary_structure(2, 1)
_STRUCT_8 = ndimage.generate_binary_structure(2, 2)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return _STRUCT_4
    if connectivity == 8:
        return _STRUCT_8
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


class BitMask:
    """A binary pixel region on a fixed (height, width) grid.

    Wraps a C-contiguous bool array; callers must not mutate it afterwards.
    Pixel area is computed once and cached.
    """

    __slots__ = ("data", "_area")

    def __init__(self, data: np.ndarray):
        data = np.ascontiguousarray(data, dtype=bool)
        if data.ndim != 2:
            raise ValueError(f"mask data must be 2-D, got shape {data.shape}")
        self.data = data
        self._area: int | None = None

    @classmethod
    def zeros(cls, width: int, height: int) -> BitMask:
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> BitMask:
        return cls(np.ones((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        if self._area is None:
            self._area = int(np.count_nonzero(self.data))
        return self._area

    @property
    def is_empty(self) -> bool:
        return self.area == 0

    def contains_point(self, point: Point) -> bool:
        x, y = point
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return bool(self.data[y, x])

    def __and__(self, other: BitMask) -> BitMask:
        _check_dims(self, other)
        return BitMask(self.data & other.data)

    def __or__(self, other: BitMask) -> BitMask:
        _check_dims(self, other)
        return BitMask(self.data | other.data)

    def __sub__(self, other: BitMask) -> BitMask:
        _check_dims(self, other)
        return BitMask(self.data & ~other.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"BitMask({self.width}x{self.height}, area={self.area})"


def _check_dims(a: BitMask, b: BitMask) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(
            f"mask grids differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def iou(a: BitMask, b: BitMask) -> float:
    """Intersection-over-union of two masks on the same grid.

    Two empty masks have IOU 0.0 by convention.
    """
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.data & b.data))
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def intersect(a: BitMask, b: BitMask) -> BitMask:
    return a & b


def union(a: BitMask, b: BitMask) -> BitMask:
    return a | b


def subtract(a: BitMask, b: BitMask) -> BitMask:
    return a - b


_ALGEBRA = {"and": intersect, "or": union, "minus": subtract}


def mask_algebra(a: BitMask, b: BitMask, op: str) -> BitMask:
    """Pixelwise set algebra; ``op`` is one of ``and``, ``or``, ``minus``."""
    try:
        fn = _ALGEBRA[op]
    except KeyError:
        raise ValueError(f"unknown mask op {op!r}; expected one of {sorted(_ALGEBRA)}")
    return fn(a, b)


@dataclass(frozen=True)
class RleMask:
    """Canonical run-length form of a mask.

    Runs alternate zero-pixels / one-pixels starting with zeros; only the
    leading run may have length 0, and runs always sum to width*height.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise RleError(f"bad RLE grid {self.width}x{self.height}")
        if not self.runs:
            raise RleError("empty run list")
        total = 0
        for i, run in enumerate(self.runs):
            if not isinstance(run, (int, np.integer)) or isinstance(run, bool):
                raise RleError(f"run {i} is not an integer: {run!r}")
            if run < 0:
                raise RleError(f"run {i} is negative: {run}")
            if run == 0 and i > 0:
                raise RleError(f"zero-length run at position {i} (only a leading zero is allowed)")
            total += int(run)
        if total != self.width * self.height:
            raise RleError(
                f"runs sum to {total}, expected {self.width * self.height} "
                f"for a {self.width}x{self.height} grid"
            )
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> RleMask:
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError):
            raise RleError(f"malformed RLE payload: {obj!r}")
        return cls(int(w), int(h), tuple(counts))


def rle_encode(mask: BitMask) -> RleMask:
    """Encode a mask into its unique canonical run-length form."""
    flat = mask.data.ravel()
    n = flat.size
    if n == 0:
        raise RleError("cannot encode a zero-pixel mask")
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    blocks = np.diff(np.concatenate(([0], boundaries, [n])))
    if flat[0]:
        runs = (0, *blocks.tolist())
    else:
        runs = tuple(blocks.tolist())
    return RleMask(mask.width, mask.height, runs)


def rle_decode(rle: RleMask) -> BitMask:
    """Expand a canonical run-length form back into a dense mask."""
    values = np.arange(len(rle.runs)) % 2  # 0, 1, 0, 1, ...
    flat = np.repeat(values.astype(bool), rle.runs)
    return BitMask(flat.reshape(rle.height, rle.width))


def decode_counts(width: int, height: int, counts) -> BitMask:
    """Decode a bare run list arriving over the wire, validating it first."""
    return rle_decode(RleMask(width, height, tuple(counts)))


@dataclass(frozen=True)
class SegmentInfo:
    """Category and thing/stuff flag for one labelled segment."""

    category_id: int
    is_thing: bool


class LabelMap:
    """A per-pixel segment labelling plus a table describing each segment.

    Label 0 is void. Every nonzero label that appears in ``labels`` must have
    an entry in ``segments``; table entries without pixels are permitted.
    """

    __slots__ = ("labels", "segments", "_areas")

    def __init__(self, labels: np.ndarray, segments: dict[int, SegmentInfo], validate: bool = True):
        labels = np.ascontiguousarray(labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError(f"label grid must be 2-D, got shape {labels.shape}")
        self.labels = labels
        self.segments = dict(segments)
        self._areas: dict[int, int] | None = None
        if validate:
            present = np.unique(labels)
            for label in present:
                if label < 0:
                    raise ValueError(f"negative segment label {label}")
                if label != 0 and int(label) not in self.segments:
                    raise ValueError(f"label {label} has no segment-table entry")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def segment_areas(self) -> dict[int, int]:
        """Pixel count per label present in the map (void excluded)."""
        if self._areas is None:
            values, counts = np.unique(self.labels, return_counts=True)
            self._areas = {
                int(v): int(c) for v, c in zip(values, counts) if v != 0
            }
        return self._areas

    def void_mask(self) -> BitMask:
        return BitMask(self.labels == 0)

    def occupied_mask(self) -> BitMask:
        return BitMask(self.labels != 0)

    def segment_mask(self, label: int) -> BitMask:
        if label == 0 or label not in self.segments:
            raise KeyError(f"no segment with label {label}")
        return BitMask(self.labels == label)

    def label_at(self, point: Point) -> int:
        x, y = point
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"point {point} outside {self.width}x{self.height} grid")
        return int(self.labels[y, x])

    def category_flags(self) -> dict[int, bool]:
        """Map category id -> is_thing over this map's segment table."""
        flags: dict[int, bool] = {}
        for info in self.segments.values():
            prev = flags.get(info.category_id)
            if prev is not None and prev != info.is_thing:
                raise ValueError(
                    f"category {info.category_id} is marked both thing and stuff"
                )
            flags[info.category_id] = info.is_thing
        return flags

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (
            self.labels.shape == other.labels.shape
            and bool(np.array_equal(self.labels, other.labels))
            and self.segments == other.segments
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"LabelMap({self.width}x{self.height}, {len(self.segments)} segments)"


def connected_components(source, connectivity: int = 4) -> list[BitMask]:
    """Split a region into maximal connected components.

    ``source`` may be a BitMask (components of its set pixels), a LabelMap
    (components computed separately for every nonzero label value), or a raw
    2-D array treated like a mask. Components come back ordered by the
    row-major position of each component's first pixel.
    """
    structure = _structure(connectivity)
    if isinstance(source, LabelMap):
        regions = [source.labels == v for v in np.unique(source.labels) if v != 0]
    elif isinstance(source, BitMask):
        regions = [source.data]
    else:
        regions = [np.asarray(source, dtype=bool)]

    found: list[tuple[int, BitMask]] = []
    for region in regions:
        labelled, count = ndimage.label(region, structure=structure)
        if count == 0:
            continue
        flat = labelled.ravel()
        # first row-major occurrence of each component id
        values, first_idx = np.unique(flat, return_index=True)
        firsts = {int(v): int(i) for v, i in zip(values, first_idx) if v != 0}
        for comp_id in range(1, count + 1):
            found.append((firsts[comp_id], BitMask(labelled == comp_id)))
    found.sort(key=lambda item: item[0])
    return [mask for _, mask in found]
