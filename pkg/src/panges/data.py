"""Dataset records, annotation/map file formats, and synthetic data.

Panoptic ground truth is a 24-bit id map stored as lossless RGB PNG
(id = R + 256*G + 65536*B, id 0 = void) plus a JSON document listing images
and per-image segment tables. Parts ground truth is JSON-only: each object
is an RLE mask with RLE part masks inside it.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AnnotationError, GenerationError
from .mask import BitMask, LabelMap, RleMask, SegmentInfo, connected_components, rle_decode, rle_encode

ID_LIMIT = 1 << 24

# fixed sub-stream tags so every synthetic draw has its own derivation path
_TAG_IMAGE = 101
_TAG_UNFAMILIAR = 102


def encode_segment_ids(labels: np.ndarray) -> np.ndarray:
    """Pack segment ids into an (H, W, 3) uint8 RGB image."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.size and (int(arr.min()) < 0 or int(arr.max()) >= ID_LIMIT):
        raise AnnotationError(f"segment ids must lie in [0, {ID_LIMIT}), got range "
                              f"[{int(arr.min())}, {int(arr.max())}]")
    rgb = np.empty(arr.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = arr & 0xFF
    rgb[..., 1] = (arr >> 8) & 0xFF
    rgb[..., 2] = arr >> 16
    return rgb


def decode_segment_ids(rgb: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_segment_ids`; returns int32 labels."""
    arr = np.asarray(rgb, dtype=np.int32)
    return arr[..., 0] + 256 * arr[..., 1] + 65536 * arr[..., 2]


@dataclass
class PanopticRecord:
    """One image with its panoptic ground truth.

    ``categories`` maps every category id seen in the dataset to its
    is_thing flag, so predictions can be tagged consistently.
    """

    image_id: int
    width: int
    height: int
    gt: LabelMap
    image: np.ndarray | None = None
    image_path: Path | None = None
    categories: dict[int, bool] = field(default_factory=dict)

    def get_image(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.image_path is None:
            raise ValueError(f"record {self.image_id} has no pixel source")
        return np.asarray(Image.open(self.image_path).convert("RGB"))

    def with_map(self, gt: LabelMap) -> PanopticRecord:
        """Copy of this record carrying a different label map (e.g. a prediction)."""
        return replace(self, gt=gt)


@dataclass
class PartsRecord:
    """One annotated object: its mask, its parts, and the familiar flag."""

    image_id: int
    object_mask: BitMask
    category_id: int
    parts: list[tuple[BitMask, int]]
    familiar: bool = True
    image_path: Path | None = None

    def parts_label_map(self) -> LabelMap:
        """The GT parts of this object as a LabelMap (label i+1 = part i)."""
        labels = np.zeros(self.object_mask.data.shape, dtype=np.int32)
        table: dict[int, SegmentInfo] = {}
        for idx, (mask, category) in enumerate(self.parts):
            if (labels[mask.data] != 0).any():
                raise AnnotationError(
                    f"parts of object (image {self.image_id}) overlap each other"
                )
            labels[mask.data] = idx + 1
            table[idx + 1] = SegmentInfo(category, True)
        return LabelMap(labels, table, validate=False)


# ---------------------------------------------------------------------------
# panoptic annotation + map files
# ---------------------------------------------------------------------------

def save_panoptic_dataset(
    records: list[PanopticRecord],
    out_dir: Path | str,
    *,
    write_images: bool = True,
    annotation_name: str = "panoptic.json",
) -> Path:
    """Write map PNGs (and optionally image PNGs) plus the annotation JSON.

    Returns the annotation path. File layout: ``maps/map_<id>.png`` and
    ``images/img_<id>.png`` relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    images_meta = []
    annotations = []
    for rec in records:
        file_entry = None
        if write_images and rec.image is not None:
            (out_dir / "images").mkdir(exist_ok=True)
            file_entry = f"images/img_{rec.image_id:06d}.png"
            Image.fromarray(rec.image, mode="RGB").save(out_dir / file_entry)
        elif rec.image_path is not None:
            file_entry = str(rec.image_path)
        map_entry = f"maps/map_{rec.image_id:06d}.png"
        rgb = encode_segment_ids(rec.gt.labels)
        Image.fromarray(rgb, mode="RGB").save(out_dir / map_entry)
        images_meta.append(
            {"id": rec.image_id, "width": rec.width, "height": rec.height, "file": file_entry}
        )
        annotations.append(
            {
                "image_id": rec.image_id,
                "map_file": map_entry,
                "segments": [
                    {"id": label, "category_id": info.category_id, "isthing": info.is_thing}
                    for label, info in sorted(rec.gt.segments.items())
                ],
            }
        )
    doc = {"images": images_meta, "annotations": annotations}
    path = out_dir / annotation_name
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_panoptic(annotation_path: Path | str, root: Path | str | None = None) -> list[PanopticRecord]:
    """Load an annotation document and its id-map PNGs into records."""
    annotation_path = Path(annotation_path)
    root = Path(root) if root is not None else annotation_path.parent
    try:
        doc = json.loads(annotation_path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{annotation_path} is not valid JSON: {exc}")
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise AnnotationError(f"{annotation_path} lacks images/annotations sections")

    images = {}
    for entry in doc["images"]:
        images[int(entry["id"])] = entry
    records: list[PanopticRecord] = []
    categories: dict[int, bool] = {}
    for ann in doc["annotations"]:
        image_id = int(ann["image_id"])
        if image_id not in images:
            raise AnnotationError(f"annotation references unknown image id {image_id}")
        meta = images[image_id]
        width, height = int(meta["width"]), int(meta["height"])

        map_path = root / ann["map_file"]
        rgb = np.asarray(Image.open(map_path).convert("RGB"))
        labels = decode_segment_ids(rgb)
        if labels.shape != (height, width):
            raise AnnotationError(
                f"map {map_path} is {labels.shape[1]}x{labels.shape[0]}, "
                f"image {image_id} declares {width}x{height}"
            )

        table: dict[int, SegmentInfo] = {}
        for seg in ann["segments"]:
            seg_id = int(seg["id"])
            if seg_id <= 0 or seg_id >= ID_LIMIT:
                raise AnnotationError(f"segment id {seg_id} out of range for image {image_id}")
            info = SegmentInfo(int(seg["category_id"]), bool(seg["isthing"]))
            if seg_id in table:
                raise AnnotationError(f"duplicate segment id {seg_id} in image {image_id}")
            table[seg_id] = info
            prev = categories.get(info.category_id)
            if prev is not None and prev != info.is_thing:
                raise AnnotationError(
                    f"category {info.category_id} flagged both thing and stuff"
                )
            categories[info.category_id] = info.is_thing

        present = set(np.unique(labels).tolist()) - {0}
        missing = present - set(table)
        if missing:
            raise AnnotationError(
                f"map for image {image_id} contains ids {sorted(missing)} "
                f"absent from its segment list"
            )

        image_file = meta.get("file")
        image_path = (root / image_file) if image_file else None
        records.append(
            PanopticRecord(
                image_id=image_id,
                width=width,
                height=height,
                gt=LabelMap(labels, table, validate=False),
                image_path=image_path,
            )
        )
    for rec in records:
        rec.categories = dict(categories)
    return records


# ---------------------------------------------------------------------------
# parts annotation files
# ---------------------------------------------------------------------------

def save_parts(
    records: list[PartsRecord],
    path: Path | str,
    *,
    image_files: dict[int, str] | None = None,
) -> Path:
    path = Path(path)
    images_meta = {}
    objects = []
    for rec in records:
        h, w = rec.object_mask.data.shape
        images_meta[rec.image_id] = {
            "id": rec.image_id,
            "width": w,
            "height": h,
            "file": (image_files or {}).get(rec.image_id),
        }
        objects.append(
            {
                "image_id": rec.image_id,
                "category_id": rec.category_id,
                "familiar": rec.familiar,
                "object_rle": rle_encode(rec.object_mask).to_json(),
                "parts": [
                    {"category_id": cat, "rle": rle_encode(mask).to_json()}
                    for mask, cat in rec.parts
                ],
            }
        )
    doc = {"images": [images_meta[k] for k in sorted(images_meta)], "objects": objects}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_parts(path: Path | str, root: Path | str | None = None) -> list[PartsRecord]:
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path} is not valid JSON: {exc}")
    if not isinstance(doc, dict) or "objects" not in doc:
        raise AnnotationError(f"{path} lacks an objects section")
    images = {int(e["id"]): e for e in doc.get("images", [])}

    records: list[PartsRecord] = []
    for idx, obj in enumerate(doc["objects"]):
        image_id = int(obj["image_id"])
        object_mask = rle_decode(RleMask.from_json(obj["object_rle"]))
        parts: list[tuple[BitMask, int]] = []
        for part in obj.get("parts", []):
            mask = rle_decode(RleMask.from_json(part["rle"]))
            if mask.data.shape != object_mask.data.shape:
                raise AnnotationError(f"object {idx}: part grid differs from object grid")
            inside = mask & object_mask
            if inside.area != mask.area:
                if inside.is_empty and not mask.is_empty:
                    raise AnnotationError(
                        f"object {idx} (image {image_id}): part lies entirely outside the object"
                    )
                warnings.warn(
                    f"object {idx} (image {image_id}): part extends outside the object; clipping",
                    stacklevel=2,
                )
                mask = inside
            parts.append((mask, int(part["category_id"])))
        meta = images.get(image_id, {})
        image_file = meta.get("file")
        records.append(
            PartsRecord(
                image_id=image_id,
                object_mask=object_mask,
                category_id=int(obj["category_id"]),
                parts=parts,
                familiar=bool(obj["familiar"]),
                image_path=(root / image_file) if image_file else None,
            )
        )
    return records


def save_predicted_parts(predictions: list[list[BitMask] | None], path: Path | str) -> Path:
    """Persist per-object predicted part masks, aligned by object index."""
    path = Path(path)
    objects = []
    for index, masks in enumerate(predictions):
        if masks is None:
            objects.append({"object_index": index, "parts": None})
        else:
            objects.append(
                {
                    "object_index": index,
                    "parts": [{"rle": rle_encode(m).to_json()} for m in masks],
                }
            )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"objects": objects}, indent=1, sort_keys=True))
    return path


def load_predicted_parts(path: Path | str, count: int) -> list[list[BitMask] | None]:
    path = Path(path)
    doc = json.loads(path.read_text())
    out: list[list[BitMask] | None] = [None] * count
    for obj in doc.get("objects", []):
        index = int(obj["object_index"])
        if not 0 <= index < count:
            raise AnnotationError(f"predicted object index {index} out of range (count={count})")
        if obj["parts"] is None:
            continue
        out[index] = [rle_decode(RleMask.from_json(p["rle"])) for p in obj["parts"]]
    return out


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the procedural dataset.

    Stuff is a Voronoi partition of the background; things are filled
    ellipses/rectangles layered on top (later things occlude earlier ones);
    each thing is split into parts by an inner Voronoi partition. Category
    ids: stuff occupies 1..stuff_classes, things the next thing_classes ids.
    """

    seed: int = 0
    images: int = 10
    width: int = 128
    height: int = 128
    stuff_classes: int = 3
    thing_classes: int = 4
    part_classes: int = 5
    things_per_image: tuple[int, int] = (1, 4)
    parts_per_thing: tuple[int, int] = (2, 4)
    stuff_cells: tuple[int, int] = (3, 6)
    thing_size: tuple[float, float] = (0.15, 0.35)  # fraction of min(width, height)
    unfamiliar_fraction: float = 0.2
    pixel_noise: float = 8.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError(f"dimensions must be at least 8x8, got {self.width}x{self.height}")
        for name in ("images", "stuff_classes", "thing_classes", "part_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("things_per_image", "parts_per_thing", "stuff_cells"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} range {lo}..{hi} is invalid")
        if not 0.0 <= self.unfamiliar_fraction <= 1.0:
            raise ValueError("unfamiliar_fraction must lie in [0, 1]")

    @property
    def thing_category_ids(self) -> list[int]:
        return list(range(self.stuff_classes + 1, self.stuff_classes + self.thing_classes + 1))


def unfamiliar_categories(cfg: SynthConfig) -> set[int]:
    """The seeded draw of thing categories flagged unfamiliar."""
    rng = np.random.default_rng([cfg.seed, _TAG_UNFAMILIAR])
    count = int(round(cfg.unfamiliar_fraction * cfg.thing_classes))
    if count == 0:
        return set()
    chosen = rng.choice(cfg.thing_category_ids, size=count, replace=False)
    return {int(c) for c in chosen}


def _voronoi_cells(rng: np.random.Generator, width: int, height: int, count: int) -> np.ndarray:
    """Index of the nearest of ``count`` random sites, per pixel."""
    sx = rng.uniform(0, width, size=count)
    sy = rng.uniform(0, height, size=count)
    ys, xs = np.mgrid[0:height, 0:width]
    d2 = (xs[..., None] - sx) ** 2 + (ys[..., None] - sy) ** 2
    return np.argmin(d2, axis=-1)


def _thing_shape(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    scale = min(w, h) / 2.0
    a = max(1.0, rng.uniform(*cfg.thing_size) * scale)
    b = max(1.0, rng.uniform(*cfg.thing_size) * scale)
    cx = rng.uniform(0, w)
    cy = rng.uniform(0, h)
    ys, xs = np.mgrid[0:h, 0:w]
    if rng.random() < 0.5:
        return ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0
    return (np.abs(xs - cx) <= a) & (np.abs(ys - cy) <= b)


def generate_synthetic(cfg: SynthConfig) -> tuple[list[PanopticRecord], list[PartsRecord]]:
    """Build a seeded dataset of panoptic records and per-thing parts records.

    The same config always produces bit-identical records. Ground-truth stuff
    segments are connected components of each stuff class's visible area;
    thing segments are the (possibly disconnected) visible instance masks.
    """
    if cfg.things_per_image[1] > 0 and cfg.thing_size[1] * min(cfg.width, cfg.height) / 2.0 < 1.0:
        raise GenerationError(
            f"{cfg.width}x{cfg.height} is too small to place things of relative size "
            f"{cfg.thing_size[1]}"
        )
    unfamiliar = unfamiliar_categories(cfg)
    panoptic: list[PanopticRecord] = []
    parts_records: list[PartsRecord] = []
    all_categories: dict[int, bool] = {}

    for index in range(cfg.images):
        rng = np.random.default_rng([cfg.seed, _TAG_IMAGE, index])
        w, h = cfg.width, cfg.height

        n_cells = min(int(rng.integers(cfg.stuff_cells[0], cfg.stuff_cells[1] + 1)), w * h)
        n_cells = max(n_cells, 1)
        cells = _voronoi_cells(rng, w, h, n_cells)
        cell_classes = rng.integers(1, cfg.stuff_classes + 1, size=n_cells)
        stuff_class_map = cell_classes[cells]

        lo, hi = cfg.things_per_image
        n_things = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        thing_stack = np.zeros((h, w), dtype=np.int32)  # 0 = stuff, j+1 = thing j
        thing_cats = []
        thing_shapes = []
        for j in range(n_things):
            cat = int(rng.integers(cfg.stuff_classes + 1, cfg.stuff_classes + cfg.thing_classes + 1))
            shape = _thing_shape(rng, cfg)
            thing_cats.append(cat)
            thing_shapes.append(shape)
            thing_stack[shape] = j + 1

        labels = np.zeros((h, w), dtype=np.int32)
        table: dict[int, SegmentInfo] = {}
        next_label = 1
        stuff_visible = thing_stack == 0
        for cls in range(1, cfg.stuff_classes + 1):
            class_mask = (stuff_class_map == cls) & stuff_visible
            for comp in connected_components(BitMask(class_mask), connectivity=4):
                labels[comp.data] = next_label
                table[next_label] = SegmentInfo(cls, False)
                next_label += 1
        for j, cat in enumerate(thing_cats):
            visible = thing_stack == j + 1
            if not visible.any():
                continue  # fully occluded by a later thing
            labels[visible] = next_label
            table[next_label] = SegmentInfo(cat, True)
            next_label += 1

        # pixels: one base colour per segment plus per-pixel noise
        colours = rng.integers(30, 226, size=(next_label - 1, 3)).astype(np.float64)
        image = colours[labels - 1]
        image = image + rng.normal(0.0, cfg.pixel_noise, size=image.shape)
        image = np.clip(image, 0, 255).astype(np.uint8)

        gt = LabelMap(labels, table, validate=False)
        for info in table.values():
            all_categories[info.category_id] = info.is_thing
        panoptic.append(PanopticRecord(index, w, h, gt, image=image))

        # parts: inner Voronoi of each thing's full shape, clipped to visibility
        for j, cat in enumerate(thing_cats):
            visible = thing_stack == j + 1
            shape = thing_shapes[j]
            shape_area = int(shape.sum())
            if shape_area == 0 or not visible.any():
                continue
            k = int(rng.integers(cfg.parts_per_thing[0], cfg.parts_per_thing[1] + 1))
            k = max(1, min(k, shape_area))
            flat_idx = np.flatnonzero(shape.ravel())
            sites = rng.choice(flat_idx, size=k, replace=False)
            site_y, site_x = np.divmod(sites, w)
            part_cats = rng.integers(1, cfg.part_classes + 1, size=k)
            ys, xs = np.nonzero(shape)
            d2 = (xs[:, None] - site_x) ** 2 + (ys[:, None] - site_y) ** 2
            nearest = np.argmin(d2, axis=1)
            parts: list[tuple[BitMask, int]] = []
            for p in range(k):
                part = np.zeros((h, w), dtype=bool)
                part[ys[nearest == p], xs[nearest == p]] = True
                part &= visible
                if part.any():
                    parts.append((BitMask(part), int(part_cats[p])))
            parts_records.append(
                PartsRecord(
                    image_id=index,
                    object_mask=BitMask(visible),
                    category_id=cat,
                    parts=parts,
                    familiar=cat not in unfamiliar,
                )
            )

    for rec in panoptic:
        rec.categories = dict(all_categories)
    return panoptic, parts_records
