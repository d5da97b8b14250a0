"""Generator-evaluator-selector segmentation engine and evaluation toolkit."""
from __future__ import annotations

from .mask import BitMask, LabelMap, RleMask, SegmentInfo, connected_components, iou, mask_algebra, rle_decode, rle_encode

__all__ = [
    "BitMask",
    "LabelMap",
    "RleMask",
    "SegmentInfo",
    "connected_components",
    "iou",
    "mask_algebra",
    "rle_decode",
    "rle_encode",
]

__version__ = "0.1.0"
