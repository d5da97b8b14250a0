from __future__ import annotations

import numpy as np

from panges.mask import BitMask


def random_mask(rng: np.random.Generator, width: int, height: int, density: float = 0.4) -> BitMask:
    """Random mask mixing speckle with a filled rectangle so runs vary in length."""
    data = rng.random((height, width)) < density
    if rng.random() < 0.5 and width > 1 and height > 1:
        x0, x1 = sorted(rng.integers(0, width, size=2).tolist())
        y0, y1 = sorted(rng.integers(0, height, size=2).tolist())
        data[y0 : y1 + 1, x0 : x1 + 1] = rng.random() < 0.5
    return BitMask(data)


def rect_mask(width: int, height: int, x0: int, y0: int, w: int, h: int) -> BitMask:
    data = np.zeros((height, width), dtype=bool)
    data[y0 : y0 + h, x0 : x0 + w] = True
    return BitMask(data)
