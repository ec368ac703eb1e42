"""8-bit PNG reading and writing for float images in [0, 1]."""

from pathlib import Path

import numpy as np
from PIL import Image as _PIL


def to_uint8(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img) -> None:
    arr = to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    # fixed pnginfo-free encoding keeps reruns byte-identical
    _PIL.fromarray(arr, mode=mode).save(Path(path), format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    with _PIL.open(Path(path)) as im:
        im.load()
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(float) / 255.0
