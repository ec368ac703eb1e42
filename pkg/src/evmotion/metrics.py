"""Image-quality and trajectory metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, SizeMismatch, TooSmall, ValidationError
from .events import luminance

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
FOREGROUND_THRESHOLD = 0.02


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SizeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss_taps() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-x ** 2 / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


_TAPS = _gauss_taps()
_BANDS: dict = {}


def _band(n: int) -> np.ndarray:
    """Matrix whose rows are the window taps at each fully-covered position."""
    if n not in _BANDS:
        m = np.zeros((n - SSIM_WINDOW + 1, n))
        for i in range(m.shape[0]):
            m[i, i:i + SSIM_WINDOW] = _TAPS
        _BANDS[n] = m
    return _BANDS[n]


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Gaussian-window means over the leading two axes, border positions dropped."""
    h, w = x.shape[:2]
    rest = x.shape[2:]
    y = (_band(h) @ x.reshape(h, -1)).reshape((-1, w) + rest)
    y = np.moveaxis(y, 1, 0).reshape(w, -1)
    y = (_band(w) @ y).reshape((-1, h - SSIM_WINDOW + 1) + rest)
    return np.moveaxis(y, 1, 0)


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM over the fully-covered window positions; channels stay last."""
    stats = _filter_valid(np.stack([a, b, a * a, b * b, a * b], axis=-1))
    mu_a, mu_b = stats[..., 0], stats[..., 1]
    saa = stats[..., 2] - mu_a ** 2
    sbb = stats[..., 3] - mu_b ** 2
    sab = stats[..., 4] - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images of at least {SSIM_WINDOW} pixels per side")
    return float(ssim_map(a, b).mean())


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box ``[x0, x1) x [y0, y1)``; ``None`` corners mark an empty box."""

    x0: int | None = None
    y0: int | None = None
    x1: int | None = None
    y1: int | None = None

    @property
    def empty(self) -> bool:
        return self.x0 is None

    @property
    def area(self) -> int:
        return 0 if self.empty else (self.x1 - self.x0) * (self.y1 - self.y0)


def foreground_bbox(img, threshold: float = FOREGROUND_THRESHOLD) -> BoundingBox:
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    mask = luminance(img) > threshold
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return BoundingBox()
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def box_iou(a: BoundingBox, b: BoundingBox) -> float | None:
    """IoU of two boxes; ``None`` when both are empty."""
    if a.empty and b.empty:
        return None
    if a.empty or b.empty:
        return 0.0
    iw = max(0, min(a.x1, b.x1) - max(a.x0, b.x0))
    ih = max(0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _positions(track) -> np.ndarray:
    if len(track) and hasattr(track[0], "translation"):
        return np.array([p.translation for p in track], dtype=float)
    return np.asarray(track, dtype=float).reshape(-1, 3)


def path_length(positions) -> float:
    p = _positions(positions)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0


def trajectory_metrics(gt, est, gt_frames=None, est_frames=None,
                       threshold: float = FOREGROUND_THRESHOLD) -> dict:
    """IoU of foreground boxes plus path-length-normalised ATE and RMSE.

    ``gt``/``est`` are pose lists or ``(n, 3)`` position arrays. A static
    ground truth (zero path length) is left unnormalised. Frame pairs that
    are both empty are excluded from the IoU mean; with no usable pair the
    IoU is reported as 1.0.
    """
    g, e = _positions(gt), _positions(est)
    if len(g) != len(e):
        raise LengthMismatch(f"{len(g)} ground-truth poses vs {len(e)} estimates")
    length = path_length(g)
    scale = length if length > 1e-12 else 1.0
    err = np.linalg.norm(g - e, axis=1) / scale
    out = {"ATE": float(err.mean()) if len(err) else 0.0,
           "RMSE": float(np.sqrt(np.mean(err ** 2))) if len(err) else 0.0,
           "path_length": length}
    if gt_frames is not None or est_frames is not None:
        gt_frames = list(gt_frames or [])
        est_frames = list(est_frames or [])
        if len(gt_frames) != len(est_frames):
            raise LengthMismatch("frame lists differ in length")
        ious = [box_iou(foreground_bbox(a, threshold), foreground_bbox(b, threshold))
                for a, b in zip(gt_frames, est_frames)]
        ious = [v for v in ious if v is not None]
        out["IoU"] = float(np.mean(ious)) if ious else 1.0
    return out
