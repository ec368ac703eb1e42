"""Supervision terms for registration and motion recovery."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, SizeMismatch, TooFewSamples, ValidationError
from .events import synthesize_blur
from .metrics import ssim


@dataclass(frozen=True)
class LossWeights:
    blur: float = 0.7
    acc: float = 0.1
    event: float = 0.15
    kf: float = 0.05
    dssim: float = 0.2
    reg_photometric: float = 0.8
    reg_pyramid: float = 0.15
    reg_tv: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"loss weight {f.name} must be >= 0, got {v}")
        if self.dssim > 1:
            raise ValidationError("dssim weight must lie in [0, 1]")


def _same(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SizeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    a, b = _same(a, b)
    return float(np.mean(np.abs(a - b)))


def photometric_loss(pred, target, dssim_weight: float = 0.2) -> float:
    """``(1 - w) * L1 + w * (1 - SSIM) / 2``."""
    pred, target = _same(pred, target)
    loss = (1.0 - dssim_weight) * l1(pred, target)
    if dssim_weight > 0:
        loss += dssim_weight * 0.5 * (1.0 - ssim(pred, target))
    return loss


def blur_loss(rendered_sharps: Sequence, blur_gt, dssim_weight: float = 0.2) -> float:
    return photometric_loss(synthesize_blur(rendered_sharps), blur_gt, dssim_weight)


def acceleration(prev, curr, nxt, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValidationError("dt must be positive")
    prev, curr, nxt = (np.asarray(v, dtype=float) for v in (prev, curr, nxt))
    return ((nxt - curr) - (curr - prev)) / (dt * dt)


def accelerations(track, dt: float) -> np.ndarray:
    """Second differences of a ``(n, 3)`` position track, shape (n - 2, 3)."""
    p = np.asarray(track, dtype=float)
    if len(p) < 3:
        return np.zeros((0,) + p.shape[1:])
    return acceleration(p[:-2], p[1:-1], p[2:], dt)


def acc_loss(accs) -> float:
    """Sum of squared changes between consecutive accelerations."""
    a = np.asarray(accs, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if len(a) < 2:
        raise TooFewSamples("acceleration loss needs at least two samples")
    return float(np.sum((a[1:] - a[:-1]) ** 2))


def event_loss(real_maps: Sequence, simulated_maps: Sequence) -> float:
    if len(real_maps) != len(simulated_maps):
        raise SizeMismatch("event map lists differ in length")
    return float(sum(l1(r, s) for r, s in zip(real_maps, simulated_maps)))


def kf_loss(reference_T, estimated_T) -> float:
    r = np.asarray(reference_T, dtype=float).reshape(-1, 3)
    e = np.asarray(estimated_T, dtype=float).reshape(-1, 3)
    if len(r) != len(e):
        raise LengthMismatch("reference and estimate differ in length")
    return float(np.sum((r - e) ** 2))


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // 2, w // 2
    x = img[:2 * h2, :2 * w2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def pyramid_l1(pred, target, levels: int = 3) -> float:
    """Mean L1 over ``levels`` 2x box-downsampled scales (full resolution first)."""
    pred, target = _same(pred, target)
    total, used = 0.0, 0
    for _ in range(levels):
        total += l1(pred, target)
        used += 1
        if min(pred.shape[:2]) < 2:
            break
        pred, target = _downsample2(pred), _downsample2(target)
    return total / used


def total_variation(img) -> float:
    """Anisotropic TV: mean |dx| + mean |dy| over the full pixel grid."""
    img = np.asarray(img, dtype=float)
    n = img.shape[0] * img.shape[1]
    dx = np.abs(np.diff(img, axis=1)).sum()
    dy = np.abs(np.diff(img, axis=0)).sum()
    if img.ndim == 3:
        dx, dy = dx / img.shape[2], dy / img.shape[2]
    return float((dx + dy) / n)


def registration_loss(rendered, target, weights: LossWeights = LossWeights()) -> float:
    rendered, target = _same(rendered, target)
    loss = weights.reg_photometric * photometric_loss(rendered, target, weights.dssim)
    if weights.reg_pyramid:
        loss += weights.reg_pyramid * pyramid_l1(rendered, target)
    if weights.reg_tv:
        loss += weights.reg_tv * total_variation(rendered)
    return loss


def total_loss(blur: float, acc: float, event: float, kf: float,
               weights: LossWeights = LossWeights()) -> float:
    return weights.blur * blur + weights.acc * acc + weights.event * event + weights.kf * kf
