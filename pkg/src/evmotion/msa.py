"""Motion-aware annealed learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MsaConfig:
    l_min: float = 1e-4
    l_max: float = 1e-2
    gamma: float = 0.9
    T_max_mag: float = 1.0
    decay_horizon: int = 200

    def __post_init__(self):
        if not (0 < self.l_min <= self.l_max):
            raise ValidationError("need 0 < l_min <= l_max")
        if not (0 < self.gamma < 1):
            raise ValidationError("gamma must lie in (0, 1)")
        if not self.T_max_mag > 0:
            raise ValidationError("T_max_mag must be positive")
        if int(self.decay_horizon) < 1:
            raise ValidationError("decay_horizon must be a positive integer")


def learning_rate(T_mag: float, n: int, cfg: MsaConfig) -> float:
    """Rate that grows linearly with displacement and decays with step index.

    ``T_mag`` above ``cfg.T_max_mag`` is clamped (see :func:`learning_rate_flagged`).
    """
    return learning_rate_flagged(T_mag, n, cfg)[0]


def learning_rate_flagged(T_mag: float, n: int, cfg: MsaConfig) -> tuple[float, bool]:
    """Like :func:`learning_rate` but also reports whether ``T_mag`` was clamped."""
    if T_mag < 0 or n < 0:
        raise ValidationError("T_mag and n must be non-negative")
    clamped = T_mag > cfg.T_max_mag
    if clamped:
        logger.warning("displacement %.4g exceeds T_max %.4g; clamped", T_mag, cfg.T_max_mag)
        T_mag = cfg.T_max_mag
    if T_mag == cfg.T_max_mag:
        base = cfg.l_max
    else:
        base = min(cfg.l_max, (cfg.l_max - cfg.l_min) / cfg.T_max_mag * T_mag + cfg.l_min)
    return base * cfg.gamma ** (n / cfg.decay_horizon), clamped


class DisplacementTracker:
    """Running maximum of observed displacement magnitudes (single writer)."""

    def __init__(self, floor: float = 1e-9):
        self.max = floor

    def observe(self, T) -> float:
        mag = float(np.linalg.norm(np.asarray(T, dtype=float)))
        self.max = max(self.max, mag)
        return mag

    def config(self, cfg: MsaConfig) -> MsaConfig:
        return MsaConfig(cfg.l_min, cfg.l_max, cfg.gamma, self.max, cfg.decay_horizon)
