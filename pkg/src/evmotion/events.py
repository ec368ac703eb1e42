"""Event simulation, binning and event-based double-integral deblurring.

Images are float arrays in [0, 1], either ``(H, W)`` luminance or
``(H, W, 3)`` RGB. Events are kept as an :class:`EventStream` of parallel
arrays rather than per-event objects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NonMonotonicTime, SizeMismatch, ValidationError

logger = logging.getLogger(__name__)

LUMINANCE_FLOOR = 1e-3
DEFAULT_EPSILON = 0.2
# slack on the threshold comparison so exact multiples of epsilon fire reliably
_CROSSING_SLACK = 1e-9


@dataclass(frozen=True)
class ContrastThreshold:
    value: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise ValidationError(f"contrast threshold must be positive, got {self.value}")

    def __float__(self) -> float:
        return float(self.value)


def _eps(epsilon) -> float:
    return float(ContrastThreshold(float(epsilon)))


@dataclass
class EventStream:
    """Time-sorted events: timestamps in seconds, pixel columns/rows, polarity +/-1."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event arrays differ in length")
        if n:
            if np.any((self.x < 0) | (self.x >= self.width) | (self.y < 0)
                      | (self.y >= self.height)):
                raise ValidationError("event pixel outside the sensor")
            if np.any(np.abs(self.p) != 1):
                raise ValidationError("event polarity must be +1 or -1")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), width, height)


@dataclass(frozen=True)
class EventBin:
    """Signed per-pixel polarity sum over ``[start, end)``."""

    counts: np.ndarray
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise ValidationError("event bin interval must be non-degenerate")


def luminance(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def log_intensity(img) -> np.ndarray:
    return np.log(luminance(img) + LUMINANCE_FLOOR)


def generate_events(frames: Sequence, timestamps: Sequence[float],
                    epsilon=DEFAULT_EPSILON) -> EventStream:
    """Emit events for a sampled intensity sequence.

    Each pixel keeps a reference log intensity. Between consecutive frames a
    pixel whose log intensity moved ``dL`` away from its reference emits
    ``floor(|dL| / eps)`` events of sign ``dL``; each advances the reference
    by ``sign * eps``. The ``k`` events of one interval are spaced evenly and
    strictly inside it, at ``t_a + j / (k + 1) * (t_b - t_a)``.
    """
    eps = _eps(epsilon)
    if len(frames) < 2:
        raise ValidationError("need at least two frames")
    if len(frames) != len(timestamps):
        raise ValidationError("frames and timestamps differ in length")
    ts = np.asarray(timestamps, dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise NonMonotonicTime("frame timestamps must strictly increase")
    logs = [log_intensity(f) for f in frames]
    shape = logs[0].shape
    if any(l.shape != shape for l in logs):
        raise SizeMismatch("frames differ in size")
    h, w = shape
    ref = logs[0].copy()
    chunks = []
    for i in range(1, len(logs)):
        d = logs[i] - ref
        k = np.floor(np.abs(d) / eps + _CROSSING_SLACK).astype(np.int64)
        idx = np.flatnonzero(k)
        if idx.size == 0:
            continue
        kk = k.ravel()[idx]
        sign = np.sign(d.ravel()[idx]).astype(np.int64)
        ref.ravel()[idx] += sign * kk * eps
        rep_idx = np.repeat(idx, kk)
        rep_k = np.repeat(kk, kk)
        # j = 1..k within each pixel's run
        starts = np.cumsum(kk) - kk
        j = np.arange(rep_idx.size) - np.repeat(starts, kk) + 1
        t = ts[i - 1] + j / (rep_k + 1.0) * (ts[i] - ts[i - 1])
        chunks.append((t, rep_idx % w, rep_idx // w, np.repeat(sign, kk)))
    if not chunks:
        return EventStream.empty(w, h)
    t, x, y, p = (np.concatenate(c) for c in zip(*chunks))
    order = np.argsort(t, kind="stable")
    return EventStream(t[order], x[order], y[order], p[order], w, h)


def accumulate_bins(events: EventStream, boundaries: Sequence[float]) -> list[EventBin]:
    """Sum polarities into the half-open intervals between ``boundaries``."""
    b = np.asarray(boundaries, dtype=float)
    if b.size < 2:
        raise ValidationError("need at least two bin boundaries")
    if np.any(np.diff(b) <= 0):
        raise NonMonotonicTime("bin boundaries must strictly increase")
    nb = b.size - 1
    which = np.searchsorted(b, events.t, side="right") - 1
    ok = (which >= 0) & (which < nb)
    counts = np.zeros((nb, events.height * events.width), dtype=np.int64)
    flat = events.y[ok] * events.width + events.x[ok]
    np.add.at(counts, (which[ok], flat), events.p[ok])
    counts = counts.reshape(nb, events.height, events.width)
    return [EventBin(counts[i], float(b[i]), float(b[i + 1])) for i in range(nb)]


def cumulative_event_maps(bins: Sequence[EventBin]) -> list[np.ndarray]:
    """Prefix sums ``E_i = B_1 + ... + B_i`` of the bins, as float maps."""
    if len(bins) < 1:
        raise ValidationError("need at least one bin")
    stack = np.cumsum(np.stack([np.asarray(b.counts if isinstance(b, EventBin) else b,
                                           dtype=float) for b in bins]), axis=0)
    return list(stack)


def edi_deblur(blur, maps: Sequence[np.ndarray], epsilon=DEFAULT_EPSILON,
               clip: bool = True) -> list[np.ndarray]:
    """Recover ``N = len(maps) + 1`` latent frames from one blurry frame.

    ``I_0 = N * blur / (1 + sum_i exp(eps * E_i))`` and latent ``i`` is
    ``I_0 * exp(eps * E_i)`` with ``E_0 = 0``. RGB inputs share the same
    luminance event maps across channels.
    """
    eps = _eps(epsilon)
    blur = np.asarray(blur, dtype=float)
    hw = blur.shape[:2]
    ratios = [np.ones(hw)]
    for m in maps:
        m = np.asarray(m, dtype=float)
        if m.shape != hw:
            raise SizeMismatch(f"event map shape {m.shape} does not match image {hw}")
        ratios.append(np.exp(eps * m))
    ratios = np.stack(ratios)
    n = len(ratios)
    first = n * blur / (ratios.sum(axis=0) if blur.ndim == 2 else
                        ratios.sum(axis=0)[..., None])
    out = []
    for r in ratios:
        latent = first * (r if blur.ndim == 2 else r[..., None])
        out.append(np.clip(latent, 0.0, 1.0) if clip else latent)
    return out


def synthesize_blur(sharps: Sequence) -> np.ndarray:
    if len(sharps) == 0:
        raise ValidationError("need at least one frame to average")
    arrs = [np.asarray(s, dtype=float) for s in sharps]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise SizeMismatch("frames differ in size")
    return np.mean(np.stack(arrs), axis=0)


def simulated_event_map(rendered_a, rendered_b, epsilon=DEFAULT_EPSILON) -> np.ndarray:
    """Continuous event count implied by the change from ``a`` to ``b``."""
    eps = _eps(epsilon)
    la, lb = log_intensity(rendered_a), log_intensity(rendered_b)
    if la.shape != lb.shape:
        raise SizeMismatch("rendered images differ in size")
    return (lb - la) / eps


def write_events(path, events: EventStream) -> None:
    """Write ``timestamp_us x y polarity`` lines, sorted by timestamp."""
    us = np.rint(events.t * 1e6).astype(np.int64)
    if np.any(np.diff(us) < 0):
        raise NonMonotonicTime("events must be sorted by timestamp")
    with open(path, "w") as fh:
        for row in zip(us.tolist(), events.x.tolist(), events.y.tolist(),
                       events.p.tolist()):
            fh.write("%d %d %d %d\n" % row)


def read_events(path, width: int, height: int) -> EventStream:
    """Parse an event file; unsorted timestamps are rejected."""
    text = Path(path).read_text()
    if not text.strip():
        return EventStream.empty(width, height)
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    if data.shape[1] != 4:
        raise ValidationError("event lines must have 4 fields: timestamp_us x y polarity")
    if np.any(np.diff(data[:, 0]) < 0):
        raise NonMonotonicTime("event file is not sorted by timestamp")
    return EventStream(data[:, 0] * 1e-6, data[:, 1], data[:, 2], data[:, 3], width, height)
