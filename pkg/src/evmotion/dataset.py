"""Reading the on-disk dataset layout written by :func:`scenesim.make_dataset`."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputMismatch, ValidationError
from .events import EventBin, EventStream, accumulate_bins, read_events
from .geometry import Camera, load_trajectory
from .images import load_png


@dataclass(frozen=True)
class FrameBundle:
    """One blurry exposure with its event bins and sub-frame timestamps."""

    blur: np.ndarray
    bins: tuple
    boundaries: np.ndarray
    index: int = 0

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "bins", tuple(self.bins))
        if b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValidationError("bundle boundaries must be >= 2 increasing timestamps")
        if len(self.bins) != b.size - 1:
            raise InputMismatch(f"{len(self.bins)} event bins for {b.size} boundaries")
        for i, eb in enumerate(self.bins):
            if not isinstance(eb, EventBin):
                raise ValidationError("bins must be EventBin instances")
            if not (np.isclose(eb.start, b[i], rtol=0, atol=1e-9)
                    and np.isclose(eb.end, b[i + 1], rtol=0, atol=1e-9)):
                raise InputMismatch("event bins do not tile the exposure window")
            if eb.counts.shape != np.shape(self.blur)[:2]:
                raise InputMismatch("event bin size differs from the blurry frame")

    @property
    def n_sub(self) -> int:
        return len(self.boundaries)


@dataclass
class Dataset:
    root: Path
    meta: dict
    camera: Camera
    epsilon: float
    bundles: list

    @property
    def exposures(self) -> int:
        return len(self.bundles)

    def sharp_frames(self) -> list[list[np.ndarray]] | None:
        """Ground-truth sharp frames per exposure, or ``None`` if absent."""
        n = len(self.bundles[0].boundaries)
        paths = [[self.root / f"sharp_{e:04d}_{i:02d}.png" for i in range(n)]
                 for e in range(self.exposures)]
        if not all(p.exists() for row in paths for p in row):
            return None
        return [[load_png(p) for p in row] for row in paths]

    def gt_trajectory(self):
        path = self.root / "trajectory_gt.json"
        return load_trajectory(path) if path.exists() else None


def bundles_from_events(blurs, events: EventStream, boundaries) -> list[FrameBundle]:
    return [FrameBundle(np.asarray(blur, dtype=float), accumulate_bins(events, b), b, e)
            for e, (blur, b) in enumerate(zip(blurs, boundaries))]


def load_dataset(root) -> Dataset:
    """Load ``meta.json``, blurry frames and ``events.txt`` from ``root``.

    Missing files raise ``FileNotFoundError``.
    """
    root = Path(root)
    meta = json.loads((root / "meta.json").read_text())
    if meta.get("format") != 1:
        raise ValidationError(f"unsupported dataset format {meta.get('format')!r}")
    camera = Camera.from_dict(meta["camera"])
    events_path = root / "events.txt"
    if not events_path.exists():
        raise FileNotFoundError(f"missing event file {events_path}")
    events = read_events(events_path, camera.width, camera.height)
    boundaries = [np.asarray(b, dtype=float) for b in meta["boundaries"]]
    blurs = [load_png(root / f"blur_{e:04d}.png") for e in range(len(boundaries))]
    return Dataset(root, meta, camera, float(meta["epsilon"]),
                   bundles_from_events(blurs, events, boundaries))
