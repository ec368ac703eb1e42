"""Synthetic ground truth: a textured kernel cloud flying through a force field."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .events import (DEFAULT_EPSILON, generate_events, luminance, synthesize_blur,
                     write_events)
from .gaussians import GaussianCloud, centroid, save_cloud, splat_render, transform_cloud
from .geometry import Camera, PoseSE3, UnitQuaternion, look_at_camera, save_trajectory
from .images import save_png

logger = logging.getLogger(__name__)

EVENT_SUPERSAMPLING = 8


@dataclass(frozen=True)
class RigidBodySpec:
    p0: tuple = (-0.8, 0.2, 0.0)
    v0: tuple = (6.0, 1.5, 0.0)
    omega: tuple = (0.0, 0.0, 4.0)
    g: tuple = (0.0, -9.8, 0.0)
    drag: float = 0.0

    def __post_init__(self):
        for name in ("p0", "v0", "omega", "g"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, tuple(float(x) for x in v))
        if not (np.isfinite(self.drag) and self.drag >= 0):
            raise ValidationError("drag must be non-negative")


@dataclass(frozen=True)
class CaptureConfig:
    fps: float = 30.0
    exposure_fraction: float = 1.0
    n_sub: int = 5
    epsilon: float = DEFAULT_EPSILON
    width: int = 64
    height: int = 64
    focal: float = 80.0
    camera_distance: float = 4.0

    def __post_init__(self):
        if not self.fps > 0:
            raise ValidationError("frame rate must be positive")
        if not 0 < self.exposure_fraction <= 1:
            raise ValidationError("exposure fraction must lie in (0, 1]")
        if int(self.n_sub) < 2:
            raise ValidationError(f"n_sub (N) must be >= 2, got {self.n_sub}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError("image size must be >= 1")
        if not self.focal > 0 or not self.camera_distance > 0:
            raise ValidationError("focal and camera_distance must be positive")

    def camera(self) -> Camera:
        return look_at_camera((0.0, 0.0, self.camera_distance), (0.0, 0.0, 0.0),
                              self.focal, self.width, self.height)

    @property
    def period(self) -> float:
        return 1.0 / self.fps

    @property
    def sub_dt(self) -> float:
        return self.period * self.exposure_fraction / (self.n_sub - 1)

    def boundaries(self, exposure: int) -> np.ndarray:
        start = exposure * self.period + 0.5 * (1.0 - self.exposure_fraction) * self.period
        return start + self.sub_dt * np.arange(self.n_sub)


def simulate_pose(spec: RigidBodySpec, t: float) -> PoseSE3:
    """Closed-form pose at time ``t`` (linear drag when ``spec.drag > 0``)."""
    if t < 0:
        raise ValidationError("time must be non-negative")
    p0, v0, g = (np.asarray(v) for v in (spec.p0, spec.v0, spec.g))
    k = spec.drag
    if k == 0:
        pos = p0 + v0 * t + 0.5 * g * t * t
    else:
        pos = p0 + (v0 - g / k) * (-math.expm1(-k * t)) / k + g * t / k
    w = np.asarray(spec.omega)
    rate = float(np.linalg.norm(w))
    rot = (UnitQuaternion.from_axis_angle(w / rate, rate * t) if rate > 0
           else UnitQuaternion.identity())
    return PoseSE3(rot, pos)


def make_object_cloud(n: int = 400, radius: float = 0.5, kind: str = "sphere",
                      seed: int = 0) -> GaussianCloud:
    """Procedural two-tone object centred so its weighted centroid is the origin."""
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        mu = d * radius * rng.uniform(0.55, 1.0, size=(n, 1)) ** (1 / 3)
        tone = (d[:, 0] > 0) ^ (d[:, 1] > 0.3)
    elif kind == "box":
        mu = rng.uniform(-radius, radius, size=(n, 3)) * np.array([1.0, 0.6, 0.6])
        tone = (np.floor(mu[:, 0] / (0.5 * radius)) % 2).astype(bool)
    else:
        raise ValidationError(f"unknown object kind {kind!r}")
    r = rng.uniform(0.06, 0.1, size=n) * radius / 0.5
    rgb = np.where(tone[:, None], [0.95, 0.55, 0.15], [0.2, 0.45, 0.9])
    rgb = np.clip(rgb + rng.normal(0.0, 0.03, size=(n, 3)), 0.0, 1.0)
    alpha = rng.uniform(0.6, 0.95, size=n)
    cloud = GaussianCloud(mu, r, rgb, alpha)
    return transform_cloud(cloud, PoseSE3(UnitQuaternion.identity(), -centroid(cloud)))


def render_at(cloud: GaussianCloud, pose: PoseSE3, camera: Camera) -> np.ndarray:
    return splat_render(transform_cloud(cloud, pose), camera)


def _sample_times(cap: CaptureConfig, exposures: int) -> np.ndarray:
    """Render times for event simulation: EVENT_SUPERSAMPLING per sub-frame step."""
    h = cap.sub_dt / EVENT_SUPERSAMPLING
    pieces = []
    for e in range(exposures):
        b = cap.boundaries(e)
        pieces.append(np.linspace(b[0], b[-1], EVENT_SUPERSAMPLING * (cap.n_sub - 1) + 1))
        if e + 1 < exposures:
            nxt = cap.boundaries(e + 1)[0]
            gap = nxt - b[-1]
            if gap > 1e-12:
                m = int(math.ceil(gap / h)) + 1
                pieces.append(np.linspace(b[-1], nxt, m))
    t = np.concatenate(pieces)
    # merge shared endpoints that are equal up to rounding
    keep = np.concatenate([[True], np.diff(t) > 1e-12])
    return t[keep]


def make_dataset(cloud: GaussianCloud, spec: RigidBodySpec, cap: CaptureConfig,
                 exposures: int, output_dir, seed: int | None = None) -> dict:
    """Write a complete synthetic dataset to ``output_dir`` and return a summary."""
    if exposures < 2:
        raise ValidationError("need at least two exposures")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    camera = cap.camera()
    n = cap.n_sub

    sharp_cache: dict[float, np.ndarray] = {}
    for e in range(exposures):
        b = cap.boundaries(e)
        sharps = []
        for i, t in enumerate(b):
            img = render_at(cloud, simulate_pose(spec, t), camera)
            sharp_cache[round(float(t), 12)] = img
            save_png(out / f"sharp_{e:04d}_{i:02d}.png", img)
            sharps.append(img)
        save_png(out / f"blur_{e:04d}.png", synthesize_blur(sharps))

    times = _sample_times(cap, exposures)
    frames = [luminance(sharp_cache.get(round(float(t), 12))
                        if round(float(t), 12) in sharp_cache
                        else render_at(cloud, simulate_pose(spec, t), camera))
              for t in times]
    events = generate_events(frames, times, cap.epsilon)
    write_events(out / "events.txt", events)

    stamps = np.unique(np.concatenate([cap.boundaries(e) for e in range(exposures)]).round(12))
    poses = [simulate_pose(spec, t) for t in stamps]
    save_trajectory(out / "trajectory_gt.json", stamps, poses)
    save_cloud(out / "cloud.json", cloud)

    meta = {
        "format": 1,
        "exposures": exposures,
        "seed": seed,
        "epsilon": cap.epsilon,
        "capture": asdict(cap),
        "spec": asdict(spec),
        "camera": camera.to_dict(),
        "boundaries": [cap.boundaries(e).tolist() for e in range(exposures)],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    path = float(np.linalg.norm(np.diff([p.translation for p in poses], axis=0), axis=1).sum())
    summary = {"exposures": exposures, "events": len(events), "path_length": path}
    logger.info("dataset written to %s: %s", out, summary)
    return summary
