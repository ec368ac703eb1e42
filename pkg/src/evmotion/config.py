"""Run configuration: one JSON document covering simulation and recovery."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .gaussians import GaussianCloud
from .kalman import KalmanParams
from .losses import LossWeights
from .msa import MsaConfig
from .recovery import RecoveryConfig
from .scenesim import CaptureConfig, RigidBodySpec, make_object_cloud


@dataclass(frozen=True)
class ObjectConfig:
    kind: str = "sphere"
    kernels: int = 400
    radius: float = 0.5

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValidationError(f"object kind must be 'sphere' or 'box', got {self.kind!r}")
        if int(self.kernels) < 1 or not self.radius > 0:
            raise ValidationError("object needs >= 1 kernel and a positive radius")


@dataclass(frozen=True)
class KalmanConfig:
    sigma_T2: float = 1e-4
    sigma_v2: float = 1e-3
    r_obs: float = 1e-2

    def params(self, dt: float = 1.0) -> KalmanParams:
        return KalmanParams(dt, self.sigma_T2, self.sigma_v2, self.r_obs * np.eye(3))


@dataclass(frozen=True)
class OptimConfig:
    iterations_base: int = 1000
    fd_rot: float = 1e-4
    fd_trans: float = 1e-4
    use_msa: bool = True
    base_lr: float = 1e-3
    max_halvings: int = 5
    patience: int = 15
    rel_tol: float = 1e-4
    acc_time_unit: float = 1.0 / 30.0
    register_iterations: int = 10000
    register_lr: float = 5e-5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    exposures: int = 8
    motion_jitter: float = 0.1
    object: ObjectConfig = field(default_factory=ObjectConfig)
    body: RigidBodySpec = field(default_factory=RigidBodySpec)
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    msa: MsaConfig = field(default_factory=MsaConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if int(self.exposures) < 2:
            raise ValidationError(f"exposures must be >= 2, got {self.exposures}")
        if self.motion_jitter < 0:
            raise ValidationError("motion_jitter must be non-negative")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def scene(self) -> tuple[GaussianCloud, RigidBodySpec]:
        """Object cloud and (seed-jittered) rigid-body motion for this run."""
        rng = self.rng()
        cloud_seed = int(rng.integers(2 ** 31))
        cloud = make_object_cloud(self.object.kernels, self.object.radius, self.object.kind,
                                  cloud_seed)
        body = self.body
        if self.motion_jitter > 0:
            j = self.motion_jitter
            body = RigidBodySpec(body.p0,
                                 np.asarray(body.v0) * (1 + j * rng.standard_normal(3)),
                                 np.asarray(body.omega) * (1 + j * rng.standard_normal(3)),
                                 body.g, body.drag)
        return cloud, body

    def recovery(self) -> RecoveryConfig:
        o = self.optim
        return RecoveryConfig(weights=self.weights, msa=self.msa, kalman=self.kalman.params(),
                              iterations_base=o.iterations_base, fd_rot=o.fd_rot,
                              fd_trans=o.fd_trans, use_msa=o.use_msa, base_lr=o.base_lr,
                              max_halvings=o.max_halvings, patience=o.patience,
                              rel_tol=o.rel_tol, acc_time_unit=o.acc_time_unit,
                              register_iterations=o.register_iterations,
                              register_lr=o.register_lr)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"object": ObjectConfig, "body": RigidBodySpec, "capture": CaptureConfig,
             "weights": LossWeights, "msa": MsaConfig, "kalman": KalmanConfig,
             "optim": OptimConfig}


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ValidationError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in doc.items():
        if k in _SECTIONS and cls is RunConfig:
            v = _build(_SECTIONS[k], v, f"{where}.{k}")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def parse_config(doc: dict) -> RunConfig:
    return _build(RunConfig, doc, "config")


def load_config(path) -> RunConfig:
    """Load and validate a RunConfig JSON file; unknown keys are rejected."""
    return parse_config(json.loads(Path(path).read_text()))
