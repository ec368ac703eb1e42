"""Rigid and similarity transforms, quaternions and the pinhole camera.

All types here are immutable values. Rotations are unit quaternions stored
as ``(w, x, y, z)`` with the sign fixed so that ``w >= 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import BehindCamera, LengthMismatch, NonMonotonicTime, ValidationError

DEPTH_EPS = 1e-6


def _vec3(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class UnitQuaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or n < 1e-12:
            raise ValidationError("quaternion must be finite and non-zero")
        q = q / n
        if q[0] < 0:
            q = -q
        for name, value in zip("wxyz", q):
            object.__setattr__(self, name, float(value))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = np.asarray(q, dtype=float).reshape(4)
        return cls(*q)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        axis = _vec3(axis, "axis")
        n = np.linalg.norm(axis)
        if n < 1e-15 or angle == 0.0:
            return cls.identity()
        axis = axis / n
        s = math.sin(0.5 * angle)
        return cls(math.cos(0.5 * angle), *(s * axis))

    @classmethod
    def from_rotvec(cls, rotvec) -> "UnitQuaternion":
        """Quaternion for a rotation of ``|rotvec|`` radians about ``rotvec``."""
        rv = _vec3(rotvec, "rotation vector")
        angle = float(np.linalg.norm(rv))
        if angle < 1e-12:
            # second-order small-angle form keeps FD perturbations exact to 1e-24
            return cls(1.0 - angle * angle / 8.0, *(0.5 * rv))
        return cls.from_axis_angle(rv / angle, angle)

    @classmethod
    def from_matrix(cls, m) -> "UnitQuaternion":
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2.0
            return cls(0.25 * s, (m[2, 1] - m[1, 2]) / s,
                       (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            return cls((m[2, 1] - m[1, 2]) / s, 0.25 * s,
                       (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                       0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                   (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def as_rotvec(self) -> np.ndarray:
        v = np.array([self.x, self.y, self.z])
        s = float(np.linalg.norm(v))
        if s < 1e-15:
            return 2.0 * v
        angle = 2.0 * math.atan2(s, self.w)
        return v / s * angle

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        a, b = self, other
        return UnitQuaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.as_matrix().T

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic angle in radians between two rotations."""
        d = abs(float(np.dot(self.as_array(), other.as_array())))
        return 2.0 * math.acos(min(1.0, d))


@dataclass(frozen=True)
class PoseSE3:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "translation",
                           tuple(float(v) for v in _vec3(self.translation, "translation")))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @property
    def scale(self) -> float:
        return 1.0

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "PoseSE3":
        rinv = self.rotation.conjugate()
        return PoseSE3(rinv, -rinv.rotate(self.t))

    def to_dict(self) -> dict:
        return {"q": self.rotation.as_array().tolist(), "t": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseSE3":
        return cls(UnitQuaternion.from_array(d["q"]), d["t"])


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "translation",
                           tuple(float(v) for v in _vec3(self.translation, "translation")))
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValidationError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def to_dict(self) -> dict:
        return {"q": self.rotation.as_array().tolist(), "t": list(self.translation),
                "s": self.scale}


Transform = Union[PoseSE3, SimilarityTransform]


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Return ``a ∘ b``: apply ``b`` first, then ``a``."""
    return PoseSE3(a.rotation * b.rotation, a.rotation.rotate(b.t) + a.t)


def apply(t: Transform, point) -> np.ndarray:
    """Apply ``s R p + t`` to one point or an ``(M, 3)`` array of points."""
    p = np.asarray(point, dtype=float)
    return t.scale * t.rotation.rotate(p) + t.t


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. ``pose`` maps world coordinates into the camera frame."""

    focal: float
    cx: float
    cy: float
    width: int
    height: int
    pose: PoseSE3 = field(default_factory=PoseSE3.identity)

    def __post_init__(self):
        if not self.focal > 0:
            raise ValidationError(f"focal length must be positive, got {self.focal}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError("image width and height must be >= 1")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def to_camera(self, points) -> np.ndarray:
        return apply(self.pose, points)

    def to_dict(self) -> dict:
        return {"focal": self.focal, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        pose = PoseSE3.from_dict(d["pose"]) if "pose" in d else PoseSE3.identity()
        return cls(d["focal"], d["cx"], d["cy"], d["width"], d["height"], pose)


def project(camera: Camera, point) -> tuple[np.ndarray, float]:
    """Project a world point to pixel coordinates.

    Returns
    -------
    uv : ndarray of shape (2,)
    depth : float
        Camera-frame depth of the point.
    """
    pc = camera.to_camera(_vec3(point, "point"))
    z = float(pc[2])
    if z <= DEPTH_EPS:
        raise BehindCamera(f"point depth {z} is not in front of the camera")
    u = camera.focal * pc[0] / z + camera.cx
    v = camera.focal * pc[1] / z + camera.cy
    return np.array([u, v]), z


def project_many(camera: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection; entries with depth <= eps get NaN pixels."""
    pc = camera.to_camera(np.asarray(points, dtype=float).reshape(-1, 3))
    z = pc[:, 2]
    ok = z > DEPTH_EPS
    uv = np.full((len(pc), 2), np.nan)
    uv[ok, 0] = camera.focal * pc[ok, 0] / z[ok] + camera.cx
    uv[ok, 1] = camera.focal * pc[ok, 1] / z[ok] + camera.cy
    return uv, z


def look_at_camera(eye, target, focal: float, width: int, height: int,
                   up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at ``eye`` looking at ``target``; image y grows downward."""
    eye, target = _vec3(eye), _vec3(target)
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, _vec3(up))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])  # rows: camera axes in world coords
    q = UnitQuaternion.from_matrix(rot)
    pose = PoseSE3(q, -rot @ eye)
    return Camera(focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height, pose)


def save_trajectory(path, timestamps: Sequence[float], poses: Sequence[PoseSE3],
                    extra: dict | None = None) -> None:
    doc = {"format": 1, "timestamps": [float(t) for t in timestamps],
           "poses": [p.to_dict() for p in poses]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_trajectory(path) -> tuple[np.ndarray, list[PoseSE3]]:
    doc = json.loads(Path(path).read_text())
    ts = np.asarray(doc["timestamps"], dtype=float)
    poses = [PoseSE3.from_dict(p) for p in doc["poses"]]
    if len(ts) != len(poses):
        raise LengthMismatch("timestamps and poses differ in length")
    if np.any(np.diff(ts) <= 0):
        raise NonMonotonicTime("trajectory timestamps must strictly increase")
    return ts, poses
