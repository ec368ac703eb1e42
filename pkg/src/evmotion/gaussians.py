"""Isotropic Gaussian kernel clouds and a CPU splat renderer.

Pixel ``(row, col)`` has its centre at image coordinates ``(v=row, u=col)``.
Kernels are composited front-to-back in order of camera-frame depth; ties
keep list order, so every render is deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NoViews, SizeMismatch, ValidationError
from .geometry import DEPTH_EPS, Camera, Transform, apply, project_many

logger = logging.getLogger(__name__)

TRUNCATE_SIGMAS = 3.0
# footprint weight is lowered by its value at the cutoff and rescaled so it
# reaches zero continuously there while keeping a peak of 1
_CUT = float(np.exp(-0.5 * TRUNCATE_SIGMAS ** 2))
_CUT_SCALE = 1.0 / (1.0 - _CUT)


@dataclass(frozen=True)
class GaussianKernel:
    mu: tuple
    radius: float
    rgb: tuple
    alpha: float


class GaussianCloud:
    """An ordered set of isotropic kernels held as parallel arrays.

    Parameters
    ----------
    mu : array-like of shape (M, 3)
    radius : array-like of shape (M,)
    rgb : array-like of shape (M, 3), values in [0, 1]
    alpha : array-like of shape (M,), values in [0, 1]
    """

    def __init__(self, mu, radius, rgb, alpha):
        self.mu = np.asarray(mu, dtype=float).reshape(-1, 3)
        m = len(self.mu)
        self.radius = np.asarray(radius, dtype=float).reshape(m)
        self.rgb = np.asarray(rgb, dtype=float).reshape(m, 3)
        self.alpha = np.asarray(alpha, dtype=float).reshape(m)
        if not np.all(np.isfinite(self.mu)):
            raise ValidationError("kernel positions must be finite")
        if np.any(self.radius <= 0) or not np.all(np.isfinite(self.radius)):
            raise ValidationError("kernel radii must be positive")
        if np.any((self.rgb < 0) | (self.rgb > 1)):
            raise ValidationError("kernel colors must lie in [0, 1]")
        if np.any((self.alpha < 0) | (self.alpha > 1)):
            raise ValidationError("kernel opacities must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i) -> GaussianKernel:
        return GaussianKernel(tuple(self.mu[i]), float(self.radius[i]),
                              tuple(self.rgb[i]), float(self.alpha[i]))

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(self.mu[index], self.radius[index], self.rgb[index],
                             self.alpha[index])

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.mu.copy(), self.radius.copy(), self.rgb.copy(),
                             self.alpha.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianCloud):
            return NotImplemented
        return (len(self) == len(other) and np.array_equal(self.mu, other.mu)
                and np.array_equal(self.radius, other.radius)
                and np.array_equal(self.rgb, other.rgb)
                and np.array_equal(self.alpha, other.alpha))

    def __repr__(self) -> str:
        return f"GaussianCloud(n={len(self)})"

    def to_json(self) -> list:
        return [{"mu": self.mu[i].tolist(), "r": float(self.radius[i]),
                 "rgb": self.rgb[i].tolist(), "alpha": float(self.alpha[i])}
                for i in range(len(self))]

    @classmethod
    def from_json(cls, doc) -> "GaussianCloud":
        if not isinstance(doc, list):
            raise ValidationError("cloud JSON must be an array of kernels")
        try:
            return cls([k["mu"] for k in doc], [k["r"] for k in doc],
                       [k["rgb"] for k in doc], [k["alpha"] for k in doc])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed kernel entry: {exc}") from exc


def save_cloud(path, cloud: GaussianCloud) -> None:
    Path(path).write_text(json.dumps(cloud.to_json()))


def load_cloud(path) -> GaussianCloud:
    """Read a cloud file; JSON syntax errors propagate with line/column info."""
    return GaussianCloud.from_json(json.loads(Path(path).read_text()))


def _require_nonempty(cloud: GaussianCloud) -> None:
    if len(cloud) == 0:
        raise EmptyCloud("cloud has no kernels")


@dataclass
class _Raster:
    """Per-render intermediates over the cropped pixel window."""

    rows: slice
    cols: slice
    order: np.ndarray      # kernel indices, front to back
    weight: np.ndarray     # (K, P) Gaussian footprint weights
    a: np.ndarray          # (K, P) effective opacity alpha_i * weight
    trans: np.ndarray      # (K, P) transmittance before each kernel


def _rasterize(cloud: GaussianCloud, camera: Camera) -> _Raster | None:
    uv, z = project_many(camera, cloud.mu)
    visible = np.flatnonzero(z > DEPTH_EPS)
    if visible.size == 0:
        return None
    order = visible[np.argsort(z[visible], kind="stable")]
    u, v = uv[order, 0], uv[order, 1]
    sig = camera.focal * cloud.radius[order] / z[order]
    reach = TRUNCATE_SIGMAS * sig
    c0 = max(0, int(np.floor(np.min(u - reach))))
    c1 = min(camera.width, int(np.ceil(np.max(u + reach))) + 1)
    r0 = max(0, int(np.floor(np.min(v - reach))))
    r1 = min(camera.height, int(np.ceil(np.max(v + reach))) + 1)
    if c1 <= c0 or r1 <= r0:
        return None
    xs = np.arange(c0, c1, dtype=float)
    ys = np.arange(r0, r1, dtype=float)
    dx2 = (xs[None, :] - u[:, None]) ** 2
    dy2 = (ys[None, :] - v[:, None]) ** 2
    inv = 1.0 / (2.0 * sig * sig)
    ex = np.exp(-dx2 * inv[:, None])
    ey = np.exp(-dy2 * inv[:, None])
    w = (ey[:, :, None] * ex[:, None, :] - _CUT) * _CUT_SCALE
    d2 = dy2[:, :, None] + dx2[:, None, :]
    w[(d2 > (reach * reach)[:, None, None]) | (w < 0)] = 0.0
    w = w.reshape(len(order), -1)
    a = cloud.alpha[order][:, None] * w
    trans = np.empty_like(a)
    trans[0] = 1.0
    if len(order) > 1:
        np.cumprod(1.0 - a[:-1], axis=0, out=trans[1:])
    return _Raster(slice(r0, r1), slice(c0, c1), order, w, a, trans)


@njit(cache=True)
def _composite(u, v, sig, alpha, rgb, order, height, width, truncate, cut, cut_scale):
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    ex = np.empty(width)
    for idx in order:
        s = sig[idx]
        reach = truncate * s
        r2 = reach * reach
        inv = 1.0 / (2.0 * s * s)
        uc, vc = u[idx], v[idx]
        x0 = max(0, int(np.ceil(uc - reach)))
        x1 = min(width - 1, int(np.floor(uc + reach)))
        y0 = max(0, int(np.ceil(vc - reach)))
        y1 = min(height - 1, int(np.floor(vc + reach)))
        al = alpha[idx]
        for x in range(x0, x1 + 1):
            ex[x] = np.exp(-(x - uc) * (x - uc) * inv)
        for y in range(y0, y1 + 1):
            dy2 = (y - vc) * (y - vc)
            if dy2 > r2:
                continue
            ey = np.exp(-dy2 * inv)
            for x in range(x0, x1 + 1):
                if (x - uc) * (x - uc) + dy2 > r2:
                    continue
                a = al * (ey * ex[x] - cut) * cut_scale
                if a <= 0.0:
                    continue
                t = trans[y, x]
                wgt = a * t
                img[y, x, 0] += rgb[idx, 0] * wgt
                img[y, x, 1] += rgb[idx, 1] * wgt
                img[y, x, 2] += rgb[idx, 2] * wgt
                trans[y, x] = t * (1.0 - a)
    return img


def splat_render(cloud: GaussianCloud, camera: Camera) -> np.ndarray:
    """Render ``cloud`` on a black background.

    Returns
    -------
    ndarray of shape (height, width, 3), values in [0, 1]
    """
    _require_nonempty(cloud)
    return render_arrays(cloud.mu, cloud.radius, cloud.rgb, cloud.alpha, camera)


def render_arrays(mu, radius, rgb, alpha, camera: Camera) -> np.ndarray:
    """:func:`splat_render` on raw kernel arrays, skipping cloud validation."""
    uv, z = project_many(camera, mu)
    visible = np.flatnonzero(z > DEPTH_EPS)
    if visible.size == 0:
        return np.zeros((camera.height, camera.width, 3))
    order = visible[np.argsort(z[visible], kind="stable")]
    sig = np.zeros(len(mu))
    sig[visible] = camera.focal * radius[visible] / z[visible]
    img = _composite(uv[:, 0], uv[:, 1], sig, alpha, rgb, order, camera.height,
                     camera.width, TRUNCATE_SIGMAS, _CUT, _CUT_SCALE)
    return np.clip(img, 0.0, 1.0)


def _render_dense(cloud: GaussianCloud, camera: Camera) -> np.ndarray:
    """Vectorised reference render over the cropped window (slower)."""
    img = np.zeros((camera.height, camera.width, 3))
    r = _rasterize(cloud, camera)
    if r is None:
        return img
    contrib = (r.a * r.trans).T @ cloud.rgb[r.order]
    h, w = r.rows.stop - r.rows.start, r.cols.stop - r.cols.start
    img[r.rows, r.cols] = contrib.reshape(h, w, 3)
    return np.clip(img, 0.0, 1.0)


def centroid(cloud: GaussianCloud) -> np.ndarray:
    """Radius-cubed weighted mean of kernel positions."""
    _require_nonempty(cloud)
    w = cloud.radius ** 3
    return (w[:, None] * cloud.mu).sum(axis=0) / w.sum()


def transform_cloud(cloud: GaussianCloud, t: Transform) -> GaussianCloud:
    return GaussianCloud(apply(t, cloud.mu), cloud.radius * t.scale, cloud.rgb.copy(),
                         cloud.alpha.copy())


def prune_density(cloud: GaussianCloud, opacity_floor: float = 0.05,
                  isolation_radius: float = 0.25, min_neighbors: int = 3) -> GaussianCloud:
    """Drop faint kernels, then kernels with too few close neighbours.

    The isolation rule is repeated until no kernel is removed, so the result
    is a fixed point and pruning it again changes nothing.
    """
    if opacity_floor < 0 or isolation_radius < 0 or min_neighbors < 0:
        raise ValidationError("pruning thresholds must be non-negative")
    keep = np.flatnonzero(cloud.alpha >= opacity_floor)
    while keep.size and min_neighbors > 0:
        tree = cKDTree(cloud.mu[keep])
        counts = np.array([len(n) - 1 for n in
                           tree.query_ball_point(cloud.mu[keep], isolation_radius)])
        dense = counts >= min_neighbors
        if dense.all():
            break
        keep = keep[dense]
    if keep.size == 0:
        raise EmptyCloud("pruning removed every kernel")
    return cloud.subset(keep)


def _appearance_grads(cloud: GaussianCloud, view_img: np.ndarray, camera: Camera):
    """L1 loss of one view and its gradient w.r.t. kernel colors and opacities."""
    g_rgb = np.zeros_like(cloud.rgb)
    g_alpha = np.zeros_like(cloud.alpha)
    m_rgb = np.zeros_like(cloud.rgb)
    m_alpha = np.zeros_like(cloud.alpha)
    rendered = splat_render(cloud, camera)
    diff = rendered - view_img
    n = diff.size
    loss = float(np.abs(diff).sum() / n)
    r = _rasterize(cloud, camera)
    if r is None:
        return loss, g_rgb, g_alpha, m_rgb, m_alpha
    sgn = np.sign(diff[r.rows, r.cols]).reshape(-1, 3) / n  # (P, 3)
    vis = r.a * r.trans                                      # (K, P)
    rgb = cloud.rgb[r.order]
    g_rgb[r.order] = vis @ sgn
    m_rgb[r.order] = (vis.sum(axis=1) / n)[:, None]
    # remainder[k] = colour composited from kernels behind k, starting from full transmittance
    remainder = np.zeros((sgn.shape[0], 3))
    for k in range(len(r.order) - 1, -1, -1):
        dC = r.weight[k][:, None] * r.trans[k][:, None] * (rgb[k][None, :] - remainder)
        i = r.order[k]
        g_alpha[i] = float((dC * sgn).sum())
        m_alpha[i] = float(np.abs(dC).sum() / n)
        remainder = rgb[k][None, :] * r.a[k][:, None] + (1.0 - r.a[k][:, None]) * remainder
    return loss, g_rgb, g_alpha, m_rgb, m_alpha


def fit_cloud_appearance(cloud: GaussianCloud, views, iterations: int = 200,
                         lr: float = 0.05) -> GaussianCloud:
    """Fit kernel colors and opacities to posed images; positions stay fixed.

    Minimises the mean L1 error between renders and ``views`` (a list of
    ``(image, camera)`` pairs) by preconditioned gradient descent: each
    parameter step is its gradient divided by its total pixel influence, so
    ``lr`` is a step length in color/opacity units. Every 10 iterations the
    loss is checked; an increase restores the best checkpoint and halves
    ``lr``.
    """
    _require_nonempty(cloud)
    views = list(views)
    if not views:
        raise NoViews("at least one view is required")
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    for img, cam in views:
        if np.shape(img)[:2] != (cam.height, cam.width):
            raise SizeMismatch("view image does not match its camera size")

    cur = cloud.copy()

    def evaluate(c):
        tot = [0.0, np.zeros_like(c.rgb), np.zeros_like(c.alpha),
               np.zeros_like(c.rgb), np.zeros_like(c.alpha)]
        for img, cam in views:
            img = np.asarray(img, dtype=float)
            if img.ndim == 2:
                img = np.repeat(img[:, :, None], 3, axis=2)
            for j, part in enumerate(_appearance_grads(c, img, cam)):
                tot[j] = tot[j] + part
        return tot

    best = cur.copy()
    best_loss = evaluate(cur)[0]
    step = lr
    for it in range(iterations):
        loss, g_rgb, g_a, m_rgb, m_a = evaluate(cur)
        if loss == 0.0:
            break
        d_rgb = np.divide(g_rgb, m_rgb, out=np.zeros_like(g_rgb), where=m_rgb > 1e-15)
        d_a = np.divide(g_a, m_a, out=np.zeros_like(g_a), where=m_a > 1e-15)
        cur = GaussianCloud(cur.mu, cur.radius, np.clip(cur.rgb - step * d_rgb, 0, 1),
                            np.clip(cur.alpha - step * d_a, 0, 1))
        if (it + 1) % 10 == 0 or it == iterations - 1:
            loss = evaluate(cur)[0]
            if loss <= best_loss:
                best, best_loss = cur.copy(), loss
            else:
                cur = best.copy()
                step *= 0.5
                if step < lr * 1e-6:
                    break
    logger.debug("appearance fit finished with loss %.3g", best_loss)
    return best
