"""Registration of a kernel cloud to the scene and per-exposure motion recovery.

Recovered poses describe the registered cloud after re-centring it on its
weighted centroid, so a pose translation *is* the object's centroid. Each
exposure adds ``N - 1`` increments: sub-frame ``k`` has rotation
``exp(r_k) * R_{k-1}`` (about the centroid, world axes) and translation
``t_{k-1} + d_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import FrameBundle
from .errors import Diverged, InputMismatch, NoForeground, ValidationError
from .events import (DEFAULT_EPSILON, cumulative_event_maps, edi_deblur, luminance,
                     simulated_event_map)
from .gaussians import GaussianCloud, centroid, render_arrays, transform_cloud
from .geometry import (DEPTH_EPS, Camera, PoseSE3, SimilarityTransform, UnitQuaternion,
                       project)
from .kalman import KalmanParams, KalmanState, predict, step
from .losses import (LossWeights, acc_loss, accelerations, blur_loss, event_loss,
                     kf_loss, registration_loss, total_loss)
from .metrics import FOREGROUND_THRESHOLD
from .msa import DisplacementTracker, MsaConfig, learning_rate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecoveryConfig:
    """Knobs for registration and motion recovery.

    ``kalman.dt`` is ignored: the filter runs at the exposure spacing found in
    the data. ``acc_time_unit`` is the unit (seconds) in which the
    sub-frame interval enters the acceleration loss.
    """

    weights: LossWeights = field(default_factory=LossWeights)
    msa: MsaConfig = field(default_factory=MsaConfig)
    kalman: KalmanParams = field(default_factory=lambda: KalmanParams(dt=1.0))
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
    register_fd: float = 1e-4
    foreground_threshold: float = FOREGROUND_THRESHOLD

    def __post_init__(self):
        if int(self.iterations_base) < 1 or int(self.register_iterations) < 1:
            raise ValidationError("iteration counts must be >= 1")
        if not (self.fd_rot > 0 and self.fd_trans > 0 and self.register_fd > 0):
            raise ValidationError("finite-difference steps must be positive")
        if not (self.base_lr > 0 and self.register_lr > 0 and self.acc_time_unit > 0):
            raise ValidationError("rates and time units must be positive")


@dataclass
class TrajectoryEstimate:
    timestamps: np.ndarray
    poses: list
    losses: list = field(default_factory=list)
    kalman_states: list = field(default_factory=list)
    model: GaussianCloud | None = None

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    def render(self, index: int, camera: Camera) -> np.ndarray:
        """Render the centred model at pose ``index``."""
        if self.model is None:
            raise ValidationError("estimate carries no model to render")
        c = transform_cloud(self.model, self.poses[index])
        return render_arrays(c.mu, c.radius, c.rgb, c.alpha, camera)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class _DescentResult:
    theta: np.ndarray
    loss: float
    history: list
    iterations: int


def _descend(loss_fn: Callable, grad_fn: Callable, theta0: np.ndarray,
             rate: Callable[[int], float], max_iter: int, max_halvings: int = 5,
             patience: int = 15, rel_tol: float = 1e-4) -> _DescentResult:
    """Adam-direction descent that only accepts steps which do not raise the loss.

    A rejected step is retried at half length up to ``max_halvings`` times.
    Stops after three consecutive fully rejected iterations, or when the loss
    improved by less than ``rel_tol`` (relative) over ``patience`` iterations.
    """
    theta = np.array(theta0, dtype=float)
    loss = loss_fn(theta)
    if not np.isfinite(loss):
        raise Diverged("initial loss is not finite")
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = 0.9, 0.999
    history = [loss]
    rejects = 0
    n = 0
    for n in range(max_iter):
        g = grad_fn(theta, loss)
        if not np.all(np.isfinite(g)):
            raise Diverged("gradient is not finite")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** (n + 1))
        vh = v / (1 - b2 ** (n + 1))
        direction = mh / (np.sqrt(vh) + 1e-12)
        lr = rate(n)
        accepted = False
        for h in range(max_halvings + 1):
            cand = theta - lr * 0.5 ** h * direction
            cl = loss_fn(cand)
            if not np.isfinite(cl):
                raise Diverged("loss became non-finite")
            if cl <= loss:
                theta, loss, accepted = cand, cl, True
                break
        history.append(loss)
        rejects = 0 if accepted else rejects + 1
        if rejects >= 3:
            break
        if len(history) > patience:
            old = history[-1 - patience]
            if old - loss <= rel_tol * max(abs(old), 1e-12):
                break
    return _DescentResult(theta, loss, history, n + 1)


def _central_gradient(loss_fn: Callable, theta: np.ndarray, steps: np.ndarray) -> np.ndarray:
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        g[j] = (loss_fn(theta + e, j) - loss_fn(theta - e, j)) / (2 * steps[j])
    return g


# ---------------------------------------------------------------------------
# registration


def _foreground_stats(img, threshold):
    lum = luminance(img)
    mask = lum > threshold
    if not mask.any():
        return None
    ys, xs = np.nonzero(mask)
    w = lum[mask]
    return np.array([np.sum(xs * w), np.sum(ys * w)]) / w.sum(), int(mask.sum())


def _similarity_from_params(p: np.ndarray, base: SimilarityTransform,
                            pivot: np.ndarray) -> SimilarityTransform:
    """Perturb ``base`` by rotation vector, translation and log-scale about ``pivot``."""
    dq = UnitQuaternion.from_rotvec(p[:3])
    ds = float(np.exp(p[6]))
    # x -> ds * dR (x - pivot) + pivot + dt, applied after base
    rot = dq * base.rotation
    scale = ds * base.scale
    t = ds * dq.rotate(base.t - pivot) + pivot + p[3:6]
    return SimilarityTransform(rot, t, scale)


def initial_registration(cloud: GaussianCloud, first_frame, camera: Camera,
                         threshold: float = FOREGROUND_THRESHOLD) -> SimilarityTransform:
    """Coarse transform matching the image centroid and foreground area of the target."""
    target = _foreground_stats(first_frame, threshold)
    if target is None:
        raise Diverged("registration target has no foreground; only the trivial minimum exists")
    c0 = centroid(cloud)
    own = _foreground_stats(render_arrays(cloud.mu, cloud.radius, cloud.rgb, cloud.alpha,
                                          camera), threshold)
    _, depth = project(camera, c0)
    scale = 1.0 if own is None else float(np.sqrt(target[1] / max(own[1], 1)))
    (u, v), _ = target
    ray = np.array([(u - camera.cx) * depth / camera.focal,
                    (v - camera.cy) * depth / camera.focal, depth])
    c_new = camera.pose.inverse().rotation.rotate(ray) + camera.pose.inverse().t
    return SimilarityTransform(UnitQuaternion.identity(), c_new - scale * c0, scale)


def register_to_scene(cloud: GaussianCloud, first_frame, camera: Camera,
                      cfg: RecoveryConfig = RecoveryConfig(),
                      init: SimilarityTransform | None = None) -> SimilarityTransform:
    """Fit rotation, translation and scale so the cloud renders onto ``first_frame``.

    Starts from ``init`` if given, otherwise from whichever of the identity and
    :func:`initial_registration` scores lower, and returns the lowest-loss
    transform found.
    """
    target = np.asarray(first_frame, dtype=float)
    if target.ndim == 2:
        target = np.repeat(target[:, :, None], 3, axis=2)

    def score(t):
        c = transform_cloud(cloud, t)
        return registration_loss(render_arrays(c.mu, c.radius, c.rgb, c.alpha, camera),
                                 target, cfg.weights)

    if init is None:
        coarse = initial_registration(cloud, target, camera, cfg.foreground_threshold)
        ident = SimilarityTransform.identity()
        init = ident if score(ident) <= score(coarse) else coarse
    start = transform_cloud(cloud, init)
    if _foreground_stats(render_arrays(start.mu, start.radius, start.rgb, start.alpha, camera),
                         cfg.foreground_threshold) is None:
        raise Diverged("cloud renders no foreground; registration loss is flat")
    pivot = init.scale * init.rotation.rotate(centroid(cloud)) + init.t

    def loss_fn(p, j=None):
        return score(_similarity_from_params(p, init, pivot))

    steps = np.full(7, cfg.register_fd)
    res = _descend(loss_fn, lambda p, l: _central_gradient(loss_fn, p, steps),
                   np.zeros(7), lambda n: cfg.register_lr, cfg.register_iterations,
                   cfg.max_halvings, cfg.patience, cfg.rel_tol * 0.01)
    logger.info("registration: loss %.5g -> %.5g in %d iterations",
                res.history[0], res.loss, res.iterations)
    return _similarity_from_params(res.theta, init, pivot)


# ---------------------------------------------------------------------------
# observation


def observe_displacement(sharp_prev, sharp_curr, camera: Camera, current_depth: float,
                         threshold: float = FOREGROUND_THRESHOLD) -> np.ndarray:
    """Camera-frame displacement implied by the shift of the intensity centroid."""
    if np.shape(sharp_prev) != np.shape(sharp_curr):
        raise ValidationError("frames differ in size")
    if not current_depth > 0:
        raise ValidationError("current_depth must be positive")
    a = _foreground_stats(sharp_prev, threshold)
    b = _foreground_stats(sharp_curr, threshold)
    if a is None or b is None:
        raise NoForeground("no pixel above the foreground threshold")
    du, dv = b[0] - a[0]
    k = current_depth / camera.focal
    return np.array([du * k, dv * k, 0.0])


# ---------------------------------------------------------------------------
# per-exposure objective


def _chain(start: PoseSE3, theta: np.ndarray) -> list[PoseSE3]:
    poses = [start]
    for d in theta.reshape(-1, 6):
        prev = poses[-1]
        poses.append(PoseSE3(UnitQuaternion.from_rotvec(d[:3]) * prev.rotation,
                             prev.t + d[3:]))
    return poses


class _ExposureObjective:
    """Total loss of one exposure as a function of its ``6 (N - 1)`` increments."""

    def __init__(self, cloud: GaussianCloud, camera: Camera, start: PoseSE3,
                 bundle: FrameBundle, real_maps, epsilon: float, weights: LossWeights,
                 history: np.ndarray, kf_reference, acc_dt: float):
        self.cloud = cloud
        self.camera = camera
        self.start = start
        self.blur = np.asarray(bundle.blur, dtype=float)
        if self.blur.ndim == 2:
            self.blur = np.repeat(self.blur[:, :, None], 3, axis=2)
        self.real_maps = real_maps
        self.eps = epsilon
        self.w = weights
        self.history = history
        self.kf_reference = kf_reference
        self.acc_dt = acc_dt
        self.n = bundle.n_sub
        self.first = self._render(start)
        self._base_theta = None
        self._base_renders = None

    def _render(self, pose: PoseSE3) -> np.ndarray:
        c = self.cloud
        mu = c.mu @ pose.rotation.as_matrix().T + pose.t
        return render_arrays(mu, c.radius, c.rgb, c.alpha, self.camera)

    def set_base(self, theta: np.ndarray) -> None:
        self._base_theta = theta.copy()
        poses = _chain(self.start, theta)
        self._base_renders = [self.first] + [self._render(p) for p in poses[1:]]

    def terms(self, theta: np.ndarray, changed_from: int = 1) -> tuple[dict, list]:
        poses = _chain(self.start, theta)
        if self._base_renders is not None and changed_from > 1:
            renders = self._base_renders[:changed_from] + [
                self._render(p) for p in poses[changed_from:]]
        else:
            renders = [self.first] + [self._render(p) for p in poses[1:]]
        w = self.w
        parts = {"blur": blur_loss(renders, self.blur, w.dssim) if w.blur else 0.0}
        if w.event:
            sim = [simulated_event_map(renders[0], r, self.eps) for r in renders[1:]]
            parts["event"] = event_loss(self.real_maps, sim)
        else:
            parts["event"] = 0.0
        track = np.vstack([self.history, [p.t for p in poses[1:]]])
        accs = accelerations(track, self.acc_dt)
        parts["acc"] = acc_loss(accs) if (w.acc and len(accs) >= 2) else 0.0
        if self.kf_reference is not None and w.kf:
            parts["kf"] = kf_loss(self.kf_reference, [p.t for p in poses[1:]])
        else:
            parts["kf"] = 0.0
        parts["total"] = total_loss(parts["blur"], parts["acc"], parts["event"],
                                    parts["kf"], w)
        return parts, poses

    def loss(self, theta: np.ndarray, j: int | None = None) -> float:
        changed = 1 if j is None else j // 6 + 1
        return self.terms(theta, changed)[0]["total"]


# ---------------------------------------------------------------------------
# driver


def _check_bundles(bundles: Sequence[FrameBundle]) -> None:
    if len(bundles) < 2:
        raise InputMismatch("need at least two exposures")
    n = bundles[0].n_sub
    shape = np.shape(bundles[0].blur)[:2]
    for b in bundles:
        if b.n_sub != n or len(b.bins) != n - 1:
            raise InputMismatch("exposures differ in their number of sub-frames/bins")
        if np.shape(b.blur)[:2] != shape:
            raise InputMismatch("exposures differ in image size")
    for a, b in zip(bundles[:-1], bundles[1:]):
        if not np.isclose(a.boundaries[-1], b.boundaries[0], rtol=0, atol=1e-9):
            raise InputMismatch("exposure windows must tile: each must start where "
                                "the previous one ends")


def _to_world(camera: Camera, d_cam: np.ndarray) -> np.ndarray:
    return camera.pose.rotation.conjugate().rotate(d_cam)


def recover(cloud: GaussianCloud, bundles: Sequence[FrameBundle], camera: Camera,
            epsilon=DEFAULT_EPSILON, cfg: RecoveryConfig = RecoveryConfig(),
            registration: SimilarityTransform | None = None) -> TrajectoryEstimate:
    """Estimate the pose chain of ``cloud`` across all exposures.

    ``cloud`` must already be registered to the first sub-frame (or pass
    ``registration`` to apply it here).
    """
    _check_bundles(bundles)
    eps = float(epsilon)
    if registration is not None:
        cloud = transform_cloud(cloud, registration)
    c0 = centroid(cloud)
    base = transform_cloud(cloud, PoseSE3(UnitQuaternion.identity(), -c0))
    n = bundles[0].n_sub
    sub_dt = float(bundles[0].boundaries[1] - bundles[0].boundaries[0])
    frame_dt = float(bundles[1].boundaries[0] - bundles[0].boundaries[0])
    kparams = replace(cfg.kalman, dt=frame_dt)
    acc_dt = sub_dt / cfg.acc_time_unit

    poses = [PoseSE3(UnitQuaternion.identity(), c0)]
    stamps = [float(bundles[0].boundaries[0])]
    tracker = DisplacementTracker()
    kstate: KalmanState | None = None
    kf_states, losses = [], []
    z_cum = np.zeros(3)
    prev_T = np.zeros(3)
    theta = np.zeros(6 * (n - 1))
    accel = np.zeros(3)
    kf_reference = None
    T_mag = None

    for e, bundle in enumerate(bundles):
        maps = cumulative_event_maps(bundle.bins)
        latents = edi_deblur(bundle.blur, maps, eps)
        depth = float(camera.to_camera(poses[-1].t)[2])
        if depth <= DEPTH_EPS:
            raise Diverged(f"exposure {e}: estimated centroid left the view (depth {depth:.3g})")
        z_disp = _to_world(camera, observe_displacement(latents[0], latents[-1], camera, depth,
                                                        cfg.foreground_threshold))
        if T_mag is None:
            T_mag = tracker.observe(z_disp)

        history = np.array([p.t for p in poses[-n:]])
        obj = _ExposureObjective(base, camera, poses[-1], bundle, maps, eps, cfg.weights,
                                 history, kf_reference, acc_dt)
        msa_cfg = tracker.config(cfg.msa)

        def rate(it, _mag=T_mag, _cfg=msa_cfg):
            if cfg.use_msa:
                return learning_rate(min(_mag, _cfg.T_max_mag), it, _cfg)
            return cfg.base_lr

        steps = np.tile([cfg.fd_rot] * 3 + [cfg.fd_trans] * 3, n - 1)

        def grad(th, _loss):
            obj.set_base(th)
            return _central_gradient(obj.loss, th, steps)

        res = _descend(obj.loss, grad, theta, rate, cfg.iterations_base, cfg.max_halvings,
                       cfg.patience, cfg.rel_tol)
        theta = res.theta
        parts, chain = obj.terms(theta)
        parts = {k: float(v) for k, v in parts.items()}
        parts.update(exposure=e, lr=float(rate(0)), iterations=res.iterations)
        losses.append(parts)
        logger.info("exposure %d: total %.5g after %d iterations", e, parts["total"],
                    res.iterations)
        poses.extend(chain[1:])
        stamps.extend(float(t) for t in bundle.boundaries[1:])

        # Kalman fusion at the exposure rate
        track = np.array([p.t for p in poses])
        if len(track) >= 3:
            accel = accelerations(track[-3:], sub_dt)[0]
        z_cum = z_cum + z_disp
        if kstate is None:
            kstate = KalmanState.initial(v0=z_disp / frame_dt)
            a_ctrl = np.zeros(3)
        else:
            a_ctrl = accel
        kstate = step(kstate, a_ctrl, z_cum, kparams)
        kf_states.append(kstate)
        T_mag = tracker.observe(kstate.T - prev_T)
        prev_T = kstate.T.copy()

        # reference positions for the next exposure's sub-frames
        taus = sub_dt * np.arange(1, n)
        kf_reference = np.array([poses[0].t + kstate.T + kstate.v * tau + 0.5 * accel * tau ** 2
                                 for tau in taus])
        # constant-velocity warm start: repeat the last increment
        theta = np.tile(theta.reshape(-1, 6)[-1], n - 1)

    return TrajectoryEstimate(np.array(stamps), poses, losses, kf_states, base)


# ---------------------------------------------------------------------------
# estimator wrappers


class EdiDeblurrer(TransformerMixin, BaseEstimator):
    """Stateless transformer: bundles -> list of ``N`` latent frames per bundle."""

    def __init__(self, epsilon=DEFAULT_EPSILON):
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [edi_deblur(b.blur, cumulative_event_maps(b.bins), self.epsilon) for b in X]


class SceneRegistrar(BaseEstimator):
    """Estimate the similarity transform placing a cloud onto a first frame."""

    def __init__(self, camera=None, config=None):
        self.camera = camera
        self.config = config

    def fit(self, X, y=None, cloud=None):
        if cloud is None or self.camera is None:
            raise ValidationError("SceneRegistrar.fit needs a camera and a cloud")
        self.transform_ = register_to_scene(cloud, X, self.camera,
                                            self.config or RecoveryConfig())
        return self

    def transform(self, cloud: GaussianCloud) -> GaussianCloud:
        check_is_fitted(self, "transform_")
        return transform_cloud(cloud, self.transform_)


class MotionRecoverer(BaseEstimator):
    """Recover the pose chain of a registered cloud from blurry exposures.

    ``fit(bundles, cloud=...)`` runs :func:`recover`, applying ``registration``
    to the cloud first when given; ``predict(timestamps)`` linearly
    interpolates the recovered centroid track.
    """

    def __init__(self, camera=None, epsilon=DEFAULT_EPSILON, config=None, registration=None):
        self.camera = camera
        self.epsilon = epsilon
        self.config = config
        self.registration = registration

    def fit(self, X, y=None, cloud=None):
        if cloud is None or self.camera is None:
            raise ValidationError("MotionRecoverer.fit needs a camera and a cloud")
        self.trajectory_ = recover(cloud, X, self.camera, self.epsilon,
                                   self.config or RecoveryConfig(),
                                   registration=self.registration)
        return self

    def predict(self, X):
        check_is_fitted(self, "trajectory_")
        ts = np.asarray(X, dtype=float).reshape(-1)
        p = self.trajectory_.positions
        return np.stack([np.interp(ts, self.trajectory_.timestamps, p[:, i])
                         for i in range(3)], axis=1)
