"""Constant-acceleration Kalman filter over 3-D displacement and velocity.

State ``X = [T, v]`` (6-vector); the control input is an acceleration
estimate and the observation is a displacement ``z = T + noise``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import LengthMismatch, SingularInnovation, ValidationError

_I3 = np.eye(3)
_H = np.hstack([_I3, np.zeros((3, 3))])
MAX_INNOVATION_COND = 1e12


@dataclass(frozen=True)
class KalmanParams:
    dt: float
    sigma_T2: float = 1e-4
    sigma_v2: float = 1e-3
    R_obs: np.ndarray = field(default_factory=lambda: 1e-2 * np.eye(3))

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.sigma_T2 < 0 or self.sigma_v2 < 0:
            raise ValidationError("process noise variances must be non-negative")
        r = np.asarray(self.R_obs, dtype=float)
        if r.shape != (3, 3):
            raise ValidationError("R_obs must be 3x3")
        if not np.allclose(r, r.T, atol=1e-12):
            raise ValidationError("R_obs must be symmetric")
        if np.min(np.linalg.eigvalsh(r)) < -1e-12:
            raise ValidationError("R_obs must be positive semidefinite")
        object.__setattr__(self, "R_obs", r)

    @property
    def F(self) -> np.ndarray:
        f = np.eye(6)
        f[:3, 3:] = self.dt * _I3
        return f

    @property
    def G(self) -> np.ndarray:
        return np.vstack([0.5 * self.dt ** 2 * _I3, self.dt * _I3])

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.sigma_T2] * 3 + [self.sigma_v2] * 3)


@dataclass(frozen=True)
class KalmanState:
    X: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.X, dtype=float).reshape(6)
        c = np.asarray(self.C, dtype=float).reshape(6, 6)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(c))):
            raise ValidationError("Kalman state must be finite")
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "C", c)

    @property
    def T(self) -> np.ndarray:
        return self.X[:3]

    @property
    def v(self) -> np.ndarray:
        return self.X[3:]

    @classmethod
    def initial(cls, T0=(0.0, 0.0, 0.0), v0=(0.0, 0.0, 0.0), var_T: float = 1e-2,
                var_v: float = 1e-1) -> "KalmanState":
        return cls(np.concatenate([np.asarray(T0, float), np.asarray(v0, float)]),
                   np.diag([var_T] * 3 + [var_v] * 3))

    def to_dict(self) -> dict:
        return {"X": self.X.tolist(), "C": self.C.tolist()}


def _sym(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def predict(state: KalmanState, a, params: KalmanParams) -> KalmanState:
    a = np.asarray(a, dtype=float).reshape(3)
    F = params.F
    X = F @ state.X + params.G @ a
    C = _sym(F @ state.C @ F.T + params.Q)
    return KalmanState(X, C)


def update(state: KalmanState, z, params: KalmanParams) -> KalmanState:
    z = np.asarray(z, dtype=float).reshape(3)
    S = _H @ state.C @ _H.T + params.R_obs
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_INNOVATION_COND:
        raise SingularInnovation("innovation covariance is numerically singular")
    K = np.linalg.solve(S, _H @ state.C).T  # C H^T S^-1, S symmetric
    X = state.X + K @ (z - _H @ state.X)
    C = _sym((np.eye(6) - K @ _H) @ state.C)
    return KalmanState(X, C)


def step(state: KalmanState, a, z, params: KalmanParams) -> KalmanState:
    return update(predict(state, a, params), z, params)


class KalmanTracker(BaseEstimator):
    """Run the filter over a whole observation sequence.

    ``fit(Z, A)`` takes observed displacements ``Z`` of shape (n, 3) at times
    ``dt, 2 dt, ...`` after a start at displacement zero, and optional control
    accelerations ``A`` of the same shape. The velocity prior comes from the
    first difference of the first two observations (zero, ``Z[0]``).

    Attributes
    ----------
    states_ : list of KalmanState
        Posterior after each observation.
    """

    def __init__(self, dt=1.0, sigma_T2=1e-4, sigma_v2=1e-3, r_obs=1e-2,
                 var_T0=1e-2, var_v0=1e-1):
        self.dt = dt
        self.sigma_T2 = sigma_T2
        self.sigma_v2 = sigma_v2
        self.r_obs = r_obs
        self.var_T0 = var_T0
        self.var_v0 = var_v0

    def _params(self) -> KalmanParams:
        return KalmanParams(self.dt, self.sigma_T2, self.sigma_v2,
                            self.r_obs * np.eye(3))

    def fit(self, Z, A=None):
        Z = np.asarray(Z, dtype=float).reshape(-1, 3)
        A = np.zeros_like(Z) if A is None else np.asarray(A, dtype=float).reshape(-1, 3)
        if len(A) != len(Z):
            raise LengthMismatch("observations and accelerations differ in length")
        params = self._params()
        v0 = Z[0] / self.dt if len(Z) else np.zeros(3)
        state = KalmanState.initial(v0=v0, var_T=self.var_T0, var_v=self.var_v0)
        self.states_ = []
        for z, a in zip(Z, A):
            state = step(state, a, z, params)
            self.states_.append(state)
        return self

    def predict(self, X=None):
        """Posterior displacements, shape (n, 3)."""
        check_is_fitted(self, "states_")
        return np.array([s.T for s in self.states_])
