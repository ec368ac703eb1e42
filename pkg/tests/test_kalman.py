import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import scalar_kalman
from evmotion.errors import LengthMismatch, SingularInnovation, ValidationError
from evmotion.kalman import KalmanParams, KalmanState, KalmanTracker, predict, step, update

P1 = KalmanParams(1.0)


def state(T=(0, 0, 0), v=(0, 0, 0), C=None):
    return KalmanState(np.r_[T, v], np.eye(6) if C is None else C)


class TestParams:
    @pytest.mark.parametrize("dt", [0.0, -1.0])
    def test_dt_positive(self, dt):
        with pytest.raises(ValidationError):
            KalmanParams(dt)

    def test_bad_noise(self):
        with pytest.raises(ValidationError):
            KalmanParams(1.0, sigma_T2=-1)
        with pytest.raises(ValidationError):
            KalmanParams(1.0, R_obs=np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1.0]]))
        with pytest.raises(ValidationError):
            KalmanParams(1.0, R_obs=-np.eye(3))

    def test_matrices(self):
        p = KalmanParams(0.5, 2.0, 3.0)
        np.testing.assert_array_equal(p.F[:3, 3:], 0.5 * np.eye(3))
        np.testing.assert_array_equal(p.G[:3], 0.125 * np.eye(3))
        np.testing.assert_array_equal(np.diag(p.Q), [2, 2, 2, 3, 3, 3])


class TestPredict:
    def test_at_rest(self):
        s = predict(state((1, 2, 3)), np.zeros(3), P1)
        np.testing.assert_array_equal(s.X, [1, 2, 3, 0, 0, 0])

    def test_constant_velocity(self):
        np.testing.assert_array_equal(predict(state(v=(1, 0, 0)), np.zeros(3), P1).T, [1, 0, 0])

    def test_gravity(self):
        s = predict(state(), (0, -10, 0), P1)
        np.testing.assert_array_equal(s.T, [0, -5, 0])
        np.testing.assert_array_equal(s.v, [0, -10, 0])

    def test_covariance_symmetric(self, rng):
        a = rng.standard_normal((6, 6))
        s = predict(KalmanState(np.zeros(6), a @ a.T), np.zeros(3), P1)
        assert np.array_equal(s.C, s.C.T)


class TestUpdate:
    def test_huge_noise_keeps_prediction(self):
        p = KalmanParams(1.0, R_obs=1e12 * np.eye(3))
        prior = state((1, 2, 3), (0.5, 0, 0))
        post = update(prior, (10, -10, 4), p)
        np.testing.assert_allclose(post.X, prior.X, rtol=1e-6, atol=1e-9)

    def test_zero_covariance_ignores_observation(self):
        prior = state((1, 2, 3), C=np.zeros((6, 6)))
        assert np.array_equal(update(prior, (5, 5, 5), P1).X, prior.X)

    def test_scalar_fusion(self):
        p = KalmanParams(1.0, R_obs=np.eye(3))
        post = update(state(C=np.eye(6)), (1, 1, 1), p)
        np.testing.assert_allclose(post.T, [0.5] * 3)
        np.testing.assert_allclose(np.diag(post.C)[:3], [0.5] * 3)

    def test_singular(self):
        p = KalmanParams(1.0, R_obs=np.zeros((3, 3)))
        with pytest.raises(SingularInnovation):
            update(state(C=np.zeros((6, 6))), np.zeros(3), p)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_posterior_variance_bound(self, seed):
        r = np.random.default_rng(seed)
        a = r.standard_normal((6, 6))
        prior = KalmanState(r.standard_normal(6), a @ a.T + 1e-3 * np.eye(6))
        rd = r.uniform(1e-3, 2, 3)
        post = update(prior, r.standard_normal(3), KalmanParams(1.0, R_obs=np.diag(rd)))
        bound = np.minimum(np.diag(prior.C)[:3], rd) + 1e-9
        assert np.all(np.diag(post.C)[:3] <= bound)


class TestStep:
    def test_perfect_observation(self):
        p = KalmanParams(0.1, R_obs=1e-14 * np.eye(3))
        s0 = state((0, 1, 0), (2, 0, 0))
        a = np.array([0, -9.8, 0])
        z = (p.F @ s0.X + p.G @ a)[:3]
        np.testing.assert_allclose(step(s0, a, z, p).T, z, atol=1e-9)

    def test_noiseless_track_converges(self):
        dt, a = 0.1, np.array([0.5, -9.8, 0.0])
        p = KalmanParams(dt, 0.0, 0.0, 1e-6 * np.eye(3))
        s = KalmanState.initial(v0=(1, 1, 1))
        errs = []
        for k in range(1, 31):
            t = k * dt
            truth = np.array([2.0, 3.0, -1.0]) * t + 0.5 * a * t * t
            s = step(s, a, truth, p)
            errs.append(np.linalg.norm(s.T - truth))
        tail = errs[5:]
        assert all(b <= a_ + 1e-12 for a_, b in zip(tail, tail[1:]))
        assert tail[-1] < 1e-5

    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_scalar_oracle(self, seed):
        r = np.random.default_rng(seed)
        n, dt = 20, float(r.uniform(0.01, 0.5))
        qT, qv, rr = r.uniform(1e-5, 1e-1, 3)
        z = r.standard_normal((n, 3))
        acc = r.standard_normal((n, 3))
        tracker = KalmanTracker(dt, qT, qv, rr, 0.3, 0.7).fit(z, acc)
        v0 = z[0] / dt
        for ax in range(3):
            ref = scalar_kalman(z[:, ax], acc[:, ax], dt, qT, qv, rr, 0.0, v0[ax], 0.3, 0.7)
            for s, (t, v, p11, p12, p22) in zip(tracker.states_, ref):
                np.testing.assert_allclose([s.T[ax], s.v[ax], s.C[ax, ax], s.C[ax, ax + 3],
                                            s.C[ax + 3, ax + 3]], [t, v, p11, p12, p22],
                                           rtol=1e-9, atol=1e-300)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_psd(self, seed):
        r = np.random.default_rng(seed)
        p = KalmanParams(float(r.uniform(0.01, 1)), *r.uniform(0, 1e-2, 2),
                         float(r.uniform(1e-4, 1)) * np.eye(3))
        s = KalmanState.initial()
        for _ in range(50):
            s = step(s, r.standard_normal(3), r.standard_normal(3), p)
            assert np.array_equal(s.C, s.C.T)
            assert np.linalg.eigvalsh(s.C).min() >= -1e-9


class TestTracker:
    def test_params_and_predict(self):
        t = KalmanTracker(dt=0.5)
        assert t.get_params()["dt"] == 0.5
        out = t.fit(np.ones((4, 3))).predict()
        assert out.shape == (4, 3)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            KalmanTracker().fit(np.zeros((3, 3)), np.zeros((2, 3)))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            KalmanTracker().predict()
