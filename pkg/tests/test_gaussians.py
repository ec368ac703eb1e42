import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import blob
from evmotion.errors import EmptyCloud, NoViews, ValidationError
from evmotion.gaussians import (GaussianCloud, _render_dense, centroid, fit_cloud_appearance,
                                load_cloud, prune_density, save_cloud, splat_render,
                                transform_cloud)
from evmotion.geometry import Camera, PoseSE3, SimilarityTransform, UnitQuaternion, apply


def naive_render(cloud, cam):
    """Pixel-by-pixel front-to-back compositing written straight from the formula."""
    cut = math.exp(-4.5)
    img = np.zeros((cam.height, cam.width, 3))
    pc = cam.to_camera(cloud.mu)
    idx = sorted((i for i in range(len(cloud)) if pc[i, 2] > 1e-6),
                 key=lambda i: (pc[i, 2], i))
    for row in range(cam.height):
        for col in range(cam.width):
            t = 1.0
            for i in idx:
                x, y, z = pc[i]
                u, v = cam.focal * x / z + cam.cx, cam.focal * y / z + cam.cy
                s = cam.focal * cloud.radius[i] / z
                d2 = (col - u) ** 2 + (row - v) ** 2
                if d2 > 9 * s * s:
                    continue
                w = max(0.0, (math.exp(-d2 / (2 * s * s)) - cut) / (1 - cut))
                a = cloud.alpha[i] * w
                img[row, col] += t * a * cloud.rgb[i]
                t *= 1 - a
    return np.clip(img, 0, 1)


def one(mu, r=0.1, rgb=(1, 0, 0), alpha=1.0):
    return GaussianCloud([mu], [r], [rgb], [alpha])


class TestCloud:
    @pytest.mark.parametrize("field,value", [("radius", [0.0]), ("rgb", [[1.2, 0, 0]]),
                                             ("alpha", [-0.1])])
    def test_invariants(self, field, value):
        kw = dict(mu=[[0, 0, 1]], radius=[1.0], rgb=[[0, 0, 0]], alpha=[1.0])
        kw[field] = value
        with pytest.raises(ValidationError):
            GaussianCloud(**kw)

    def test_json_round_trip(self, tmp_path, rng):
        c = blob(rng, 10)
        save_cloud(tmp_path / "c.json", c)
        assert load_cloud(tmp_path / "c.json") == c
        assert set(c.to_json()[0]) == {"mu", "r", "rgb", "alpha"}

    def test_malformed_json(self):
        with pytest.raises(ValidationError):
            GaussianCloud.from_json([{"mu": [0, 0, 0]}])
        with pytest.raises(ValidationError):
            GaussianCloud.from_json({"mu": []})

    def test_kernel_view(self):
        k = one((1, 2, 3))[0]
        assert k.mu == (1, 2, 3) and k.alpha == 1.0


class TestRender:
    def test_all_behind_is_black(self, axis_camera):
        c = GaussianCloud([[0, 0, -1], [0, 0, 0]], [1, 1], [[1, 1, 1]] * 2, [1, 1])
        assert not splat_render(c, axis_camera).any()

    def test_empty_cloud(self, axis_camera):
        with pytest.raises(EmptyCloud):
            splat_render(GaussianCloud(np.zeros((0, 3)), [], np.zeros((0, 3)), []),
                         axis_camera)

    def test_single_kernel_centre(self):
        cam = Camera(40.0, 16.0, 16.0, 33, 33)
        img = splat_render(one((0, 0, 2)), cam)
        np.testing.assert_allclose(img[16, 16], [1, 0, 0], atol=1e-6)

    def test_two_kernel_hand_case(self):
        cam = Camera(40.0, 16.0, 16.0, 33, 33)
        c = GaussianCloud([[0, 0, 2], [0, 0, 3]], [0.1, 0.1], [[1, 1, 1], [0, 0, 0]],
                          [0.5, 1.0])
        np.testing.assert_allclose(splat_render(c, cam)[16, 16], [0.5] * 3, atol=1e-6)

    def test_matches_naive_oracle(self, rng):
        cam = Camera(30.0, 9.5, 8.5, 20, 18)
        c = blob(rng, 25, spread=0.4, center=(0, 0, 4), radius=(0.05, 0.3))
        np.testing.assert_allclose(splat_render(c, cam), naive_render(c, cam), atol=1e-12)

    def test_dense_path_agrees(self, rng, scene_camera):
        c = blob(rng, 80, center=(0, 0, 0))
        np.testing.assert_allclose(splat_render(c, scene_camera),
                                   _render_dense(c, scene_camera), atol=1e-12)

    def test_footprint_continuous_at_cutoff(self):
        cam = Camera(10.0, 0.0, 0.0, 40, 1)
        img = splat_render(one((0, 0, 1), r=1.0, rgb=(1, 1, 1)), cam)[0, :, 0]
        # sigma = 10 px so the cutoff sits at 30 px; the weight decays to zero before it
        assert img[29] < 5e-3 and img[30] == 0.0
        assert np.all(np.diff(img) <= 0)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_permutation_invariant(self, seed):
        # continuous random depths have no ties, so the depth sort fixes the order
        r = np.random.default_rng(seed)
        cam = Camera(30.0, 11.5, 11.5, 24, 24)
        c = blob(r, 30, center=(0, 0, 4))
        perm = r.permutation(len(c))
        assert np.array_equal(splat_render(c, cam), splat_render(c.subset(perm), cam))

    def test_ties_follow_list_order(self):
        cam = Camera(40.0, 16.0, 16.0, 33, 33)
        c = GaussianCloud([[0, 0, 2], [0, 0, 2]], [0.1, 0.1], [[1, 0, 0], [0, 0, 1]],
                          [0.5, 0.5])
        np.testing.assert_allclose(splat_render(c, cam)[16, 16], [0.5, 0, 0.25], atol=1e-12)
        np.testing.assert_allclose(splat_render(c.subset([1, 0]), cam)[16, 16],
                                   [0.25, 0, 0.5], atol=1e-12)

    def test_permutation_bitwise_without_ties(self, rng, scene_camera):
        c = blob(rng, 100, center=(0, 0, 0))
        perm = rng.permutation(len(c))
        assert np.array_equal(splat_render(c, scene_camera),
                              splat_render(c.subset(perm), scene_camera))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_range(self, seed):
        r = np.random.default_rng(seed)
        cam = Camera(30.0, 11.5, 11.5, 24, 24)
        img = splat_render(blob(r, 40, center=(0, 0, 3), radius=(0.05, 1.0)), cam)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestCentroid:
    def test_single(self):
        np.testing.assert_array_equal(centroid(one((1, 2, 3))), [1, 2, 3])

    def test_symmetric(self):
        c = GaussianCloud([[0, 0, 0], [2, 0, 0]], [1, 1], [[0, 0, 0]] * 2, [1, 1])
        np.testing.assert_allclose(centroid(c), [1, 0, 0])

    def test_cubed_radii(self):
        c = GaussianCloud([[0, 0, 0], [3, 0, 0]], [1, 2], [[0, 0, 0]] * 2, [1, 1])
        assert centroid(c)[0] == pytest.approx(8 * 3 / 9)

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            centroid(GaussianCloud(np.zeros((0, 3)), [], np.zeros((0, 3)), []))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_commutes_with_similarity(self, seed):
        r = np.random.default_rng(seed)
        c = blob(r, 20)
        t = SimilarityTransform(UnitQuaternion(*r.standard_normal(4)), r.standard_normal(3),
                                float(r.uniform(0.2, 3)))
        np.testing.assert_allclose(centroid(transform_cloud(c, t)), apply(t, centroid(c)),
                                   atol=1e-9)


class TestTransform:
    def test_identity(self, rng):
        c = blob(rng, 10)
        assert transform_cloud(c, PoseSE3.identity()) == c

    def test_translation_shifts_centroid(self, rng):
        c = blob(rng, 10)
        moved = transform_cloud(c, PoseSE3(translation=(1, 0, 0)))
        np.testing.assert_allclose(centroid(moved) - centroid(c), [1, 0, 0], atol=1e-12)

    def test_scale_two(self, rng):
        c = blob(rng, 10)
        s = transform_cloud(c, SimilarityTransform(scale=2.0))
        np.testing.assert_array_equal(s.radius, 2 * c.radius)
        np.testing.assert_allclose(centroid(s), 2 * centroid(c), atol=1e-12)
        np.testing.assert_array_equal(s.rgb, c.rgb)


class TestPrune:
    def test_dense_unchanged(self):
        g = np.stack(np.meshgrid(*[np.arange(4.0) * 0.1] * 3), -1).reshape(-1, 3)
        c = GaussianCloud(g, np.full(len(g), 0.05), np.zeros((len(g), 3)), np.ones(len(g)))
        assert prune_density(c) == c

    def test_isolated_removed(self, rng):
        mu = np.vstack([rng.standard_normal((500, 3)), [[100, 0, 0]]])
        c = GaussianCloud(mu, np.full(501, 0.1), np.zeros((501, 3)), np.ones(501))
        out = prune_density(c, 0.05, 5.0, 3)
        assert len(out) == 500 and np.abs(out.mu).max() < 50

    def test_opacity_floor_matches_filter(self, rng):
        n = 200
        mu = 0.05 * rng.standard_normal((n, 3))
        alpha = rng.uniform(0, 0.1, n)
        c = GaussianCloud(mu, np.full(n, 0.1), rng.uniform(0, 1, (n, 3)), alpha)
        out = prune_density(c, 0.05, 1.0, 0)
        keep = [i for i in range(n) if alpha[i] >= 0.05]
        assert out == c.subset(np.array(keep))

    def test_all_removed(self, rng):
        c = blob(rng, 5)
        with pytest.raises(EmptyCloud):
            prune_density(c, opacity_floor=2.0)

    def test_negative_threshold(self, rng):
        with pytest.raises(ValidationError):
            prune_density(blob(rng, 5), isolation_radius=-1)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_idempotent(self, seed):
        r = np.random.default_rng(seed)
        n = 120
        c = GaussianCloud(r.uniform(-1, 1, (n, 3)), np.full(n, 0.1), r.uniform(0, 1, (n, 3)),
                          r.uniform(0, 1, n))
        try:
            once = prune_density(c, 0.2, 0.35, 2)
        except EmptyCloud:
            return
        assert prune_density(once, 0.2, 0.35, 2) == once


class TestFitAppearance:
    def test_fixed_point(self, rng, scene_camera):
        c = blob(rng, 40, center=(0, 0, 0))
        views = [(splat_render(c, scene_camera), scene_camera)]
        out = fit_cloud_appearance(c, views, iterations=20)
        np.testing.assert_allclose(out.rgb, c.rgb, atol=1e-6)
        np.testing.assert_allclose(out.alpha, c.alpha, atol=1e-6)

    def test_single_kernel_colour(self, axis_camera):
        c = one((0, 0, 3), r=0.3, rgb=(1, 0, 0))
        target = splat_render(one((0, 0, 3), r=0.3, rgb=(0, 1, 0)), axis_camera)
        out = fit_cloud_appearance(c, [(target, axis_camera)], iterations=200)
        np.testing.assert_allclose(out.rgb[0], [0, 1, 0], atol=1e-3)

    def test_loss_not_increased(self, rng, scene_camera):
        truth = blob(rng, 40, center=(0, 0, 0))
        start = GaussianCloud(truth.mu, truth.radius, np.full_like(truth.rgb, 0.5),
                              np.full_like(truth.alpha, 0.5))
        target = splat_render(truth, scene_camera)
        out = fit_cloud_appearance(start, [(target, scene_camera)], iterations=30)
        before = np.abs(splat_render(start, scene_camera) - target).mean()
        after = np.abs(splat_render(out, scene_camera) - target).mean()
        assert after < before

    def test_preconditions(self, rng, axis_camera):
        c = blob(rng, 5)
        with pytest.raises(NoViews):
            fit_cloud_appearance(c, [])
        with pytest.raises(ValidationError):
            fit_cloud_appearance(c, [(np.zeros((32, 32, 3)), axis_camera)], iterations=0)
