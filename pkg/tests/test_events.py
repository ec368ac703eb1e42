import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evmotion.errors import NonMonotonicTime, SizeMismatch, ValidationError
from evmotion.events import (LUMINANCE_FLOOR, ContrastThreshold, EventBin, EventStream,
                             accumulate_bins, cumulative_event_maps, edi_deblur,
                             generate_events, log_intensity, luminance, read_events,
                             simulated_event_map, synthesize_blur, write_events)
from evmotion.metrics import psnr
from oracles import exact_sequence

EPS = 0.2


class TestThreshold:
    @pytest.mark.parametrize("v", [0.0, -1.0, float("nan")])
    def test_positive(self, v):
        with pytest.raises(ValidationError):
            ContrastThreshold(v)


class TestGenerate:
    def test_constant_sequence(self):
        frames = [np.full((4, 4), 0.3)] * 3
        assert len(generate_events(frames, [0, 1, 2], EPS)) == 0

    def test_two_thresholds(self):
        a = np.full((1, 1), 0.2)
        b = (a + LUMINANCE_FLOOR) * np.exp(2 * EPS) - LUMINANCE_FLOOR
        ev = generate_events([a, b], [0.0, 1.0], EPS)
        assert len(ev) == 2 and np.all(ev.p == 1)
        np.testing.assert_allclose(ev.t, [1 / 3, 2 / 3])

    def test_negative_polarity(self):
        a = np.full((1, 1), 0.5)
        ev = generate_events([a, a * 0.3], [0.0, 1.0], EPS)
        assert len(ev) == int(np.floor(-np.log((0.15 + 1e-3) / 0.501) / EPS))
        assert np.all(ev.p == -1)

    def test_ramp_round_trip(self):
        t = np.linspace(0, 1, 30)
        frames = [np.linspace(0.02, 0.9, 12).reshape(3, 4) * (0.2 + 0.8 * s) for s in t]
        ev = generate_events(frames, t, EPS)
        net = np.zeros((3, 4))
        np.add.at(net, (ev.y, ev.x), ev.p)
        recon = log_intensity(frames[0]) + EPS * net
        assert np.abs(recon - log_intensity(frames[-1])).max() <= EPS

    @given(st.integers(0, 2 ** 32 - 1))
    def test_net_polarity_within_one_threshold(self, seed):
        r = np.random.default_rng(seed)
        frames = list(r.uniform(0, 1, (6, 5, 5)))
        ev = generate_events(frames, np.arange(6.0), EPS)
        net = np.zeros((5, 5))
        np.add.at(net, (ev.y, ev.x), ev.p)
        dl = log_intensity(frames[-1]) - log_intensity(frames[0])
        assert np.abs(net * EPS - dl).max() <= EPS + 1e-12

    def test_sorted_and_inside_intervals(self, rng):
        frames = list(rng.uniform(0, 1, (4, 6, 6)))
        ts = [0.0, 0.1, 0.25, 0.3]
        ev = generate_events(frames, ts, EPS)
        assert np.all(np.diff(ev.t) >= 0)
        assert not np.isin(ev.t, ts).any()

    def test_rgb_uses_luminance(self, rng):
        rgb = list(rng.uniform(0, 1, (3, 4, 4, 3)))
        a = generate_events(rgb, [0, 1, 2], EPS)
        b = generate_events([luminance(f) for f in rgb], [0, 1, 2], EPS)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.p, b.p)

    def test_errors(self):
        with pytest.raises(SizeMismatch):
            generate_events([np.zeros((2, 2)), np.zeros((3, 3))], [0, 1])
        with pytest.raises(NonMonotonicTime):
            generate_events([np.zeros((2, 2))] * 2, [1, 1])
        with pytest.raises(ValidationError):
            generate_events([np.zeros((2, 2))], [0])


def stream(t, x, y, p, w=4, h=3):
    return EventStream(t, x, y, p, w, h)


class TestBins:
    def test_no_events(self):
        bins = accumulate_bins(EventStream.empty(4, 3), [0, 1, 2, 3])
        assert len(bins) == 3 and all(not b.counts.any() for b in bins)

    def test_boundary_goes_to_later_bin(self):
        bins = accumulate_bins(stream([1.0], [2], [1], [1]), [0, 1, 2])
        assert bins[0].counts.sum() == 0 and bins[1].counts[1, 2] == 1

    def test_outside_ignored(self):
        bins = accumulate_bins(stream([-0.1, 2.0, 5.0], [0, 0, 0], [0, 0, 0], [1, 1, 1]),
                               [0, 1, 2])
        assert sum(int(b.counts.sum()) for b in bins) == 0

    def test_matches_brute_force(self, rng):
        n = 500
        ev = stream(np.sort(rng.uniform(-0.5, 3.5, n)), rng.integers(0, 4, n),
                    rng.integers(0, 3, n), rng.choice([-1, 1], n))
        b = [0.0, 0.7, 1.1, 2.9, 3.0]
        bins = accumulate_bins(ev, b)
        for i in range(4):
            ref = np.zeros((3, 4), int)
            for t, x, y, p in zip(ev.t, ev.x, ev.y, ev.p):
                if b[i] <= t < b[i + 1]:
                    ref[y, x] += p
            assert np.array_equal(bins[i].counts, ref)
            assert (bins[i].start, bins[i].end) == (b[i], b[i + 1])

    def test_bad_boundaries(self):
        with pytest.raises(NonMonotonicTime):
            accumulate_bins(EventStream.empty(2, 2), [0, 2, 1])
        with pytest.raises(ValidationError):
            EventBin(np.zeros((2, 2)), 1.0, 1.0)


class TestCumulative:
    def test_single(self):
        b = EventBin(np.array([[1, -2]]), 0, 1)
        np.testing.assert_array_equal(cumulative_event_maps([b])[0], [[1, -2]])

    def test_telescoping(self):
        maps = cumulative_event_maps([EventBin(np.array([[1]]), 0, 1),
                                      EventBin(np.array([[-1]]), 1, 2)])
        assert [m[0, 0] for m in maps] == [1, 0]

    @given(st.integers(0, 2 ** 32 - 1))
    def test_prefix_sums_and_additivity(self, seed):
        r = np.random.default_rng(seed)
        bins = [EventBin(r.integers(-3, 4, (3, 3)), i, i + 1) for i in range(6)]
        maps = cumulative_event_maps(bins)
        for i, m in enumerate(maps):
            np.testing.assert_array_equal(m, sum(b.counts for b in bins[:i + 1]))
        head, tail = cumulative_event_maps(bins[:2]), cumulative_event_maps(bins[2:])
        np.testing.assert_array_equal(maps[2:], [head[-1] + t for t in tail])


class TestEdi:
    def test_zero_maps(self, rng):
        blur = rng.uniform(0, 1, (5, 5, 3))
        for latent in edi_deblur(blur, [np.zeros((5, 5))] * 4, EPS):
            np.testing.assert_allclose(latent, blur)

    def test_two_frames_single_pixel(self):
        out = edi_deblur(np.array([[0.5]]), [np.array([[0.0]])], EPS)
        assert [o[0, 0] for o in out] == [0.5, 0.5]

    def test_exact_threshold_round_trip(self, rng):
        frames, _ = exact_sequence(rng, 5, (64, 64))
        ts = np.linspace(0, 0.04, 5)
        ev = generate_events(list(frames), ts, EPS)
        maps = cumulative_event_maps(accumulate_bins(ev, ts))
        blur = synthesize_blur(list(frames))
        latents = edi_deblur(blur, maps, EPS)
        assert np.mean([psnr(a, b) for a, b in zip(latents, frames)]) >= 40
        raw = edi_deblur(blur, maps, EPS, clip=False)
        np.testing.assert_allclose(synthesize_blur(raw), blur, atol=1e-6)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_reblur_consistency(self, seed):
        r = np.random.default_rng(seed)
        blur = r.uniform(0, 1, (6, 6))
        maps = list(r.integers(-4, 5, (3, 6, 6)).astype(float))
        raw = edi_deblur(blur, maps, EPS, clip=False)
        np.testing.assert_allclose(synthesize_blur(raw), blur, atol=1e-12)

    def test_clamped(self):
        out = edi_deblur(np.array([[0.9]]), [np.array([[10.0]])], EPS)
        assert max(o.max() for o in out) <= 1.0

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            edi_deblur(np.zeros((4, 4)), [np.zeros((3, 3))])


class TestBlurAndSimulatedMaps:
    def test_identical_frames(self, rng):
        f = rng.uniform(0, 1, (4, 4))
        np.testing.assert_allclose(synthesize_blur([f, f, f]), f)

    def test_zero_and_one(self):
        out = synthesize_blur([np.zeros((2, 2)), np.ones((2, 2))])
        np.testing.assert_array_equal(out, np.full((2, 2), 0.5))

    def test_mean_brute_force(self, rng):
        fs = rng.uniform(0, 1, (5, 3, 3))
        ref = np.zeros((3, 3))
        for f in fs:
            ref += f
        np.testing.assert_allclose(synthesize_blur(list(fs)), ref / 5)

    def test_blur_errors(self):
        with pytest.raises(ValidationError):
            synthesize_blur([])
        with pytest.raises(SizeMismatch):
            synthesize_blur([np.zeros((2, 2)), np.zeros((2, 3))])

    def test_identical_gives_zero(self, rng):
        f = rng.uniform(0, 1, (4, 4))
        assert not simulated_event_map(f, f, EPS).any()

    def test_log_ratio(self):
        a = np.array([[0.1]])
        b = (a + LUMINANCE_FLOOR) * np.exp(EPS) - LUMINANCE_FLOOR
        assert simulated_event_map(a, b, EPS)[0, 0] == pytest.approx(1.0)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_agrees_with_generated_counts(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.uniform(0, 1, (2, 6, 6))
        ev = generate_events([a, b], [0.0, 1.0], EPS)
        counts = accumulate_bins(ev, [0.0, 1.0])[0].counts
        assert np.abs(simulated_event_map(a, b, EPS) - counts).max() <= 1.0


class TestEventFile:
    def test_round_trip(self, tmp_path, rng):
        frames = list(rng.uniform(0, 1, (4, 5, 6)))
        ev = generate_events(frames, [0.0, 0.01, 0.02, 0.03], EPS)
        write_events(tmp_path / "e.txt", ev)
        back = read_events(tmp_path / "e.txt", 6, 5)
        np.testing.assert_allclose(back.t, ev.t, atol=5e-7)
        assert np.array_equal(back.p, ev.p) and np.array_equal(back.x, ev.x)
        line = (tmp_path / "e.txt").read_text().splitlines()[0].split()
        assert len(line) == 4 and line[3] in ("1", "-1")

    def test_empty(self, tmp_path):
        write_events(tmp_path / "e.txt", EventStream.empty(3, 3))
        assert len(read_events(tmp_path / "e.txt", 3, 3)) == 0

    def test_unsorted_rejected(self, tmp_path):
        (tmp_path / "e.txt").write_text("20 0 0 1\n10 0 0 1\n")
        with pytest.raises(NonMonotonicTime):
            read_events(tmp_path / "e.txt", 2, 2)

    def test_bad_pixel(self, tmp_path):
        (tmp_path / "e.txt").write_text("10 5 0 1\n")
        with pytest.raises(ValidationError):
            read_events(tmp_path / "e.txt", 2, 2)
