"""Built-in predicates: exact verdicts against independently computed oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from theia.predicates import (
    Photo,
    PredicateParameterError,
    TexturePatch,
    decode_ppm,
    encode_ppm,
    eval_all_accept,
    eval_rgb_histogram_match,
    eval_rgb_threshold,
    eval_synthetic,
    eval_texture_match,
    grayscale,
    hash_fraction,
    read_photo,
    write_photo,
)
from tests.conftest import random_photo, uniform_photo


def reference_histogram(pixels: np.ndarray) -> np.ndarray:
    """Brute-force 3x16 histogram, independent of the production routine."""
    hist = np.zeros((3, 16))
    h, w, _ = pixels.shape
    for y in range(h):
        for x in range(w):
            for c in range(3):
                hist[c][pixels[y, x, c] // 16] += 1
    return hist / (h * w)


def intersection_score(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.minimum(a, b).sum(axis=1).mean())


class TestRgbThreshold:
    def test_saturated_channel_accepts(self, blue_photo):
        v = eval_rgb_threshold(blue_photo, "B", 128)
        assert v.accepted and v.score == 1.0

    def test_wrong_channel_rejects(self, red_photo):
        v = eval_rgb_threshold(red_photo, "B", 128)
        assert not v.accepted and v.score == 0.0

    def test_half_blue_mean_is_just_below_cutoff(self):
        pixels = np.zeros((10, 10, 3), dtype=np.uint8)
        pixels[:, :5, 2] = 255  # half (0,0,255), half (0,0,0): mean B = 127.5
        photo = Photo(id="half", pixels=pixels)
        v = eval_rgb_threshold(photo, "B", 128)
        assert not v.accepted
        assert v.score == pytest.approx(127.5 / 255.0)

    def test_bad_channel(self, blue_photo):
        with pytest.raises(PredicateParameterError):
            eval_rgb_threshold(blue_photo, "X", 10)


class TestHistogramMatch:
    def test_self_match_scores_one(self):
        photo = random_photo("selfmatch", 3)
        ref = reference_histogram(photo.pixels)
        v = eval_rgb_histogram_match(photo, ref, threshold=1.0)
        assert v.accepted
        assert v.score == pytest.approx(1.0)

    def test_uniform_blue_vs_uniform_red_reference(self, blue_photo):
        # Per-channel delta histograms: R and B masses land in opposite end
        # bins (intersection 0); G matches in bin 0 (intersection 1).
        red_ref = reference_histogram(uniform_photo("redref", (255, 0, 0)).pixels)
        v = eval_rgb_histogram_match(blue_photo, red_ref, threshold=0.5)
        expected = intersection_score(reference_histogram(blue_photo.pixels), red_ref)
        assert expected == pytest.approx(1.0 / 3.0)
        assert v.score == pytest.approx(expected)
        assert not v.accepted

    def test_flat_reference_matches_brute_force(self):
        photo = random_photo("flatref", 11)
        flat = np.full((3, 16), 1.0 / 16.0)
        v = eval_rgb_histogram_match(photo, flat, threshold=0.0)
        expected = intersection_score(reference_histogram(photo.pixels), flat)
        assert v.score == pytest.approx(expected)

    def test_unnormalized_reference_rejected(self, blue_photo):
        bad = np.full((3, 16), 1.0 / 8.0)
        with pytest.raises(PredicateParameterError, match="not normalized"):
            eval_rgb_histogram_match(blue_photo, bad, threshold=0.5)


class TestTextureMatch:
    def test_photo_matching_patch_scores_one(self):
        photo = uniform_photo("flat", (100, 100, 100), w=16, h=16)
        gray = float(grayscale(photo.pixels).mean())
        patch = TexturePatch(mean=gray, std=0.0, grad=0.0)
        v = eval_texture_match(photo, patch, threshold=0.99)
        assert v.accepted
        assert v.score == pytest.approx(1.0)

    def test_constant_photo_vs_textured_patch(self):
        photo = uniform_photo("flat", (100, 100, 100), w=16, h=16)
        gray = float(grayscale(photo.pixels).mean())
        patch = TexturePatch(mean=gray + 20.0, std=50.0, grad=10.0)
        # blocks have (gray, 0, 0); distance from (gray+20, 50, 10) after the
        # fixed normalization (mean/255, std/64, grad/32)
        d = math.sqrt((20.0 / 255.0) ** 2 + (50.0 / 64.0) ** 2 + (10.0 / 32.0) ** 2)
        v = eval_texture_match(photo, patch, threshold=0.99)
        assert v.score == pytest.approx(math.exp(-d))
        assert not v.accepted

    def test_zero_threshold_always_accepts(self):
        v = eval_texture_match(random_photo("any", 5), TexturePatch(0, 300, 300), threshold=0.0)
        assert v.accepted


class TestAllAccept:
    def test_accepts_any_photo(self):
        v = eval_all_accept(random_photo("any", 1))
        assert v.accepted and v.score == 1.0

    def test_accepts_one_pixel_photo(self):
        photo = Photo(id="tiny", pixels=np.zeros((1, 1, 3), dtype=np.uint8))
        assert eval_all_accept(photo).accepted

    def test_near_zero_cost(self):
        assert eval_all_accept(random_photo("any", 2)).cpu_time_ms <= 0.01


class TestSynthetic:
    def test_selectivity_one_always_accepts(self):
        for i in range(50):
            assert eval_synthetic(random_photo(f"s1-{i}", i), 1.0, 1.0, 3).accepted

    def test_selectivity_zero_never_accepts(self):
        for i in range(50):
            assert not eval_synthetic(random_photo(f"s0-{i}", i), 0.0, 1.0, 3).accepted

    def test_empirical_selectivity(self):
        ids = [f"emp-{i}" for i in range(10_000)]
        accepted = sum(hash_fraction(pid, 17) < 0.3 for pid in ids)
        assert abs(accepted / len(ids) - 0.3) <= 0.02

    def test_three_sigma_convergence(self):
        for target in (0.1, 0.5, 0.9):
            n = 4000
            frac = sum(hash_fraction(f"c-{i}", 23) < target for i in range(n)) / n
            assert abs(frac - target) <= 3 * math.sqrt(target * (1 - target) / n)

    def test_distinct_salts_are_independent(self):
        ids = [f"ind-{i}" for i in range(10_000)]
        a1 = {i for i in ids if hash_fraction(i, 101) < 0.5}
        a2 = {i for i in ids if hash_fraction(i, 202) < 0.4}
        s1 = len(a1) / len(ids)
        conditional = len(a1 & a2) / len(a2)
        assert abs(conditional - s1) <= 0.03

    def test_same_salt_nests_accept_sets(self):
        ids = [f"nest-{i}" for i in range(5_000)]
        s1, s2 = 0.6, 0.3
        a1 = {i for i in ids if eval_synthetic(random_photo(i, 0), s1, 1.0, 7).accepted}
        a2 = {i for i in ids if eval_synthetic(random_photo(i, 0), s2, 1.0, 7).accepted}
        assert a2 <= a1
        conditional = len(a2 & a1) / len(a1)
        assert conditional == pytest.approx(len(a2) / len(a1))
        assert abs(conditional - s2 / s1) <= 3 * math.sqrt((s2 / s1) * (1 - s2 / s1) / len(a1))

    def test_accepted_scores_above_half(self):
        for i in range(500):
            v = eval_synthetic(random_photo(f"sc-{i}", i), 0.4, 1.0, 9)
            assert v.accepted == (v.score > 0.5)
            assert 0.0 <= v.score <= 1.0

    def test_exact_cost_and_determinism(self):
        photo = random_photo("det", 1)
        first = eval_synthetic(photo, 0.3, 12.5, 4)
        second = eval_synthetic(photo, 0.3, 12.5, 4)
        assert first == second
        assert first.cpu_time_ms == 12.5


class TestPurityAndCost:
    @given(st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_predicates_are_pure(self, seed):
        photo = random_photo(f"pure-{seed}", seed)
        assert eval_rgb_threshold(photo, "G", 77) == eval_rgb_threshold(photo, "G", 77)
        patch = TexturePatch(100, 5, 5)
        assert eval_texture_match(photo, patch, 0.5) == eval_texture_match(photo, patch, 0.5)

    def test_cpu_time_scales_with_pixels(self):
        small = uniform_photo("s", (9, 9, 9), w=10, h=10)
        big = uniform_photo("b", (9, 9, 9), w=20, h=20)
        ratio = (
            eval_rgb_threshold(big, "R", 1).cpu_time_ms
            / eval_rgb_threshold(small, "R", 1).cpu_time_ms
        )
        assert ratio == pytest.approx(4.0)


class TestPhotoFiles:
    def test_ppm_round_trip(self):
        photo = random_photo("rt", 42, w=7, h=5)
        assert np.array_equal(decode_ppm(encode_ppm(photo.pixels)), photo.pixels)

    def test_write_read_photo_pair(self, tmp_path):
        photo = Photo(
            id="withmeta",
            pixels=random_photo("x", 3, w=6, h=4).pixels,
            ts=1700000000.0,
            lat=29.7,
            lon=-95.4,
        )
        write_photo(tmp_path, photo)
        assert (tmp_path / "withmeta.ppm").exists()
        assert (tmp_path / "withmeta.meta").exists()
        loaded = read_photo(tmp_path, "withmeta")
        assert np.array_equal(loaded.pixels, photo.pixels)
        assert loaded.ts == photo.ts
        assert loaded.lat == pytest.approx(photo.lat)
        assert loaded.nbytes == photo.nbytes

    def test_decode_rejects_non_p6(self):
        with pytest.raises(ValueError, match="magic"):
            decode_ppm(b"P3\n1 1\n255\n0 0 0\n")
