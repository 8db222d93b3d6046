import numpy as np
import pytest

from splatad.anomaly import (
    AnomalyConfig,
    HandcraftedExtractor,
    detect,
    extract_features,
    image_score,
    score_map,
)
from splatad.errors import EmptyMap, ImageTooSmall, ShapeMismatch


def blob_image(rng, size=64, n=6, margin=16):
    """Test image with colored soft blobs on black, fully interior."""
    img = np.zeros((size, size, 3))
    ys, xs = np.mgrid[0:size, 0:size]
    for _ in range(n):
        cy, cx = rng.uniform(margin, size - margin, size=2)
        s = rng.uniform(2, 5)
        g = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * s * s))
        img += g[:, :, None] * rng.uniform(0.2, 1.0, size=3)
    # hard black ring so shifted copies keep identical content statistics
    img[:margin // 2] = img[-margin // 2:] = 0.0
    img[:, :margin // 2] = img[:, -margin // 2:] = 0.0
    return np.clip(img, 0, 1)


class TestExtractFeatures:
    def test_constant_image_zero_gradient_channels(self):
        img = np.full((32, 32, 3), 0.4)
        pyr = extract_features(img)
        for lvl in pyr.levels:
            assert not lvl[:, :, 3:].any()

    def test_identical_images_identical_pyramids(self, rng):
        img = blob_image(rng)
        p1 = extract_features(img)
        p2 = extract_features(img.copy())
        for a, b in zip(p1.levels, p2.levels):
            assert np.array_equal(a, b)

    def test_translation_covariance_interior(self, rng):
        # content deep inside a black ring: whole-pixel shifts change neither
        # the per-channel statistics nor any interior feature value
        img = blob_image(rng, size=128, margin=44)
        shift = 4  # multiple of 2^(levels-1) so every level shifts integrally
        shifted = np.roll(img, shift, axis=1)
        p1 = extract_features(img)
        p2 = extract_features(shifted)
        for lvl, (a, b) in enumerate(zip(p1.levels, p2.levels)):
            s = shift // 2 ** lvl
            margin = 6
            interior_a = a[margin:-margin, margin:-margin - s]
            interior_b = b[margin:-margin, margin + s:-margin]
            assert np.abs(interior_a - interior_b).max() < 1e-6

    def test_one_pixel_translate_distance_localized(self, rng):
        img = blob_image(rng)
        moved = np.roll(img, 1, axis=1)
        cfg = AnomalyConfig(smooth_sigma=0.0)
        m = score_map(img, moved, cfg)
        assert m.sum() > 0
        # mass concentrates near high-gradient pixels (edges of the blobs)
        gray = img.mean(axis=2)
        gy, gx = np.gradient(gray)
        mag = np.hypot(gx, gy)
        edge = mag > np.percentile(mag, 75)
        from scipy.ndimage import binary_dilation

        near_edges = binary_dilation(edge, iterations=3)
        assert m[near_edges].sum() / m.sum() > 0.8

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            extract_features(np.zeros((8, 8, 3)))


class TestScoreMap:
    def test_identical_is_zero(self, rng):
        img = blob_image(rng)
        assert not score_map(img, img.copy()).any()

    def test_recolored_patch_dominates(self, rng):
        aligned = blob_image(rng)
        query = aligned.copy()
        query[30:40, 24:34] = np.clip(query[30:40, 24:34] + np.array([0.55, -0.3, 0.2]), 0, 1)
        m = score_map(query, aligned, AnomalyConfig(smooth_sigma=0.0))
        inside = np.zeros(m.shape, dtype=bool)
        inside[30:40, 24:34] = True
        assert m[inside].mean() >= 5 * m[~inside].mean()

    def test_nonnegative(self, rng):
        a, b = blob_image(rng), blob_image(rng)
        assert (score_map(a, b) >= 0).all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            score_map(np.zeros((32, 32, 3)), np.zeros((34, 32, 3)))

    def test_levels_upsampled_and_averaged(self, rng):
        img = blob_image(rng)
        other = blob_image(rng)
        one = score_map(img, other, AnomalyConfig(levels=1, smooth_sigma=0.0))
        three = score_map(img, other, AnomalyConfig(levels=3, smooth_sigma=0.0))
        assert one.shape == three.shape == img.shape[:2]
        assert not np.array_equal(one, three)


class TestImageScore:
    def test_zero_map(self):
        assert image_score(np.zeros((8, 8))) == 0.0

    def test_single_spike_max(self):
        m = np.zeros((8, 8))
        m[3, 4] = 7.5
        assert image_score(m) == 7.5

    def test_max_matches_bruteforce(self, rng):
        m = rng.uniform(size=(32, 32))
        brute = max(float(v) for v in m.ravel())
        assert image_score(m) == pytest.approx(brute, abs=0)

    def test_top_mean_aggregator(self):
        m = np.zeros((10, 10))
        m[0, :2] = [4.0, 2.0]
        cfg = AnomalyConfig(aggregate="top_mean", top_fraction=0.02)
        assert image_score(m, cfg) == pytest.approx(3.0)

    def test_empty_map(self):
        with pytest.raises(EmptyMap):
            image_score(np.zeros((0, 0)))


def test_detect_composes(rng):
    img = blob_image(rng)
    res = detect(img, img.copy())
    assert res.image_score == 0.0
    assert not res.score_map.any()
    assert res.aligned_render is not None
