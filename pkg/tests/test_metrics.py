import numpy as np
import pytest

from splatad.errors import NoAnomalousPixels, ShapeMismatch, SingleClass
from splatad.metrics import (
    aupro,
    auroc,
    evaluate_categories,
    pixel_auroc,
    rotation_error,
    translation_error,
)

from oracles import aupro_dense, auroc_pairwise


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([1, 2, 3, 10, 11, 12], [0, 0, 0, 1, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auroc([5.0] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_worked_example(self):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_single_class(self):
        with pytest.raises(SingleClass):
            auroc([1.0, 2.0], [1, 1])

    def test_monotone_transform_invariance(self, rng):
        s = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        a = auroc(s, labels)
        assert auroc(np.exp(s), labels) == pytest.approx(a, abs=1e-12)
        assert auroc(3 * s + 7, labels) == pytest.approx(a, abs=1e-12)

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 30))
            scores = np.round(rng.normal(size=n), 1)  # induce ties
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            assert auroc(scores, labels) == pytest.approx(
                auroc_pairwise(scores, labels), abs=1e-12
            )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            auroc([1.0, 2.0], [0, 1, 1])


class TestAupro:
    def test_perfect_map(self, rng):
        mask = np.zeros((16, 16), dtype=bool)
        mask[3:6, 4:9] = True
        mask[10:13, 11:14] = True
        assert aupro([mask.astype(float)], [mask]) == pytest.approx(1.0)

    def test_constant_map_frozen_value(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:4, 2:4] = True
        sm = np.full((8, 8), 0.7)
        val = aupro([sm], [mask])
        # degenerate sweep: single threshold at fpr=1, pro=1; frozen by oracle
        assert val == pytest.approx(aupro_dense([sm], [mask]), abs=1e-12)
        assert val == pytest.approx(0.15, abs=1e-12)

    def test_two_components_half_detected(self):
        mask = np.zeros((12, 12), dtype=bool)
        mask[1:4, 1:4] = True
        mask[8:11, 8:11] = True
        sm = np.zeros((12, 12))
        sm[1:4, 1:4] = 1.0  # detect only the first component
        val = aupro([sm], [mask])
        ref = aupro_dense([sm], [mask])
        assert val == pytest.approx(ref, abs=1e-12)

    def test_matches_dense_oracle_random(self, rng):
        for _ in range(10):
            sm = np.round(rng.uniform(size=(16, 16)), 2)  # <= 101 unique scores
            mask = rng.uniform(size=(16, 16)) > 0.8
            if not mask.any():
                mask[0, 0] = True
            assert aupro([sm], [mask]) == pytest.approx(aupro_dense([sm], [mask]), abs=1e-6)

    def test_no_anomalous_pixels(self):
        with pytest.raises(NoAnomalousPixels):
            aupro([np.ones((4, 4))], [np.zeros((4, 4), dtype=bool)])


class TestPixelAuroc:
    def test_mask_as_map_is_one(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[4:7, 2:5] = True
        assert pixel_auroc([mask.astype(float)], [mask]) == 1.0


class TestRotationError:
    def test_identical(self, rng):
        q = rng.normal(size=4)
        assert rotation_error(q, q) == 0.0

    def test_double_cover(self, rng):
        q = rng.normal(size=4)
        assert rotation_error(q, -q) == 0.0

    def test_quarter_turn(self):
        q1 = np.array([1.0, 0, 0, 0])
        q2 = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
        assert rotation_error(q1, q2) == pytest.approx(np.pi / 2, abs=1e-12)

    def test_metric_properties(self, rng):
        qs = rng.normal(size=(10_000, 3, 4))
        for q1, q2, q3 in qs:
            d12 = rotation_error(q1, q2)
            d21 = rotation_error(q2, q1)
            assert abs(d12 - d21) <= 1e-9
            assert 0.0 <= d12 <= np.pi
            assert d12 <= rotation_error(q1, q3) + rotation_error(q3, q2) + 1e-9


class TestTranslationError:
    def test_trivials(self):
        assert translation_error([1, 2, 3], [1, 2, 3]) == 0.0
        assert translation_error([0, 0, 0], [0, 1, 0]) == 1.0

    def test_matches_norm(self, rng):
        for _ in range(50):
            p, q = rng.normal(size=3), rng.normal(size=3)
            ref = float(np.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(p, q))))
            assert translation_error(p, q) == pytest.approx(ref, abs=1e-14)


def test_evaluate_categories_report(rng):
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:5, 2:5] = True
    cat = {
        "image_scores": [0.1, 0.2, 0.9, 1.4],
        "image_labels": [0, 0, 1, 1],
        "score_maps": [mask.astype(float), mask.astype(float) * 0.5],
        "gt_masks": [mask, mask],
        "rotation_errors": [0.01, 0.02],
        "translation_errors": [0.1, 0.2],
    }
    rep = evaluate_categories({"a": cat, "b": cat})
    assert rep.image_auroc == 1.0
    assert rep.pixel_auroc == 1.0
    assert 0.0 <= rep.aupro <= 1.0
    assert len(rep.categories) == 2
    assert "mean" in rep.table()
    d = rep.to_dict()
    assert set(d) >= {"image_auroc", "pixel_auroc", "aupro", "categories"}
