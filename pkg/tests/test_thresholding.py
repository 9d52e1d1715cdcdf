import json
from fractions import Fraction

import numpy as np
import pytest

from wearcast.raster import GrayImage, write_pgm
from wearcast.thresholding import (
    FEATURE_LENGTH,
    THRESHOLD_VALUES,
    ClassifierModel,
    ThresholdClass,
    ThresholdDecision,
    TrainingError,
    compute_features,
    fixed_decision,
    load_manifest,
    load_model,
    otsu_decision,
    otsu_threshold,
    predict_class,
    save_model,
    train_classifier,
)

from conftest import random_image


def otsu_oracle(img: GrayImage) -> int:
    """Exhaustive 256-candidate between-class-variance maximizer.

    Evaluates every split directly on the pixels with exact rational
    arithmetic; ties go to the smallest threshold.
    """
    flat = img.pixels.ravel()
    total_n = flat.size
    total_s = int(flat.sum())
    best_t, best = 0, Fraction(-1)
    for t in range(256):
        low = flat <= t
        n0 = int(low.sum())
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = int(flat[low].sum())
        s1 = total_s - s0
        mu_diff = Fraction(s0, n0) - Fraction(s1, n1)
        score = Fraction(n0 * n1) * mu_diff * mu_diff
        if score > best:
            best, best_t = score, t
    return best_t


class TestOtsu:
    def test_bimodal_matches_oracle(self):
        arr = np.concatenate([np.full(50, 20), np.full(50, 200)]).astype(np.uint8)
        img = GrayImage(arr.reshape(10, 10))
        t = otsu_threshold(img)
        assert t == otsu_oracle(img)
        assert 20 <= t <= 199

    def test_constant_image_degenerate(self):
        img = GrayImage.full(8, 8, 50)
        assert otsu_threshold(img) == 50
        decision = otsu_decision(img)
        assert decision.degenerate
        assert decision.threshold == 50
        assert decision.method == "otsu"

    def test_random_images_match_oracle(self, rng):
        for _ in range(10):
            img = random_image(rng, 190, 190)
            assert otsu_threshold(img) == otsu_oracle(img)

    def test_small_structured_images_match_oracle(self, rng):
        # few distinct levels provoke exact ties; both sides must break them
        # identically (smallest t)
        for _ in range(20):
            levels = rng.choice(256, size=3, replace=False)
            arr = rng.choice(levels, size=(12, 12)).astype(np.uint8)
            img = GrayImage(arr)
            assert otsu_threshold(img) == otsu_oracle(img)

    def test_not_degenerate_for_varied_image(self, rng):
        assert not otsu_decision(random_image(rng, 20, 20)).degenerate


class TestThresholdTypes:
    def test_class_bijection(self):
        for idx, value in enumerate(THRESHOLD_VALUES):
            assert ThresholdClass.from_value(value).class_index == idx
            assert ThresholdClass.from_index(idx).value == value

    def test_class_rejects_unknown_value(self):
        with pytest.raises(ValueError):
            ThresholdClass.from_value(50)
        with pytest.raises(ValueError):
            ThresholdClass(35, 3)

    def test_decision_set_membership(self):
        with pytest.raises(ValueError):
            ThresholdDecision(threshold=50, method="fixed")
        with pytest.raises(ValueError):
            ThresholdDecision(threshold=50, method="classifier")
        assert ThresholdDecision(threshold=50, method="otsu").threshold == 50
        assert fixed_decision(52).method == "fixed"

    def test_decision_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            ThresholdDecision(threshold=35, method="magic")


class TestFeatures:
    def test_histogram_sums_to_one(self, rng):
        feats = compute_features(random_image(rng, 33, 21))
        assert feats.histogram.sum() == pytest.approx(1.0, abs=1e-9)
        assert len(feats.as_vector()) == FEATURE_LENGTH

    def test_permutation_invariant(self, rng):
        arr = rng.integers(0, 256, size=64, dtype=np.uint8)
        a = compute_features(GrayImage(arr.reshape(8, 8)))
        b = compute_features(GrayImage(rng.permutation(arr).reshape(8, 8)))
        assert np.array_equal(a.as_vector(), b.as_vector())

    def test_uniform_image_stats(self):
        feats = compute_features(GrayImage.full(5, 5, 62))
        assert feats.mean == 62
        assert feats.std == 0
        assert feats.median == 62
        assert feats.histogram[62] == 1.0


def _uniform_samples():
    # one uniform image per class, visually distinct per threshold value
    return [
        (GrayImage.full(12, 12, value), ThresholdClass.from_value(value))
        for value in THRESHOLD_VALUES
    ]


class TestClassifier:
    def test_singleton_centroids(self):
        samples = _uniform_samples()
        model = train_classifier(samples)
        for img, cls in samples:
            expected = compute_features(img).as_vector()
            assert np.allclose(model.centroids[cls.class_index], expected)
        assert model.sample_counts == (1,) * 6

    def test_duplicates_do_not_change_model(self):
        samples = _uniform_samples()
        model1 = train_classifier(samples)
        model2 = train_classifier(samples + samples)
        assert np.allclose(model1.centroids, model2.centroids)

    def test_two_sample_centroid_is_mean(self):
        samples = _uniform_samples()
        extra = GrayImage.full(12, 12, 36)  # still nearest to the class-35 look
        samples.append((extra, ThresholdClass.from_value(35)))
        model = train_classifier(samples)
        mean = (
            compute_features(GrayImage.full(12, 12, 35)).as_vector()
            + compute_features(extra).as_vector()
        ) / 2
        assert np.allclose(model.centroids[0], mean)

    def test_missing_class_error_names_values(self):
        samples = _uniform_samples()[:4]
        with pytest.raises(TrainingError) as err:
            train_classifier(samples)
        assert "62" in str(err.value) and "72" in str(err.value)

    def test_sample_order_invariant(self):
        samples = _uniform_samples()
        model1 = train_classifier(samples)
        model2 = train_classifier(list(reversed(samples)))
        assert np.array_equal(model1.centroids, model2.centroids)

    def test_predict_training_sample(self):
        samples = _uniform_samples()
        model = train_classifier(samples)
        for img, cls in samples:
            decision = predict_class(model, img)
            assert decision.threshold == cls.value
            assert decision.method == "classifier"
            assert decision.confidence > 1.0 / 6.0

    def test_predict_near_class(self, rng):
        samples = _uniform_samples()
        model = train_classifier(samples)
        # mostly class-45 pixels with slight contamination stays in class 45
        arr = np.full((10, 10), 45, dtype=np.uint8)
        arr[0, :3] = 46
        assert predict_class(model, GrayImage(arr)).threshold == 45

    def test_equidistant_tie_prefers_lower_index(self):
        model = train_classifier(_uniform_samples())
        # half 35 / half 40 is exactly halfway between the two centroids
        arr = np.concatenate([np.full(50, 35), np.full(50, 40)]).astype(np.uint8)
        decision = predict_class(model, GrayImage(arr.reshape(10, 10)))
        assert decision.threshold == 35

    def test_prediction_in_class_set(self, rng):
        model = train_classifier(_uniform_samples())
        for _ in range(10):
            decision = predict_class(model, random_image(rng, 16, 16))
            assert decision.threshold in THRESHOLD_VALUES
            assert 0.0 <= decision.confidence <= 1.0


class TestModelSerialization:
    def test_doc_round_trip(self):
        model = train_classifier(_uniform_samples())
        doc = model.to_doc()
        again = ClassifierModel.from_doc(doc)
        assert np.array_equal(model.centroids, again.centroids)
        assert model.sample_counts == again.sample_counts

    def test_doc_is_json_safe(self):
        doc = train_classifier(_uniform_samples()).to_doc()
        assert json.loads(json.dumps(doc)) == doc

    def test_file_round_trip(self, tmp_path):
        model = train_classifier(_uniform_samples())
        path = tmp_path / "model.json"
        save_model(model, path)
        again = load_model(path)
        assert np.array_equal(model.centroids, again.centroids)

    def test_rejects_foreign_doc(self):
        with pytest.raises(ValueError):
            ClassifierModel.from_doc({"format": "something-else"})

    def test_rejects_wrong_version(self):
        doc = train_classifier(_uniform_samples()).to_doc()
        doc["version"] = 99
        with pytest.raises(ValueError):
            ClassifierModel.from_doc(doc)


class TestManifest:
    def test_load_and_train(self, tmp_path):
        rows = ["image_path,threshold_class_value"]
        for value in THRESHOLD_VALUES:
            name = f"img_{value}.pgm"
            write_pgm(GrayImage.full(8, 8, value), tmp_path / name)
            rows.append(f"{name},{value}")
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("\n".join(rows) + "\n")
        samples = load_manifest(manifest)
        assert len(samples) == 6
        model = train_classifier(samples)
        assert predict_class(model, GrayImage.full(8, 8, 72)).threshold == 72

    def test_rejects_missing_columns(self, tmp_path):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("path,label\nx.pgm,35\n")
        with pytest.raises(ValueError):
            load_manifest(manifest)
