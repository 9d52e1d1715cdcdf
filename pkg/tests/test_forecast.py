import io
import json
import math

import numpy as np
import pytest

from wearcast.expert import Measurement
from wearcast.forecast import (
    CANDIDATE_KINDS,
    FitDomainError,
    FitResult,
    InsufficientDataError,
    LossConfig,
    aggregate_loss,
    bell_weight,
    fit,
    forecast_series,
    predict_crossing,
    select_model,
    weighted_error,
    write_loss_csv,
)


def series(values, t0=0):
    return [Measurement(t0 + i, v) for i, v in enumerate(values)]


def linear_series(n, intercept=0.1, slope=0.03):
    return [Measurement(t, intercept + slope * t) for t in range(n)]


class TestLossConfig:
    def test_alpha_must_be_odd(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=6)
        with pytest.raises(ValueError):
            LossConfig(alpha=0)

    def test_peak_index(self):
        assert LossConfig(alpha=7).peak == 4
        assert LossConfig(alpha=5).peak == 3
        assert LossConfig(alpha=1).peak == 1

    def test_horizon_validation(self):
        with pytest.raises(ValueError):
            LossConfig(horizon=0)
        assert LossConfig(horizon=3).horizon == 3


class TestBellWeight:
    def test_peak_value_is_one(self):
        assert bell_weight(4, LossConfig(alpha=7)) == 1.0

    def test_symmetry_about_peak(self):
        cfg = LossConfig(alpha=7)
        for k in range(1, 6):
            assert bell_weight(4 - k, cfg) == pytest.approx(bell_weight(4 + k, cfg), rel=1e-15)

    def test_known_value(self):
        assert bell_weight(3, LossConfig(alpha=7)) == pytest.approx(math.exp(-0.15), rel=1e-15)

    def test_zero_decay_is_flat(self):
        cfg = LossConfig(decay=0.0)
        assert all(bell_weight(j, cfg) == 1.0 for j in range(1, 30))


class TestFit:
    def test_linear_exact_recovery(self):
        result = fit("linear", linear_series(8))
        assert result.coefficients[0] == pytest.approx(0.1, abs=1e-9)
        assert result.coefficients[1] == pytest.approx(0.03, abs=1e-9)
        assert result.train_count == 8
        assert result.t_last == 7.0

    def test_poly3_interpolates_four_points(self):
        ms = series([0.1, 0.5, 0.2, 0.9])
        result = fit("poly3", ms)
        assert result.rss == pytest.approx(0.0, abs=1e-18)
        for m in ms:
            assert result.predict(m.t) == pytest.approx(m.area, abs=1e-9)

    def test_exponential_round_trip(self):
        ms = [Measurement(t, 0.05 * math.exp(0.1 * t)) for t in range(10)]
        result = fit("exponential", ms)
        c, b = result.coefficients
        assert c == pytest.approx(0.05, abs=1e-6)
        assert b == pytest.approx(0.1, abs=1e-6)

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            fit("linear", linear_series(3))

    def test_exponential_requires_positive(self):
        with pytest.raises(FitDomainError):
            fit("exponential", series([0.0, 0.1, 0.2, 0.3]))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            fit("sine", linear_series(6))

    def test_coefficient_counts(self):
        ms = series([0.1, 0.23, 0.31, 0.45, 0.52])
        assert len(fit("linear", ms).coefficients) == 2
        assert len(fit("poly2", ms).coefficients) == 3
        assert len(fit("poly3", ms).coefficients) == 4
        assert len(fit("exponential", ms).coefficients) == 2

    def test_predict_finite_far_out(self):
        result = fit("exponential", [Measurement(t, 0.1 * math.exp(0.8 * t)) for t in range(6)])
        assert math.isfinite(result.predict(1e4))


class TestWeightedError:
    def test_perfect_predictions(self):
        fitted = fit("linear", linear_series(6))
        truth = [Measurement(6 + j, 0.1 + 0.03 * (6 + j)) for j in range(5)]
        assert weighted_error(fitted, truth) == pytest.approx(0.0, abs=1e-12)

    def test_single_point_at_peak(self):
        fitted = fit("linear", linear_series(6))  # t_last = 5
        truth = [Measurement(9, fitted.predict(9) + 0.1)]  # j = 4
        assert weighted_error(fitted, truth) == pytest.approx(0.1, rel=1e-12)

    def test_single_point_off_peak(self):
        fitted = fit("linear", linear_series(6))
        truth = [Measurement(8, fitted.predict(8) + 0.1)]  # j = 3
        expected = math.sqrt(math.exp(-0.15)) * 0.1
        assert weighted_error(fitted, truth) == pytest.approx(expected, rel=1e-12)

    def test_flat_weight_equals_mean_absolute_error(self, rng):
        cfg = LossConfig(decay=0.0)
        for _ in range(20):
            n = int(rng.integers(4, 10))
            ms = series(list(rng.uniform(0.1, 1.0, size=n)))
            fitted = fit("linear", ms)
            j_count = int(rng.integers(1, 8))
            truth = [
                Measurement(n - 1 + j, float(rng.uniform(0.1, 2.0)))
                for j in range(1, j_count + 1)
            ]
            mae = sum(abs(fitted.predict(m.t) - m.area) for m in truth) / len(truth)
            assert weighted_error(fitted, truth, cfg) == pytest.approx(mae, abs=1e-12)

    def test_empty_truth_rejected(self):
        fitted = fit("linear", linear_series(5))
        with pytest.raises(ValueError):
            weighted_error(fitted, [])

    def test_truth_must_follow_training(self):
        fitted = fit("linear", linear_series(5))
        with pytest.raises(ValueError):
            weighted_error(fitted, [Measurement(4, 0.5)])


class TestAggregateLoss:
    def test_exact_linear_is_zero(self):
        assert aggregate_loss("linear", linear_series(12)) < 1e-9

    def test_single_term_hand_computed(self):
        # N=5: one beta=4 prefix; independent reconstruction of the term
        ms = series([0.0, 1.0, 2.0, 3.0, 10.0])
        fitted = fit("linear", ms[:4])
        expected = weighted_error(fitted, ms[4:]) / 4
        assert aggregate_loss("linear", ms) == pytest.approx(expected, rel=1e-12)
        # the prefix fit is the exact line a=t, so the term is sqrt(f(1))*|10-4|/1/4
        manual = math.sqrt(math.exp(-0.15 * 9)) * 6.0 / 4
        assert aggregate_loss("linear", ms) == pytest.approx(manual, rel=1e-6)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            aggregate_loss("linear", linear_series(4))

    def test_fit_error_names_beta(self):
        values = [0.1, 0.2, 0.3, 0.4, 0.0, 0.5, 0.6]  # zero at index 4
        with pytest.raises(FitDomainError) as err:
            aggregate_loss("exponential", series(values))
        assert "training size 5" in str(err.value)

    def test_horizon_cap(self):
        ms = linear_series(12)
        ms[-1] = Measurement(11, 5.0)  # far-future outlier
        capped = aggregate_loss("linear", ms, LossConfig(horizon=2))
        uncapped = aggregate_loss("linear", ms)
        assert capped != uncapped

    def test_generating_class_zero_loss(self):
        quad = [Measurement(t, 0.02 + 0.001 * t + 0.004 * t * t) for t in range(10)]
        assert aggregate_loss("poly2", quad) < 1e-9
        expo = [Measurement(t, 0.05 * math.exp(0.12 * t)) for t in range(10)]
        assert aggregate_loss("exponential", expo) < 1e-9


class TestSelectModel:
    def test_noisy_linear_selects_linear(self):
        rng = np.random.default_rng(99)
        n = 28
        values = [0.2 + 0.03 * t for t in range(n)]
        sigma = 0.05 * values[-1]
        noisy = [max(v + rng.normal(0, sigma), 1e-6) for v in values]
        report = select_model(series(noisy))
        assert report.selected == "linear"

    def test_exact_linear_prefers_parsimony(self):
        report = select_model(linear_series(12))
        assert report.selected == "linear"
        assert set(report.losses) == {"linear", "poly2", "poly3", "exponential"}

    def test_exact_cubic_selects_poly3(self):
        ms = [Measurement(t, 0.01 + 0.002 * t + 0.0005 * t**2 + 0.0008 * t**3) for t in range(12)]
        report = select_model(ms)
        assert report.selected == "poly3"
        assert report.losses["poly3"] < 1e-9

    def test_zero_area_disables_exponential(self):
        ms = [Measurement(t, 0.03 * t) for t in range(10)]
        report = select_model(ms)
        assert "exponential" in report.failures
        assert set(report.losses) == {"linear", "poly2", "poly3"}
        assert report.selected == "linear"

    def test_all_failures_raise(self, monkeypatch):
        import wearcast.forecast as fc

        def boom(kind, ms, cfg=LossConfig()):
            raise FitDomainError(f"{kind} broken")

        monkeypatch.setattr(fc, "aggregate_loss", boom)
        with pytest.raises(FitDomainError) as err:
            fc.select_model(linear_series(10))
        assert "linear broken" in str(err.value)
        assert "exponential broken" in str(err.value)

    def test_deterministic(self):
        ms = linear_series(15)
        r1 = select_model(ms)
        r2 = select_model(ms)
        assert r1.losses == r2.losses
        assert r1.selected == r2.selected

    def test_full_fit_uses_all_points(self):
        report = select_model(linear_series(9))
        assert report.full_fit.train_count == 9
        assert report.train_count == 9


class TestPredictCrossing:
    def _linear_fit(self, slope=0.03, intercept=0.0, t_last=11.0):
        return FitResult(
            kind="linear",
            coefficients=(intercept, slope),
            train_count=12,
            rss=0.0,
            t_last=t_last,
        )

    def test_closed_form_crossings(self):
        t_low, t_star, t_high = predict_crossing(self._linear_fit(), 0.9, band=0.2)
        assert t_star == pytest.approx(30.0, abs=1e-5)
        assert t_low == pytest.approx(24.0, abs=1e-5)
        assert t_high == pytest.approx(36.0, abs=1e-5)

    def test_flat_fit_never_crosses(self):
        flat = FitResult("linear", (0.1, 0.0), 12, 0.0, 11.0)
        assert predict_crossing(flat, 0.9) == (None, None, None)

    def test_decreasing_fit_never_crosses(self):
        falling = FitResult("linear", (0.5, -0.01), 12, 0.0, 11.0)
        assert predict_crossing(falling, 0.9) == (None, None, None)

    def test_already_crossed_returns_t_last(self):
        fitted = self._linear_fit(intercept=1.0)
        t_low, t_star, t_high = predict_crossing(fitted, 0.9)
        assert t_star == 11.0

    def test_ordering_for_increasing_fit(self):
        t_low, t_star, t_high = predict_crossing(self._linear_fit(), 0.9)
        assert t_low <= t_star <= t_high

    def test_bad_limit(self):
        with pytest.raises(ValueError):
            predict_crossing(self._linear_fit(), 0.0)


class TestForecastSeries:
    def test_linear_series_end_to_end(self):
        ms = [Measurement(t, 0.03 * t) for t in range(12)]
        report = forecast_series(ms, wear_limit=0.9, band=0.2)
        assert report.selected == "linear"
        assert report.t_star == pytest.approx(30.0, abs=1e-4)
        assert report.t_low == pytest.approx(24.0, abs=1e-4)
        assert report.t_high == pytest.approx(36.0, abs=1e-4)
        assert report.wear_limit == 0.9

    def test_report_doc_is_json_safe(self):
        report = forecast_series(linear_series(10))
        doc = report.to_doc()
        parsed = json.loads(json.dumps(doc))
        assert parsed["selected"] == "linear"
        assert parsed["loss_config"]["alpha"] == 7
        assert len(parsed["coefficients"]) == 2


class TestLossCsv:
    def test_four_labeled_rows(self):
        report = forecast_series([Measurement(t, 0.03 * t) for t in range(10)])
        buf = io.StringIO()
        write_loss_csv(report, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "candidate,loss,status"
        assert len(lines) == 5
        assert [line.split(",")[0] for line in lines[1:]] == list(CANDIDATE_KINDS)
        exp_row = lines[4].split(",")
        assert exp_row[1] == ""  # exponential failed on the zero area
