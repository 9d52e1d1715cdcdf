"""Growth-curve fitting, weighted model-selection loss, and wear-limit forecasting.

Four candidate function families are fitted to a corrected area series. Each
candidate is scored by training on progressively longer prefixes and
measuring a horizon-weighted error on the points it has not seen; the sum of
those errors, each divided by its training size, rewards candidates that
extrapolate well from little data. The winner is refitted on the full series
and extrapolated to the wear limit.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .expert import Measurement

CANDIDATE_KINDS = ("linear", "poly2", "poly3", "exponential")
POLY_DEGREE = {"linear": 1, "poly2": 2, "poly3": 3}
COEFF_COUNT = {"linear": 2, "poly2": 3, "poly3": 4, "exponential": 2}

MIN_TRAIN_POINTS = 4
CROSSING_WINDOW = 10_000.0
CROSSING_TOL = 1e-6

# losses this close to the minimum count as exact ties, so the parsimony
# tie-break fires on noiseless data despite float residue in the fits
TIE_SLACK = 1e-12

_EXP_CLAMP = 700.0  # keeps exp() finite over the crossing search window


class InsufficientDataError(ValueError):
    """Raised when a series is too short for the requested operation."""


class FitDomainError(ValueError):
    """Raised when a candidate family cannot be fitted to the data."""


@dataclass(frozen=True)
class LossConfig:
    """Shape of the horizon weighting and the evaluation window.

    ``alpha`` sets the prediction horizon of highest attention: the weight
    peaks ceil(alpha/2) steps ahead. ``horizon`` caps how many future points
    each prefix is evaluated on (None = all remaining).
    """

    alpha: int = 7
    decay: float = 0.15
    horizon: Optional[int] = None

    def __post_init__(self):
        if self.alpha < 1 or self.alpha % 2 == 0:
            raise ValueError("alpha must be an odd positive integer")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1 or None")

    @property
    def peak(self) -> int:
        return math.ceil(self.alpha / 2)


def bell_weight(j: float, cfg: LossConfig = LossConfig()) -> float:
    """Bell-shaped horizon weight: 1 at j = ceil(alpha/2), decaying both ways."""
    return math.exp(-cfg.decay * (cfg.peak - j) ** 2)


@dataclass(frozen=True)
class FitResult:
    """A fitted candidate function over one training prefix."""

    kind: str
    coefficients: tuple[float, ...]
    train_count: int
    rss: float
    t_last: float

    def __post_init__(self):
        if self.kind not in CANDIDATE_KINDS:
            raise ValueError(f"unknown candidate kind {self.kind!r}")
        if self.train_count < MIN_TRAIN_POINTS:
            raise ValueError(f"train_count must be >= {MIN_TRAIN_POINTS}")
        if len(self.coefficients) != COEFF_COUNT[self.kind]:
            raise ValueError(
                f"{self.kind} needs {COEFF_COUNT[self.kind]} coefficients, "
                f"got {len(self.coefficients)}"
            )

    def predict(self, t):
        """Evaluate the fitted function; finite for all finite t."""
        if self.kind == "exponential":
            c, b = self.coefficients
            exponent = np.clip(np.asarray(t, dtype=float) * b, -_EXP_CLAMP, _EXP_CLAMP)
            out = c * np.exp(exponent)
        else:
            out = npoly.polyval(np.asarray(t, dtype=float), self.coefficients)
        return float(out) if np.ndim(out) == 0 else out


def fit(kind: str, measurements: Sequence[Measurement]) -> FitResult:
    """Least-squares fit of one candidate family to a series prefix.

    Polynomials minimize squared residuals directly; the exponential
    c*e^(b*t) is fitted as a line in log space, which requires strictly
    positive areas.
    """
    if kind not in CANDIDATE_KINDS:
        raise ValueError(f"unknown candidate kind {kind!r}")
    if len(measurements) < MIN_TRAIN_POINTS:
        raise InsufficientDataError(
            f"fitting needs at least {MIN_TRAIN_POINTS} points, got {len(measurements)}"
        )
    ts = np.array([m.t for m in measurements], dtype=float)
    ys = np.array([m.area for m in measurements], dtype=float)
    if kind == "exponential":
        if np.any(ys <= 0):
            raise FitDomainError("exponential fit requires strictly positive areas")
        log_coeffs = npoly.polyfit(ts, np.log(ys), 1)
        coeffs = (float(math.exp(log_coeffs[0])), float(log_coeffs[1]))
    else:
        coeffs = tuple(float(c) for c in npoly.polyfit(ts, ys, POLY_DEGREE[kind]))
    result = FitResult(
        kind=kind,
        coefficients=coeffs,
        train_count=len(measurements),
        rss=0.0,
        t_last=float(ts[-1]),
    )
    rss = float(np.sum((result.predict(ts) - ys) ** 2))
    return replace(result, rss=rss)


def weighted_error(
    fit_result: FitResult, truth: Sequence[Measurement], cfg: LossConfig = LossConfig()
) -> float:
    """Horizon-weighted mean absolute prediction error over a truth window.

    Each point j timesteps past the training end contributes
    sqrt(f(j)) * |prediction - truth| and the sum is divided by the window
    length. With decay 0 the weight is identically 1 and this reduces to the
    plain mean absolute error.
    """
    if not truth:
        raise ValueError("truth window must not be empty")
    total = 0.0
    for m in truth:
        j = m.t - fit_result.t_last
        if j < 1.0 - 1e-9:
            raise ValueError(f"truth point at t={m.t} is not after the training end")
        total += math.sqrt(bell_weight(j, cfg)) * abs(fit_result.predict(m.t) - m.area)
    return total / len(truth)


def aggregate_loss(
    kind: str, measurements: Sequence[Measurement], cfg: LossConfig = LossConfig()
) -> float:
    """Data-efficiency-weighted sum of prefix errors for one candidate.

    For every training size beta from 4 to N-1 the candidate is fitted on the
    first beta points and evaluated on the remaining ones; each error enters
    the sum divided by its beta, so candidates that are already accurate with
    few points score best.
    """
    ms = list(measurements)
    n = len(ms)
    if n < MIN_TRAIN_POINTS + 1:
        raise InsufficientDataError(
            f"aggregate loss needs at least {MIN_TRAIN_POINTS + 1} points, got {n}"
        )
    total = 0.0
    for beta in range(MIN_TRAIN_POINTS, n):
        try:
            fitted = fit(kind, ms[:beta])
        except FitDomainError as exc:
            raise FitDomainError(f"{kind} fit failed at training size {beta}: {exc}") from exc
        window = ms[beta:]
        if cfg.horizon is not None:
            window = window[: cfg.horizon]
        total += weighted_error(fitted, window, cfg) / beta
    return total


@dataclass(frozen=True)
class ForecastReport:
    """Model-selection outcome plus the wear-limit crossing forecast."""

    losses: dict[str, float]
    failures: dict[str, str]
    selected: str
    full_fit: FitResult
    train_count: int
    wear_limit: Optional[float] = None
    band: Optional[float] = None
    t_low: Optional[float] = None
    t_star: Optional[float] = None
    t_high: Optional[float] = None
    loss_config: LossConfig = LossConfig()
    metadata: Optional[dict] = None

    @property
    def coefficients(self) -> tuple[float, ...]:
        return self.full_fit.coefficients

    def to_doc(self) -> dict:
        doc = {
            "selected": self.selected,
            "coefficients": list(self.coefficients),
            "train_count": self.train_count,
            "losses": {k: self.losses[k] for k in CANDIDATE_KINDS if k in self.losses},
            "failures": dict(self.failures),
            "wear_limit_mm2": self.wear_limit,
            "band": self.band,
            "t_low": self.t_low,
            "t_star": self.t_star,
            "t_high": self.t_high,
            "loss_config": {
                "alpha": self.loss_config.alpha,
                "decay": self.loss_config.decay,
                "horizon": self.loss_config.horizon,
            },
        }
        if self.metadata:
            doc.update(self.metadata)
        return doc


def select_model(
    measurements: Sequence[Measurement], cfg: LossConfig = LossConfig()
) -> ForecastReport:
    """Score all candidate families and pick the aggregate-loss minimizer.

    Candidates whose fit is undefined on this data (e.g. exponential with a
    zero area) are reported as failures and excluded. Ties within TIE_SLACK
    go to the candidate with fewer coefficients, then enumeration order.
    """
    ms = list(measurements)
    losses: dict[str, float] = {}
    failures: dict[str, str] = {}
    for kind in CANDIDATE_KINDS:
        try:
            losses[kind] = aggregate_loss(kind, ms, cfg)
        except FitDomainError as exc:
            failures[kind] = str(exc)
    if not losses:
        details = "; ".join(f"{k}: {v}" for k, v in failures.items())
        raise FitDomainError(f"all candidate fits failed: {details}")
    best_loss = min(losses.values())
    tied = [k for k in CANDIDATE_KINDS if k in losses and losses[k] <= best_loss + TIE_SLACK]
    selected = min(tied, key=lambda k: (COEFF_COUNT[k], CANDIDATE_KINDS.index(k)))
    return ForecastReport(
        losses=losses,
        failures=failures,
        selected=selected,
        full_fit=fit(selected, ms),
        train_count=len(ms),
        loss_config=cfg,
    )


def _first_crossing(fit_result: FitResult, target: float) -> Optional[float]:
    """Smallest t >= training end with prediction >= target, or None within
    the search window. Grid scan with bisection to CROSSING_TOL."""
    t0 = fit_result.t_last
    if fit_result.predict(t0) >= target:
        return t0
    t_end = t0 + CROSSING_WINDOW
    t = t0
    while t < t_end:
        t_next = min(t + 1.0, t_end)
        if fit_result.predict(t_next) >= target:
            lo, hi = t, t_next
            while hi - lo > CROSSING_TOL:
                mid = (lo + hi) / 2.0
                if fit_result.predict(mid) >= target:
                    hi = mid
                else:
                    lo = mid
            return hi
        t = t_next
    return None


def predict_crossing(
    fit_result: FitResult, limit: float, band: float = 0.2
) -> tuple[Optional[float], Optional[float], Optional[float]]:
    """Crossing times (t_low, t_star, t_high) for limit*(1-band), the limit,
    and limit*(1+band); None where the fit never reaches the level."""
    if limit <= 0:
        raise ValueError("wear limit must be positive")
    if not 0 <= band < 1:
        raise ValueError("band must lie in [0, 1)")
    t_low = _first_crossing(fit_result, limit * (1.0 - band))
    t_star = _first_crossing(fit_result, limit)
    t_high = _first_crossing(fit_result, limit * (1.0 + band))
    return t_low, t_star, t_high


def forecast_series(
    measurements: Sequence[Measurement],
    cfg: LossConfig = LossConfig(),
    wear_limit: float = 0.9,
    band: float = 0.2,
) -> ForecastReport:
    """Full forecasting pass: select a model, refit on everything, and locate
    the wear-limit crossings."""
    report = select_model(measurements, cfg)
    t_low, t_star, t_high = predict_crossing(report.full_fit, wear_limit, band)
    return replace(
        report, wear_limit=wear_limit, band=band, t_low=t_low, t_star=t_star, t_high=t_high
    )


LOSS_CSV_FIELDS = ("candidate", "loss", "status")


def write_loss_csv(report: ForecastReport, target) -> None:
    """Per-candidate aggregate losses as plot-ready bar data."""
    close = False
    if hasattr(target, "write"):
        fh = target
    else:
        fh = open(target, "w", newline="")
        close = True
    try:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CSV_FIELDS)
        for kind in CANDIDATE_KINDS:
            if kind in report.losses:
                writer.writerow([kind, repr(report.losses[kind]), "ok"])
            else:
                writer.writerow([kind, "", report.failures.get(kind, "failed")])
    finally:
        if close:
            fh.close()


def write_report_json(reports: list[ForecastReport], path) -> None:
    Path(path).write_text(json.dumps([r.to_doc() for r in reports], indent=2) + "\n")
