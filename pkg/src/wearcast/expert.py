"""Rule-based correction of measured defect-area series.

A surface defect can only grow, so the rules enforce a physically plausible
series: in-band growth is accepted, a disproportionate jump is averaged with
the preceding corrected values, and any apparent shrink is clamped to the
previous value.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

CASE_FIRST = "first"
CASE_ACCEPTED = "accepted"
CASE_AVERAGED = "averaged"
CASE_CLAMPED = "clamped"
CASES = (CASE_FIRST, CASE_ACCEPTED, CASE_AVERAGED, CASE_CLAMPED)


@dataclass(frozen=True)
class Measurement:
    """Defect area at one scan timestep; one t unit is one scan interval."""

    t: int
    area: float  # mm^2

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("timestep must be >= 0")
        if self.area < 0:
            raise ValueError("area must be >= 0")


@dataclass(frozen=True)
class AreaSeries:
    track_id: int
    measurements: tuple[Measurement, ...]

    def __post_init__(self):
        ts = [m.t for m in self.measurements]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timesteps must be strictly increasing")
        object.__setattr__(self, "measurements", tuple(self.measurements))

    def __len__(self) -> int:
        return len(self.measurements)

    @classmethod
    def from_pairs(cls, pairs, track_id: int = 0) -> "AreaSeries":
        return cls(track_id, tuple(Measurement(int(t), float(a)) for t, a in pairs))


@dataclass(frozen=True)
class ExpertConfig:
    """growth_ratio_max bounds the step-to-step growth considered plausible."""

    growth_ratio_max: float = 1.5

    def __post_init__(self):
        if not self.growth_ratio_max > 1.0:
            raise ValueError("growth_ratio_max must be > 1")


@dataclass(frozen=True)
class CorrectedSeries:
    """Corrected series plus the rule applied at each point."""

    track_id: int
    measurements: tuple[Measurement, ...]
    cases: tuple[str, ...]

    def __post_init__(self):
        if len(self.measurements) != len(self.cases):
            raise ValueError("one case tag per measurement")
        areas = [m.area for m in self.measurements]
        if any(b < a for a, b in zip(areas, areas[1:])):
            raise ValueError("corrected areas must be non-decreasing")
        if any(c not in CASES for c in self.cases):
            raise ValueError("unknown case tag")

    def __len__(self) -> int:
        return len(self.measurements)

    def to_series(self) -> AreaSeries:
        return AreaSeries(self.track_id, self.measurements)


def correct(series: AreaSeries, cfg: ExpertConfig = ExpertConfig()) -> CorrectedSeries:
    """Apply the three correction rules point by point, causally.

    With p the previous corrected area and a the raw area:
    p < a <= p*ratio keeps a; a > p*ratio is replaced by the mean of a and the
    two previous corrected values (one at the second point); a <= p clamps to
    p. The result never decreases; the value at t depends only on raw values
    at <= t.
    """
    if len(series) == 0:
        raise ValueError("cannot correct an empty series")
    areas: list[float] = []
    cases: list[str] = []
    for i, m in enumerate(series.measurements):
        a = m.area
        if a < 0:
            raise ValueError(f"negative area at t={m.t}")
        if i == 0:
            value, tag = a, CASE_FIRST
        else:
            p = areas[-1]
            if a == p:
                value, tag = a, CASE_ACCEPTED
            elif a < p:
                value, tag = p, CASE_CLAMPED
            elif a <= p * cfg.growth_ratio_max:
                value, tag = a, CASE_ACCEPTED
            else:
                if i >= 2:
                    value = (a + areas[-1] + areas[-2]) / 3.0
                else:
                    value = (a + areas[-1]) / 2.0
                tag = CASE_AVERAGED
                if value <= p:  # monotonicity is enforced last
                    value = p
        areas.append(value)
        cases.append(tag)
    corrected = tuple(
        Measurement(m.t, v) for m, v in zip(series.measurements, areas)
    )
    return CorrectedSeries(series.track_id, corrected, tuple(cases))


def write_series_csv(series, target) -> None:
    """Write ``t,area_mm2`` rows; corrected series gain a ``case`` column."""
    cases = getattr(series, "cases", None)
    close = False
    if hasattr(target, "write"):
        fh = target
    else:
        fh = open(target, "w", newline="")
        close = True
    try:
        writer = csv.writer(fh)
        if cases is None:
            writer.writerow(["t", "area_mm2"])
            for m in series.measurements:
                writer.writerow([m.t, repr(m.area)])
        else:
            writer.writerow(["t", "area_mm2", "case"])
            for m, c in zip(series.measurements, cases):
                writer.writerow([m.t, repr(m.area), c])
    finally:
        if close:
            fh.close()


def read_series_csv(source, track_id: int = 0) -> AreaSeries:
    """Read ``t,area_mm2[,case]`` rows; any case column is ignored."""
    close = False
    if hasattr(source, "read"):
        fh = source
    else:
        fh = open(source, newline="")
        close = True
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "area_mm2"} <= set(reader.fieldnames):
            raise ValueError("series CSV needs columns t,area_mm2")
        measurements = tuple(
            Measurement(int(row["t"]), float(row["area_mm2"])) for row in reader
        )
        return AreaSeries(track_id, measurements)
    finally:
        if close:
            fh.close()
