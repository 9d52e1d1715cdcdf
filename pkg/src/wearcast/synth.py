"""Synthetic defect-growth sequences with exact ground truth.

Each sequence shows one irregular dark blob growing on a textured bright
field. The blob is a star-convex region whose pixel membership is ranked
once per sequence; frame k simply takes the area(k) lowest-ranked pixels, so
the rasterized area matches the growth law exactly and frames nest as a
defect physically would.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .expert import Measurement
from .raster import GrayImage, write_pgm

GROWTH_LAWS = ("linear", "exponential")


@dataclass(frozen=True)
class SynthConfig:
    width: int = 190
    height: int = 190
    background: int = 140
    noise_sigma: float = 0.0
    defect_intensity: int = 30
    growth: str = "linear"
    area_start: float = 100.0  # px^2 at t=0
    area_rate: float = 20.0  # px^2 per step (linear) or exponent rate
    speckle_rate: float = 0.0  # expected pollution speckles per frame
    outlier_prob: float = 0.0
    outlier_magnitude: float = 0.5  # relative distortion of a corrupted frame
    seed: int = 0
    mm_per_pixel: float = 0.01

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8")
        if not 0 <= self.defect_intensity <= 255 or not 0 <= self.background <= 255:
            raise ValueError("intensities must lie in [0, 255]")
        if self.growth not in GROWTH_LAWS:
            raise ValueError(f"growth law must be one of {GROWTH_LAWS}")
        if self.area_start < 1:
            raise ValueError("area_start must be >= 1 px^2")
        if self.area_rate < 0:
            raise ValueError("area_rate must be >= 0 so the defect never shrinks")
        if self.noise_sigma < 0 or self.speckle_rate < 0:
            raise ValueError("noise_sigma and speckle_rate must be >= 0")
        if not 0 <= self.outlier_prob <= 1:
            raise ValueError("outlier_prob must lie in [0, 1]")
        if self.outlier_magnitude < 0:
            raise ValueError("outlier_magnitude must be >= 0")
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")

    def true_area_px(self, t: int) -> int:
        if self.growth == "linear":
            value = self.area_start + self.area_rate * t
        else:
            value = self.area_start * math.exp(self.area_rate * t)
        return int(round(value))


@dataclass(frozen=True)
class SynthSequence:
    frames: tuple[GrayImage, ...]
    true_areas_px: tuple[int, ...]
    config: SynthConfig

    @property
    def measurements(self) -> tuple[Measurement, ...]:
        factor = self.config.mm_per_pixel**2
        return tuple(
            Measurement(t, px * factor) for t, px in enumerate(self.true_areas_px)
        )


def _blob_ranking(cfg: SynthConfig) -> tuple[np.ndarray, int]:
    """Rank every pixel by its scaled distance to the blob center.

    Returns the flat rank order and the largest area that keeps the blob off
    the image border.
    """
    shape_rng = np.random.default_rng([cfg.seed, 11])
    n_knots = 12
    knot_angles = np.linspace(-math.pi, math.pi, n_knots, endpoint=False)
    knot_radii = shape_rng.uniform(0.55, 1.0, size=n_knots)
    cx = (cfg.width - 1) / 2.0
    cy = (cfg.height - 1) / 2.0
    ys, xs = np.mgrid[0 : cfg.height, 0 : cfg.width]
    dx = xs - cx
    dy = ys - cy
    rho = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    # periodic interpolation of the radial profile
    angles = np.concatenate([knot_angles, [math.pi]])
    radii = np.concatenate([knot_radii, [knot_radii[0]]])
    profile = np.interp(theta, angles, radii, period=2 * math.pi)
    ranking = np.argsort((rho / profile).ravel(), kind="stable")
    border = np.zeros((cfg.height, cfg.width), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    border_positions = np.flatnonzero(border.ravel()[ranking])
    capacity = int(border_positions[0]) if border_positions.size else ranking.size
    return ranking, capacity


def _paint_disk(base: np.ndarray, cx: float, cy: float, radius: float, value: int) -> None:
    h, w = base.shape
    x0 = max(int(math.floor(cx - radius)), 0)
    x1 = min(int(math.ceil(cx + radius)) + 1, w)
    y0 = max(int(math.floor(cy - radius)), 0)
    y1 = min(int(math.ceil(cy + radius)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    base[y0:y1, x0:x1][inside] = value


def generate_sequence(cfg: SynthConfig, n_frames: int) -> SynthSequence:
    """Render the sequence and its ground truth; identical config and seed
    give byte-identical frames."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    areas = [cfg.true_area_px(t) for t in range(n_frames)]
    ranking, capacity = _blob_ranking(cfg)
    if max(areas) > capacity:
        raise ValueError(
            f"growth law reaches {max(areas)} px^2 but the blob must stay below "
            f"{capacity} px^2 to fit inside {cfg.width}x{cfg.height}"
        )
    cx = (cfg.width - 1) / 2.0
    cy = (cfg.height - 1) / 2.0
    frames = []
    for k in range(n_frames):
        mask_flat = np.zeros(cfg.width * cfg.height, dtype=bool)
        mask_flat[ranking[: areas[k]]] = True
        mask = mask_flat.reshape(cfg.height, cfg.width)
        base = np.full((cfg.height, cfg.width), float(cfg.background))
        base[mask] = float(cfg.defect_intensity)
        rng = np.random.default_rng([cfg.seed, 7, k])
        if cfg.speckle_rate > 0:
            for _ in range(int(rng.poisson(cfg.speckle_rate))):
                sx = rng.uniform(0, cfg.width - 1)
                sy = rng.uniform(0, cfg.height - 1)
                radius = rng.uniform(1.0, 2.5)
                _paint_disk(base, sx, sy, radius, cfg.defect_intensity)
        if cfg.outlier_prob > 0 and rng.random() < cfg.outlier_prob:
            blob_radius = math.sqrt(areas[k] / math.pi)
            if rng.random() < 0.5:
                # spuriously large: a pollution patch fused to the blob edge
                phi = rng.uniform(-math.pi, math.pi)
                extra = math.sqrt(cfg.outlier_magnitude * areas[k] / math.pi)
                px = cx + blob_radius * math.cos(phi)
                py = cy + blob_radius * math.sin(phi)
                _paint_disk(base, px, py, extra, cfg.defect_intensity)
            else:
                # spuriously small: part of the blob hidden by bright cover
                phi = rng.uniform(-math.pi, math.pi)
                cover = math.sqrt(cfg.outlier_magnitude * areas[k] / math.pi)
                px = cx + 0.6 * blob_radius * math.cos(phi)
                py = cy + 0.6 * blob_radius * math.sin(phi)
                _paint_disk(base, px, py, cover, cfg.background)
        if cfg.noise_sigma > 0:
            base += rng.normal(0.0, cfg.noise_sigma, size=base.shape)
        frames.append(GrayImage(np.clip(np.rint(base), 0, 255).astype(np.uint8)))
    return SynthSequence(frames=tuple(frames), true_areas_px=tuple(areas), config=cfg)


GROUND_TRUTH_FIELDS = ("t", "area_px", "area_mm2")


def write_sequence(seq: SynthSequence, outdir) -> list[Path]:
    """Write frame_%04d.pgm files plus ground_truth.csv; returns the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(seq.frames):
        path = out / f"frame_{k:04d}.pgm"
        write_pgm(frame, path)
        paths.append(path)
    factor = seq.config.mm_per_pixel**2
    truth_path = out / "ground_truth.csv"
    with truth_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GROUND_TRUTH_FIELDS)
        for t, px in enumerate(seq.true_areas_px):
            writer.writerow([t, px, repr(px * factor)])
    paths.append(truth_path)
    return paths


def read_ground_truth(source) -> list[tuple[int, int, float]]:
    close = False
    if hasattr(source, "read"):
        fh = source
    else:
        fh = open(source, newline="")
        close = True
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "area_px", "area_mm2"} <= set(
            reader.fieldnames
        ):
            raise ValueError("ground truth CSV needs columns t,area_px,area_mm2")
        return [
            (int(row["t"]), int(row["area_px"]), float(row["area_mm2"])) for row in reader
        ]
    finally:
        if close:
            fh.close()
