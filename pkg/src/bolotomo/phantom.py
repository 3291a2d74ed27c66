"""Randomized Gaussian-mixture emissivity phantoms with closed-form
line integrals.

Each phantom is a sum of isotropic Gaussian blobs: a handful of core
blobs in the main plasma region plus, with some probability, one compact
blob in the divertor region at the bottom. Because the line integral of
an isotropic Gaussian along a segment has a closed form, every phantom
comes with exact channel readings, giving ground-truth (readings, image)
pairs and an independent oracle for the discrete projector.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .geometry import Grid, LineOfSight, project


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float]  # m
    sigma: float                 # m
    amplitude: float             # W m^-3

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("blob sigma must be positive")
        if self.amplitude < 0:
            raise ValueError("blob amplitude must be nonnegative")


@dataclass(frozen=True)
class PhantomSpec:
    """Sampling distribution for phantoms.

    Regions are (x0, y0, x1, y1) rectangles in meters; core and divertor
    regions are disjoint by default so that "contains a divertor blob" is
    exactly the Bernoulli(divertor_blob_probability) event.
    """

    n_blobs_range: tuple[int, int] = (1, 5)
    sigma_range: tuple[float, float] = (0.05, 0.4)
    # emissivity scale chosen so that sign-gradient SGD at lr 1e-3 moves the
    # network weights at a useful rate; all quality metrics are scale-relative
    amplitude_range: tuple[float, float] = (20.0, 100.0)
    core_region: tuple[float, float, float, float] = (0.25, 1.0, 1.75, 3.2)
    divertor_region: tuple[float, float, float, float] = (0.6, 0.1, 1.4, 0.8)
    divertor_sigma_range: tuple[float, float] = (0.03, 0.1)
    divertor_blob_probability: float = 0.7

    def __post_init__(self):
        if self.n_blobs_range[0] < 0 or self.n_blobs_range[0] > self.n_blobs_range[1]:
            raise ValueError("invalid blob count range")
        for lo, hi in (self.sigma_range, self.amplitude_range, self.divertor_sigma_range):
            if lo > hi or lo < 0:
                raise ValueError("invalid parameter range")
        if not 0.0 <= self.divertor_blob_probability <= 1.0:
            raise ValueError("divertor_blob_probability must be in [0, 1]")
        for x0, y0, x1, y1 in (self.core_region, self.divertor_region):
            if x0 >= x1 or y0 >= y1:
                raise ValueError("regions must have positive area")

    def canonical_hash(self) -> bytes:
        text = repr(self).encode()
        return hashlib.sha256(text).digest()


@dataclass(frozen=True)
class Phantom:
    blobs: tuple[Blob, ...]
    image: np.ndarray  # padded (pad_height_px, pad_width_px), float64
    seed: int


def render_blobs(grid: Grid, blobs) -> np.ndarray:
    """Padded emissivity image sampled at cell centers.

    The isotropic Gaussian separates, so each blob is an outer product of
    two 1D profiles.
    """
    xs, ys = grid.cell_centers()
    active = np.zeros((grid.height_px, grid.width_px), dtype=np.float64)
    for b in blobs:
        inv = 1.0 / (2.0 * b.sigma * b.sigma)
        gx = np.exp(-((xs - b.center[0]) ** 2) * inv)
        gy = np.exp(-((ys - b.center[1]) ** 2) * inv)
        active += b.amplitude * np.outer(gy, gx)
    return grid.pad_image(active)


def sample_phantom(spec: PhantomSpec, seed: int, grid: Grid) -> Phantom:
    """Deterministic phantom draw; PCG64 stream keyed by the seed.

    Draw order: blob count, then per core blob (x, y, sigma, amplitude),
    then the divertor Bernoulli and, if it fires, the divertor blob's
    (x, y, sigma, amplitude).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(rng.integers(spec.n_blobs_range[0], spec.n_blobs_range[1] + 1))
    blobs = []
    x0, y0, x1, y1 = spec.core_region
    for _ in range(n):
        cx = rng.uniform(x0, x1)
        cy = rng.uniform(y0, y1)
        sig = rng.uniform(*spec.sigma_range)
        amp = rng.uniform(*spec.amplitude_range)
        blobs.append(Blob((cx, cy), sig, amp))
    if rng.uniform() < spec.divertor_blob_probability:
        dx0, dy0, dx1, dy1 = spec.divertor_region
        cx = rng.uniform(dx0, dx1)
        cy = rng.uniform(dy0, dy1)
        sig = rng.uniform(*spec.divertor_sigma_range)
        amp = rng.uniform(*spec.amplitude_range)
        blobs.append(Blob((cx, cy), sig, amp))
    return Phantom(tuple(blobs), render_blobs(grid, blobs), seed)


def in_divertor(spec: PhantomSpec, blob: Blob) -> bool:
    x0, y0, x1, y1 = spec.divertor_region
    return x0 <= blob.center[0] <= x1 and y0 <= blob.center[1] <= y1


def analytic_projection(blobs, los: LineOfSight) -> float:
    """Exact line integral of the blob mixture along the finite segment.

    For a blob (A, sigma) at perpendicular distance d from the ray, with
    t0 the foot of the perpendicular and [0, L] the segment in arclength:

        A * sigma * sqrt(2*pi) * exp(-d^2 / (2 sigma^2))
          * 0.5 * (erf((L - t0) / (sigma sqrt(2))) - erf((-t0) / (sigma sqrt(2))))
    """
    sx, sy = los.start
    ex, ey = los.end
    length = math.hypot(ex - sx, ey - sy)
    ux, uy = (ex - sx) / length, (ey - sy) / length
    total = 0.0
    for b in blobs:
        t0 = (b.center[0] - sx) * ux + (b.center[1] - sy) * uy
        fx = sx + t0 * ux - b.center[0]
        fy = sy + t0 * uy - b.center[1]
        d2 = fx * fx + fy * fy
        s2 = b.sigma * math.sqrt(2.0)
        total += (b.amplitude * b.sigma * math.sqrt(2.0 * math.pi)
                  * math.exp(-d2 / (2.0 * b.sigma * b.sigma))
                  * 0.5 * (erf((length - t0) / s2) - erf((0.0 - t0) / s2)))
    return total


MODE_ANALYTIC = "analytic"
MODE_DISCRETE = "discrete"


def make_example(phantom: Phantom, op, mode: str = MODE_ANALYTIC,
                 noise_std: float = 0.0,
                 rng: np.random.Generator | None = None):
    """(readings, target) pair for supervised training.

    Analytic mode integrates the true Gaussian field along each sight
    line; discrete mode applies the sparse operator to the rendered image.
    Dead channels are zeroed either way; the target is the padded image.
    """
    cams = op.cameras
    if mode == MODE_DISCRETE:
        readings = project(op, op.grid.unpad_image(phantom.image), noise_std, rng)
    elif mode == MODE_ANALYTIC:
        readings = np.zeros(cams.n_channels, dtype=np.float64)
        for ch, los in enumerate(cams.lines):
            readings[ch] = analytic_projection(phantom.blobs, los)
        if noise_std > 0.0:
            if rng is None:
                raise ValueError("noisy readings need an explicit rng")
            readings = readings + rng.normal(0.0, noise_std, size=readings.shape)
        readings[list(cams.dead_channels)] = 0.0
    else:
        raise ValueError(f"unknown projection mode {mode!r}")
    return readings, phantom.image
