"""Reconstruction grid, two-camera sight-line layout, and the sparse
chord-length projector that maps pixel emissivities to channel readings.

The physical domain is a JET-like rectangle (default 2.0 m wide, 3.5 m
tall). Each camera is a pivot point outside the domain plus a fan of ray
angles: 16 overview channels spanning the whole cross-section and 8
divertor channels aimed at the bottom region. Rays are zero-width lines
clipped to the domain, so a ray's entry and exit points always lie on the
domain boundary and its chord lengths sum to the in-domain length exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels

N_CHANNELS_PER_CAMERA = 24
N_OVERVIEW = 16
N_DIVERTOR = 8
DEFAULT_RESERVE = 4
N_CHANNELS = 2 * N_CHANNELS_PER_CAMERA + DEFAULT_RESERVE  # 52
# always-zero readings: first vertical channel and the last reserve channel
DEFAULT_DEAD = (24, 51)

CAMERA_HORIZONTAL = 0
CAMERA_VERTICAL = 1

FAN_OVERVIEW = 0
FAN_DIVERTOR = 1


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Pixel grid over the physical domain, with zero padding for the network.

    The active width_px x height_px cells tile the physical domain exactly;
    the padded image is pad_height_px x pad_width_px (row-major, row 0 at
    the bottom of the domain) with the active block centered.
    """

    width_px: int = 115
    height_px: int = 196
    pad_width_px: int = 120
    pad_height_px: int = 200
    domain_w: float = 2.0
    domain_h: float = 3.5
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise GeometryError("grid dimensions must be positive")
        if self.width_px > self.pad_width_px or self.height_px > self.pad_height_px:
            raise GeometryError("padded dimensions must not be smaller than the grid")
        if self.domain_w <= 0 or self.domain_h <= 0:
            raise GeometryError("physical domain must have positive extent")

    @property
    def cell_w(self) -> float:
        return self.domain_w / self.width_px

    @property
    def cell_h(self) -> float:
        return self.domain_h / self.height_px

    @property
    def n_pixels(self) -> int:
        return self.width_px * self.height_px

    @property
    def pad_top(self) -> int:
        return (self.pad_height_px - self.height_px) // 2

    @property
    def pad_left(self) -> int:
        return (self.pad_width_px - self.width_px) // 2

    @property
    def active_slices(self) -> tuple[slice, slice]:
        """(rows, cols) of the active area inside the padded image."""
        return (slice(self.pad_top, self.pad_top + self.height_px),
                slice(self.pad_left, self.pad_left + self.width_px))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical x coordinates of column centers and y of row centers."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.width_px) + 0.5) * self.cell_w
        ys = y0 + (np.arange(self.height_px) + 0.5) * self.cell_h
        return xs, ys

    def pad_image(self, active: np.ndarray) -> np.ndarray:
        if active.shape != (self.height_px, self.width_px):
            raise GeometryError(f"active image must be {self.height_px}x{self.width_px}")
        out = np.zeros((self.pad_height_px, self.pad_width_px), dtype=active.dtype)
        out[self.active_slices] = active
        return out

    def unpad_image(self, padded: np.ndarray) -> np.ndarray:
        if padded.shape != (self.pad_height_px, self.pad_width_px):
            raise GeometryError(f"padded image must be {self.pad_height_px}x{self.pad_width_px}")
        return padded[self.active_slices]


@dataclass(frozen=True)
class LineOfSight:
    start: tuple[float, float]
    end: tuple[float, float]
    camera_id: int
    channel_index: int  # 0-23 within the camera
    fan: int

    def __post_init__(self):
        if self.start == self.end:
            raise GeometryError("degenerate sight line: start == end")
        if not 0 <= self.channel_index < N_CHANNELS_PER_CAMERA:
            raise GeometryError("channel_index out of range")


@dataclass(frozen=True)
class CameraSet:
    lines: tuple[LineOfSight, ...]
    reserve_channels: int = DEFAULT_RESERVE
    dead_channels: frozenset[int] = frozenset(DEFAULT_DEAD)

    def __post_init__(self):
        if len(self.lines) != 2 * N_CHANNELS_PER_CAMERA:
            raise GeometryError(f"camera set needs {2 * N_CHANNELS_PER_CAMERA} sight lines")
        for cam in (CAMERA_HORIZONTAL, CAMERA_VERTICAL):
            fans = [l.fan for l in self.lines if l.camera_id == cam]
            if len(fans) != N_CHANNELS_PER_CAMERA:
                raise GeometryError("each camera must have exactly 24 lines")
            if fans.count(FAN_OVERVIEW) != N_OVERVIEW or fans.count(FAN_DIVERTOR) != N_DIVERTOR:
                raise GeometryError("each camera must have 16 overview and 8 divertor lines")
        if any(c < 0 or c >= self.n_channels for c in self.dead_channels):
            raise GeometryError("dead channel index out of range")

    @property
    def n_channels(self) -> int:
        return len(self.lines) + self.reserve_channels


@dataclass(frozen=True)
class CameraLayoutConfig:
    """Pivot points plus absolute ray angles (radians, math convention)."""

    horizontal_pivot: tuple[float, float]
    vertical_pivot: tuple[float, float]
    horizontal_overview: tuple[float, ...]
    horizontal_divertor: tuple[float, ...]
    vertical_overview: tuple[float, ...]
    vertical_divertor: tuple[float, ...]
    reserve_channels: int = DEFAULT_RESERVE
    dead_channels: tuple[int, ...] = DEFAULT_DEAD

    def __post_init__(self):
        if len(self.horizontal_overview) != N_OVERVIEW or len(self.vertical_overview) != N_OVERVIEW:
            raise GeometryError(f"overview fans must have {N_OVERVIEW} angles")
        if len(self.horizontal_divertor) != N_DIVERTOR or len(self.vertical_divertor) != N_DIVERTOR:
            raise GeometryError(f"divertor fans must have {N_DIVERTOR} angles")


def _aim(pivot: tuple[float, float], target: tuple[float, float]) -> float:
    return math.atan2(target[1] - pivot[1], target[0] - pivot[0])


def default_layout(grid: Grid) -> CameraLayoutConfig:
    """Two-camera layout scaled to the grid's physical domain.

    The horizontal camera sits right of the domain at mid-height; its
    overview fan targets evenly spaced points on the left edge (top to
    bottom) and its divertor fan targets the bottom edge. The vertical
    camera sits above the domain; overview targets sweep the bottom edge
    left to right and the divertor fan concentrates on the bottom center.
    """
    x0, y0 = grid.origin
    w, h = grid.domain_w, grid.domain_h
    hp = (x0 + 1.175 * w, y0 + 0.5 * h)
    vp = (x0 + 0.5 * w, y0 + 1.1 * h)
    h_over = tuple(_aim(hp, (x0, y0 + (15 - j + 0.5) * h / 16)) for j in range(N_OVERVIEW))
    h_div = tuple(_aim(hp, (x0 + (0.175 + 0.525 * j / 7) * w, y0)) for j in range(N_DIVERTOR))
    v_over = tuple(_aim(vp, (x0 + (j + 0.5) * w / 16, y0)) for j in range(N_OVERVIEW))
    v_div = tuple(_aim(vp, (x0 + (0.3 + 0.4 * j / 7) * w, y0)) for j in range(N_DIVERTOR))
    return CameraLayoutConfig(hp, vp, h_over, h_div, v_over, v_div)


def _clip_to_domain(pivot, angle, grid: Grid):
    """Entry/exit points of the ray pivot + t*(cos a, sin a) in the domain.

    Liang-Barsky on the domain rectangle; returns None when the ray misses.
    """
    ux, uy = math.cos(angle), math.sin(angle)
    x0, y0 = grid.origin
    x1, y1 = x0 + grid.domain_w, y0 + grid.domain_h
    t_lo, t_hi = -math.inf, math.inf
    for p, q_lo, q_hi in ((ux, x0 - pivot[0], x1 - pivot[0]),
                          (uy, y0 - pivot[1], y1 - pivot[1])):
        if p == 0.0:
            if q_lo > 0.0 or q_hi < 0.0:
                return None
            continue
        ta, tb = q_lo / p, q_hi / p
        if ta > tb:
            ta, tb = tb, ta
        t_lo = max(t_lo, ta)
        t_hi = min(t_hi, tb)
    if not (t_hi > t_lo and t_hi > 0.0) or t_hi - t_lo < 1e-12:
        return None
    t_lo = max(t_lo, 0.0)
    entry = (pivot[0] + t_lo * ux, pivot[1] + t_lo * uy)
    exit_ = (pivot[0] + t_hi * ux, pivot[1] + t_hi * uy)
    return entry, exit_


def build_cameras(layout: CameraLayoutConfig, grid: Grid) -> CameraSet:
    """Clip every fan ray to the domain and assemble the ordered channel list.

    Channel order: horizontal camera (16 overview then 8 divertor), then
    vertical camera likewise; reserve channels carry no sight lines.
    Raises GeometryError if any ray misses the domain.
    """
    lines: list[LineOfSight] = []
    fans = ((CAMERA_HORIZONTAL, layout.horizontal_pivot,
             layout.horizontal_overview, layout.horizontal_divertor),
            (CAMERA_VERTICAL, layout.vertical_pivot,
             layout.vertical_overview, layout.vertical_divertor))
    for cam_id, pivot, overview, divertor in fans:
        channel = 0
        for fan_id, angles in ((FAN_OVERVIEW, overview), (FAN_DIVERTOR, divertor)):
            for a in angles:
                clipped = _clip_to_domain(pivot, a, grid)
                if clipped is None:
                    raise GeometryError(
                        f"camera {cam_id} channel {channel} (angle {a:.4f} rad) "
                        "misses the domain")
                lines.append(LineOfSight(clipped[0], clipped[1], cam_id, channel, fan_id))
                channel += 1
    return CameraSet(tuple(lines), layout.reserve_channels,
                     frozenset(layout.dead_channels))


@dataclass(frozen=True)
class ProjectionOperator:
    """Sparse chord-length matrix: readings = matrix . image_pixels.

    Rows are the 52 channels (dead and reserve rows empty); columns are
    active-grid pixels in row-major order. Sight line of channel c (c < 48)
    is cameras.lines[c].
    """

    matrix: sp.csr_matrix
    grid: Grid
    cameras: CameraSet

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def trace_ray(grid: Grid, los: LineOfSight) -> tuple[np.ndarray, np.ndarray]:
    """Chord lengths of one sight line through the active grid.

    Returns (pixel_indices, lengths_m); pixels are row-major flat indices.
    A ray missing the grid yields empty arrays.
    """
    return kernels.siddon_trace(
        los.start[0], los.start[1], los.end[0], los.end[1],
        grid.width_px, grid.height_px, grid.cell_w, grid.cell_h,
        grid.origin[0], grid.origin[1])


def assemble_projection(grid: Grid, cams: CameraSet) -> ProjectionOperator:
    """Trace every channel and stack the rows into one CSR operator."""
    rows, cols, vals = [], [], []
    for global_ch, los in enumerate(cams.lines):
        if global_ch in cams.dead_channels:
            continue
        pix, seg = trace_ray(grid, los)
        rows.append(np.full(pix.size, global_ch, np.int64))
        cols.append(pix)
        vals.append(seg)
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(cams.n_channels, grid.n_pixels))
    matrix.sum_duplicates()
    matrix.sort_indices()
    return ProjectionOperator(matrix, grid, cams)


def project(op: ProjectionOperator, image: np.ndarray, noise_std: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Channel readings for an active-grid emissivity image.

    Accepts the active (height_px, width_px) image or its flat vector.
    Gaussian noise (if any) is added to every channel; dead channels are
    forced to exactly zero afterwards.
    """
    flat = np.asarray(image, dtype=np.float64).ravel()
    if flat.size != op.grid.n_pixels:
        raise GeometryError(
            f"image has {flat.size} pixels, operator expects {op.grid.n_pixels}")
    if noise_std < 0:
        raise GeometryError("noise_std must be nonnegative")
    readings = op.matrix @ flat
    if noise_std > 0.0:
        if rng is None:
            raise GeometryError("noisy projection needs an explicit rng")
        readings = readings + rng.normal(0.0, noise_std, size=readings.shape)
    readings[list(op.cameras.dead_channels)] = 0.0
    return readings
