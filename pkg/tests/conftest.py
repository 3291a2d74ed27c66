import numpy as np
import pytest

from bolotomo import geometry


@pytest.fixture(scope="session")
def grid_full():
    return geometry.Grid()


@pytest.fixture(scope="session")
def cams_full(grid_full):
    return geometry.build_cameras(geometry.default_layout(grid_full), grid_full)


@pytest.fixture(scope="session")
def op_full(grid_full, cams_full):
    return geometry.assemble_projection(grid_full, cams_full)


@pytest.fixture(scope="session")
def grid_quarter():
    return geometry.Grid(29, 49, 30, 50)


@pytest.fixture(scope="session")
def cams_quarter(grid_quarter):
    return geometry.build_cameras(geometry.default_layout(grid_quarter), grid_quarter)


@pytest.fixture(scope="session")
def op_quarter(grid_quarter, cams_quarter):
    return geometry.assemble_projection(grid_quarter, cams_quarter)


def ray_axiality_deg(los) -> float:
    """Angle (degrees) of the sight line from the nearest grid axis."""
    ang = np.degrees(np.arctan2(los.end[1] - los.start[1],
                                los.end[0] - los.start[0])) % 90.0
    return min(ang, 90.0 - ang)


def perpendicular_distance(los, point) -> float:
    sx, sy = los.start
    ex, ey = los.end
    length = np.hypot(ex - sx, ey - sy)
    ux, uy = (ex - sx) / length, (ey - sy) / length
    t0 = (point[0] - sx) * ux + (point[1] - sy) * uy
    fx = sx + t0 * ux - point[0]
    fy = sy + t0 * uy - point[1]
    return float(np.hypot(fx, fy))
