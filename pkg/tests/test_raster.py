import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from physprior import physics2d as p2
from physprior.physics2d import Body, Box, Circle, WorldState
from physprior.raster import WALL_COLOR, body_mask, normalize, rasterize, read_ppm, write_ppm


def test_empty_world_is_black():
    frame = rasterize(WorldState(bodies=[], walls=[]), 32, 32)
    assert frame.shape == (32, 32, 3) and frame.dtype == np.uint8
    assert not frame.any()


def test_circle_area_estimate():
    world = WorldState(bodies=[Body(Circle(0.1), 0.5, 0.5, color=(255, 0, 0))], walls=[])
    filled = int((rasterize(world, 84, 84) != 0).any(axis=-1).sum())
    assert abs(filled - math.pi * (0.1 * 84) ** 2) <= 0.15 * 222


def test_rendering_deterministic():
    world = p2.sample_world(9)
    assert rasterize(world, 84, 84).tobytes() == rasterize(world, 84, 84).tobytes()


def test_minimum_size_enforced():
    with pytest.raises(ValueError):
        rasterize(WorldState(bodies=[], walls=[]), 8, 8)


def test_walls_are_gray_and_bodies_drawn_in_order():
    world = p2.sample_world(0)
    frame = rasterize(world, 84, 84)
    assert tuple(frame[0, 0]) == WALL_COLOR
    a = Body(Circle(0.2), 0.5, 0.5, color=(255, 0, 0))
    b = Body(Circle(0.1), 0.5, 0.5, color=(0, 255, 0))
    top = rasterize(WorldState(bodies=[a, b], walls=[]), 42, 42)
    assert tuple(top[21, 21]) == (0, 255, 0)


def test_rotated_box_uses_inverse_rotation():
    body = Body(Box(0.3, 0.05), 0.5, 0.5, angle=math.pi / 2)
    mask = body_mask(body, 40, 40)
    rows, cols = np.nonzero(mask)
    assert np.ptp(rows) > np.ptp(cols)


def test_normalize_exact():
    frame = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
    np.testing.assert_array_equal(normalize(frame), frame.astype(np.float32) / np.float32(255))


def test_ppm_sizes_and_roundtrip(tmp_path):
    red = np.zeros((2, 2, 3), dtype=np.uint8)
    red[..., 0] = 255
    path = tmp_path / "red.ppm"
    write_ppm(red, path)
    header = b"P6\n2 2\n255\n"
    data = path.read_bytes()
    assert data.startswith(header) and len(data) == len(header) + 12
    np.testing.assert_array_equal(read_ppm(path), red)
    black = tmp_path / "black.ppm"
    write_ppm(np.zeros((84, 84, 3), dtype=np.uint8), black)
    assert len(black.read_bytes()) - len(b"P6\n84 84\n255\n") == 21168


def test_ppm_io_error_names_path(tmp_path):
    target = tmp_path / "missing" / "x.ppm"
    with pytest.raises(OSError, match="missing"):
        write_ppm(np.zeros((2, 2, 3), dtype=np.uint8), target)


def _separated_bodies(rng, n):
    bodies = []
    while len(bodies) < n:
        r = rng.uniform(0.04, 0.08)
        cand = Body(Circle(r), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                    color=tuple(int(v) for v in rng.integers(50, 256, 3)))
        # two pixels of screen gap at 42x42 keeps masks from sharing pixels
        if all(math.hypot(cand.x - b.x, cand.y - b.y) > r + b.shape.radius + 0.05 for b in bodies):
            bodies.append(cand)
    return bodies


@given(st.integers(0, 2 ** 32 - 1), st.permutations(range(4)))
def test_permutation_invariance(seed, order):
    bodies = _separated_bodies(np.random.default_rng(seed), 4)
    a = rasterize(WorldState(bodies=bodies, walls=[]), 42, 42)
    b = rasterize(WorldState(bodies=[bodies[i] for i in order], walls=[]), 42, 42)
    assert a.tobytes() == b.tobytes()


@given(st.floats(0.3, 0.6), st.floats(0.3, 0.6), st.floats(0.02, 0.1))
def test_one_pixel_shift(x, y, half):
    w = 42
    b1 = Body(Box(half, half), x, y)
    b2 = Body(Box(half, half), x + 1.0 / w, y)
    m1, m2 = body_mask(b1, w, w), body_mask(b2, w, w)
    np.testing.assert_array_equal(m1[:, :-1], m2[:, 1:])
