"""Rasterise a world into an RGB frame, and binary PPM I/O.

A pixel takes a shape's colour iff the pixel centre lies inside the shape.
Walls are drawn first, then bodies in list order. No anti-aliasing.
"""

import math

import numpy as np

from .physics2d import Circle

BACKGROUND = (0, 0, 0)
WALL_COLOR = (128, 128, 128)
AGENT_COLOR = (0, 0, 139)
GOAL_COLOR = (255, 0, 0)
COLLECTIBLE_COLOR = (173, 216, 230)
BULLET_COLOR = (0, 255, 0)

_grids = {}


def _grid(h, w, bounds):
    key = (h, w, bounds)
    if key not in _grids:
        x0, y0, x1, y1 = bounds
        xs = x0 + (np.arange(w) + 0.5) * ((x1 - x0) / w)
        ys = y0 + (np.arange(h) + 0.5) * ((y1 - y0) / h)
        _grids[key] = (xs, ys)
    return _grids[key]


def _span(coords, lo, hi):
    a = int(np.searchsorted(coords, lo, side="left"))
    b = int(np.searchsorted(coords, hi, side="right"))
    return a, b


def body_mask(body, h, w, bounds=(0.0, 0.0, 1.0, 1.0)):
    """Boolean ``h x w`` coverage mask of one body."""
    xs, ys = _grid(h, w, tuple(bounds))
    mask = np.zeros((h, w), dtype=bool)
    _draw(mask, body, xs, ys, True)
    return mask


def _draw(img, body, xs, ys, value):
    r = body.shape.bound
    c0, c1 = _span(xs, body.x - r, body.x + r)
    r0, r1 = _span(ys, body.y - r, body.y + r)
    if c0 >= c1 or r0 >= r1:
        return
    dx = xs[c0:c1][None, :] - body.x
    dy = ys[r0:r1][:, None] - body.y
    if isinstance(body.shape, Circle):
        inside = dx * dx + dy * dy <= body.shape.radius ** 2
    else:
        c, s = math.cos(body.angle), math.sin(body.angle)
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        inside = (np.abs(lx) <= body.shape.half_w) & (np.abs(ly) <= body.shape.half_h)
    img[r0:r1, c0:c1][inside] = value


def rasterize(world, height, width):
    """Render ``world`` to an ``height x width x 3`` uint8 frame."""
    if height < 16 or width < 16:
        raise ValueError(f"frame must be at least 16x16, got {height}x{width}")
    bounds = tuple(world.bounds)
    xs, ys = _grid(height, width, bounds)
    frame = np.zeros((height, width, 3), dtype=np.uint8)
    for wall in world.walls:
        c0, c1 = _span(xs, wall.xmin, wall.xmax)
        r0, r1 = _span(ys, wall.ymin, wall.ymax)
        if c0 < c1 and r0 < r1:
            frame[r0:r1, c0:c1] = WALL_COLOR
    for body in world.bodies:
        _draw(frame, body, xs, ys, body.color)
    return frame


def normalize(frame):
    """uint8 frame -> float32 values in [0, 1] (exactly value / 255)."""
    return np.asarray(frame, dtype=np.float32) / np.float32(255.0)


def to_uint8(frame):
    """[0, 1] float frame -> uint8 by rounding."""
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(frame, path):
    frame = np.asarray(frame)
    if frame.dtype != np.uint8:
        frame = to_uint8(frame)
    if frame.ndim == 2:
        frame = np.repeat(frame[:, :, None], 3, axis=2)
    h, w, _ = frame.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(frame).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PPM {path}: {exc}") from exc


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
