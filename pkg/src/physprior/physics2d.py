"""Deterministic 2-D rigid-body simulation: circles and rotating boxes.

The room is the unit square. There is no gravity; bodies move ballistically
with optional linear drag and bounce off each other and off static,
axis-aligned walls. Contacts are resolved with one impulse pass per step
(restitution plus Coulomb friction) followed by Baumgarte position
correction. All arithmetic is plain Python floats in a fixed order, so a
step is a pure function of the world state.
"""

import math
from dataclasses import dataclass, field

from .rng import Xoshiro256pp

BAUMGARTE = 0.8
WALL_THICKNESS = 0.025
MAX_PLACEMENT_ATTEMPTS = 10_000

# fixed saturated palette for dataset bodies; excludes the background,
# the wall gray and the colours reserved for environment roles
PALETTE = (
    (255, 128, 0),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
    (148, 0, 211),
    (255, 20, 147),
    (0, 255, 127),
    (240, 240, 240),
)


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    @property
    def area(self):
        return math.pi * self.radius ** 2

    @property
    def bound(self):
        return self.radius


@dataclass(frozen=True)
class Box:
    half_w: float
    half_h: float

    def __post_init__(self):
        if not (self.half_w > 0 and self.half_h > 0):
            raise ValueError(f"box half-extents must be positive, got {self.half_w}, {self.half_h}")

    @property
    def area(self):
        return 4.0 * self.half_w * self.half_h

    @property
    def bound(self):
        return math.hypot(self.half_w, self.half_h)


@dataclass
class Body:
    """A rigid body. Mass comes from area at unit density.

    ``sensor`` bodies are integrated and drawn but never collide; ``fixed``
    bodies collide with infinite mass and are not integrated.
    """

    shape: object
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    angle: float = 0.0
    omega: float = 0.0
    elasticity: float = 0.95
    friction: float = 0.9
    color: tuple = (255, 255, 255)
    kind: str = "body"
    sensor: bool = False
    fixed: bool = False
    mass: float = field(init=False)
    inertia: float = field(init=False)

    def __post_init__(self):
        self.mass = self.shape.area
        if isinstance(self.shape, Circle):
            self.inertia = 0.5 * self.mass * self.shape.radius ** 2
        else:
            w, h = 2 * self.shape.half_w, 2 * self.shape.half_h
            self.inertia = self.mass * (w * w + h * h) / 12.0

    @property
    def position(self):
        return (self.x, self.y)

    @property
    def velocity(self):
        return (self.vx, self.vy)

    @property
    def inv_mass(self):
        return 0.0 if self.fixed else 1.0 / self.mass

    @property
    def inv_inertia(self):
        return 0.0 if self.fixed else 1.0 / self.inertia

    def speed(self):
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class Wall:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    elasticity: float = 1.0
    friction: float = 1.0

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"wall needs min < max, got {self}")

    @property
    def center(self):
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    @property
    def half(self):
        return (0.5 * (self.xmax - self.xmin), 0.5 * (self.ymax - self.ymin))


@dataclass
class Contact:
    """``normal`` points from body ``i`` towards ``j`` (a body or, if ``wall``, a wall)."""

    i: int
    j: int
    normal: tuple
    depth: float
    point: tuple
    wall: bool = False


@dataclass
class WorldState:
    bodies: list
    walls: list
    bounds: tuple = (0.0, 0.0, 1.0, 1.0)
    drag: float = 0.0
    dt: float = 1.0 / 30.0
    rng_seed: int = 0


def boundary_walls(bounds=(0.0, 0.0, 1.0, 1.0), thickness=WALL_THICKNESS):
    """Four walls lining the room; they extend outside it so nothing can tunnel."""
    x0, y0, x1, y1 = bounds
    ext = 0.5
    return [
        Wall(x0 - ext, y0 - ext, x1 + ext, y0 + thickness),
        Wall(x0 - ext, y1 - thickness, x1 + ext, y1 + ext),
        Wall(x0 - ext, y0 - ext, x0 + thickness, y1 + ext),
        Wall(x1 - thickness, y0 - ext, x1 + ext, y1 + ext),
    ]


# ------------------------------------------------------------------ geometry


def _circle_circle(ax, ay, ra, bx, by, rb):
    dx, dy = bx - ax, by - ay
    dist2 = dx * dx + dy * dy
    rsum = ra + rb
    if dist2 >= rsum * rsum:
        return None
    dist = math.sqrt(dist2)
    if dist > 1e-12:
        nx, ny = dx / dist, dy / dist
    else:
        nx, ny = 1.0, 0.0
    depth = rsum - dist
    s = ra - 0.5 * depth
    return (nx, ny), depth, (ax + nx * s, ay + ny * s)


def _circle_box(cx, cy, r, bx, by, hw, hh, angle):
    """Contact between a circle and an oriented box; normal points box -> circle."""
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = cx - bx, cy - by
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    qx = min(max(lx, -hw), hw)
    qy = min(max(ly, -hh), hh)
    if abs(lx) <= hw and abs(ly) <= hh:
        # centre inside the box: push out along the nearest face
        fx, fy = hw - abs(lx), hh - abs(ly)
        if fx < fy:
            nlx, nly, depth = (1.0 if lx >= 0 else -1.0), 0.0, r + fx
        else:
            nlx, nly, depth = 0.0, (1.0 if ly >= 0 else -1.0), r + fy
        px, py = cx, cy
    else:
        ex, ey = lx - qx, ly - qy
        dist2 = ex * ex + ey * ey
        if dist2 >= r * r:
            return None
        dist = math.sqrt(dist2)
        nlx, nly = ex / dist, ey / dist
        depth = r - dist
        px = bx + c * qx - s * qy
        py = by + s * qx + c * qy
    nx = c * nlx - s * nly
    ny = s * nlx + c * nly
    return (nx, ny), depth, (px, py)


def _box_axes(angle):
    c, s = math.cos(angle), math.sin(angle)
    return (c, s), (-s, c)


def _box_corners(x, y, hw, hh, angle):
    (ux, uy), (vx, vy) = _box_axes(angle)
    return [
        (x + sx * hw * ux + sy * hh * vx, y + sx * hw * uy + sy * hh * vy)
        for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))
    ]


def _inside_box(px, py, x, y, hw, hh, angle, tol=1e-9):
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = px - x, py - y
    return abs(c * dx + s * dy) <= hw + tol and abs(-s * dx + c * dy) <= hh + tol


def _box_box(ax, ay, ahw, ahh, aang, bx, by, bhw, bhh, bang):
    """Separating-axis test on both boxes' edge normals; normal points a -> b."""
    dx, dy = bx - ax, by - ay
    a_axes = _box_axes(aang)
    b_axes = _box_axes(bang)
    best = None
    for nx, ny in a_axes + b_axes:
        ra = ahw * abs(nx * a_axes[0][0] + ny * a_axes[0][1]) + ahh * abs(nx * a_axes[1][0] + ny * a_axes[1][1])
        rb = bhw * abs(nx * b_axes[0][0] + ny * b_axes[0][1]) + bhh * abs(nx * b_axes[1][0] + ny * b_axes[1][1])
        dist = nx * dx + ny * dy
        overlap = ra + rb - abs(dist)
        if overlap <= 0:
            return None
        if best is None or overlap < best[0]:
            sign = 1.0 if dist >= 0 else -1.0
            best = (overlap, (nx * sign, ny * sign))
    depth, normal = best
    pts = [p for p in _box_corners(bx, by, bhw, bhh, bang) if _inside_box(*p, ax, ay, ahw, ahh, aang)]
    pts += [p for p in _box_corners(ax, ay, ahw, ahh, aang) if _inside_box(*p, bx, by, bhw, bhh, bang)]
    if pts:
        px = sum(p[0] for p in pts) / len(pts)
        py = sum(p[1] for p in pts) / len(pts)
    else:
        px, py = 0.5 * (ax + bx), 0.5 * (ay + by)
    return normal, depth, (px, py)


def _flip(hit):
    if hit is None:
        return None
    (nx, ny), depth, point = hit
    return (-nx, -ny), depth, point


def collide_bodies(a, b):
    """Contact geometry ``(normal a->b, depth, point)`` or None."""
    sa, sb = a.shape, b.shape
    if isinstance(sa, Circle) and isinstance(sb, Circle):
        return _circle_circle(a.x, a.y, sa.radius, b.x, b.y, sb.radius)
    if isinstance(sa, Circle):
        return _flip(_circle_box(a.x, a.y, sa.radius, b.x, b.y, sb.half_w, sb.half_h, b.angle))
    if isinstance(sb, Circle):
        return _circle_box(b.x, b.y, sb.radius, a.x, a.y, sa.half_w, sa.half_h, a.angle)
    return _box_box(a.x, a.y, sa.half_w, sa.half_h, a.angle, b.x, b.y, sb.half_w, sb.half_h, b.angle)


def collide_wall(a, wall):
    wx, wy = wall.center
    hw, hh = wall.half
    if isinstance(a.shape, Circle):
        return _flip(_circle_box(a.x, a.y, a.shape.radius, wx, wy, hw, hh, 0.0))
    return _box_box(a.x, a.y, a.shape.half_w, a.shape.half_h, a.angle, wx, wy, hw, hh, 0.0)


def _wall_near(a, wall):
    r = a.shape.bound
    return (wall.xmin - r < a.x < wall.xmax + r) and (wall.ymin - r < a.y < wall.ymax + r)


def overlaps(a, b):
    return collide_bodies(a, b) is not None


def detect_collisions(world):
    """All body-body and body-wall contacts among non-sensor bodies."""
    bodies = world.bodies
    contacts = []
    solid = [i for i, b in enumerate(bodies) if not b.sensor]
    for ii, i in enumerate(solid):
        a = bodies[i]
        for j in solid[ii + 1:]:
            b = bodies[j]
            if a.fixed and b.fixed:
                continue
            reach = a.shape.bound + b.shape.bound
            if abs(a.x - b.x) > reach or abs(a.y - b.y) > reach:
                continue
            hit = collide_bodies(a, b)
            if hit is not None:
                contacts.append(Contact(i, j, hit[0], hit[1], hit[2]))
    for i in solid:
        a = bodies[i]
        if a.fixed:
            continue
        for w, wall in enumerate(world.walls):
            if not _wall_near(a, wall):
                continue
            hit = collide_wall(a, wall)
            if hit is not None:
                contacts.append(Contact(i, w, hit[0], hit[1], hit[2], wall=True))
    return contacts


# ----------------------------------------------------------------- dynamics


def resolve_contact(world, contact):
    """Impulse response with restitution and friction, then position correction."""
    a = world.bodies[contact.i]
    if contact.wall:
        wall = world.walls[contact.j]
        b = None
        bx, by = wall.center
        bvx = bvy = bomega = 0.0
        inv_mb = inv_ib = 0.0
        e = min(a.elasticity, wall.elasticity)
        mu = a.friction * wall.friction
    else:
        b = world.bodies[contact.j]
        bx, by, bvx, bvy, bomega = b.x, b.y, b.vx, b.vy, b.omega
        inv_mb, inv_ib = b.inv_mass, b.inv_inertia
        e = min(a.elasticity, b.elasticity)
        mu = a.friction * b.friction
    inv_ma, inv_ia = a.inv_mass, a.inv_inertia
    if inv_ma + inv_mb == 0.0:
        return
    nx, ny = contact.normal
    px, py = contact.point
    rax, ray = px - a.x, py - a.y
    rbx, rby = px - bx, py - by

    def rel_velocity():
        vax = a.vx - a.omega * ray
        vay = a.vy + a.omega * rax
        vbx = bvx - bomega * rby
        vby = bvy + bomega * rbx
        return vbx - vax, vby - vay

    rvx, rvy = rel_velocity()
    vn = rvx * nx + rvy * ny
    if vn < 0.0:
        ran = rax * ny - ray * nx
        rbn = rbx * ny - rby * nx
        k_n = inv_ma + inv_mb + ran * ran * inv_ia + rbn * rbn * inv_ib
        j = -(1.0 + e) * vn / k_n
        jx, jy = j * nx, j * ny
        a.vx -= jx * inv_ma
        a.vy -= jy * inv_ma
        a.omega -= (rax * jy - ray * jx) * inv_ia
        bvx += jx * inv_mb
        bvy += jy * inv_mb
        bomega += (rbx * jy - rby * jx) * inv_ib

        if mu > 0.0:
            rvx, rvy = rel_velocity()
            vn2 = rvx * nx + rvy * ny
            tx, ty = rvx - vn2 * nx, rvy - vn2 * ny
            tlen = math.hypot(tx, ty)
            if tlen > 1e-12:
                tx, ty = tx / tlen, ty / tlen
                vt = rvx * tx + rvy * ty
                rat = rax * ty - ray * tx
                rbt = rbx * ty - rby * tx
                k_t = inv_ma + inv_mb + rat * rat * inv_ia + rbt * rbt * inv_ib
                jt = -vt / k_t
                limit = mu * j
                jt = max(-limit, min(limit, jt))
                jx, jy = jt * tx, jt * ty
                a.vx -= jx * inv_ma
                a.vy -= jy * inv_ma
                a.omega -= (rax * jy - ray * jx) * inv_ia
                bvx += jx * inv_mb
                bvy += jy * inv_mb
                bomega += (rbx * jy - rby * jx) * inv_ib
        if b is not None:
            b.vx, b.vy, b.omega = bvx, bvy, bomega

    corr = BAUMGARTE * contact.depth / (inv_ma + inv_mb)
    a.x -= corr * inv_ma * nx
    a.y -= corr * inv_ma * ny
    if b is not None:
        b.x += corr * inv_mb * nx
        b.y += corr * inv_mb * ny


def integrate(world):
    damp = max(0.0, 1.0 - world.drag * world.dt)
    dt = world.dt
    for b in world.bodies:
        if b.fixed:
            continue
        if not b.sensor:
            b.vx *= damp
            b.vy *= damp
        b.x += b.vx * dt
        b.y += b.vy * dt
        b.angle += b.omega * dt


def step(world):
    """Advance one timestep; returns the contacts that were resolved."""
    if not world.dt > 0:
        raise ValueError(f"dt must be positive, got {world.dt}")
    integrate(world)
    contacts = detect_collisions(world)
    for c in contacts:
        resolve_contact(world, c)
    return contacts


def kinetic_energy(world):
    total = 0.0
    for b in world.bodies:
        if b.fixed or b.sensor:
            continue
        total += 0.5 * b.mass * (b.vx * b.vx + b.vy * b.vy) + 0.5 * b.inertia * b.omega * b.omega
    return total


def linear_momentum(world):
    px = sum(b.mass * b.vx for b in world.bodies if not (b.fixed or b.sensor))
    py = sum(b.mass * b.vy for b in world.bodies if not (b.fixed or b.sensor))
    return px, py


def max_body_penetration(world):
    """Deepest body-body overlap among solid bodies (0 if none)."""
    deepest = 0.0
    for c in detect_collisions(world):
        if not c.wall:
            deepest = max(deepest, c.depth)
    return deepest


def body_extent(body):
    """Axis-aligned bounding rectangle of a body's shape."""
    if isinstance(body.shape, Circle):
        r = body.shape.radius
        return body.x - r, body.y - r, body.x + r, body.y + r
    xs, ys = zip(*_box_corners(body.x, body.y, body.shape.half_w, body.shape.half_h, body.angle))
    return min(xs), min(ys), max(xs), max(ys)


# ----------------------------------------------------------------- sampling


@dataclass
class WorldConfig:
    n_bodies: tuple = (4, 8)
    n_walls: tuple = (0, 3)
    size: tuple = (0.04, 0.08)
    speed: tuple = (0.2, 0.5)
    spin: tuple = (-1.0, 1.0)
    elasticity: float = 0.95
    friction: float = 0.9
    drag: float = 0.0
    dt: float = 1.0 / 30.0
    wall_length: tuple = (0.2, 0.5)
    wall_thickness: float = 0.04

    def validate(self):
        for name in ("n_bodies", "n_walls", "size", "speed", "spin", "wall_length"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"world config {name}={[lo, hi]} is an empty range")
        if self.size[0] <= 0:
            raise ValueError(f"world config size must be positive, got {self.size}")
        if self.n_bodies[0] < 0 or self.n_walls[0] < 0:
            raise ValueError("world config counts must be non-negative")


def random_interior_wall(rng, cfg, bounds=(0.0, 0.0, 1.0, 1.0)):
    x0, y0, x1, y1 = bounds
    length = rng.uniform(*cfg.wall_length)
    half_t = 0.5 * cfg.wall_thickness
    margin = 0.1
    if rng.random() < 0.5:
        cx = rng.uniform(x0 + margin + 0.5 * length, x1 - margin - 0.5 * length)
        cy = rng.uniform(y0 + margin, y1 - margin)
        return Wall(cx - 0.5 * length, cy - half_t, cx + 0.5 * length, cy + half_t)
    cx = rng.uniform(x0 + margin, x1 - margin)
    cy = rng.uniform(y0 + margin + 0.5 * length, y1 - margin - 0.5 * length)
    return Wall(cx - half_t, cy - 0.5 * length, cx + half_t, cy + 0.5 * length)


def clear_of(body, world, clearance=0.0):
    """True when ``body`` (grown by ``clearance``) touches no solid body or wall."""
    probe = body
    if clearance:
        shape = body.shape
        grown = Circle(shape.radius + clearance) if isinstance(shape, Circle) else Box(
            shape.half_w + clearance, shape.half_h + clearance)
        probe = Body(grown, body.x, body.y, angle=body.angle)
    for other in world.bodies:
        if other is body or other.sensor:
            continue
        if collide_bodies(probe, other) is not None:
            return False
    for wall in world.walls:
        if _wall_near(probe, wall) and collide_wall(probe, wall) is not None:
            return False
    return True


class PlacementBudget:
    """Shared attempt counter for rejection placement within one world."""

    def __init__(self, limit=MAX_PLACEMENT_ATTEMPTS, what="world"):
        self.remaining = limit
        self.limit = limit
        self.what = what

    def spend(self):
        self.remaining -= 1
        if self.remaining < 0:
            raise PlacementError(
                f"could not place bodies without overlap after {self.limit} attempts ({self.what})")


def place_body(world, rng, body, budget, clearance=0.005, margin=None):
    """Rejection-sample a free position for ``body`` and append it to the world."""
    x0, y0, x1, y1 = world.bounds
    lo = (margin if margin is not None else WALL_THICKNESS) + body.shape.bound
    while True:
        budget.spend()
        body.x = rng.uniform(x0 + lo, x1 - lo)
        body.y = rng.uniform(y0 + lo, y1 - lo)
        if clear_of(body, world, clearance):
            world.bodies.append(body)
            return body


def random_velocity(rng, speed_range):
    speed = rng.uniform(*speed_range)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    return speed * math.cos(heading), speed * math.sin(heading)


def sample_world(seed, config=None, palette=PALETTE):
    """Random room: boundary walls, interior walls and non-overlapping bodies."""
    cfg = config or WorldConfig()
    cfg.validate()
    rng = Xoshiro256pp(seed)
    world = WorldState(bodies=[], walls=boundary_walls(), drag=cfg.drag, dt=cfg.dt, rng_seed=seed)
    for _ in range(rng.integers(*cfg.n_walls)):
        world.walls.append(random_interior_wall(rng, cfg))
    budget = PlacementBudget(what=f"{cfg}")
    for _ in range(rng.integers(*cfg.n_bodies)):
        size = rng.uniform(*cfg.size)
        if rng.random() < 0.5:
            shape, angle, omega = Circle(size), 0.0, 0.0
        else:
            shape = Box(size, size)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            omega = rng.uniform(*cfg.spin)
        vx, vy = random_velocity(rng, cfg.speed)
        body = Body(shape, 0.0, 0.0, vx, vy, angle, omega, cfg.elasticity, cfg.friction,
                    color=rng.choice(palette))
        place_body(world, rng, body, budget)
    return world
