"""PhysWorld games on top of the rigid-body simulator and rasteriser.

* ``physgoal``: move the agent onto a large red goal (+1, goal respawns);
  touching any moving obstacle ends the episode (-1).
* ``physforage``: collect light-blue balls (+1, ball respawns with a new
  velocity); touching a box ends the episode (-1).
* ``physshooter``: a stationary agent fires green bullets in one of eight
  directions. A bullet hitting a square gives +1, a circle -1, leaving the
  room 0; only one bullet may be live at a time. Any obstacle touching the
  agent ends the episode (-1).

Movement actions set the agent velocity directly. "up" moves towards row 0
of the frame, i.e. towards smaller ``y``.
"""

import dataclasses
import math
import operator
from dataclasses import dataclass, field

from .physics2d import (
    PALETTE, WALL_THICKNESS, Body, Box, Circle, PlacementBudget, PlacementError, WorldConfig, WorldState,
    boundary_walls, clear_of, collide_bodies, collide_wall, random_interior_wall, random_velocity,
    step,
)
from .raster import AGENT_COLOR, BULLET_COLOR, COLLECTIBLE_COLOR, GOAL_COLOR, rasterize
from .rng import Xoshiro256pp, derive_seed

GAMES = ("physgoal", "physforage", "physshooter")
MOVE_ACTIONS = ("noop", "up", "down", "left", "right")
SHOOTER_ACTIONS = ("noop",) + tuple(f"fire{k}" for k in range(8))
_MOVES = {0: (0.0, 0.0), 1: (0.0, -1.0), 2: (0.0, 1.0), 3: (-1.0, 0.0), 4: (1.0, 0.0)}

# obstacle colours differ from the dataset palette and from reserved roles
# obstacles share the dataset's fixed hues
OBSTACLE_PALETTE = PALETTE

POSITIVE_EVENTS = ("goal_reached", "collected", "bullet_hit_square")
NEGATIVE_EVENTS = ("hit_obstacle", "bullet_hit_circle")


class EpisodeDoneError(RuntimeError):
    pass


@dataclass
class EnvConfig:
    game: str = "physgoal"
    height: int = 84
    width: int = 84
    n_obstacles: tuple = (8, 12)
    n_walls: tuple = (0, 3)
    obstacle_size: tuple = (0.03, 0.055)
    obstacle_speed: tuple = (0.1, 0.3)
    agent_radius: float = 0.035
    agent_speed: float = 0.4
    goal_radius: float = 0.08
    n_collectibles: tuple = (3, 5)
    collectible_radius: float = 0.03
    bullet_radius: float = 0.015
    bullet_speed: float = 1.0
    spawn_clearance: float = 0.12
    max_steps: int = 1000
    goal_spawn: str = "random"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_obstacles", "n_walls", "obstacle_size", "obstacle_speed", "n_collectibles"):
            setattr(self, name, tuple(getattr(self, name)))

    def validate(self):
        if self.game not in GAMES:
            raise ValueError(f"unknown game {self.game!r}; expected one of {GAMES}")
        if self.max_steps < 1:
            raise ValueError(f"episode step cap must be >= 1, got {self.max_steps}")
        if self.goal_spawn not in ("random", "adjacent"):
            raise ValueError(f"goal_spawn must be 'random' or 'adjacent', got {self.goal_spawn!r}")
        for name in ("n_obstacles", "n_walls", "obstacle_size", "obstacle_speed", "n_collectibles"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"env config {name}={[lo, hi]} is not a valid range")
        if min(self.height, self.width) < 16:
            raise ValueError(f"frames must be at least 16x16, got {self.height}x{self.width}")

    @property
    def n_actions(self):
        return len(SHOOTER_ACTIONS) if self.game == "physshooter" else len(MOVE_ACTIONS)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def trivial_goal(cls, **overrides):
        """Empty room, goal always placed on a fixed side next to the agent, 40-step episodes."""
        base = dict(game="physgoal", height=42, width=42, n_obstacles=(0, 0), n_walls=(0, 0),
                    goal_spawn="adjacent", max_steps=40)
        base.update(overrides)
        return cls(**base)


@dataclass
class StepResult:
    observation: object
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class PhysWorldEnv:
    """One game instance. ``reset`` must be called before ``step``."""

    def __init__(self, config=None):
        self.config = config or EnvConfig()
        self.config.validate()
        self.world = None
        self.done = True
        self.t = 0
        self.episode = 0
        self._rng = None

    @property
    def game(self):
        return self.config.game

    @property
    def n_actions(self):
        return self.config.n_actions

    @property
    def action_names(self):
        return SHOOTER_ACTIONS if self.game == "physshooter" else MOVE_ACTIONS

    # ---------------------------------------------------------------- access

    def bodies_of(self, kind):
        return [b for b in self.world.bodies if b.kind == kind]

    @property
    def agent(self):
        return self.bodies_of("agent")[0]

    @property
    def goal(self):
        goals = self.bodies_of("goal")
        return goals[0] if goals else None

    @property
    def bullet(self):
        bullets = self.bodies_of("bullet")
        return bullets[0] if bullets else None

    def obstacles(self):
        return self.bodies_of("obstacle")

    def collectibles(self):
        return self.bodies_of("collectible")

    def observe(self):
        return rasterize(self.world, self.config.height, self.config.width)

    # ----------------------------------------------------------------- reset

    def reset(self, seed=None):
        cfg = self.config
        if seed is None:
            seed = derive_seed(cfg.seed, "episode", self.episode)
        self.episode += 1
        self._rng = rng = Xoshiro256pp(seed)
        self.world = WorldState(bodies=[], walls=boundary_walls(), dt=1.0 / 30.0, rng_seed=seed)
        wcfg = WorldConfig(n_walls=cfg.n_walls)
        for _ in range(rng.integers(*cfg.n_walls)):
            self.world.walls.append(random_interior_wall(rng, wcfg))

        agent = Body(Circle(cfg.agent_radius), 0.5, 0.5, elasticity=0.0, friction=0.0,
                     color=AGENT_COLOR, kind="agent", fixed=cfg.game == "physshooter")
        if cfg.game == "physshooter":
            # stationary agent in the centre of the room; interior walls must not cover it
            probe = Body(Circle(cfg.agent_radius + cfg.spawn_clearance), 0.5, 0.5)
            self.world.walls[4:] = [w for w in self.world.walls[4:] if collide_wall(probe, w) is None]
            self.world.bodies.append(agent)
        else:
            self._place(agent, clearance=0.01)

        if cfg.game == "physgoal":
            goal = Body(Circle(cfg.goal_radius), 0.0, 0.0, color=GOAL_COLOR, kind="goal",
                        sensor=True, fixed=True)
            self._spawn_goal(goal)
        if cfg.game == "physforage":
            for _ in range(rng.integers(*cfg.n_collectibles)):
                ball = Body(Circle(cfg.collectible_radius), 0.0, 0.0, elasticity=1.0, friction=0.0,
                            color=COLLECTIBLE_COLOR, kind="collectible")
                self._spawn_moving(ball)
        for _ in range(rng.integers(*cfg.n_obstacles)):
            self._spawn_moving(self._new_obstacle())
        self.t = 0
        self.done = False
        return self.observe()

    def _place(self, body, clearance, away_from=None, min_dist=0.0, avoid=()):
        rng = self._rng
        budget = PlacementBudget(what=f"{self.game} {body.kind}")
        lo = WALL_THICKNESS + body.shape.bound + clearance
        while True:
            budget.spend()
            body.x = rng.uniform(lo, 1.0 - lo)
            body.y = rng.uniform(lo, 1.0 - lo)
            if away_from is not None and math.hypot(body.x - away_from.x, body.y - away_from.y) < min_dist:
                continue
            if any(collide_bodies(body, other) is not None for other in avoid):
                continue
            if clear_of(body, self.world, clearance):
                if body not in self.world.bodies:
                    self.world.bodies.append(body)
                return body

    def _new_obstacle(self):
        cfg, rng = self.config, self._rng
        size = rng.uniform(*cfg.obstacle_size)
        # PhysForage obstacles are all boxes; elsewhere boxes and circles are equally likely
        if cfg.game == "physforage" or rng.random() < 0.5:
            shape, angle, omega = Box(size, size), rng.uniform(0.0, 2.0 * math.pi), rng.uniform(-1.0, 1.0)
        else:
            shape, angle, omega = Circle(size), 0.0, 0.0
        return Body(shape, 0.0, 0.0, 0.0, 0.0, angle, omega, elasticity=1.0, friction=0.0,
                    color=rng.choice(OBSTACLE_PALETTE), kind="obstacle")

    def _spawn_moving(self, body):
        """Place ``body`` clear of everything and away from the agent, with a fresh velocity."""
        agent = self.agent
        min_dist = agent.shape.bound + body.shape.bound + self.config.spawn_clearance
        # sensors are ignored by clear_of; keep the goal visible at spawn time
        self._place(body, clearance=0.005, away_from=agent, min_dist=min_dist, avoid=self.bodies_of("goal"))
        speed = self.config.obstacle_speed
        body.vx, body.vy = random_velocity(self._rng, speed)
        return body

    def _spawn_goal(self, goal):
        cfg, agent = self.config, self.agent
        if cfg.goal_spawn == "adjacent":
            lo = WALL_THICKNESS + goal.shape.radius
            gap = agent.shape.radius + goal.shape.radius + 0.02
            # a static side: right of the agent unless the room edge forces another side
            for dx, dy in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)):
                gx, gy = agent.x + gap * dx, agent.y + gap * dy
                if lo <= (gx if dx else gy) <= 1 - lo:
                    # the off-axis coordinate is clamped into the room
                    goal.x, goal.y = min(max(gx, lo), 1 - lo), min(max(gy, lo), 1 - lo)
                    break
            else:
                raise PlacementError("no free side for an adjacent goal")
            if goal not in self.world.bodies:
                self.world.bodies.append(goal)
            return goal
        min_dist = agent.shape.radius + goal.shape.radius + 0.05
        # the goal is a sensor, so it may overlap moving bodies but not walls
        return self._place(goal, clearance=0.0, away_from=agent, min_dist=min_dist)

    # ------------------------------------------------------------------ step

    def step(self, action):
        if self.world is None or self.done:
            raise EpisodeDoneError("episode is over; call reset() before step()")
        try:
            if isinstance(action, bool):
                raise TypeError
            action = operator.index(action)
        except TypeError:
            raise ValueError(f"action must be an integer index, got {action!r}") from None
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action} for {self.game} (valid: 0..{self.n_actions - 1})")
        info = {}
        if self.game == "physshooter":
            self._fire(action, info)
        else:
            dx, dy = _MOVES[action]
            agent = self.agent
            agent.vx, agent.vy, agent.omega = dx * self.config.agent_speed, dy * self.config.agent_speed, 0.0
        contacts = step(self.world)
        reward = self._events(contacts, info)
        self.t += 1
        if reward < 0 and "hit_obstacle" in info:
            self.done = True
        elif self.t >= self.config.max_steps:
            self.done = True
            info["timeout"] = 1
        info["step"] = self.t
        return StepResult(self.observe(), float(reward), self.done, info)

    def _agent_contacts(self, contacts, kind):
        bodies = self.world.bodies
        agent = self.agent
        hits = []
        for c in contacts:
            if c.wall:
                continue
            a, b = bodies[c.i], bodies[c.j]
            if a is agent and b.kind == kind:
                hits.append(b)
            elif b is agent and a.kind == kind:
                hits.append(a)
        return hits

    def _events(self, contacts, info):
        game = self.game
        agent = self.agent
        if self._agent_contacts(contacts, "obstacle"):
            # termination dominates every other event of the same step
            info["hit_obstacle"] = 1
            if game == "physshooter":
                self._remove_bullet()
            return -1
        if game == "physgoal":
            goal = self.goal
            if collide_bodies(agent, goal) is not None:
                info["goal_reached"] = 1
                self._spawn_goal(goal)
                return 1
            return 0
        if game == "physforage":
            balls = self._agent_contacts(contacts, "collectible")
            if balls:
                info["collected"] = 1
                self._spawn_moving(balls[0])
                return 1
            return 0
        return self._bullet_events(info)

    # ----------------------------------------------------------- shooter rules

    def _fire(self, action, info):
        if action == 0 or self.bullet is not None:
            return
        cfg, agent = self.config, self.agent
        angle = (action - 1) * math.pi / 4.0
        ux, uy = math.cos(angle), math.sin(angle)
        offset = agent.shape.radius + cfg.bullet_radius + 1e-3
        bullet = Body(Circle(cfg.bullet_radius), agent.x + offset * ux, agent.y + offset * uy,
                      cfg.bullet_speed * ux, cfg.bullet_speed * uy, color=BULLET_COLOR, kind="bullet",
                      sensor=True)
        self.world.bodies.append(bullet)
        info["fired"] = 1

    def _remove_bullet(self):
        bullet = self.bullet
        if bullet is not None:
            self.world.bodies.remove(bullet)

    def _bullet_events(self, info):
        bullet = self.bullet
        if bullet is None:
            return 0
        for ob in self.obstacles():
            if collide_bodies(bullet, ob) is not None:
                self._remove_bullet()
                self.world.bodies.remove(ob)
                self._spawn_moving(ob)
                if isinstance(ob.shape, Box):
                    info["bullet_hit_square"] = 1
                    return 1
                info["bullet_hit_circle"] = 1
                return -1
        r = bullet.shape.radius
        x0, y0, x1, y1 = self.world.bounds
        if bullet.x + r < x0 or bullet.x - r > x1 or bullet.y + r < y0 or bullet.y - r > y1:
            self._remove_bullet()
            info["bullet_left"] = 1
        return 0


def make_env(config=None, **overrides):
    if config is None:
        config = EnvConfig(**overrides)
    elif overrides:
        config = dataclasses.replace(config, **overrides)
    return PhysWorldEnv(config)


def reward_from_info(info):
    """Reward implied by a step's event tags."""
    return sum(info.get(k, 0) for k in POSITIVE_EVENTS) - sum(info.get(k, 0) for k in NEGATIVE_EVENTS)
