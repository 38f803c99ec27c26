"""Procedural workcell generation.

Robots are mounted along rails; cuboid obstacles land anywhere in the
workspace that doesn't collide with the robots' start configuration;
tasks are sampled on obstacle surfaces (position uniform by face area,
approach direction inside a cone around the inward normal) and kept only
if some robot has a collision-free IK solution.  Everything is a pure
function of (config, rng).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .collision import ObstacleBox, scene_collision_query
from .env import Scene
from .kinematics import (
    Pose, RobotModel, builtin_model, forward_kinematics, planar_pose,
    rotation_z, solve_ik,
)


class GenerationError(RuntimeError):
    """Raised when a scene cannot be produced within the attempt budget."""


@dataclass
class Rail:
    p0: np.ndarray
    p1: np.ndarray
    mount: np.ndarray          # base orientation for robots on this rail

    def point(self, u: float) -> np.ndarray:
        return self.p0 + u * (self.p1 - self.p0)


def desk_rails(length: float = 1.6, width: float = 1.2) -> list[Rail]:
    """Two facing rails on opposite sides of a desk-scale table."""
    return [
        Rail(np.array([0.0, 0.0, 0.0]), np.array([length, 0.0, 0.0]),
             np.eye(3)),
        Rail(np.array([0.0, width, 0.0]), np.array([length, width, 0.0]),
             rotation_z(np.pi)),
    ]


def table_ceiling_rails(length: float = 1.6, width: float = 1.2,
                        height: float = 1.6) -> list[Rail]:
    """Four rails: two on the table, two mirrored on the ceiling."""
    flip = np.diag([1.0, -1.0, -1.0])  # hang upside down
    rails = desk_rails(length, width)
    for base in list(rails):
        rails.append(Rail(base.p0 + np.array([0, 0, height]),
                          base.p1 + np.array([0, 0, height]),
                          flip @ base.mount))
    return rails


@dataclass
class GenConfig:
    robot: str = "planar3"
    n_robots: int = 2
    rails: list[Rail] = field(default_factory=desk_rails)
    robot_rails: list[int] | None = None      # default: round-robin
    n_obstacles: tuple[int, int] = (0, 2)     # inclusive range
    obstacle_half_range: tuple[float, float] = (0.05, 0.25)
    planar_half_z: float = 0.15
    obstacle_region: tuple | None = None      # ((xlo,xhi),(ylo,yhi),(zlo,zhi))
    task_region: tuple | None = None          # fallback when no obstacles
    n_tasks: int = 4
    cone_half_angle_deg: float = 22.5
    surface_offset: float = 0.05
    timeout: float = 30.0
    margin: float = 0.0
    max_attempts: int = 1000
    ik_restarts: int = 10

    def model(self) -> RobotModel:
        return builtin_model(self.robot)


def _default_region(cfg: GenConfig, model: RobotModel) -> tuple:
    pts = np.array([p for r in cfg.rails for p in (r.p0, r.p1)])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    reach = model.reach()
    if model.planar:
        return ((lo[0], hi[0]), (lo[1] + 0.25, hi[1] - 0.25), (0.0, 0.0))
    return ((lo[0] - 0.3, hi[0] + 0.3), (lo[1] + 0.2, hi[1] - 0.2),
            (lo[2], hi[2] + reach))


def _uniform_in_region(region, rng) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) if hi > lo else lo
                     for lo, hi in region])


def sample_robot_placements(cfg: GenConfig, rng: np.random.Generator,
                            ) -> list[RobotModel]:
    """Robot models with bases placed on their rails, collision-free at home."""
    base_model = cfg.model()
    assignment = cfg.robot_rails or [i % len(cfg.rails)
                                     for i in range(cfg.n_robots)]
    if len(assignment) != cfg.n_robots:
        raise ValueError("robot_rails must list one rail per robot")
    for _ in range(cfg.max_attempts):
        models = []
        for i in range(cfg.n_robots):
            rail = cfg.rails[assignment[i]]
            u = float(rng.uniform(0.0, 1.0))
            base = Pose(rail.point(u), rail.mount.copy())
            models.append(base_model.with_base(base))
        links = [forward_kinematics(m, m.home)[1] for m in models]
        report = scene_collision_query(links, models, [], cfg.margin)
        if not report.pairs:
            return models
    raise GenerationError(
        f"no collision-free robot placement in {cfg.max_attempts} attempts")


def sample_obstacles(cfg: GenConfig, models: list[RobotModel],
                     rng: np.random.Generator) -> list[ObstacleBox]:
    lo_n, hi_n = cfg.n_obstacles
    count = int(rng.integers(lo_n, hi_n + 1)) if hi_n > lo_n else int(lo_n)
    if count == 0:
        return []
    planar = models[0].planar
    region = cfg.obstacle_region or _default_region(cfg, models[0])
    home_links = [forward_kinematics(m, m.home)[1] for m in models]
    h_lo, h_hi = cfg.obstacle_half_range
    boxes = []
    for _ in range(count):
        for attempt in range(cfg.max_attempts):
            center = _uniform_in_region(region, rng)
            half = rng.uniform(h_lo, h_hi, size=3)
            if planar:
                center[2] = 0.0
                half[2] = cfg.planar_half_z
                rot = rotation_z(float(rng.uniform(0.0, 2.0 * np.pi)))
            else:
                rot = Rotation.random(random_state=rng).as_matrix()
            box = ObstacleBox(center, rot, half)
            report = scene_collision_query(home_links, models, [box],
                                           cfg.margin)
            if not report.pairs:
                boxes.append(box)
                break
        else:
            raise GenerationError(
                f"could not place obstacle in {cfg.max_attempts} attempts")
    return boxes


def _box_faces(box: ObstacleBox, planar: bool):
    """(axis, sign, weight) for the samplable faces.

    Spatial boxes weight faces by area; planar boxes restrict to the four
    side faces and weight by the z=0 cross-section edge length.
    """
    faces = []
    if planar:
        for a in (0, 1):
            weight = 2.0 * box.half[1 - a]
            for sign in (1.0, -1.0):
                faces.append((a, sign, weight))
        return faces
    for a in range(3):
        b, c = [i for i in range(3) if i != a]
        weight = 4.0 * box.half[b] * box.half[c]
        for sign in (1.0, -1.0):
            faces.append((a, sign, weight))
    return faces


def _sample_surface_point(box: ObstacleBox, planar: bool,
                          rng: np.random.Generator):
    faces = _box_faces(box, planar)
    weights = np.array([f[2] for f in faces])
    idx = int(rng.choice(len(faces), p=weights / weights.sum()))
    a, sign, _ = faces[idx]
    others = [i for i in range(3) if i != a]
    coords = np.zeros(3)
    coords[a] = sign * box.half[a]
    for i in others:
        if planar and i == 2:
            coords[i] = 0.0
        else:
            coords[i] = rng.uniform(-box.half[i], box.half[i])
    point = box.center + box.rot @ coords
    normal = sign * box.rot[:, a]
    return point, normal


def _cone_direction(axis: np.ndarray, half_angle: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Uniform direction within a spherical cap around `axis`."""
    cos_t = rng.uniform(np.cos(half_angle), 1.0)
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = rng.uniform(0.0, 2.0 * np.pi)
    # orthonormal frame around the axis
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return cos_t * axis + sin_t * (np.cos(phi) * u + np.sin(phi) * v)


def _frame_from_z(z: np.ndarray, roll: float) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0])
    if abs(z[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return r @ rotation_z(roll)  # roll about the approach axis


def _task_candidate(cfg: GenConfig, obstacles, planar: bool,
                    rng: np.random.Generator) -> Pose:
    half_angle = np.deg2rad(cfg.cone_half_angle_deg)
    if obstacles:
        weights = np.array([sum(f[2] for f in _box_faces(b, planar))
                            for b in obstacles])
        box = obstacles[int(rng.choice(len(obstacles),
                                       p=weights / weights.sum()))]
        point, normal = _sample_surface_point(box, planar, rng)
        pos = point + cfg.surface_offset * normal
        inward = -normal
        if planar:
            heading = np.arctan2(inward[1], inward[0]) \
                + rng.uniform(-half_angle, half_angle)
            return planar_pose(pos[0], pos[1], float(heading))
        approach = _cone_direction(inward, half_angle, rng)
        return Pose(pos, _frame_from_z(approach,
                                       float(rng.uniform(0, 2 * np.pi))))
    region = cfg.task_region or _default_region(cfg, cfg.model())
    pos = _uniform_in_region(region, rng)
    if planar:
        return planar_pose(pos[0], pos[1],
                           float(rng.uniform(0.0, 2.0 * np.pi)))
    z = _cone_direction(np.array([0.0, 0.0, 1.0]), np.pi, rng)
    return Pose(pos, _frame_from_z(z, float(rng.uniform(0, 2 * np.pi))))


def task_feasible_for(models: list[RobotModel], task: Pose, obstacles,
                      margin: float, rng: np.random.Generator,
                      restarts: int = 10) -> int | None:
    """Index of a robot with a collision-free IK solution, else None.

    The IK configuration itself is checked and thrown away.
    """
    order = rng.permutation(len(models))
    for i in order:
        model = models[int(i)]
        q = solve_ik(model, task, model.home, rng=rng, restarts=restarts)
        if q is None:
            continue
        _, links = forward_kinematics(model, q)
        report = scene_collision_query([links], [model], obstacles, margin)
        if not report.pairs:
            return int(i)
    return None


def sample_tasks(cfg: GenConfig, models: list[RobotModel], obstacles,
                 rng: np.random.Generator) -> list[Pose]:
    planar = models[0].planar
    tasks = []
    budget = cfg.max_attempts * max(1, cfg.n_tasks)
    attempts = 0
    while len(tasks) < cfg.n_tasks:
        if attempts >= budget:
            raise GenerationError(
                f"sampled {attempts} candidates but only {len(tasks)} of "
                f"{cfg.n_tasks} tasks were feasible")
        attempts += 1
        task = _task_candidate(cfg, obstacles, planar, rng)
        if task_feasible_for(models, task, obstacles, cfg.margin, rng,
                             cfg.ik_restarts) is not None:
            tasks.append(task)
    return tasks


def generate_scene(cfg: GenConfig, rng: np.random.Generator) -> Scene:
    models = sample_robot_placements(cfg, rng)
    obstacles = sample_obstacles(cfg, models, rng)
    tasks = sample_tasks(cfg, models, obstacles, rng)
    return Scene(models, obstacles, tasks, timeout=cfg.timeout,
                 margin=cfg.margin)
