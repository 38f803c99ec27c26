"""Distance queries between capsules (robot links) and oriented boxes.

Clearances are signed: negative means interpenetration.  The scene query
is a plain all-pairs sweep; scenes here are small enough that a broad
phase would only add risk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import Pose, RobotModel

# entity ids in reports: ("robot", robot_index, capsule_index) or
# ("obstacle", obstacle_index)
EntityId = tuple


@dataclass
class Capsule:
    """World-space capsule: segment p0-p1 swept by a sphere of `radius`."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float


@dataclass
class ObstacleBox:
    center: np.ndarray
    rot: np.ndarray     # columns are the box axes
    half: np.ndarray    # strictly positive half-extents

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Boolean membership for an (n, 3) array of world points."""
        local = (np.atleast_2d(points) - self.center) @ self.rot
        return np.all(np.abs(local) <= self.half + tol, axis=1)

    def volume(self) -> float:
        return float(np.prod(2.0 * self.half))

    def copy(self) -> "ObstacleBox":
        return ObstacleBox(self.center.copy(), self.rot.copy(), self.half.copy())


@dataclass
class CollisionReport:
    colliding: set            # robot indices in at least one flagged pair
    pairs: list               # (entity a, entity b, signed clearance)


def segment_segment_distance(p0, p1, q0, q1) -> float:
    """Closest distance between two segments (Ericson's clamped solver)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a <= 1e-18 and e <= 1e-18:
        return float(np.linalg.norm(r))
    if a <= 1e-18:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = float(d1 @ r)
        if e <= 1e-18:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-18 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    closest1 = p0 + s * d1
    closest2 = q0 + t * d2
    return float(np.linalg.norm(closest1 - closest2))


def capsule_capsule_clearance(a: Capsule, b: Capsule) -> float:
    return segment_segment_distance(a.p0, a.p1, b.p0, b.p1) - a.radius - b.radius


def _point_box_signed(p: np.ndarray, half: np.ndarray) -> float:
    """Signed distance to an origin-centered AABB for a local-frame point."""
    d = np.abs(p) - half
    if np.any(d > 0.0):
        return float(np.linalg.norm(np.maximum(d, 0.0)))
    return float(np.max(d))  # negative: -(depth to the nearest face)


def _golden_min(f, lo: float, hi: float, iters: int = 48) -> float:
    """Minimum of a unimodal scalar function on [lo, hi]."""
    phi = 0.6180339887498949
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = f(x2)
    xs = [a, x1, x2, b]
    return min(f(x) for x in xs)


def _clip_segment_to_box(p0, d, half) -> tuple[float, float] | None:
    """Parameter interval of segment p0 + t*d, t in [0,1], inside the slab box."""
    t0, t1 = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < 1e-15:
            if abs(p0[i]) > half[i]:
                return None
        else:
            ta = (-half[i] - p0[i]) / d[i]
            tb = (half[i] - p0[i]) / d[i]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 > t1:
                return None
    return t0, t1


def capsule_box_clearance(cap: Capsule, box: ObstacleBox) -> float:
    """min-over-segment signed distance to the box surface, minus the radius."""
    p0 = box.rot.T @ (cap.p0 - box.center)
    p1 = box.rot.T @ (cap.p1 - box.center)
    d = p1 - p0
    half = box.half
    inside = _clip_segment_to_box(p0, d, half)
    if inside is not None:
        # signed distance is convex on the intersected interval and positive
        # outside it, so the minimum (deepest penetration) lives inside
        t0, t1 = inside
        lo, hi = t0, t1
    else:
        # fully outside: distance(t) is convex on the whole segment
        lo, hi = 0.0, 1.0
    dist = _golden_min(lambda t: _point_box_signed(p0 + t * d, half), lo, hi)
    return dist - cap.radius


def world_capsules(model: RobotModel, link_poses: list[Pose]) -> list[Capsule]:
    caps = []
    for spec in model.capsules:
        pose = link_poses[spec.link]
        caps.append(Capsule(pose.transform_point(spec.p0),
                            pose.transform_point(spec.p1), spec.radius))
    return caps


def scene_collision_query(link_poses, models, obstacles, margin: float = 0.0,
                          ) -> CollisionReport:
    """All flagged pairs (clearance < margin) in one scene configuration.

    link_poses: per-robot list of link Poses from forward_kinematics.
    Self pairs on the same or adjacent links are skipped; everything else
    (inter-robot, non-adjacent self, capsule-box) is checked.
    """
    robots = [world_capsules(m, lp) for m, lp in zip(models, link_poses)]
    # enclosing spheres let provably-clear pairs skip the exact query
    centers = [[0.5 * (c.p0 + c.p1) for c in caps] for caps in robots]
    radii = [[0.5 * np.linalg.norm(c.p1 - c.p0) + c.radius for c in caps]
             for caps in robots]
    box_radii = [float(np.linalg.norm(b.half)) for b in obstacles]

    pairs = []
    colliding = set()

    def flag(id_a, id_b, clearance):
        pairs.append((id_a, id_b, clearance))
        for ent in (id_a, id_b):
            if ent[0] == "robot":
                colliding.add(ent[1])

    for i, caps_i in enumerate(robots):
        links_i = models[i].capsules
        # non-adjacent self pairs
        for a in range(len(caps_i)):
            for b in range(a + 1, len(caps_i)):
                if abs(links_i[a].link - links_i[b].link) <= 1:
                    continue
                c = capsule_capsule_clearance(caps_i[a], caps_i[b])
                if c < margin:
                    flag(("robot", i, a), ("robot", i, b), c)
        # other robots
        for j in range(i + 1, len(robots)):
            for a, cap_a in enumerate(caps_i):
                for b, cap_b in enumerate(robots[j]):
                    bound = (np.linalg.norm(centers[i][a] - centers[j][b])
                             - radii[i][a] - radii[j][b])
                    if bound >= margin:
                        continue
                    c = capsule_capsule_clearance(cap_a, cap_b)
                    if c < margin:
                        flag(("robot", i, a), ("robot", j, b), c)
        # obstacles
        for k, box in enumerate(obstacles):
            for a, cap_a in enumerate(caps_i):
                bound = (np.linalg.norm(centers[i][a] - box.center)
                         - radii[i][a] - box_radii[k])
                if bound >= margin:
                    continue
                c = capsule_box_clearance(cap_a, box)
                if c < margin:
                    flag(("robot", i, a), ("obstacle", k), c)

    return CollisionReport(colliding, pairs)
