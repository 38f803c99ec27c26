import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from workcell.collision import (
    Capsule, ObstacleBox, capsule_box_clearance, capsule_capsule_clearance,
    scene_collision_query, segment_segment_distance,
)
from workcell.kinematics import Pose, builtin_model, forward_kinematics


def sampled_point_segment(points, q0, q1):
    """Exact point-to-segment distance for an (n, 3) array of points."""
    d = q1 - q0
    denom = float(d @ d)
    if denom < 1e-18:
        return np.linalg.norm(points - q0, axis=1)
    t = np.clip((points - q0) @ d / denom, 0.0, 1.0)
    closest = q0 + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1)


def sampled_seg_seg(p0, p1, q0, q1, n=10_000):
    ts = np.linspace(0.0, 1.0, n)[:, None]
    pts = p0 + ts * (p1 - p0)
    return float(sampled_point_segment(pts, q0, q1).min())


def point_box_signed(points, box):
    local = (points - box.center) @ box.rot
    d = np.abs(local) - box.half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.max(d, axis=1)  # negative when inside
    return np.where(np.any(d > 0.0, axis=1), outside, inside)


def sampled_seg_box(p0, p1, box, n=10_000):
    ts = np.linspace(0.0, 1.0, n)[:, None]
    pts = p0 + ts * (p1 - p0)
    return float(point_box_signed(pts, box).min())


def test_parallel_unit_segments():
    a = Capsule(np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), 0.2)
    b = Capsule(np.array([0.0, 1, 0]), np.array([1.0, 1, 0]), 0.2)
    assert capsule_capsule_clearance(a, b) == pytest.approx(0.6)


def test_identical_capsules_interpenetrate_fully():
    a = Capsule(np.array([0.2, -0.1, 0.5]), np.array([0.9, 0.4, 0.5]), 0.15)
    assert capsule_capsule_clearance(a, a) == pytest.approx(-0.3)


def test_capsule_capsule_matches_sampling_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        p0, p1, q0, q1 = rng.uniform(-1, 1, size=(4, 3))
        ra, rb = rng.uniform(0.01, 0.3, size=2)
        got = capsule_capsule_clearance(Capsule(p0, p1, ra), Capsule(q0, q1, rb))
        ref = sampled_seg_seg(p0, p1, q0, q1) - ra - rb
        assert got == pytest.approx(ref, abs=1e-3)


def test_segment_distance_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p0, p1, q0, q1 = rng.uniform(-2, 2, size=(4, 3))
        d1 = segment_segment_distance(p0, p1, q0, q1)
        d2 = segment_segment_distance(q0, q1, p0, p1)
        assert abs(d1 - d2) <= 1e-12


def test_point_capsule_to_cube_face():
    box = ObstacleBox(np.zeros(3), np.eye(3), np.full(3, 0.5))
    p = np.array([1.5, 0.0, 0.0])
    cap = Capsule(p, p, 0.1)
    assert capsule_box_clearance(cap, box) == pytest.approx(0.9)


def test_segment_through_box_center_is_negative():
    box = ObstacleBox(np.zeros(3), np.eye(3), np.array([0.5, 0.4, 0.3]))
    cap = Capsule(np.array([-2.0, 0, 0]), np.array([2.0, 0, 0]), 0.05)
    c = capsule_box_clearance(cap, box)
    assert c < 0
    # deepest point is the center: depth = min half-extent
    assert c == pytest.approx(-0.3 - 0.05, abs=1e-6)


def test_capsule_box_matches_sampling_oracle():
    rng = np.random.default_rng(2)
    for _ in range(40):
        box = ObstacleBox(rng.uniform(-0.5, 0.5, size=3),
                          Rotation.random(random_state=rng).as_matrix(),
                          rng.uniform(0.1, 0.6, size=3))
        p0, p1 = rng.uniform(-1.5, 1.5, size=(2, 3))
        r = rng.uniform(0.01, 0.2)
        got = capsule_box_clearance(Capsule(p0, p1, r), box)
        ref = sampled_seg_box(p0, p1, box) - r
        assert got == pytest.approx(ref, abs=1e-3)


def test_box_argument_rotations_equivalent():
    # clearance must not depend on which equivalent frame describes the box
    rng = np.random.default_rng(3)
    for _ in range(20):
        rot = Rotation.random(random_state=rng).as_matrix()
        box = ObstacleBox(rng.normal(size=3), rot, rng.uniform(0.1, 0.5, size=3))
        flipped = ObstacleBox(box.center, rot @ np.diag([1.0, -1.0, -1.0]),
                              box.half)
        p0, p1 = rng.uniform(-1.5, 1.5, size=(2, 3))
        cap = Capsule(p0, p1, 0.05)
        assert capsule_box_clearance(cap, box) == pytest.approx(
            capsule_box_clearance(cap, flipped), abs=1e-9)


def _scene(rng, n_robots=2, n_boxes=3):
    models = []
    links = []
    for i in range(n_robots):
        m = builtin_model("planar3").with_base(
            Pose(np.array([1.2 * i, rng.uniform(-0.5, 0.5), 0.0]), np.eye(3)))
        q = rng.uniform(m.lo, m.hi)
        _, lp = forward_kinematics(m, q)
        models.append(m)
        links.append(lp)
    boxes = [ObstacleBox(np.append(rng.uniform(-0.5, 2.0, size=2), 0.0),
                         Rotation.random(random_state=rng).as_matrix(),
                         rng.uniform(0.05, 0.4, size=3))
             for _ in range(n_boxes)]
    return models, links, boxes


def brute_force_colliding_set(models, links, boxes, margin):
    """Independent pair enumeration over every capsule of every robot."""
    from workcell.collision import world_capsules
    caps = [world_capsules(m, lp) for m, lp in zip(models, links)]
    colliding = set()
    for i in range(len(models)):
        for a in range(len(caps[i])):
            for j in range(len(models)):
                for b in range(len(caps[j])):
                    if i == j:
                        if a >= b:
                            continue
                        la = models[i].capsules[a].link
                        lb = models[i].capsules[b].link
                        if abs(la - lb) <= 1:
                            continue
                    elif j < i:
                        continue
                    if capsule_capsule_clearance(caps[i][a], caps[j][b]) < margin:
                        colliding.add(i)
                        colliding.add(j)
            for k, box in enumerate(boxes):
                if capsule_box_clearance(caps[i][a], box) < margin:
                    colliding.add(i)
    return colliding


def test_single_far_robot_reports_nothing():
    m = builtin_model("planar3")
    q = m.home
    _, lp = forward_kinematics(m, q)
    report = scene_collision_query([lp], [m], [], margin=0.0)
    assert report.pairs == [] and report.colliding == set()


def test_coincident_robots_fully_collide():
    m1 = builtin_model("planar3")
    m2 = builtin_model("planar3")
    # folded so that link 3 crosses link 1: every link pair overlaps
    q = np.array([0.1, 2.8, 2.8])
    _, lp = forward_kinematics(m1, q)
    report = scene_collision_query([lp, lp], [m1, m2], [], margin=0.0)
    inter = [(a, b) for a, b, _ in report.pairs if a[1] != b[1]]
    assert len(inter) == len(m1.capsules) ** 2
    assert report.colliding == {0, 1}


def test_scene_query_matches_brute_force_oracle():
    rng = np.random.default_rng(4)
    for _ in range(25):
        models, links, boxes = _scene(rng)
        margin = float(rng.choice([0.0, 0.01, 0.05]))
        report = scene_collision_query(links, models, boxes, margin)
        assert report.colliding == brute_force_colliding_set(
            models, links, boxes, margin)
        # every reported pair really is below margin, each pair once
        seen = set()
        for a, b, c in report.pairs:
            assert c < margin
            key = (a, b)
            assert key not in seen and (b, a) not in seen
            seen.add(key)


def test_margin_monotonicity():
    rng = np.random.default_rng(5)
    models, links, boxes = _scene(rng, n_robots=3, n_boxes=4)
    small = scene_collision_query(links, models, boxes, 0.0)
    large = scene_collision_query(links, models, boxes, 0.05)
    small_pairs = {(a, b) for a, b, _ in small.pairs}
    large_pairs = {(a, b) for a, b, _ in large.pairs}
    assert small_pairs <= large_pairs
    assert small.colliding <= large.colliding
