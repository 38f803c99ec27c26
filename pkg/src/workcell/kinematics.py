"""Serial-chain kinematics: poses, forward kinematics, Jacobians, IK.

Robots are chains of revolute joints.  Each joint is a fixed rigid offset
from its parent followed by a rotation about a fixed axis; a tool
transform hangs off the last link.  Collision geometry is a list of
capsules attached to link frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np


# ---------------------------------------------------------------------------
# poses


@dataclass
class Pose:
    """Rigid transform: rotation matrix `r` (3x3) and translation `t` (3,)."""

    t: np.ndarray
    r: np.ndarray

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.r @ other.t + self.t, self.r @ other.r)

    def inverse(self) -> "Pose":
        rt = self.r.T
        return Pose(-(rt @ self.t), rt)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.r @ p + self.t

    def copy(self) -> "Pose":
        return Pose(self.t.copy(), self.r.copy())

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(np.array([x, y, z], dtype=float), np.eye(3))


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues' formula for a unit axis."""
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    one_c = 1.0 - c
    return np.array([
        [c + x * x * one_c, x * y * one_c - z * s, x * z * one_c + y * s],
        [y * x * one_c + z * s, c + y * y * one_c, y * z * one_c - x * s],
        [z * x * one_c - y * s, z * y * one_c + x * s, c + z * z * one_c],
    ])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_vector(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    cos_a = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-10:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        m = 0.5 * (r + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # fix signs using the largest component
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for j in range(3):
                if j != k and m[k, j] < 0:
                    axis[j] = -axis[j]
        axis /= np.linalg.norm(axis)
        return axis * angle
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return v * (angle / (2.0 * np.sin(angle)))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translational meters, geodesic rotation angle in radians)."""
    dt = float(np.linalg.norm(a.t - b.t))
    cos_a = np.clip((np.trace(a.r.T @ b.r) - 1.0) * 0.5, -1.0, 1.0)
    return dt, float(np.arccos(cos_a))


def rotation_to_6d(r: np.ndarray) -> np.ndarray:
    """Continuous 6D rotation encoding: the first two columns of R."""
    return np.concatenate([r[:, 0], r[:, 1]])


def rotation_from_6d(v: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two encoded columns back into a rotation matrix."""
    a = np.asarray(v[:3], dtype=float)
    b = np.asarray(v[3:6], dtype=float)
    c0 = a / np.linalg.norm(a)
    b = b - np.dot(c0, b) * c0
    c1 = b / np.linalg.norm(b)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=1)


# ---------------------------------------------------------------------------
# robot model


@dataclass
class Joint:
    axis: np.ndarray   # unit vector in the joint's own frame
    origin: Pose       # fixed transform from the parent frame


@dataclass
class LinkCapsule:
    link: int          # joint index whose frame carries this capsule
    p0: np.ndarray     # segment endpoints in the link frame
    p1: np.ndarray
    radius: float


@dataclass
class RobotModel:
    name: str
    joints: list[Joint]
    lo: np.ndarray
    hi: np.ndarray
    vel_limit: np.ndarray     # rad/s
    acc_limit: np.ndarray     # rad/s^2
    capsules: list[LinkCapsule]
    base: Pose
    tool: Pose
    home: np.ndarray
    planar: bool = False      # all motion in the z=0 plane

    @property
    def dof(self) -> int:
        return len(self.joints)

    def with_base(self, base: Pose) -> "RobotModel":
        return replace(self, base=base)

    def reach(self) -> float:
        """Upper bound on tip distance from the base."""
        total = 0.0
        for j in self.joints:
            total += float(np.linalg.norm(j.origin.t))
        return total + float(np.linalg.norm(self.tool.t))


def forward_kinematics(model: RobotModel, q: np.ndarray) -> tuple[Pose, list[Pose]]:
    """Tip pose and the per-link frames (for collision placement)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.dof,):
        raise ValueError(f"expected {model.dof} joint values, got {q.shape}")
    t = model.base.t
    r = model.base.r
    links = []
    for joint, qi in zip(model.joints, q):
        t = r @ joint.origin.t + t
        r = r @ joint.origin.r
        r = r @ rotation_about_axis(joint.axis, qi)
        links.append(Pose(t, r))
    tip = links[-1].compose(model.tool)
    return tip, links


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian at the tip, rows (linear; angular), world frame."""
    q = np.asarray(q, dtype=float)
    t = model.base.t
    r = model.base.r
    axes = []
    points = []
    for joint, qi in zip(model.joints, q):
        t = r @ joint.origin.t + t
        r = r @ joint.origin.r
        axes.append(r @ joint.axis)
        points.append(t)
        r = r @ rotation_about_axis(joint.axis, qi)
    tip_t = r @ model.tool.t + t
    j = np.zeros((6, model.dof))
    for i in range(model.dof):
        j[:3, i] = np.cross(axes[i], tip_t - points[i])
        j[3:, i] = axes[i]
    return j


def solve_ik(model: RobotModel, target: Pose, seed: np.ndarray,
             tol_pos: float = 1e-4, tol_ang: float = 1e-3,
             max_iters: int = 200, damping: float = 1e-2,
             step_clamp: float = 0.2, restarts: int = 0,
             rng: np.random.Generator | None = None) -> np.ndarray | None:
    """Damped least squares with optional random restarts.

    Returns joint positions within limits that reach `target` to the given
    tolerances, or None.  Restarts draw fresh seeds uniformly inside the
    joint limits and require `rng`.
    """
    if restarts > 0 and rng is None:
        raise ValueError("restarts need an rng")
    lam2 = damping * damping
    eye6 = np.eye(6)

    def attempt(q0: np.ndarray) -> np.ndarray | None:
        q = np.clip(np.asarray(q0, dtype=float), model.lo, model.hi)
        for _ in range(max_iters + 1):
            tip, _ = forward_kinematics(model, q)
            dp, da = pose_distance(tip, target)
            if dp <= tol_pos and da <= tol_ang:
                return q
            err = np.empty(6)
            err[:3] = target.t - tip.t
            err[3:] = rotation_vector(target.r @ tip.r.T)
            j = jacobian(model, q)
            dq = j.T @ np.linalg.solve(j @ j.T + lam2 * eye6, err)
            np.clip(dq, -step_clamp, step_clamp, out=dq)
            q = np.clip(q + dq, model.lo, model.hi)
        return None

    result = attempt(seed)
    if result is not None:
        return result
    for _ in range(restarts):
        q0 = rng.uniform(model.lo, model.hi)
        result = attempt(q0)
        if result is not None:
            return result
    return None


# ---------------------------------------------------------------------------
# built-in models

# Planar arms operate in the z=0 plane.  Their tool frame is chosen so the
# tool z-axis points along the last link and the tool x-axis is world z;
# planar task frames built by `planar_pose` use the same convention, so a
# planar arm can match them exactly.
_PLANAR_TOOL_R = np.array([[0.0, 0.0, 1.0],
                           [0.0, -1.0, 0.0],
                           [1.0, 0.0, 0.0]])


def planar_pose(x: float, y: float, heading: float) -> Pose:
    """In-plane pose whose z-axis points along `heading` in the xy plane."""
    z = np.array([np.cos(heading), np.sin(heading), 0.0])
    xc = np.array([0.0, 0.0, 1.0])
    yc = np.cross(z, xc)
    return Pose(np.array([x, y, 0.0]), np.stack([xc, yc, z], axis=1))


def planar3() -> RobotModel:
    """3-link planar arm, the desk-scale training default."""
    z = np.array([0.0, 0.0, 1.0])
    lengths = [0.40, 0.32, 0.25]
    joints = [
        Joint(z, Pose.identity()),
        Joint(z, Pose.from_translation(lengths[0], 0, 0)),
        Joint(z, Pose.from_translation(lengths[1], 0, 0)),
    ]
    capsules = [
        LinkCapsule(0, np.zeros(3), np.array([lengths[0], 0, 0]), 0.045),
        LinkCapsule(1, np.zeros(3), np.array([lengths[1], 0, 0]), 0.040),
        LinkCapsule(2, np.zeros(3), np.array([lengths[2], 0, 0]), 0.035),
    ]
    return RobotModel(
        name="planar3",
        joints=joints,
        lo=np.array([-np.pi, -2.8, -2.8]),
        hi=np.array([np.pi, 2.8, 2.8]),
        vel_limit=np.full(3, 1.5),
        acc_limit=np.full(3, 10.0),
        capsules=capsules,
        base=Pose.identity(),
        tool=Pose(np.array([lengths[2], 0.0, 0.0]), _PLANAR_TOOL_R.copy()),
        home=np.array([0.0, 2.4, -2.2]),
        planar=True,
    )


def spatial6() -> RobotModel:
    """6-DoF articulated arm with links extending along +z at q=0."""
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    joints = [
        Joint(z, Pose.from_translation(0, 0, 0.20)),
        Joint(y, Pose.from_translation(0, 0, 0.10)),
        Joint(y, Pose.from_translation(0, 0, 0.35)),
        Joint(z, Pose.from_translation(0, 0, 0.25)),
        Joint(y, Pose.from_translation(0, 0, 0.10)),
        Joint(x, Pose.from_translation(0, 0, 0.08)),
    ]
    capsules = [
        LinkCapsule(0, np.array([0, 0, -0.1]), np.array([0, 0, 0.1]), 0.07),
        LinkCapsule(2, np.zeros(3), np.array([0, 0, 0.25]), 0.06),
        LinkCapsule(3, np.zeros(3), np.array([0, 0, 0.10]), 0.05),
        LinkCapsule(5, np.zeros(3), np.array([0, 0, 0.10]), 0.04),
    ]
    return RobotModel(
        name="spatial6",
        joints=joints,
        lo=np.array([-2.9, -2.0, -2.4, -2.9, -2.0, -2.9]),
        hi=np.array([2.9, 2.0, 2.4, 2.9, 2.0, 2.9]),
        vel_limit=np.full(6, 2.0),
        acc_limit=np.full(6, 10.0),
        capsules=capsules,
        base=Pose.identity(),
        tool=Pose.from_translation(0, 0, 0.10),
        home=np.array([0.0, 0.5, 0.8, 0.0, 0.7, 0.0]),
    )


def franka7() -> RobotModel:
    """Simplified 7-DoF arm with Franka-like joint limits."""
    y = np.array([0.0, 1.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    joints = [
        Joint(z, Pose.from_translation(0, 0, 0.333)),
        Joint(y, Pose.identity()),
        Joint(z, Pose.from_translation(0, 0, 0.316)),
        Joint(y, Pose.identity()),
        Joint(z, Pose.from_translation(0, 0, 0.384)),
        Joint(y, Pose.identity()),
        Joint(z, Pose.from_translation(0, 0, 0.088)),
    ]
    capsules = [
        LinkCapsule(0, np.array([0, 0, -0.25]), np.zeros(3), 0.08),
        LinkCapsule(2, np.array([0, 0, -0.22]), np.zeros(3), 0.07),
        LinkCapsule(4, np.array([0, 0, -0.28]), np.zeros(3), 0.06),
        LinkCapsule(6, np.array([0, 0, -0.06]), np.array([0, 0, 0.05]), 0.05),
    ]
    return RobotModel(
        name="franka7",
        joints=joints,
        lo=np.array([-2.8, -1.7, -2.8, -2.8, -2.8, -1.7, -2.8]),
        hi=np.array([2.8, 1.7, 2.8, 2.8, 2.8, 1.7, 2.8]),
        vel_limit=np.full(7, 2.0),
        acc_limit=np.full(7, 10.0),
        capsules=capsules,
        base=Pose.identity(),
        tool=Pose.from_translation(0, 0, 0.107),
        home=np.array([0.0, 0.4, 0.0, -1.2, 0.0, 1.2, 0.0]),
    )


_BUILTINS = {"planar3": planar3, "spatial6": spatial6, "franka7": franka7}


def builtin_model(name: str) -> RobotModel:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown robot model {name!r}; "
                       f"built-ins: {sorted(_BUILTINS)}") from None


# ---------------------------------------------------------------------------
# model files


def pose_to_dict(p: Pose) -> dict:
    return {"t": p.t.tolist(), "r": p.r.tolist()}


def pose_from_dict(d: dict) -> Pose:
    return Pose(np.asarray(d["t"], dtype=float), np.asarray(d["r"], dtype=float))


def model_to_dict(m: RobotModel) -> dict:
    return {
        "name": m.name,
        "joints": [{"axis": j.axis.tolist(), "origin": pose_to_dict(j.origin)}
                   for j in m.joints],
        "lo": m.lo.tolist(),
        "hi": m.hi.tolist(),
        "vel_limit": m.vel_limit.tolist(),
        "acc_limit": m.acc_limit.tolist(),
        "capsules": [{"link": c.link, "p0": c.p0.tolist(), "p1": c.p1.tolist(),
                      "radius": c.radius} for c in m.capsules],
        "base": pose_to_dict(m.base),
        "tool": pose_to_dict(m.tool),
        "home": m.home.tolist(),
        "planar": m.planar,
    }


def model_from_dict(d: dict) -> RobotModel:
    return RobotModel(
        name=d["name"],
        joints=[Joint(np.asarray(j["axis"], dtype=float),
                      pose_from_dict(j["origin"])) for j in d["joints"]],
        lo=np.asarray(d["lo"], dtype=float),
        hi=np.asarray(d["hi"], dtype=float),
        vel_limit=np.asarray(d["vel_limit"], dtype=float),
        acc_limit=np.asarray(d["acc_limit"], dtype=float),
        capsules=[LinkCapsule(c["link"], np.asarray(c["p0"], dtype=float),
                              np.asarray(c["p1"], dtype=float), c["radius"])
                  for c in d["capsules"]],
        base=pose_from_dict(d["base"]),
        tool=pose_from_dict(d["tool"]),
        home=np.asarray(d["home"], dtype=float),
        planar=bool(d.get("planar", False)),
    )


def save_robot_model(path, model: RobotModel) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, indent=1)


def load_robot_model(path) -> RobotModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
