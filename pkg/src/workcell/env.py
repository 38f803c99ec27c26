"""Kinematic multi-robot environment.

Actions are commanded joint velocities for every joint of every robot.
Each step clamps them to velocity/acceleration limits, integrates for one
0.1 s tick, and refuses motions that would collide: any moving robot that
ends up in a flagged pair is put back where it was with zeroed velocities
("blocked").  Reaching a task pose freezes the solving robot for a dwell
period.  Reward is the change in the fraction of solved tasks minus a
penalty per blocked robot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .collision import ObstacleBox, scene_collision_query
from .kinematics import Pose, RobotModel, forward_kinematics, pose_distance

POS_TOL = 0.025                      # meters
ANG_TOL = np.deg2rad(15.0)           # radians
DEFAULT_DT = 0.1                     # seconds per step
DEFAULT_DWELL = 0.5                  # seconds frozen at a solved task
DEFAULT_COLLISION_COEF = 15.0


@dataclass
class Scene:
    """Static description of one workcell episode."""

    models: list[RobotModel]         # base poses already applied
    obstacles: list[ObstacleBox]
    tasks: list[Pose]
    timeout: float = 30.0
    margin: float = 0.0

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("a scene needs at least one task")
        if not self.models:
            raise ValueError("a scene needs at least one robot")


@dataclass
class WorldState:
    qs: list[np.ndarray]
    vs: list[np.ndarray]
    dwell_steps: np.ndarray          # int, per robot
    task_poses: list[Pose]
    solved: np.ndarray               # bool, per task
    time: float
    start_qs: list[np.ndarray]
    tips: list[Pose]                 # cached, consistent with qs
    links: list[list[Pose]]

    def copy_shallow(self) -> "WorldState":
        return replace(self)


@dataclass
class StepResult:
    state: WorldState
    reward: float
    blocked: set                     # robot indices held back this step
    newly_solved: set                # task indices
    terminal: bool
    reason: str | None               # "all-solved" | "timeout" | None
    score: float
    r_score: float = 0.0
    r_collision: float = 0.0
    r_optional: float = 0.0
    solver_of: dict = field(default_factory=dict)   # task -> robot


def clamp_action(model: RobotModel, prev_v: np.ndarray, cmd_v: np.ndarray,
                 dt: float) -> np.ndarray:
    """Velocity limit first, then acceleration limit relative to prev_v."""
    v = np.clip(cmd_v, -model.vel_limit, model.vel_limit)
    dv = np.clip(v - prev_v, -model.acc_limit * dt, model.acc_limit * dt)
    return prev_v + dv


def check_task_solved(tip: Pose, task: Pose,
                      pos_tol: float = POS_TOL, ang_tol: float = ANG_TOL) -> bool:
    dp, da = pose_distance(tip, task)
    return dp <= pos_tol and da <= ang_tol


def compute_score(solved: np.ndarray) -> float:
    return float(np.count_nonzero(solved)) / float(len(solved))


class Environment:
    def __init__(self, scene: Scene, dt: float = DEFAULT_DT,
                 dwell_time: float = DEFAULT_DWELL,
                 collision_coef: float = DEFAULT_COLLISION_COEF,
                 accel_penalty: float = 0.0, home_reward: float = 0.0,
                 terminate_on_all_solved: bool = True):
        self.scene = scene
        self.dt = dt
        self.dwell_ticks = int(round(dwell_time / dt))
        self.collision_coef = collision_coef
        self.accel_penalty = accel_penalty
        self.home_reward = home_reward
        self.terminate_on_all_solved = terminate_on_all_solved

    @property
    def n_robots(self) -> int:
        return len(self.scene.models)

    @property
    def n_tasks(self) -> int:
        return len(self.scene.tasks)

    @property
    def action_size(self) -> int:
        return sum(m.dof for m in self.scene.models)

    def reset(self, qs: list[np.ndarray] | None = None) -> WorldState:
        models = self.scene.models
        if qs is None:
            qs = [m.home.copy() for m in models]
        else:
            qs = [np.asarray(q, dtype=float).copy() for q in qs]
        tips, links = [], []
        for m, q in zip(models, qs):
            tip, lp = forward_kinematics(m, q)
            tips.append(tip)
            links.append(lp)
        return WorldState(
            qs=qs,
            vs=[np.zeros(m.dof) for m in models],
            dwell_steps=np.zeros(len(models), dtype=int),
            task_poses=[p.copy() for p in self.scene.tasks],
            solved=np.zeros(len(self.scene.tasks), dtype=bool),
            time=0.0,
            start_qs=[q.copy() for q in qs],
            tips=tips,
            links=links,
        )

    def split_action(self, action: np.ndarray) -> list[np.ndarray]:
        action = np.asarray(action, dtype=float).ravel()
        if action.shape[0] != self.action_size:
            raise ValueError(f"action has {action.shape[0]} entries, "
                             f"scene needs {self.action_size}")
        if not np.all(np.isfinite(action)):
            raise ValueError("action contains non-finite values")
        out = []
        i = 0
        for m in self.scene.models:
            out.append(action[i:i + m.dof])
            i += m.dof
        return out

    def step(self, state: WorldState, action: np.ndarray) -> StepResult:
        if state.time >= self.scene.timeout - 1e-9:
            raise RuntimeError("step() called on a terminal state (timeout)")
        if self.terminate_on_all_solved and bool(np.all(state.solved)):
            raise RuntimeError("step() called on a terminal state (all solved)")
        models = self.scene.models
        n = len(models)
        per_robot = self.split_action(action)
        frozen = state.dwell_steps > 0

        new_vs = []
        for i, m in enumerate(models):
            if frozen[i]:
                new_vs.append(np.zeros(m.dof))
            else:
                new_vs.append(clamp_action(m, state.vs[i], per_robot[i], self.dt))

        new_qs = []
        moved = []
        for i, m in enumerate(models):
            if frozen[i]:
                new_qs.append(state.qs[i].copy())
                moved.append(False)
            else:
                q = np.clip(state.qs[i] + new_vs[i] * self.dt, m.lo, m.hi)
                # position limits may shorten the move; keep v consistent
                new_vs[i] = (q - state.qs[i]) / self.dt
                new_qs.append(q)
                moved.append(bool(np.any(q != state.qs[i])))

        tips = list(state.tips)
        links = list(state.links)
        for i, m in enumerate(models):
            if moved[i]:
                tips[i], links[i] = forward_kinematics(m, new_qs[i])

        # revert colliding movers to their previous configuration until the
        # combined configuration is clean (at most n passes)
        blocked: set = set()
        for _ in range(n + 1):
            report = scene_collision_query(links, models, self.scene.obstacles,
                                           self.scene.margin)
            offenders = {r for r in report.colliding
                         if moved[r] and r not in blocked}
            if not offenders:
                break
            for r in offenders:
                blocked.add(r)
                new_qs[r] = state.qs[r].copy()
                new_vs[r] = np.zeros(models[r].dof)
                tips[r] = state.tips[r]
                links[r] = state.links[r]

        # task solving: nearest unsolved task within tolerance, one task per
        # robot per step, lower robot index wins ties for a task
        solved = state.solved.copy()
        newly: set = set()
        solver_of: dict = {}
        new_dwell = np.maximum(state.dwell_steps - 1, 0)
        for i in range(n):
            if frozen[i]:
                continue
            best_task = -1
            best_dist = np.inf
            for t, task in enumerate(state.task_poses):
                if solved[t]:
                    continue
                dp, da = pose_distance(tips[i], task)
                if dp <= POS_TOL and da <= ANG_TOL and dp < best_dist:
                    best_dist = dp
                    best_task = t
            if best_task >= 0:
                solved[best_task] = True
                newly.add(best_task)
                solver_of[best_task] = i
                new_dwell[i] = self.dwell_ticks
                new_vs[i] = np.zeros(models[i].dof)

        prev_score = compute_score(state.solved)
        score = compute_score(solved)
        r_score = score - prev_score
        r_collision = -self.collision_coef * len(blocked)
        r_optional = 0.0
        if self.accel_penalty > 0.0 or self.home_reward > 0.0:
            r_optional = self.optional_reward_terms(state, new_qs, new_vs, score)
        reward = r_score + r_collision + r_optional

        new_time = state.time + self.dt
        all_solved = bool(np.all(solved))
        terminal = False
        reason = None
        if all_solved and self.terminate_on_all_solved:
            terminal = True
            reason = "all-solved"
        elif new_time >= self.scene.timeout - 1e-9:
            terminal = True
            reason = "timeout"

        next_state = WorldState(
            qs=new_qs, vs=new_vs, dwell_steps=new_dwell,
            task_poses=state.task_poses, solved=solved, time=new_time,
            start_qs=state.start_qs, tips=tips, links=links,
        )
        return StepResult(next_state, reward, blocked, newly, terminal, reason,
                          score, r_score, r_collision, r_optional, solver_of)

    def optional_reward_terms(self, state: WorldState, new_qs, new_vs,
                              score: float) -> float:
        """Squared-acceleration penalty plus the return-home pull.

        The home term activates only once every task is solved.
        """
        total = 0.0
        if self.accel_penalty > 0.0:
            acc = 0.0
            for v_new, v_old in zip(new_vs, state.vs):
                dv = (v_new - v_old) / self.dt
                acc += float(dv @ dv)
            total -= self.accel_penalty * acc
        if self.home_reward > 0.0 and score >= 1.0:
            dist = 0.0
            for q, q0 in zip(new_qs, state.start_qs):
                dist += float(np.linalg.norm(q - q0))
            total -= self.home_reward * dist
        return total

    def dwell_seconds(self, state: WorldState) -> np.ndarray:
        return state.dwell_steps.astype(float) * self.dt
