"""Observation graphs: typed nodes, directed typed edges, global features.

Topology is fixed by the counts: bi-directional edges between every pair
of robots, one edge from every task to every robot, one edge from every
obstacle to every robot.  Tasks and obstacles receive no edges.

Feature layout (block-diagonal, widths fixed by robot DoF):
  node  = [q (dof) | v (dof) | dwell (1) | task solved (1)]
  edge  = [robot->robot rel pose (9) | task->robot rel pose (9) |
           obstacle->robot rel centroid (3) + span-scaled basis (9)]
  global = [episode time / timeout, score]

Relative poses are expressed in the receiving robot's tip frame and
encoded as 3D translation plus the 6D (first two columns) rotation code.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .collision import ObstacleBox
from .env import Scene, WorldState, compute_score
from .kinematics import Pose, rotation_to_6d

RR_SLICE = slice(0, 9)
TR_SLICE = slice(9, 18)
OR_SLICE = slice(18, 30)
EDGE_WIDTH = 30
GLOBAL_WIDTH = 2

_BOX_SYMMETRY = [
    np.diag([1.0, 1.0, 1.0]),
    np.diag([1.0, -1.0, -1.0]),
    np.diag([-1.0, 1.0, -1.0]),
    np.diag([-1.0, -1.0, 1.0]),
]


def node_width(dof: int) -> int:
    return 2 * dof + 2


@dataclass(frozen=True)
class GraphTopology:
    n_robots: int
    n_tasks: int
    n_obstacles: int
    dof: int
    senders: np.ndarray
    receivers: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_robots + self.n_tasks + self.n_obstacles

    @property
    def n_edges(self) -> int:
        return len(self.senders)

    def task_node(self, t: int) -> int:
        return self.n_robots + t

    def obstacle_node(self, o: int) -> int:
        return self.n_robots + self.n_tasks + o


@lru_cache(maxsize=256)
def make_topology(n_robots: int, n_tasks: int, n_obstacles: int,
                  dof: int) -> GraphTopology:
    senders = []
    receivers = []
    for s in range(n_robots):
        for r in range(n_robots):
            if s != r:
                senders.append(s)
                receivers.append(r)
    for t in range(n_tasks):
        for r in range(n_robots):
            senders.append(n_robots + t)
            receivers.append(r)
    for o in range(n_obstacles):
        for r in range(n_robots):
            senders.append(n_robots + n_tasks + o)
            receivers.append(r)
    return GraphTopology(n_robots, n_tasks, n_obstacles, dof,
                         np.asarray(senders, dtype=np.int64),
                         np.asarray(receivers, dtype=np.int64))


@dataclass
class SceneGraph:
    topology: GraphTopology
    nodes: np.ndarray        # (n_nodes, node_width(dof)) float32
    edges: np.ndarray        # (n_edges, EDGE_WIDTH) float32
    globals_: np.ndarray     # (GLOBAL_WIDTH,) float32

    def to_text(self) -> str:
        top = self.topology
        lines = [f"nodes robots={top.n_robots} tasks={top.n_tasks} "
                 f"obstacles={top.n_obstacles} dof={top.dof}"]
        for i, row in enumerate(self.nodes):
            lines.append(f"node {i}: " + " ".join(f"{x:.6g}" for x in row))
        for k in range(top.n_edges):
            row = self.edges[k]
            lines.append(f"edge {top.senders[k]}->{top.receivers[k]}: "
                         + " ".join(f"{x:.6g}" for x in row))
        lines.append("global: " + " ".join(f"{x:.6g}" for x in self.globals_))
        return "\n".join(lines)


def relative_pose_features(reference_tip: Pose, other: Pose) -> np.ndarray:
    """Pose of `other` in the tip frame: translation (3) + 6D rotation."""
    rel_t = reference_tip.r.T @ (other.t - reference_tip.t)
    rel_r = reference_tip.r.T @ other.r
    return np.concatenate([rel_t, rotation_to_6d(rel_r)])


def obstacle_edge_features(tip: Pose, box: ObstacleBox) -> np.ndarray:
    """Relative centroid (3) + relative basis columns scaled by full spans (9)."""
    rel_t = tip.r.T @ (box.center - tip.t)
    rel_r = tip.r.T @ box.rot
    scaled = rel_r * (2.0 * box.half)[None, :]
    return np.concatenate([rel_t, scaled.T.ravel()])


def randomize_box_representation(box: ObstacleBox,
                                 rng: np.random.Generator) -> ObstacleBox:
    """One of the four rotations that map the cuboid onto itself."""
    k = int(rng.integers(0, 4))
    return ObstacleBox(box.center, box.rot @ _BOX_SYMMETRY[k], box.half)


def build_graph(state: WorldState, scene: Scene, dt: float = 0.1,
                rng: np.random.Generator | None = None) -> SceneGraph:
    """Observation graph for one state.

    With an rng, each obstacle's representation is re-randomized (the
    per-step augmentation); without one the canonical representation is
    used.
    """
    models = scene.models
    n_r = len(models)
    n_t = len(state.task_poses)
    n_o = len(scene.obstacles)
    dof = models[0].dof
    top = make_topology(n_r, n_t, n_o, dof)

    nw = node_width(dof)
    nodes = np.zeros((top.n_nodes, nw), dtype=np.float32)
    for i in range(n_r):
        nodes[i, :dof] = state.qs[i]
        nodes[i, dof:2 * dof] = state.vs[i]
        nodes[i, 2 * dof] = state.dwell_steps[i] * dt
    for t in range(n_t):
        nodes[top.task_node(t), nw - 1] = 1.0 if state.solved[t] else 0.0

    boxes = scene.obstacles
    if rng is not None and n_o:
        boxes = [randomize_box_representation(b, rng) for b in boxes]

    edges = np.zeros((top.n_edges, EDGE_WIDTH), dtype=np.float32)
    k = 0
    for s in range(n_r):
        for r in range(n_r):
            if s != r:
                edges[k, RR_SLICE] = relative_pose_features(
                    state.tips[r], models[s].base)
                k += 1
    for t in range(n_t):
        for r in range(n_r):
            edges[k, TR_SLICE] = relative_pose_features(
                state.tips[r], state.task_poses[t])
            k += 1
    for o in range(n_o):
        for r in range(n_r):
            edges[k, OR_SLICE] = obstacle_edge_features(state.tips[r], boxes[o])
            k += 1

    score = compute_score(state.solved)
    globals_ = np.array([state.time / scene.timeout, score], dtype=np.float32)
    return SceneGraph(top, nodes, edges, globals_)
