"""Episode rollout, transition extraction, exploration noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Environment, StepResult, WorldState
from .gnn import BatchedGraphs, GnnParams, policy_forward, squash
from .scenegraph import SceneGraph, build_graph


@dataclass
class Transition:
    graph: SceneGraph
    action: np.ndarray            # (n_robots, dof) float32
    reward: float
    next_graph: SceneGraph
    terminal: bool


@dataclass
class EpisodeRecord:
    env: Environment
    states: list[WorldState]      # length T+1
    graphs: list[SceneGraph]      # length T+1
    actions: list[np.ndarray]     # length T, (n_robots, dof)
    results: list[StepResult]     # length T

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def final_score(self) -> float:
        return float(np.count_nonzero(self.states[-1].solved)) / len(
            self.states[-1].solved)

    @property
    def solved_all(self) -> bool:
        return bool(np.all(self.states[-1].solved))

    def total_blocked(self) -> int:
        return sum(len(r.blocked) for r in self.results)

    def to_transitions(self) -> list[Transition]:
        out = []
        for k in range(self.length):
            out.append(Transition(self.graphs[k], self.actions[k],
                                  self.results[k].reward, self.graphs[k + 1],
                                  self.results[k].terminal))
        return out


def exploration_sigma(step: int, sigma0: float, decay: float) -> float:
    return sigma0 * decay ** (step / 100_000.0)


def act_with_exploration(policy: GnnParams, graph: SceneGraph,
                         vel_limit: np.ndarray, sigma: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Squashed policy action plus clipped Gaussian exploration noise."""
    raw, _ = policy_forward(policy, BatchedGraphs.from_graphs([graph]))
    action = squash(raw, vel_limit)
    if sigma > 0.0:
        action = action + rng.normal(0.0, sigma, size=action.shape)
        action = np.clip(action, -vel_limit, vel_limit)
    return action


def rollout_episode(env: Environment, policy: GnnParams,
                    vel_limit: np.ndarray, rng: np.random.Generator,
                    sigma: float = 0.0, max_steps: int | None = None,
                    ) -> EpisodeRecord:
    """Run one episode to termination (or max_steps) under the policy.

    The rng drives both exploration noise and the per-step obstacle
    representation augmentation, so a seeded rollout is reproducible.
    """
    state = env.reset()
    graph = build_graph(state, env.scene, env.dt, rng)
    states = [state]
    graphs = [graph]
    actions: list[np.ndarray] = []
    results: list[StepResult] = []
    steps = 0
    while True:
        action = act_with_exploration(policy, graph, vel_limit, sigma, rng)
        res = env.step(state, action.ravel())
        state = res.state
        graph = build_graph(state, env.scene, env.dt, rng)
        states.append(state)
        graphs.append(graph)
        actions.append(action.astype(np.float32))
        results.append(res)
        steps += 1
        if res.terminal or (max_steps is not None and steps >= max_steps):
            return EpisodeRecord(env, states, graphs, actions, results)
