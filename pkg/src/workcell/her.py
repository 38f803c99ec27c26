"""Hindsight relabeling of failed episodes.

A failed episode is replayed as an imaginary one in which some of the
unsolved tasks sit exactly on poses the robot tips actually reached.
Motion is untouched; task poses, solved flags, scores, and rewards are
recomputed through the environment's own reward arithmetic, and the
episode is truncated if everything becomes solved.  Dwell features keep
their recorded values: the imaginary episode pretends the tasks were
elsewhere, not that the robots would have paused for them.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .env import ANG_TOL, POS_TOL, compute_score, pose_distance
from .episodes import EpisodeRecord
from .scenegraph import build_graph


def her_relabel(record: EpisodeRecord, rng: np.random.Generator,
                p_task: float = 0.5) -> EpisodeRecord | None:
    """One imaginary episode for a failed one, or None if not applicable."""
    if record.length == 0:
        return None
    final_solved = record.states[-1].solved
    unsolved = np.flatnonzero(~final_solved)
    if unsolved.size == 0:
        return None
    env = record.env
    n_robots = len(env.scene.models)

    chosen = [int(t) for t in unsolved if rng.random() < p_task]

    # (step, robot) pairs where the robot was free to move; its recorded tip
    # at the end of that step becomes an achieved pose a task can move to
    eligible = [(k, r) for k in range(record.length) for r in range(n_robots)
                if record.states[k].dwell_steps[r] == 0]
    if not eligible:
        chosen = []
    new_poses = [p.copy() for p in record.states[0].task_poses]
    if chosen:
        take = min(len(chosen), len(eligible))
        chosen = chosen[:take]
        picks = rng.choice(len(eligible), size=take, replace=False)
        for task, pick in zip(chosen, picks):
            k, r = eligible[int(pick)]
            new_poses[task] = record.states[k + 1].tips[r].copy()

    # replay the recorded motion against the relabeled tasks
    n_tasks = len(new_poses)
    solved = np.zeros(n_tasks, dtype=bool)
    new_states = [replace(record.states[0],
                          task_poses=new_poses, solved=solved.copy())]
    new_graphs = [build_graph(new_states[0], env.scene, env.dt, rng)]
    new_results = []
    for k in range(record.length):
        orig_res = record.results[k]
        prev_solved = solved.copy()
        for i in range(n_robots):
            if record.states[k].dwell_steps[i] > 0:
                continue
            tip = record.states[k + 1].tips[i]
            best, best_d = -1, np.inf
            for t in range(n_tasks):
                if solved[t]:
                    continue
                dp, da = pose_distance(tip, new_poses[t])
                if dp <= POS_TOL and da <= ANG_TOL and dp < best_d:
                    best, best_d = t, dp
            if best >= 0:
                solved[best] = True
        score = compute_score(solved)
        r_score = score - compute_score(prev_solved)
        r_collision = -env.collision_coef * len(orig_res.blocked)
        r_optional = 0.0
        if env.accel_penalty > 0.0 or env.home_reward > 0.0:
            r_optional = env.optional_reward_terms(
                record.states[k], record.states[k + 1].qs,
                record.states[k + 1].vs, score)
        reward = r_score + r_collision + r_optional

        all_solved = bool(np.all(solved))
        terminal = orig_res.terminal or (all_solved
                                         and env.terminate_on_all_solved)
        reason = ("all-solved" if all_solved else orig_res.reason) \
            if terminal else None

        st = replace(record.states[k + 1], task_poses=new_poses,
                     solved=solved.copy())
        new_states.append(st)
        new_graphs.append(build_graph(st, env.scene, env.dt, rng))
        new_results.append(replace(
            orig_res, state=st, reward=reward, newly_solved=set(
                np.flatnonzero(solved & ~prev_solved).tolist()),
            terminal=terminal, reason=reason, score=score, r_score=r_score,
            r_collision=r_collision, r_optional=r_optional))
        if terminal:
            break

    return EpisodeRecord(env, new_states, new_graphs,
                         record.actions[:len(new_results)], new_results)
