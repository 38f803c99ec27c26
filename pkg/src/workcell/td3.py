"""Twin-critic deterministic policy gradient learner.

Differences from the textbook recipe, matching the training setup this
project targets: no delayed updates (policy, critics, and both target
sets move every learner step), separate Polyak rates for the policy and
critic targets, and stepped exponential decay on both learning rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .episodes import Transition
from .gnn import (
    BatchedGraphs, GnnParams, NetworkSet, critic_backward, critic_forward,
    policy_backward, policy_forward, squash, squash_backward,
)


@dataclass
class Td3Config:
    gamma: float = 0.94
    lr_pi: float = 5e-5
    lr_q: float = 5e-5
    lr_decay_pi: float = 0.98
    lr_decay_q: float = 0.95
    sigma_target: float = 5e-4
    target_noise_clip: float = 1e-3     # 2 * sigma_target
    tau_pi: float = 4e-5
    tau_q: float = 8e-5


class GnnOptimizer:
    """One Adam state per learned function inside a GnnParams."""

    def __init__(self, params: GnnParams, lr: float, lr_decay: float):
        self.states = {name: nets.adam_init(mlp, lr, lr_decay)
                       for name, mlp in params.named_mlps()}

    def step(self, params: GnnParams, grads: GnnParams) -> bool:
        applied = True
        for name, mlp in params.named_mlps():
            ok = nets.optimizer_step(self.states[name], mlp,
                                     getattr(grads, name))
            applied = applied and ok
        return applied

    @property
    def effective_lr(self) -> float:
        return next(iter(self.states.values())).effective_lr

    @property
    def step_count(self) -> int:
        return next(iter(self.states.values())).step


def polyak_gnn(target: GnnParams, online: GnnParams, tau: float) -> None:
    for name, mlp in target.named_mlps():
        nets.polyak_update(mlp, getattr(online, name), tau)


@dataclass
class Td3Learner:
    netset: NetworkSet
    config: Td3Config
    vel_limit: np.ndarray
    rng: np.random.Generator
    step_count: int = 0
    skipped: int = 0
    opt_pi: GnnOptimizer = field(init=False)
    opt_q1: GnnOptimizer = field(init=False)
    opt_q2: GnnOptimizer = field(init=False)

    def __post_init__(self):
        c = self.config
        self.opt_pi = GnnOptimizer(self.netset.policy, c.lr_pi, c.lr_decay_pi)
        self.opt_q1 = GnnOptimizer(self.netset.q1, c.lr_q, c.lr_decay_q)
        self.opt_q2 = GnnOptimizer(self.netset.q2, c.lr_q, c.lr_decay_q)

    def critic_targets(self, batch_next: BatchedGraphs, rewards: np.ndarray,
                       dones: np.ndarray) -> np.ndarray:
        c = self.config
        ns = self.netset
        raw_t, _ = policy_forward(ns.target_policy, batch_next)
        a_t = squash(raw_t, self.vel_limit)
        noise = self.rng.normal(0.0, c.sigma_target, size=a_t.shape)
        np.clip(noise, -c.target_noise_clip, c.target_noise_clip, out=noise)
        a_t = np.clip(a_t + noise, -self.vel_limit, self.vel_limit)
        q1t, _ = critic_forward(ns.target_q1, batch_next, a_t)
        q2t, _ = critic_forward(ns.target_q2, batch_next, a_t)
        return rewards + c.gamma * (1.0 - dones) * np.minimum(q1t, q2t)

    def update(self, batch: list[Transition]) -> dict:
        c = self.config
        ns = self.netset
        n = len(batch)
        batch_s = BatchedGraphs.from_graphs([t.graph for t in batch])
        batch_ns = BatchedGraphs.from_graphs([t.next_graph for t in batch])
        actions = np.concatenate([t.action for t in batch], axis=0)
        rewards = np.array([t.reward for t in batch])
        dones = np.array([1.0 if t.terminal else 0.0 for t in batch])

        y = self.critic_targets(batch_ns, rewards, dones)

        losses = {}
        for name, critic, opt in (("q1", ns.q1, self.opt_q1),
                                  ("q2", ns.q2, self.opt_q2)):
            q, cache = critic_forward(critic, batch_s, actions)
            err = q - y
            loss = float(np.mean(err * err))
            grads, _ = critic_backward(cache, (2.0 / n) * err)
            if np.isfinite(loss) and opt.step(critic, grads):
                losses[f"loss_{name}"] = loss
            else:
                losses[f"loss_{name}"] = float("nan")
                self.skipped += 1

        raw, pcache = policy_forward(ns.policy, batch_s)
        a_pi = squash(raw, self.vel_limit)
        q1_pi, ccache = critic_forward(ns.q1, batch_s, a_pi)
        loss_pi = -float(np.mean(q1_pi))
        _, da = critic_backward(ccache, np.full(n, -1.0 / n))
        draw = squash_backward(raw, da, self.vel_limit)
        pgrads = policy_backward(pcache, draw)
        if np.isfinite(loss_pi) and self.opt_pi.step(ns.policy, pgrads):
            losses["loss_pi"] = loss_pi
        else:
            losses["loss_pi"] = float("nan")
            self.skipped += 1

        # target networks track every step, no delay
        polyak_gnn(ns.target_policy, ns.policy, c.tau_pi)
        polyak_gnn(ns.target_q1, ns.q1, c.tau_q)
        polyak_gnn(ns.target_q2, ns.q2, c.tau_q)

        self.step_count += 1
        losses["mean_q"] = float(np.mean(y))
        losses["lr_pi"] = self.opt_pi.effective_lr
        losses["lr_q"] = self.opt_q1.effective_lr
        return losses
