"""Graph network policy and twin critics.

One message-passing round: an edge update from (sender, receiver, edge,
global) embeddings, sum-aggregation of incoming edges into a node update,
and a global update from summed node/edge outputs.  Critics read a scalar
from the output globals; the policy reads per-robot actions from the
robot node outputs (the global update does not influence node outputs, so
the policy skips it).

Everything here is numpy with explicit backward passes, mirroring the
structure of the forward code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .nets import MlpParams, mlp_backward, mlp_forward
from .scenegraph import EDGE_WIDTH, GLOBAL_WIDTH, SceneGraph, node_width

MLP_FIELDS = ("e_n", "e_e", "e_g", "u_n", "u_e", "u_g", "head")


@dataclass
class NetShapes:
    """Widths/depths for every learned function, plus the robot DoF."""

    dof: int
    node_embed: tuple[int, int] = (512, 7)     # E_n and E_g
    edge_embed: tuple[int, int] = (256, 6)     # E_e
    node_update: tuple[int, int] = (512, 7)    # U_n and U_g
    edge_update: tuple[int, int] = (256, 6)    # U_e
    head: tuple[int, int] = (64, 2)            # P_pi / P_Q

    @property
    def node_in(self) -> int:
        return node_width(self.dof)


@dataclass
class GnnParams:
    e_n: MlpParams
    e_e: MlpParams
    e_g: MlpParams
    u_n: MlpParams
    u_e: MlpParams
    u_g: MlpParams
    head: MlpParams
    kind: str  # "critic" | "policy"

    def named_mlps(self):
        for name in MLP_FIELDS:
            yield name, getattr(self, name)

    def copy(self) -> "GnnParams":
        return GnnParams(*(getattr(self, n).copy() for n in MLP_FIELDS),
                         kind=self.kind)

    def num_params(self) -> int:
        return sum(nets.num_params(m) for _, m in self.named_mlps())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([nets.get_flat(m) for _, m in self.named_mlps()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for _, m in self.named_mlps():
            n = nets.num_params(m)
            nets.set_flat(m, flat[i:i + n])
            i += n


def _shapes_tuple(shapes: NetShapes, kind: str, rng, dtype):
    nw = shapes.node_in + (shapes.dof if kind == "critic" else 0)
    new, ned = shapes.node_embed
    eew, eed = shapes.edge_embed
    nuw, nud = shapes.node_update
    euw, eud = shapes.edge_update
    hw, hd = shapes.head
    streams = rng.spawn(7)
    e_n = nets.make_mlp(nw, new, ned, streams[0], dtype=dtype)
    e_e = nets.make_mlp(EDGE_WIDTH, eew, eed, streams[1], dtype=dtype)
    e_g = nets.make_mlp(GLOBAL_WIDTH, new, ned, streams[2], dtype=dtype)
    u_e = nets.make_mlp(2 * new + eew + new, euw, eud, streams[3], dtype=dtype)
    u_n = nets.make_mlp(euw + new + new, nuw, nud, streams[4], dtype=dtype)
    u_g = nets.make_mlp(nuw + euw + new, nuw, nud, streams[5], dtype=dtype)
    out = 1 if kind == "critic" else shapes.dof
    head_in = nuw
    head = nets.make_mlp(head_in, hw, hd, streams[6], out_width=out, dtype=dtype)
    return GnnParams(e_n, e_e, e_g, u_n, u_e, u_g, head, kind)


def init_critic(shapes: NetShapes, rng: np.random.Generator,
                dtype=np.float32) -> GnnParams:
    return _shapes_tuple(shapes, "critic", rng, dtype)


def init_policy(shapes: NetShapes, rng: np.random.Generator,
                dtype=np.float32) -> GnnParams:
    return _shapes_tuple(shapes, "policy", rng, dtype)


# ---------------------------------------------------------------------------
# batching


@dataclass
class BatchedGraphs:
    """Several scene graphs packed into flat arrays with graph-id indexing."""

    nodes: np.ndarray         # (N, node_in)
    edges: np.ndarray         # (E, EDGE_WIDTH)
    globals_: np.ndarray      # (G, GLOBAL_WIDTH)
    senders: np.ndarray       # (E,) global node ids
    receivers: np.ndarray     # (E,)
    node_gid: np.ndarray      # (N,)
    edge_gid: np.ndarray      # (E,)
    robot_nodes: np.ndarray   # (RN,) node ids of robots, graph-major order
    robot_gid: np.ndarray     # (RN,)
    n_graphs: int
    dof: int

    @staticmethod
    def from_graphs(graphs: list[SceneGraph]) -> "BatchedGraphs":
        dof = graphs[0].topology.dof
        node_off = 0
        nodes, edges, globals_ = [], [], []
        senders, receivers, node_gid, edge_gid = [], [], [], []
        robot_nodes, robot_gid = [], []
        for gid, g in enumerate(graphs):
            top = g.topology
            nodes.append(g.nodes)
            edges.append(g.edges)
            globals_.append(g.globals_)
            senders.append(top.senders + node_off)
            receivers.append(top.receivers + node_off)
            node_gid.append(np.full(top.n_nodes, gid, dtype=np.int64))
            edge_gid.append(np.full(top.n_edges, gid, dtype=np.int64))
            robot_nodes.append(np.arange(top.n_robots, dtype=np.int64) + node_off)
            robot_gid.append(np.full(top.n_robots, gid, dtype=np.int64))
            node_off += top.n_nodes
        return BatchedGraphs(
            nodes=np.concatenate(nodes, axis=0),
            edges=np.concatenate(edges, axis=0),
            globals_=np.stack(globals_, axis=0),
            senders=np.concatenate(senders),
            receivers=np.concatenate(receivers),
            node_gid=np.concatenate(node_gid),
            edge_gid=np.concatenate(edge_gid),
            robot_nodes=np.concatenate(robot_nodes),
            robot_gid=np.concatenate(robot_gid),
            n_graphs=len(graphs),
            dof=dof,
        )

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def _segment_sum(values: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]), dtype=values.dtype)
    np.add.at(out, ids, values)
    return out


# ---------------------------------------------------------------------------
# critic


@dataclass
class CriticCache:
    params: GnnParams
    batch: BatchedGraphs
    tapes: dict
    widths: dict


def critic_forward(params: GnnParams, batch: BatchedGraphs,
                   actions: np.ndarray) -> tuple[np.ndarray, CriticCache]:
    """Q values, one per graph.  actions: (total robots, dof)."""
    if params.kind != "critic":
        raise ValueError("critic_forward needs critic parameters")
    dtype = params.e_n.layers[0].w.dtype
    n = batch.n_nodes
    base_w = batch.nodes.shape[1]
    actions = np.asarray(actions, dtype=dtype)
    if actions.shape != (len(batch.robot_nodes), batch.dof):
        raise ValueError(f"actions shape {actions.shape} does not match "
                         f"({len(batch.robot_nodes)}, {batch.dof})")
    node_in = np.zeros((n, base_w + batch.dof), dtype=dtype)
    node_in[:, :base_w] = batch.nodes
    node_in[batch.robot_nodes, base_w:] = actions

    ln, t_en = mlp_forward(params.e_n, node_in)
    le, t_ee = mlp_forward(params.e_e, batch.edges)
    lg, t_eg = mlp_forward(params.e_g, batch.globals_)

    edge_in = np.concatenate(
        [ln[batch.senders], ln[batch.receivers], le, lg[batch.edge_gid]], axis=1)
    e1, t_ue = mlp_forward(params.u_e, edge_in)

    agg = _segment_sum(e1, batch.receivers, n)
    node_in2 = np.concatenate([agg, ln, lg[batch.node_gid]], axis=1)
    n1, t_un = mlp_forward(params.u_n, node_in2)

    g_in = np.concatenate(
        [_segment_sum(n1, batch.node_gid, batch.n_graphs),
         _segment_sum(e1, batch.edge_gid, batch.n_graphs), lg], axis=1)
    g1, t_ug = mlp_forward(params.u_g, g_in)

    q, t_h = mlp_forward(params.head, g1)
    cache = CriticCache(
        params,
        batch,
        {"e_n": t_en, "e_e": t_ee, "e_g": t_eg, "u_e": t_ue, "u_n": t_un,
         "u_g": t_ug, "head": t_h},
        {"base_w": base_w, "nw": ln.shape[1], "ew": le.shape[1],
         "gw": lg.shape[1], "euw": e1.shape[1], "nuw": n1.shape[1]},
    )
    return q[:, 0], cache


def critic_backward(cache: CriticCache, dq: np.ndarray,
                    ) -> tuple[GnnParams, np.ndarray]:
    """Parameter gradients and the gradient w.r.t. the action block.

    dq: (n_graphs,) gradient of the loss w.r.t. each Q output.
    """
    batch = cache.batch
    w = cache.widths
    t = cache.tapes
    g_head, dg1 = mlp_backward(t["head"], np.asarray(dq)[:, None])
    g_ug, dg_in = mlp_backward(t["u_g"], dg1)

    nuw, euw, gw, nw, ew = w["nuw"], w["euw"], w["gw"], w["nw"], w["ew"]
    dn1_sum = dg_in[:, :nuw]
    de1_sum = dg_in[:, nuw:nuw + euw]
    dlg = dg_in[:, nuw + euw:].copy()

    dn1 = dn1_sum[batch.node_gid]
    g_un, dnode_in2 = mlp_backward(t["u_n"], dn1)
    dagg = dnode_in2[:, :euw]
    dln = dnode_in2[:, euw:euw + nw].copy()
    np.add.at(dlg, batch.node_gid, dnode_in2[:, euw + nw:])

    de1 = dagg[batch.receivers] + de1_sum[batch.edge_gid]
    g_ue, dedge_in = mlp_backward(t["u_e"], de1)
    np.add.at(dln, batch.senders, dedge_in[:, :nw])
    np.add.at(dln, batch.receivers, dedge_in[:, nw:2 * nw])
    dle = dedge_in[:, 2 * nw:2 * nw + ew]
    np.add.at(dlg, batch.edge_gid, dedge_in[:, 2 * nw + ew:])

    g_en, dnode_in = mlp_backward(t["e_n"], dln)
    g_ee, _ = mlp_backward(t["e_e"], dle)
    g_eg, _ = mlp_backward(t["e_g"], dlg)

    daction = dnode_in[batch.robot_nodes, w["base_w"]:]
    grads = GnnParams(g_en, g_ee, g_eg, g_un, g_ue, g_ug, g_head, "critic")
    return grads, daction


# ---------------------------------------------------------------------------
# policy


@dataclass
class PolicyCache:
    params: GnnParams
    batch: BatchedGraphs
    tapes: dict
    widths: dict


def policy_forward(params: GnnParams, batch: BatchedGraphs,
                   ) -> tuple[np.ndarray, PolicyCache]:
    """Raw (pre-squash) per-robot outputs, (total robots, dof)."""
    if params.kind != "policy":
        raise ValueError("policy_forward needs policy parameters")
    dtype = params.e_n.layers[0].w.dtype
    n = batch.n_nodes
    node_in = np.asarray(batch.nodes, dtype=dtype)

    ln, t_en = mlp_forward(params.e_n, node_in)
    le, t_ee = mlp_forward(params.e_e, batch.edges)
    lg, t_eg = mlp_forward(params.e_g, batch.globals_)

    edge_in = np.concatenate(
        [ln[batch.senders], ln[batch.receivers], le, lg[batch.edge_gid]], axis=1)
    e1, t_ue = mlp_forward(params.u_e, edge_in)

    agg = _segment_sum(e1, batch.receivers, n)
    node_in2 = np.concatenate([agg, ln, lg[batch.node_gid]], axis=1)
    n1, t_un = mlp_forward(params.u_n, node_in2)

    raw, t_h = mlp_forward(params.head, n1[batch.robot_nodes])
    cache = PolicyCache(
        params,
        batch,
        {"e_n": t_en, "e_e": t_ee, "e_g": t_eg, "u_e": t_ue, "u_n": t_un,
         "head": t_h},
        {"nw": ln.shape[1], "ew": le.shape[1], "gw": lg.shape[1],
         "euw": e1.shape[1], "nuw": n1.shape[1]},
    )
    return raw, cache


def policy_backward(cache: PolicyCache, draw: np.ndarray) -> GnnParams:
    """Parameter gradients from d(loss)/d(raw outputs).

    The policy's global-update function takes no part in the node outputs,
    so its gradient is identically zero.
    """
    batch = cache.batch
    w = cache.widths
    t = cache.tapes
    nw, ew, euw, nuw = w["nw"], w["ew"], w["euw"], w["nuw"]

    g_head, dn1_rows = mlp_backward(t["head"], draw)
    dn1 = np.zeros((batch.n_nodes, nuw), dtype=dn1_rows.dtype)
    dn1[batch.robot_nodes] = dn1_rows

    g_un, dnode_in2 = mlp_backward(t["u_n"], dn1)
    dagg = dnode_in2[:, :euw]
    dln = dnode_in2[:, euw:euw + nw].copy()
    dlg = _segment_sum(dnode_in2[:, euw + nw:], batch.node_gid, batch.n_graphs)

    de1 = dagg[batch.receivers]
    g_ue, dedge_in = mlp_backward(t["u_e"], de1)
    np.add.at(dln, batch.senders, dedge_in[:, :nw])
    np.add.at(dln, batch.receivers, dedge_in[:, nw:2 * nw])
    dle = dedge_in[:, 2 * nw:2 * nw + ew]
    np.add.at(dlg, batch.edge_gid, dedge_in[:, 2 * nw + ew:])

    g_en, _ = mlp_backward(t["e_n"], dln)
    g_ee, _ = mlp_backward(t["e_e"], dle)
    g_eg, _ = mlp_backward(t["e_g"], dlg)

    # u_g exists in the parameter set but cannot influence node outputs
    g_ug = nets.zeros_like_params(cache.params.u_g)
    return GnnParams(g_en, g_ee, g_eg, g_un, g_ue, g_ug, g_head, "policy")


# ---------------------------------------------------------------------------
# network set


@dataclass
class NetworkSet:
    shapes: NetShapes
    policy: GnnParams
    q1: GnnParams
    q2: GnnParams
    target_policy: GnnParams
    target_q1: GnnParams
    target_q2: GnnParams


def init_network_set(shapes: NetShapes, rng: np.random.Generator,
                     dtype=np.float32) -> NetworkSet:
    s_pi, s_q1, s_q2 = rng.spawn(3)
    policy = init_policy(shapes, s_pi, dtype=dtype)
    q1 = init_critic(shapes, s_q1, dtype=dtype)
    q2 = init_critic(shapes, s_q2, dtype=dtype)
    return NetworkSet(shapes, policy, q1, q2,
                      policy.copy(), q1.copy(), q2.copy())


def squash(raw: np.ndarray, vel_limit: np.ndarray) -> np.ndarray:
    return np.tanh(raw) * vel_limit


def squash_backward(raw: np.ndarray, dsquashed: np.ndarray,
                    vel_limit: np.ndarray) -> np.ndarray:
    th = np.tanh(raw)
    return dsquashed * vel_limit * (1.0 - th * th)


def policy_action(params: GnnParams, graph: SceneGraph,
                  vel_limit: np.ndarray) -> np.ndarray:
    """Squashed per-robot velocities, (n_robots, dof), for one graph."""
    batch = BatchedGraphs.from_graphs([graph])
    raw, _ = policy_forward(params, batch)
    return squash(raw, vel_limit)
