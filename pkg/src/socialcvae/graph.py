"""Context graphs and the one-round sparse graph attention message-passing layer.

Nodes are agents (embedded from their observed tracks) and lanelets
(embedded from their boundaries). Each predicted agent receives an edge from
every other agent of its scene and from every lanelet; scenes without
lanelets give each agent a self-edge instead. An edge ``i -> j`` carries

    h_(i,j) = MLP2([MLP1(h_i), MLP1(h_j), u_(i,j)])

and the agent's context is ``T_j = sum_i w_(i,j) h_(i,j)`` with weights from a
scalar score head normalised over the incoming edges (1.5-entmax or softmax),
or an elementwise maximum over the messages.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .encoders import HIDDEN, LaneletEncoder, TrackEncoder
from .entmax import Segments, segmented_entmax, segmented_softmax
from .layers import MLP, Linear, Module
from .tensor import Tensor

AGGREGATORS = ("entmax", "softmax", "max")
KINDS = ("agent", "lanelet")
EDGE_FEATURES = 5  # relative displacement (2), relative heading (1), source-kind one-hot (2)
# Fixed gain on the scalar edge score. 1.5-entmax only returns exact zeros
# once scores are spread by more than about 2; the gain sets how quickly
# training can reach that regime from a near-uniform start.
SCORE_SCALE = 2.0


def _wrap(angle):
    return (np.asarray(angle) + math.pi) % (2 * math.pi) - math.pi


def _last_heading(tracks: np.ndarray) -> np.ndarray:
    """Heading of the last observed displacement of each ``(T, 2)`` track (0 when standing still)."""
    if tracks.shape[1] < 2:
        return np.zeros(len(tracks))
    d = tracks[:, -1] - tracks[:, -2]
    return np.arctan2(d[:, 1], d[:, 0])


@dataclass
class ContextGraph:
    """A batch of scenes flattened into one graph.

    Node ``k < n_agents`` is agent ``k``; node ``n_agents + l`` is lanelet ``l``.
    Only agents listed in ``query`` receive edges (and get a context vector).
    """

    histories: np.ndarray  # (Na, T_h, 2)
    futures: np.ndarray | None  # (Na, T_p, 2)
    agent_scene: np.ndarray  # (Na,)
    agent_ids: np.ndarray  # (Na,)
    lanelet_left: np.ndarray  # (Nl, B, F)
    lanelet_right: np.ndarray  # (Nl, B, F)
    lanelet_scene: np.ndarray  # (Nl,)
    lanelet_ids: list[str]
    query: np.ndarray  # agent indices that receive edges
    src: np.ndarray  # (E,) node index
    dst: np.ndarray  # (E,) agent index (a member of ``query``)
    edge_features: np.ndarray  # (E, EDGE_FEATURES)
    scene_ids: list[str]
    segments: Segments = field(repr=False, default=None)
    query_pos: np.ndarray = field(repr=False, default=None)  # dst -> row of ``query``

    def __post_init__(self):
        lookup = np.full(self.n_agents, -1)
        lookup[self.query] = np.arange(len(self.query))
        self.query_pos = lookup[self.dst]
        if np.any(self.query_pos < 0):
            raise ValueError("edge into an agent that is not queried")
        self.segments = Segments(self.query_pos, len(self.query))

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def n_lanelets(self) -> int:
        return len(self.lanelet_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def source_kind(self) -> np.ndarray:
        return np.where(self.src < self.n_agents, 0, 1)

    def source_label(self, e: int) -> str:
        s = int(self.src[e])
        return str(int(self.agent_ids[s])) if s < self.n_agents else self.lanelet_ids[s - self.n_agents]


def build_graph(scenes, query: str = "target", drop: dict | None = None, scale: float = 1.0) -> ContextGraph:
    """Flatten ``scenes`` into one ``ContextGraph``.

    ``query`` is ``"target"`` (edges only into each scene's target) or ``"all"``.
    ``drop`` maps a scene position to an agent id that is removed from that
    scene's graph (node and edges), as used by leave-one-out probes.
    ``scale`` divides the relative displacement edge feature.
    """
    if query not in ("target", "all"):
        raise ValueError(f"query must be 'target' or 'all', got {query!r}")
    drop = drop or {}
    hist, fut, a_scene, a_ids, l_left, l_right, l_scene, l_ids = [], [], [], [], [], [], [], []
    queries, src, dst, feats = [], [], [], []
    has_future = all(a.future is not None and len(a.future) for sc in scenes for a in sc.agents)
    lanelet_total = sum(len(sc.lanelets) for sc in scenes)
    agent_total = sum(len(sc.agents) - (k in drop) for k, sc in enumerate(scenes))
    a_off, l_off = 0, 0
    for k, sc in enumerate(scenes):
        agents = [a for a in sc.agents if a.id != drop.get(k)]
        if not agents:
            raise ValueError(f"scene {sc.scene_id} has no agents left")
        if sc.target == drop.get(k):
            raise ValueError(f"cannot drop the target agent of scene {sc.scene_id}")
        h = np.stack([a.history for a in agents])
        hist.append(h)
        if has_future:
            fut.append(np.stack([a.future for a in agents]))
        a_scene += [k] * len(agents)
        a_ids += [a.id for a in agents]
        for ln in sc.lanelets:
            l_left.append(ln.left)
            l_right.append(ln.right)
            l_scene.append(k)
            l_ids.append(ln.id)

        pos = h[:, -1]
        psi = _last_heading(h)
        if sc.lanelets:
            lpts = np.stack([0.5 * (ln.left[:, :2] + ln.right[:, :2]) for ln in sc.lanelets])
            lpos = lpts.mean(axis=1)
            ld = lpts[:, -1] - lpts[:, 0]
            lpsi = np.arctan2(ld[:, 1], ld[:, 0])
        n = len(agents)
        targets = range(n) if query == "all" else [next(i for i, a in enumerate(agents) if a.id == sc.target)]
        for j in targets:
            queries.append(a_off + j)
            c, s = math.cos(psi[j]), math.sin(psi[j])
            rot = np.array([[c, s], [-s, c]])
            sources = [i for i in range(n) if i != j] if sc.lanelets else list(range(n))
            for i in sources:
                rel = rot @ (pos[i] - pos[j]) / scale
                src.append(a_off + i)
                dst.append(a_off + j)
                feats.append([rel[0], rel[1], _wrap(psi[i] - psi[j]), 1.0, 0.0])
            for li in range(len(sc.lanelets)):
                rel = rot @ (lpos[li] - pos[j]) / scale
                src.append(agent_total + l_off + li)
                dst.append(a_off + j)
                feats.append([rel[0], rel[1], _wrap(lpsi[li] - psi[j]), 0.0, 1.0])
        a_off += n
        l_off += len(sc.lanelets)
    assert a_off == agent_total and l_off == lanelet_total
    if lanelet_total:
        left, right = np.stack(l_left), np.stack(l_right)
    else:
        left = right = np.zeros((0, 1, 4))
    return ContextGraph(
        histories=np.concatenate(hist),
        futures=np.concatenate(fut) if has_future else None,
        agent_scene=np.array(a_scene),
        agent_ids=np.array(a_ids),
        lanelet_left=left,
        lanelet_right=right,
        lanelet_scene=np.array(l_scene, dtype=int),
        lanelet_ids=l_ids,
        query=np.array(queries),
        src=np.array(src),
        dst=np.array(dst),
        edge_features=np.array(feats, dtype=float).reshape(-1, EDGE_FEATURES),
        scene_ids=[sc.scene_id for sc in scenes],
    )


class EdgeFunction(Module):
    """``h_(i,j) = MLP2([MLP1(h_i), MLP1(h_j), u_(i,j)])`` with one shared MLP1."""

    def __init__(self, rng: np.random.Generator, hidden: int = HIDDEN, n_edge: int = EDGE_FEATURES):
        self.node_mlp = MLP(rng, hidden, hidden)
        self.edge_mlp = MLP(rng, 2 * hidden + n_edge, hidden)
        self.hidden, self.n_edge = hidden, n_edge

    def encode_nodes(self, h) -> Tensor:
        return self.node_mlp(h)

    def message(self, e_src, e_dst, u) -> Tensor:
        """Messages from already node-encoded endpoints."""
        return self.edge_mlp(tc.concat([e_src, e_dst, tc.as_tensor(u)], axis=-1))

    def __call__(self, h_i, h_j, u) -> Tensor:
        h_i, h_j, u = tc.as_tensor(h_i), tc.as_tensor(h_j), tc.as_tensor(u)
        if h_i.shape[-1] != self.hidden or h_j.shape[-1] != self.hidden:
            raise tc.ShapeError(f"edge function expects {self.hidden}-dim nodes, got {h_i.shape} and {h_j.shape}")
        if u.shape[-1] != self.n_edge:
            raise tc.ShapeError(f"edge function expects {self.n_edge} edge features, got {u.shape}")
        return self.message(self.encode_nodes(h_i), self.encode_nodes(h_j), u)


def segmented_max(messages, segments: Segments) -> tuple[Tensor, np.ndarray]:
    """Elementwise maximum of messages per segment; ties send the gradient to the first edge.

    Also returns, per edge, the fraction of coordinates it wins.
    """
    messages = tc.as_tensor(messages)
    m = messages.data
    padded = segments.pad(m, -np.inf)  # (S, W, D)
    arg = padded.argmax(axis=1)  # (S, D)
    out = np.take_along_axis(padded, arg[:, None, :], axis=1)[:, 0, :]
    won = (arg[segments.seg] == segments.col[:, None]).mean(axis=1)

    def backward(g):
        gp = np.zeros_like(padded)
        np.put_along_axis(gp, arg[:, None, :], g[:, None, :], axis=1)
        return (segments.unpad(gp),)

    return tc.custom(out, (messages,), backward), won


def aggregate(messages, segments, mode: str = "entmax", score_head=None) -> tuple[Tensor, np.ndarray]:
    """Combine per-edge messages into one vector per segment.

    Returns ``(h_hat (S, D), weights (E,))``. For ``max`` the weights are only
    diagnostic (fraction of coordinates won).
    """
    if mode not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {mode!r}; choose from {', '.join(AGGREGATORS)}")
    if not isinstance(segments, Segments):
        segments = Segments(segments)
    messages = tc.as_tensor(messages)
    if mode == "max":
        return segmented_max(messages, segments)
    if score_head is None:
        raise ValueError(f"{mode} aggregation needs a score head")
    scores = score_head(messages).reshape(-1)
    w = segmented_entmax(scores, segments) if mode == "entmax" else segmented_softmax(scores, segments)
    weighted = messages * w.reshape(-1, 1)
    return tc.segment_sum(weighted, segments.seg, segments.num_segments), w.data.copy()


@dataclass
class AttentionReport:
    scene_ids: list
    targets: list
    sources: list
    kinds: list
    weights: np.ndarray

    @classmethod
    def from_graph(cls, graph: ContextGraph, weights: np.ndarray) -> "AttentionReport":
        kinds = graph.source_kind()
        return cls(
            [graph.scene_ids[graph.agent_scene[d]] for d in graph.dst],
            [int(graph.agent_ids[d]) for d in graph.dst],
            [graph.source_label(e) for e in range(graph.n_edges)],
            [KINDS[k] for k in kinds],
            np.asarray(weights, dtype=float),
        )

    def rows(self, scene_id=None, target=None):
        for sc, tg, so, ki, w in zip(self.scene_ids, self.targets, self.sources, self.kinds, self.weights):
            if (scene_id is None or sc == scene_id) and (target is None or tg == target):
                yield sc, tg, so, ki, float(w)

    def write(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("scene_id\ttarget\tsource\tsource_kind\tweight\n")
            for sc, tg, so, ki, w in self.rows():
                fh.write(f"{sc}\t{tg}\t{so}\t{ki}\t{w!r}\n")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "AttentionReport":
        cols = ([], [], [], [], [])
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != "scene_id\ttarget\tsource\tsource_kind\tweight":
                raise ValueError(f"{path}:1: not an attention report header")
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
                cols[0].append(parts[0])
                cols[1].append(int(parts[1]))
                cols[2].append(parts[2])
                cols[3].append(parts[3])
                cols[4].append(float(parts[4]))
        return cls(cols[0], cols[1], cols[2], cols[3], np.array(cols[4]))


class SparseGAMP(Module):
    """Track and lanelet encoders plus one round of attention message passing."""

    def __init__(
        self,
        rng: np.random.Generator,
        hidden: int = HIDDEN,
        scale: float = 1.0,
        step_scale: float | None = None,
        score_scale: float = SCORE_SCALE,
    ):
        self.history_encoder = TrackEncoder(rng, hidden, scale, step_scale)
        self.lanelet_encoder = LaneletEncoder(rng, hidden, scale)
        self.edge = EdgeFunction(rng, hidden)
        self.score = Linear(rng, hidden, 1)
        self.hidden = hidden
        self.score_scale = score_scale

    def score_edges(self, messages) -> Tensor:
        return self.score(messages) * self.score_scale

    def node_embeddings(self, graph: ContextGraph, histories=None) -> Tensor:
        h_agents = self.history_encoder(graph.histories if histories is None else histories)
        if graph.n_lanelets:
            h_lanes = self.lanelet_encoder(graph.lanelet_left, graph.lanelet_right)
            return tc.concat([h_agents, h_lanes], axis=0)
        return h_agents

    def __call__(self, graph: ContextGraph, mode: str = "entmax", histories=None) -> tuple[Tensor, np.ndarray]:
        """Context vectors ``(len(query), H)`` and per-edge weights.

        ``histories`` optionally replaces ``graph.histories`` by a tensor
        (used to differentiate predictions with respect to observed tracks).
        """
        h = self.node_embeddings(graph, histories)
        enc = self.edge.encode_nodes(h)
        msg = self.edge.message(tc.gather_rows(enc, graph.src), tc.gather_rows(enc, graph.dst), graph.edge_features)
        return aggregate(msg, graph.segments, mode, self.score_edges)


def sparse_gamp(graph: ContextGraph, layer: SparseGAMP, mode: str = "entmax"):
    """Context vectors and the attention report of one message-passing round."""
    context, weights = layer(graph, mode)
    return context, AttentionReport.from_graph(graph, weights)
