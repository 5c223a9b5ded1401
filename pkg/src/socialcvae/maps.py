"""Lane graphs, road-segment-of-interest search and heading smoothing."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Segment:
    id: str
    centerline: np.ndarray  # (K, 2)
    left: np.ndarray  # (K, 2)
    right: np.ndarray  # (K, 2)
    solid_left: bool = False
    solid_right: bool = True
    stop_sign: bool = False

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)))

    def polygon(self) -> np.ndarray:
        return np.vstack([self.left, self.right[::-1]])

    def bbox(self) -> tuple[float, float, float, float]:
        pts = self.polygon()
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()


def _point_in_polygon(x: float, y: float, poly: np.ndarray) -> bool:
    inside = False
    n = len(poly)
    j = n - 1
    for i in range(n):
        xi, yi = poly[i]
        xj, yj = poly[j]
        if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


@dataclass
class LaneGraph:
    segments: dict[str, Segment] = field(default_factory=dict)
    adjacent: dict[str, list[str]] = field(default_factory=dict)
    predecessors: dict[str, list[str]] = field(default_factory=dict)
    successors: dict[str, list[str]] = field(default_factory=dict)

    def add_segment(self, seg: Segment) -> None:
        if seg.length <= 0:
            raise ValueError(f"segment {seg.id} has a zero-length centerline")
        self.segments[seg.id] = seg
        for table in (self.adjacent, self.predecessors, self.successors):
            table.setdefault(seg.id, [])
        self._bbox = None

    def connect(self, a: str, b: str) -> None:
        """``b`` follows ``a``."""
        if b not in self.successors[a]:
            self.successors[a].append(b)
        if a not in self.predecessors[b]:
            self.predecessors[b].append(a)

    def make_adjacent(self, a: str, b: str) -> None:
        if b not in self.adjacent[a]:
            self.adjacent[a].append(b)
        if a not in self.adjacent[b]:
            self.adjacent[b].append(a)

    def check(self) -> None:
        for a, nbrs in self.adjacent.items():
            for b in nbrs:
                if a not in self.adjacent[b]:
                    raise ValueError(f"adjacency not symmetric: {a} -> {b}")
        for a, succ in self.successors.items():
            for b in succ:
                if a not in self.predecessors[b]:
                    raise ValueError(f"{b} succeeds {a} but does not list it as predecessor")
        for b, pred in self.predecessors.items():
            for a in pred:
                if b not in self.successors[a]:
                    raise ValueError(f"{a} precedes {b} but does not list it as successor")

    # spatial queries -------------------------------------------------------

    def _boxes(self) -> tuple[list[str], np.ndarray]:
        if getattr(self, "_bbox", None) is None:
            ids = list(self.segments)
            self._bbox = (ids, np.array([self.segments[i].bbox() for i in ids]).reshape(-1, 4))
        return self._bbox

    def segments_containing(self, xy) -> list[str]:
        ids, boxes = self._boxes()
        x, y = float(xy[0]), float(xy[1])
        hits = []
        for sid, (x0, y0, x1, y1) in zip(ids, boxes):
            if x0 <= x <= x1 and y0 <= y <= y1 and _point_in_polygon(x, y, self.segments[sid].polygon()):
                hits.append(sid)
        return hits

    def segments_in_box(self, xy, half_width: float) -> list[str]:
        ids, boxes = self._boxes()
        x, y = float(xy[0]), float(xy[1])
        keep = (
            (boxes[:, 0] <= x + half_width)
            & (boxes[:, 2] >= x - half_width)
            & (boxes[:, 1] <= y + half_width)
            & (boxes[:, 3] >= y - half_width)
        )
        return [sid for sid, k in zip(ids, keep) if k]

    # serialisation ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": "socialcvae-lanegraph",
            "version": 1,
            "segments": [
                {
                    "id": s.id,
                    "centerline": s.centerline.tolist(),
                    "left": s.left.tolist(),
                    "right": s.right.tolist(),
                    "solid_left": s.solid_left,
                    "solid_right": s.solid_right,
                    "stop_sign": s.stop_sign,
                    "adjacent": self.adjacent[s.id],
                    "predecessors": self.predecessors[s.id],
                    "successors": self.successors[s.id],
                }
                for s in self.segments.values()
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LaneGraph":
        if doc.get("format") != "socialcvae-lanegraph":
            raise ValueError("not a lane-graph document")
        g = cls()
        for rec in doc["segments"]:
            g.add_segment(
                Segment(
                    rec["id"],
                    np.asarray(rec["centerline"], float),
                    np.asarray(rec["left"], float),
                    np.asarray(rec["right"], float),
                    bool(rec.get("solid_left", False)),
                    bool(rec.get("solid_right", True)),
                    bool(rec.get("stop_sign", False)),
                )
            )
        for rec in doc["segments"]:
            g.adjacent[rec["id"]] = list(rec["adjacent"])
            g.predecessors[rec["id"]] = list(rec["predecessors"])
            g.successors[rec["id"]] = list(rec["successors"])
        g.check()
        return g

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "LaneGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class RoiConfig:
    d_max: float
    d_init: float = 5.0

    def __post_init__(self):
        if not 0 < self.d_init <= self.d_max:
            raise ValueError(f"need 0 < d_init <= d_max, got d_init={self.d_init}, d_max={self.d_max}")


@dataclass
class _Node:
    segment: str
    length: float
    distance: float


def roi_graph_search(xy, config: RoiConfig, lane_graph: LaneGraph) -> dict[str, float]:
    """Road segments reachable from ``xy`` within ``d_max`` travelling distance.

    Seeds are the segments containing ``xy``; failing that, a square window
    of half-width ``d_init`` is searched, doubling while ``d_init < d_max``.
    A FIFO expansion then moves to adjacent segments at no cost and to
    predecessors / successors at the mean of the two centerline lengths.
    Returns ``{segment id: smallest distance found}``.
    """
    if not lane_graph.segments:
        return {}
    seeds = lane_graph.segments_containing(xy)
    d_init = config.d_init
    while not seeds and d_init < config.d_max:
        seeds = lane_graph.segments_in_box(xy, d_init)
        d_init *= 2.0

    pool: deque[_Node] = deque(_Node(s, lane_graph.segments[s].length, 0.0) for s in seeds)
    roi: dict[str, _Node] = {}
    while pool:
        node = pool.popleft()
        known = roi.get(node.segment)
        if known is not None and known.distance < node.distance:
            continue
        roi[node.segment] = node
        if known is not None and known.distance == node.distance:
            continue  # already expanded from an equally short path
        for child in lane_graph.adjacent[node.segment]:
            pool.append(_Node(child, lane_graph.segments[child].length, node.distance))
        for child in lane_graph.predecessors[node.segment] + lane_graph.successors[node.segment]:
            length = lane_graph.segments[child].length
            distance = 0.5 * (length + node.length) + node.distance
            if distance <= config.d_max:
                pool.append(_Node(child, length, distance))
    return {sid: n.distance for sid, n in roi.items()}


def frame_headings(points: np.ndarray) -> np.ndarray:
    """Per-frame heading from central differences of a ``(T, 2)`` track."""
    pts = np.asarray(points, float)
    if len(pts) < 2:
        raise ValueError("need at least two points to estimate headings")
    vel = np.gradient(pts, axis=0)
    return np.arctan2(vel[:, 1], vel[:, 0])


def smooth_heading(headings, lam: float = 0.9) -> float:
    """Exponentially weighted heading at the last frame.

    Weights ``lam ** (T - t)`` are normalised to sum to one and applied to
    the angles unwrapped around the last frame's heading, so a constant
    heading is a fixed point and wrap-around is harmless. The result is
    wrapped to ``(-pi, pi]``.
    """
    psi = np.asarray(headings, float).reshape(-1)
    if psi.size == 0:
        raise ValueError("smooth_heading needs at least one heading")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"forgetting factor must be in (0, 1), got {lam}")
    w = lam ** np.arange(psi.size - 1, -1, -1, dtype=float)
    w = w / w.sum()
    ref = psi[-1]
    offsets = np.remainder(psi - ref + math.pi, 2 * math.pi) - math.pi
    out = ref + float(np.sum(w * offsets))
    return math.pi - math.remainder(math.pi - out, 2 * math.pi)


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """``n`` points spaced uniformly by arc length along a polyline."""
    pts = np.asarray(points, float)
    seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seglen)])
    target = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(target, s, pts[:, 0]), np.interp(target, s, pts[:, 1])])
