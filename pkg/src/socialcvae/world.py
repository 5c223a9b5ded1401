"""Seeded synthetic multi-agent scenes.

Three templates:

``merge``
    Two-lane road with an on-ramp. The target follows a leader in its lane and
    tracks the leader's speed with a reaction delay. The leader changes speed
    during the observed window and the target reacts only after the delay, so
    the target's own history does not show it yet: only the leader's history
    predicts the target's future.
    Other vehicles (left lane, ramp, a vehicle behind the target) are
    irrelevant to the target.
``intersection``
    The target approaches a crossing and yields according to the delayed
    arrival estimate of a crossing vehicle, which changes speed during the
    observed window.
``open-field``
    Pedestrian-style scenes with independent agents and no map (control).

Randomness comes from ``numpy.random.Generator(PCG64(base_seed + index))``;
all draws for a scene are made before its rollout, so re-simulating with a
masked neighbour consumes identical numbers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .encoders import BOUNDARY_FEATURES, BOUNDARY_POINTS
from .maps import LaneGraph, RoiConfig, Segment, frame_headings, resample_polyline, roi_graph_search, smooth_heading

TEMPLATES = ("merge", "intersection", "open-field")
DATASET_FORMAT = "socialcvae-scenes"
DATASET_VERSION = 1


@dataclass
class Agent:
    id: int
    history: np.ndarray  # (T_h, 2)
    future: np.ndarray  # (T_p, 2)


@dataclass
class Lanelet:
    id: str
    left: np.ndarray  # (B, F)
    right: np.ndarray  # (B, F)


@dataclass
class Frame:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rotation: float = 0.0  # heading removed by normalisation (rad)

    def to_local(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, s], [-s, c]])  # rotate by -rotation
        return (np.asarray(xy) - self.translation) @ rot.T

    def to_world(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        return np.asarray(xy) @ rot.T + self.translation


@dataclass
class Scene:
    scene_id: str
    template: str
    mode: str  # "driving" (target-centric frame) or "pedestrian" (mean-centred)
    dt: float
    agents: list[Agent]
    target: int
    lanelets: list[Lanelet] = field(default_factory=list)
    frame: Frame = field(default_factory=Frame)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def history_len(self) -> int:
        return self.agents[0].history.shape[0]

    @property
    def future_len(self) -> int:
        return self.agents[0].future.shape[0]

    def agent_index(self, agent_id: int) -> int:
        for i, a in enumerate(self.agents):
            if a.id == agent_id:
                return i
        raise KeyError(f"scene {self.scene_id} has no agent {agent_id}")

    def histories(self) -> np.ndarray:
        return np.stack([a.history for a in self.agents])

    def futures(self) -> np.ndarray:
        return np.stack([a.future for a in self.agents])


@dataclass
class ScenarioTemplate:
    name: str
    min_agents: int
    max_agents: int
    reaction_delay: int  # frames
    following_gain: float  # 1/s
    noise_scale: float  # m/s^2 (driving) or rad/sqrt(s) heading noise (pedestrians)

    def __post_init__(self):
        if self.name not in TEMPLATES:
            raise ValueError(f"unknown template {self.name!r}; choose from {', '.join(TEMPLATES)}")
        if self.name != "open-field" and self.reaction_delay < 1:
            raise ValueError("interactive templates need a reaction delay of at least one frame")
        if not 1 <= self.min_agents <= self.max_agents:
            raise ValueError("need 1 <= min_agents <= max_agents")


DEFAULT_TEMPLATES = {
    "merge": ScenarioTemplate("merge", 3, 6, reaction_delay=8, following_gain=1.5, noise_scale=0.15),
    "intersection": ScenarioTemplate("intersection", 3, 5, reaction_delay=6, following_gain=1.2, noise_scale=0.15),
    "open-field": ScenarioTemplate("open-field", 2, 5, reaction_delay=0, following_gain=0.0, noise_scale=0.25),
}

TIMING = {
    # dt (s), observed frames, predicted frames
    "driving": (0.1, 10, 30),
    "pedestrian": (0.4, 8, 12),
}


def template_mode(name: str) -> str:
    return "pedestrian" if name == "open-field" else "driving"


def load_template_config(path, name: str | None = None) -> ScenarioTemplate:
    """Read a template override file of ``key = value`` lines (``#`` comments).

    Keys: ``template``, ``min_agents``, ``max_agents``, ``reaction_delay``,
    ``following_gain``, ``noise_scale``. Missing keys keep the defaults of the
    named template (``name`` when the file has no ``template`` key).
    """
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip()] = value.strip()
    known = {"template", "min_agents", "max_agents", "reaction_delay", "following_gain", "noise_scale"}
    extra = sorted(set(values) - known)
    if extra:
        raise ValueError(f"{path}: unknown key(s) {', '.join(extra)}")
    chosen = values.get("template", name or "merge")
    if chosen not in DEFAULT_TEMPLATES:
        raise ValueError(f"{path}: unknown template {chosen!r}")
    base = DEFAULT_TEMPLATES[chosen]
    return ScenarioTemplate(
        base.name,
        int(values.get("min_agents", base.min_agents)),
        int(values.get("max_agents", base.max_agents)),
        int(values.get("reaction_delay", base.reaction_delay)),
        float(values.get("following_gain", base.following_gain)),
        float(values.get("noise_scale", base.noise_scale)),
    )


# ---------------------------------------------------------------------------
# maps


LANE_WIDTH = 3.5


def _straight_segment(sid, start, end, solid_left=False, solid_right=True, stop=False, n=9) -> Segment:
    start, end = np.asarray(start, float), np.asarray(end, float)
    t = np.linspace(0, 1, n)[:, None]
    center = start + t * (end - start)
    d = (end - start) / np.linalg.norm(end - start)
    normal = np.array([-d[1], d[0]])
    return Segment(sid, center, center + 0.5 * LANE_WIDTH * normal, center - 0.5 * LANE_WIDTH * normal, solid_left, solid_right, stop)


def merge_map() -> LaneGraph:
    """Two eastbound lanes (y = 0 and y = 3.5) in 40 m pieces plus an on-ramp joining at x = 0."""
    g = LaneGraph()
    xs = np.arange(-160, 201, 40)
    for lane, y in enumerate((0.0, LANE_WIDTH)):
        for k in range(len(xs) - 1):
            g.add_segment(_straight_segment(f"L{lane}_{k}", (xs[k], y), (xs[k + 1], y), solid_left=lane == 1, solid_right=lane == 0))
    for k in range(len(xs) - 2):
        g.connect(f"L0_{k}", f"L0_{k + 1}")
        g.connect(f"L1_{k}", f"L1_{k + 1}")
    for k in range(len(xs) - 1):
        g.make_adjacent(f"L0_{k}", f"L1_{k}")
    join = int(np.flatnonzero(xs == 0)[0])
    g.add_segment(_straight_segment("R_0", (-120, -24), (-60, -10)))
    g.add_segment(_straight_segment("R_1", (-60, -10), (0, 0)))
    g.connect("R_0", "R_1")
    g.connect("R_1", f"L0_{join}")
    g.check()
    return g


def intersection_map() -> LaneGraph:
    """Eastbound and northbound roads crossing at the origin, 30 m pieces, stop signs on approaches."""
    g = LaneGraph()
    cuts = np.array([-150.0, -120, -90, -60, -30, -5, 5, 30, 60, 90])
    for road, axis in (("E", 0), ("N", 1)):
        for k in range(len(cuts) - 1):
            a = np.zeros(2)
            b = np.zeros(2)
            a[axis], b[axis] = cuts[k], cuts[k + 1]
            g.add_segment(_straight_segment(f"{road}_{k}", a, b, stop=cuts[k + 1] == -5))
        for k in range(len(cuts) - 2):
            g.connect(f"{road}_{k}", f"{road}_{k + 1}")
    g.check()
    return g


MAPS = {"merge": merge_map, "intersection": intersection_map}


def lanelet_features(seg: Segment, n: int = BOUNDARY_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Boundary point features ``(x, y, solid flag, stop-sign flag)`` for both sides."""
    feats = []
    for pts, solid in ((seg.left, seg.solid_left), (seg.right, seg.solid_right)):
        xy = resample_polyline(pts, n)
        flags = np.tile([float(solid), float(seg.stop_sign)], (n, 1))
        feats.append(np.hstack([xy, flags]))
    return feats[0], feats[1]


# ---------------------------------------------------------------------------
# simulation


def _path_points(waypoints: np.ndarray, arclength: np.ndarray) -> np.ndarray:
    seglen = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seglen)])
    return np.column_stack([np.interp(arclength, s, waypoints[:, 0]), np.interp(arclength, s, waypoints[:, 1])])


def _maneuver_profile(rng, frames, starts, lengths, accels):
    """Acceleration sequence: a constant push of random size over a random window.

    ``starts``, ``lengths`` (frames, inclusive ranges) and ``accels`` (m/s^2)
    bound the draws; the window is clipped to ``frames``.
    """
    start = int(rng.integers(starts[0], starts[1] + 1))
    length = int(rng.integers(lengths[0], lengths[1] + 1))
    accel = rng.uniform(*accels)
    prof = np.zeros(frames)
    prof[start : start + length] = accel
    return prof


def _observed_maneuver(rng, frames, th):
    """A manoeuvre that starts after frame 0 and is over by the last observed frame."""
    start = int(rng.integers(1, 4))
    return _maneuver_profile(rng, frames, (start, start), (4, th - 1 - start), (-4.0, 3.0))


def _integrate_speed(v0, accel, dt, v_min=0.0):
    v = np.empty(len(accel) + 1)
    v[0] = v0
    for t, a in enumerate(accel):
        v[t + 1] = max(v_min, v[t] + dt * a)
    return v


def _follow(v_leader, v0, gain, delay, noise, dt):
    """Speed of a vehicle tracking ``v_leader`` delayed by ``delay`` frames."""
    frames = len(v_leader)
    v = np.empty(frames)
    v[0] = v0
    for t in range(frames - 1):
        ref = v_leader[max(t - delay, 0)]
        v[t + 1] = max(0.0, v[t] + dt * (gain * (ref - v[t]) + noise[t]))
    return v


def _speed_to_arclength(v, dt, s0):
    return s0 + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])


def _simulate_merge(rng, tpl: ScenarioTemplate, masked: bool):
    dt, th, tp = TIMING["driving"]
    frames = th + tp
    n = int(rng.integers(tpl.min_agents, tpl.max_agents + 1))
    main = np.array([[-200.0, 0.0], [260.0, 0.0]])
    left = np.array([[-200.0, LANE_WIDTH], [260.0, LANE_WIDTH]])
    ramp = np.array([[-120.0, -24.0], [-60.0, -10.0], [0.0, 0.0], [260.0, 0.0]])

    v_lead0 = rng.uniform(8.0, 16.0)
    lead_acc = _observed_maneuver(rng, frames - 1, th)
    if masked:
        lead_acc[: th - 1] = 0.0
    lead_acc += rng.normal(0, tpl.noise_scale, frames - 1)
    v_lead = _integrate_speed(v_lead0, lead_acc, dt)
    s_target0 = rng.uniform(-90.0, -30.0)
    gap0 = rng.uniform(18.0, 30.0)
    target_noise = rng.normal(0, tpl.noise_scale, frames)
    v_target = _follow(v_lead, v_lead0 + rng.normal(0, 0.3), tpl.following_gain, tpl.reaction_delay, target_noise, dt)
    tracks = {
        0: _path_points(main, _speed_to_arclength(v_target, dt, s_target0 + 200.0)),
        1: _path_points(main, _speed_to_arclength(v_lead, dt, s_target0 + gap0 + 200.0)),
    }
    extra = n - 2
    kinds = ["rear", "left", "ramp", "left2"][:extra]
    for k, kind in enumerate(kinds, start=2):
        v0 = rng.uniform(7.0, 17.0)
        acc = _maneuver_profile(rng, frames - 1, (0, frames - 10), (5, 15), (-2.5, 2.5)) + rng.normal(0, tpl.noise_scale, frames - 1)
        if kind == "rear":
            noise = rng.normal(0, tpl.noise_scale, frames)
            v = _follow(v_target, v_target[0] + rng.normal(0, 0.3), tpl.following_gain, tpl.reaction_delay, noise, dt)
            tracks[k] = _path_points(main, _speed_to_arclength(v, dt, s_target0 - rng.uniform(15.0, 28.0) + 200.0))
        elif kind in ("left", "left2"):
            v = _integrate_speed(v0, acc, dt)
            tracks[k] = _path_points(left, _speed_to_arclength(v, dt, s_target0 + rng.uniform(-30.0, 40.0) + 200.0))
        else:
            v = _integrate_speed(v0, acc, dt)
            tracks[k] = _path_points(ramp, _speed_to_arclength(v, dt, rng.uniform(0.0, 60.0)))
    return tracks, 0, th


def _simulate_intersection(rng, tpl: ScenarioTemplate, masked: bool):
    dt, th, tp = TIMING["driving"]
    frames = th + tp
    n = int(rng.integers(tpl.min_agents, tpl.max_agents + 1))
    east = np.array([[-200.0, 0.0], [200.0, 0.0]])
    north = np.array([[0.0, -200.0], [0.0, 200.0]])

    v_cross0 = rng.uniform(6.0, 12.0)
    cross_acc = _observed_maneuver(rng, frames - 1, th)
    if masked:
        cross_acc[: th - 1] = 0.0
    cross_acc += rng.normal(0, tpl.noise_scale, frames - 1)
    v_cross = _integrate_speed(v_cross0, cross_acc, dt)
    s_cross = _speed_to_arclength(v_cross, dt, rng.uniform(-45.0, -25.0))
    v_target0 = rng.uniform(7.0, 12.0)
    s_target0 = rng.uniform(-55.0, -35.0)
    noise = rng.normal(0, tpl.noise_scale, frames)

    # the target's desired speed drops when the crossing vehicle (seen with a delay) is fast
    v = np.empty(frames)
    v[0] = v_target0
    for t in range(frames - 1):
        k = max(t - tpl.reaction_delay, 0)
        seen = v_cross[k]
        yield_w = 1.0 / (1.0 + math.exp(-(seen - 9.0) / 1.0))
        ref = v_target0 * (1.0 - 0.6 * yield_w)
        v[t + 1] = max(0.0, v[t] + dt * (tpl.following_gain * (ref - v[t]) + noise[t]))
    tracks = {
        0: _path_points(east, _speed_to_arclength(v, dt, s_target0 + 200.0)),
        1: _path_points(north, s_cross + 200.0),
    }
    for k in range(2, n):
        road = east if k % 2 else north
        v0 = rng.uniform(6.0, 12.0)
        acc = _maneuver_profile(rng, frames - 1, (0, frames - 10), (5, 15), (-2.0, 2.0)) + rng.normal(0, tpl.noise_scale, frames - 1)
        vv = _integrate_speed(v0, acc, dt)
        start = rng.uniform(-90.0, 20.0)
        tracks[k] = _path_points(road, _speed_to_arclength(vv, dt, start + 200.0))
    return tracks, 0, th


def _simulate_open_field(rng, tpl: ScenarioTemplate, masked: bool):
    del masked  # agents are independent
    dt, th, tp = TIMING["pedestrian"]
    frames = th + tp
    n = int(rng.integers(tpl.min_agents, tpl.max_agents + 1))
    tracks = {}
    for k in range(n):
        pos = rng.uniform(-6.0, 6.0, size=2)
        speed = rng.uniform(0.6, 1.8)
        heading = rng.uniform(-math.pi, math.pi)
        turn = rng.normal(0, tpl.noise_scale * math.sqrt(dt), frames)
        pts = np.empty((frames, 2))
        pts[0] = pos
        for t in range(1, frames):
            heading += turn[t]
            pts[t] = pts[t - 1] + dt * speed * np.array([math.cos(heading), math.sin(heading)])
        tracks[k] = pts
    return tracks, int(rng.integers(0, n)), th


SIMULATORS = {"merge": _simulate_merge, "intersection": _simulate_intersection, "open-field": _simulate_open_field}


def _scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed + index))


def simulate(template: ScenarioTemplate, seed: int, index: int, masked: bool = False) -> Scene:
    """One raw (world-frame) scene.

    With ``masked`` the informative neighbour's manoeuvre inside the observed
    window is removed (its acceleration there is zeroed, later behaviour and
    all random draws unchanged), which is how the interactivity certificate
    probes what the target's future owes to that history.
    """
    rng = _scene_rng(seed, index)
    tracks, target, th = SIMULATORS[template.name](rng, template, masked)
    mode = template_mode(template.name)
    dt = TIMING[mode][0]
    agents = [Agent(k, tr[:th].copy(), tr[th:].copy()) for k, tr in sorted(tracks.items())]
    scene = Scene(f"{template.name}-{seed}-{index}", template.name, mode, dt, agents, target)
    if template.name in MAPS:
        scene.lanelets = select_lanelets(MAPS[template.name](), agents[scene.agent_index(target)].history)
    return scene


def select_lanelets(lane_graph: LaneGraph, target_history: np.ndarray) -> list[Lanelet]:
    """Lanelets of interest around the target's last observed position."""
    disp = float(np.linalg.norm(target_history[-1] - target_history[0]))
    th = len(target_history)
    horizon = TIMING["driving"][2] / max(th - 1, 1)
    roi = roi_graph_search(target_history[-1], RoiConfig(d_max=horizon * disp + 20.0, d_init=5.0), lane_graph)
    out = []
    for sid in sorted(roi):
        left, right = lanelet_features(lane_graph.segments[sid])
        out.append(Lanelet(sid, left, right))
    return out


def generate(template: str | ScenarioTemplate, count: int, seed: int) -> list[Scene]:
    """``count`` normalised scenes; scene ``i`` uses seed ``seed + i``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    tpl = DEFAULT_TEMPLATES[template] if isinstance(template, str) else template
    return [normalize(simulate(tpl, seed, i)) for i in range(count)]


def interactivity_certificate(template: str | ScenarioTemplate, count: int, seed: int) -> float:
    """Mean final-point shift of the target's true future when the informative neighbour history is masked."""
    tpl = DEFAULT_TEMPLATES[template] if isinstance(template, str) else template
    shifts = []
    for i in range(count):
        a = simulate(tpl, seed, i)
        b = simulate(tpl, seed, i, masked=True)
        ia = a.agent_index(a.target)
        shifts.append(float(np.linalg.norm(a.agents[ia].future[-1] - b.agents[ia].future[-1])))
    return float(np.mean(shifts))


# ---------------------------------------------------------------------------
# frames


def _map_points(scene: Scene, fn) -> Scene:
    agents = [Agent(a.id, fn(a.history), fn(a.future)) for a in scene.agents]
    lanelets = []
    for ln in scene.lanelets:
        left, right = ln.left.copy(), ln.right.copy()
        left[:, :2] = fn(ln.left[:, :2])
        right[:, :2] = fn(ln.right[:, :2])
        lanelets.append(Lanelet(ln.id, left, right))
    return replace(scene, agents=agents, lanelets=lanelets)


def normalize(scene: Scene, target: int | None = None, lam: float = 0.9) -> Scene:
    """Move a world-frame scene into its model frame.

    Driving scenes: the target's last observed point goes to the origin and
    its smoothed heading to zero. Pedestrian scenes: the mean of all last
    observed points goes to the origin, no rotation. The applied transform is
    stored in ``scene.frame``.
    """
    target = scene.target if target is None else target
    idx = scene.agent_index(target)
    if scene.mode == "driving":
        hist = scene.agents[idx].history
        frame = Frame(hist[-1].copy(), smooth_heading(frame_headings(hist), lam))
    else:
        frame = Frame(np.mean([a.history[-1] for a in scene.agents], axis=0), 0.0)
    out = _map_points(scene, frame.to_local)
    out.frame = frame
    out.target = target
    return out


def denormalize(scene: Scene) -> Scene:
    out = _map_points(scene, scene.frame.to_world)
    out.frame = Frame()
    return out


def augment_rotate(scene: Scene, seed: int) -> Scene:
    """Rotate every coordinate about the frame origin by a seeded uniform angle."""
    angle = np.random.default_rng(seed).uniform(-math.pi, math.pi)
    return rotate(scene, angle)


def rotate(scene: Scene, angle: float) -> Scene:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    out = _map_points(scene, lambda xy: np.asarray(xy) @ rot.T)
    out.frame = Frame(scene.frame.translation.copy(), scene.frame.rotation - angle)
    return out


# ---------------------------------------------------------------------------
# dataset files


class DatasetError(ValueError):
    pass


def scene_to_record(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "template": scene.template,
        "mode": scene.mode,
        "dt": scene.dt,
        "target": scene.target,
        "frame": {"translation": scene.frame.translation.tolist(), "rotation": scene.frame.rotation},
        "agents": [{"id": a.id, "history": a.history.tolist(), "future": a.future.tolist()} for a in scene.agents],
        "lanelets": [{"id": ln.id, "left": ln.left.tolist(), "right": ln.right.tolist()} for ln in scene.lanelets],
    }


def _field(rec: dict, key: str, lineno: int, path):
    if key not in rec:
        raise DatasetError(f"{path}:{lineno}: missing field '{key}'")
    return rec[key]


def _array(value, shape_tail: tuple, key: str, lineno: int, path) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise DatasetError(f"{path}:{lineno}: field '{key}' is not numeric") from None
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise DatasetError(f"{path}:{lineno}: field '{key}' has shape {arr.shape}, expected (*, {', '.join(map(str, shape_tail))})")
    return arr


def record_to_scene(rec: dict, lineno: int = 0, path="<memory>") -> Scene:
    agents = []
    for a in _field(rec, "agents", lineno, path):
        agents.append(
            Agent(
                int(_field(a, "id", lineno, path)),
                _array(_field(a, "history", lineno, path), (2,), "agents.history", lineno, path),
                _array(_field(a, "future", lineno, path), (2,), "agents.future", lineno, path),
            )
        )
    if not agents:
        raise DatasetError(f"{path}:{lineno}: field 'agents' is empty")
    lanelets = [
        Lanelet(
            str(_field(ln, "id", lineno, path)),
            _array(_field(ln, "left", lineno, path), (BOUNDARY_FEATURES,), "lanelets.left", lineno, path),
            _array(_field(ln, "right", lineno, path), (BOUNDARY_FEATURES,), "lanelets.right", lineno, path),
        )
        for ln in rec.get("lanelets", [])
    ]
    frame_rec = _field(rec, "frame", lineno, path)
    frame = Frame(np.asarray(_field(frame_rec, "translation", lineno, path), float), float(_field(frame_rec, "rotation", lineno, path)))
    scene = Scene(
        str(_field(rec, "scene_id", lineno, path)),
        str(_field(rec, "template", lineno, path)),
        str(_field(rec, "mode", lineno, path)),
        float(_field(rec, "dt", lineno, path)),
        agents,
        int(_field(rec, "target", lineno, path)),
        lanelets,
        frame,
    )
    try:
        scene.agent_index(scene.target)
    except KeyError:
        raise DatasetError(f"{path}:{lineno}: field 'target' names a missing agent") from None
    return scene


def write_dataset(path, scenes: list[Scene], meta: dict | None = None) -> None:
    """Write scenes as JSON lines: one header object, then one scene per line.

    The file is written to a temporary name and renamed into place.
    """
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "count": len(scenes), "rng": "numpy PCG64(seed + index)"}
    header.update(meta or {})
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene), sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_dataset(path) -> list[Scene]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError(f"{path}:1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:1: header is not valid JSON ({exc.msg})") from None
    if header.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{path}:1: field 'format' is {header.get('format')!r}, expected {DATASET_FORMAT!r}")
    if header.get("version") != DATASET_VERSION:
        raise DatasetError(f"{path}:1: field 'version' is {header.get('version')!r}, expected {DATASET_VERSION}")
    scenes = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: record is not valid JSON ({exc.msg})") from None
        scenes.append(record_to_scene(rec, lineno, path))
    count = header.get("count")
    if count != len(scenes):
        raise DatasetError(f"{path}:1: field 'count' says {count} scenes but the file holds {len(scenes)} (truncated?)")
    return scenes
