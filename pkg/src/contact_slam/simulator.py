"""
Quasi-static planar ground truth: executes moves and pushes, detects first
contact, and synthesises noisy finger-pad wrenches and marker fields.

Scenario files are JSON. Environment contours (``obstacles``), the insertion
``goal`` and the belief ``prior`` for insertion tasks are given in the
environment's own frame; ``env_pose`` places that frame in the world and is
hidden from the policy. For pushing tasks the prior describes where the
obstacle frame may lie in the world.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
from shapely.geometry import Polygon

from .geometry import (EPS_PEN, Contour, ContactPair, GeometryError, Pose2, build_contour, point_in_region,
                       penetration_depth, sweep_first_contact, transform_contour)
from .tactile import (DEFAULT_MAPPING, CalibrationSample, LeverArms, MarkerField, Prism, SensorReading, Wrench, LEFT, RIGHT,
                      synthesize_wrenches)

log = logging.getLogger(__name__)

F_PROBE = 2.0  # N
CHAMFER_MM = 3.0
CHAMFER_FORCE = 1.0  # N
DEFAULT_ARMS = LeverArms([3.0, 15.0, -2.0], [-2.0, -15.0, 1.5])
SCENARIO_NAMES = ("socket_two_pin", "socket_three_pin", "push_block")


class ScenarioError(ValueError):
    """A scenario file failed to parse or violates a world invariant."""


def rng_streams(seed: int, names: Sequence[str] = ("belief", "noise", "resample", "truth")) -> dict:
    """Independent named generators derived from one integer seed."""
    return {n: np.random.default_rng([int(seed), zlib.crc32(n.encode())]) for n in names}


@dataclass(frozen=True)
class NoiseConfig:
    force: float = 0.02  # N
    torque: float = 0.2  # N mm
    marker: float = 0.01  # mm
    distance: float = 0.2  # mm

    def __post_init__(self):
        for k in ("force", "torque", "marker", "distance"):
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"noise {k} must be a finite non-negative number, got {v}")

    def scaled(self, k: float) -> "NoiseConfig":
        return NoiseConfig(self.force * k, self.torque * k, self.marker * k, self.distance * k)

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Grasped:
    """Held contour in the gripper frame (reference point at the gripper origin) and its height span."""

    contour: Contour
    z_min: float
    z_max: float

    @property
    def body(self) -> Prism:
        return Prism(self.contour, self.z_min, self.z_max)

    @property
    def contact_height(self) -> float:
        return 0.5 * (self.z_min + self.z_max)


@dataclass(frozen=True, eq=False)
class WorldState:
    gripper_pose: Pose2
    grasped: Grasped
    obstacles: tuple
    target: Contour
    noise: NoiseConfig
    rng_seed: int
    block: Optional[Contour] = None
    name: str = ""
    task: str = "insert"
    env_local: tuple = ()
    env_pose: Pose2 = Pose2(0.0, 0.0, 0.0)
    prior: Optional[Contour] = None
    goal: Optional[np.ndarray] = None
    arms: LeverArms = DEFAULT_ARMS
    probe_force: float = F_PROBE
    marker_rest: np.ndarray = field(default_factory=lambda: _marker_grid())
    rng: np.random.Generator = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.rng is None:
            object.__setattr__(self, "rng", rng_streams(self.rng_seed)["noise"])

    @property
    def moving(self) -> Contour:
        """Grasped contour placed in the world."""
        return transform_contour(self.grasped.contour, self.gripper_pose)

    @property
    def statics(self) -> list:
        return list(self.obstacles) + ([self.block] if self.block is not None else [])

    @property
    def goal_world(self) -> Optional[np.ndarray]:
        return None if self.goal is None else self.env_pose.apply(self.goal)


def _marker_grid(n: int = 3, pitch: float = 4.0) -> np.ndarray:
    g = (np.arange(n) - (n - 1) / 2) * pitch
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(n * n)])


# --------------------------------------------------------------------------- scenario files

_CONTOUR = {"type": "object", "required": ["vertices"],
            "properties": {"id": {"type": "string"},
                           "vertices": {"type": "array", "minItems": 3,
                                        "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                  "items": {"type": "number"}}}}}
_POSE = {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}
_VEC3 = {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["grasped", "obstacles", "target", "gripper_pose", "noise", "seed"],
    "properties": {
        "name": {"type": "string"},
        "task": {"enum": ["insert", "push"]},
        "seed": {"type": "integer"},
        "grasped": {"allOf": [_CONTOUR, {"type": "object", "required": ["z_min", "z_max"],
                                          "properties": {"z_min": {"type": "number"},
                                                         "z_max": {"type": "number"}}}]},
        "obstacles": {"type": "array", "items": _CONTOUR},
        "block": _CONTOUR,
        "target": _CONTOUR,
        "goal": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
        "prior": _CONTOUR,
        "gripper_pose": _POSE,
        "env_pose": _POSE,
        "truth_jitter_mm": {"type": "number", "minimum": 0},
        "probe_force": {"type": "number", "exclusiveMinimum": 0},
        "noise": {"type": "object",
                  "properties": {k: {"type": "number", "minimum": 0}
                                 for k in ("force", "torque", "marker", "distance")},
                  "additionalProperties": False},
        "arms": {"type": "object", "required": ["left", "right"],
                 "properties": {"left": _VEC3, "right": _VEC3}},
    },
}


def scenario_dir() -> Path:
    return Path(str(resources.files("contact_slam") / "scenarios"))


def resolve_scenario(name_or_path, search: Optional[Sequence[Path]] = None) -> Path:
    """Map a bundled scenario name (or a path) to a file."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return p
    for d in list(search or []) + [scenario_dir()]:
        cand = Path(d) / f"{name_or_path}.json"
        if cand.exists():
            return cand
    if p.exists():
        return p
    raise FileNotFoundError(f"scenario {name_or_path!r} not found")


def _contour(spec: dict, where: str, default_id: str) -> Contour:
    try:
        return build_contour(spec["vertices"], spec.get("id", default_id))
    except GeometryError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def load_scenario(path, seed: Optional[int] = None, noise: Optional[NoiseConfig] = None) -> WorldState:
    """Parse and validate a scenario file.

    Args:
        path: file path or bundled scenario name.
        seed: overrides the file's seed; it drives the hidden placement jitter
            and the sensor noise stream.
        noise: overrides the file's noise block.

    Raises:
        FileNotFoundError: no such scenario.
        ScenarioError: malformed JSON, schema violation or overlapping geometry.
    """
    path = resolve_scenario(path)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{path}: at {loc}: {exc.message}") from None

    seed = int(data["seed"] if seed is None else seed)
    g = data["grasped"]
    grasped = Grasped(_contour(g, "grasped", "grasped"), float(g["z_min"]), float(g["z_max"]))
    if grasped.z_max <= grasped.z_min:
        raise ScenarioError(f"{path}: at grasped: z_max must exceed z_min")
    env_local = tuple(_contour(o, f"obstacles/{i}", f"obstacle{i}") for i, o in enumerate(data["obstacles"]))
    ids = [c.id for c in env_local] + [grasped.contour.id]
    block = _contour(data["block"], "block", "block") if "block" in data else None
    if block is not None:
        ids.append(block.id)
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"{path}: contour ids must be unique, got {ids}")
    task = data.get("task", "push" if block is not None else "insert")
    nz = noise or NoiseConfig(**data["noise"])
    rng_truth = rng_streams(seed)["truth"]
    gripper = Pose2(*data["gripper_pose"])
    nominal = Pose2(*data.get("env_pose", [0.0, 0.0, 0.0]))
    jitter = float(data.get("truth_jitter_mm", 0.0))
    target = _contour(data["target"], "target", "target")

    def statics_at(pose):
        return [transform_contour(c, pose) for c in env_local]

    def clear(pose) -> float:
        obs = statics_at(pose)
        if not obs:
            return 0.0
        pen = float(penetration_depth(transform_contour(grasped.contour, gripper), obs)[0])
        if block is not None:
            pen = max(pen, float(penetration_depth(block, obs)[0]))
        return pen

    env_pose = nominal
    if jitter > 0:
        for _ in range(1000):
            dx, dy = rng_truth.uniform(-jitter, jitter, size=2)
            env_pose = Pose2(nominal.x + dx, nominal.y + dy, nominal.theta)
            if clear(env_pose) <= EPS_PEN:
                break
        else:
            raise ScenarioError(f"{path}: no collision-free placement within truth_jitter_mm")
    pen = clear(env_pose)
    if pen > EPS_PEN:
        raise ScenarioError(f"{path}: at obstacles: initial geometry overlaps by {pen:.4g} mm")
    if block is not None:
        moving = transform_contour(grasped.contour, gripper)
        bp = float(penetration_depth(moving, [block])[0])
        if bp > EPS_PEN:
            raise ScenarioError(f"{path}: at block: grasped contour overlaps the block by {bp:.4g} mm")

    arms = DEFAULT_ARMS
    if "arms" in data:
        arms = LeverArms(data["arms"]["left"], data["arms"]["right"])
    prior = _contour(data["prior"], "prior", "prior") if "prior" in data else None
    goal = np.asarray(data["goal"], dtype=float) if "goal" in data else None
    if task == "push":
        target_world = target
    else:
        target_world = transform_contour(target, env_pose)
        if goal is None:
            goal = target.centroid
    return WorldState(gripper, grasped, tuple(statics_at(env_pose)), target_world, nz, seed,
                      block=block, name=data.get("name", Path(path).stem), task=task, env_local=env_local,
                      env_pose=env_pose, prior=prior, goal=goal, arms=arms,
                      probe_force=float(data.get("probe_force", F_PROBE)),
                      rng=rng_streams(seed)["noise"])


# --------------------------------------------------------------------------- sensing

def load_share(point, arms: LeverArms) -> float:
    """Left pad's share of a load at ``point`` by the lever rule, clipped to [0.1, 0.9]."""
    span = arms.left - arms.right
    half = 0.5 * float(np.linalg.norm(span))
    mid = 0.5 * (arms.left + arms.right)
    if half == 0:
        return 0.5
    s = 0.5 + 0.5 * float((np.asarray(point, dtype=float) - mid) @ span) / (2 * half * half)
    return float(np.clip(s, 0.1, 0.9))


def _markers(w: WorldState) -> MarkerField:
    rest = w.marker_rest
    disp = rest + (w.rng.normal(0.0, w.noise.marker, rest.shape) if w.noise.marker > 0 else 0.0)
    return MarkerField(rest, disp)


def sense(w: WorldState, force_gripper, point_gripper) -> SensorReading:
    """Noisy pad wrenches for a load (gripper frame) acting on the grasped body at a point."""
    F = np.asarray(force_gripper, dtype=float)
    C = np.asarray(point_gripper, dtype=float)
    left, right = synthesize_wrenches(F, C, w.arms, load_share(C, w.arms), DEFAULT_MAPPING)
    nz = w.noise
    out = []
    for wr in (left, right):
        f = wr.force + (w.rng.normal(0.0, nz.force, 3) if nz.force > 0 else 0.0)
        m = wr.torque + (w.rng.normal(0.0, nz.torque, 3) if nz.torque > 0 else 0.0)
        out.append(Wrench(f, m, wr.frame))
    return SensorReading(out[0], out[1], _markers(w))


def zero_reading(w: WorldState) -> SensorReading:
    """Tared pads with no load; only the marker field carries noise."""
    return SensorReading(Wrench.zero(LEFT), Wrench.zero(RIGHT), _markers(w))


def contact_reading(w: WorldState, force_world, point_world) -> SensorReading:
    g = w.gripper_pose
    inv = g.inverse()
    c, s = np.cos(-g.theta), np.sin(-g.theta)
    fw = np.asarray(force_world, dtype=float)
    f_local = np.array([c * fw[0] - s * fw[1], s * fw[0] + c * fw[1], 0.0])
    p = inv.apply(np.asarray(point_world, dtype=float))
    return sense(w, f_local, [p[0], p[1], w.grasped.contact_height])


def _static(w: WorldState, cid: str) -> Contour:
    for c in w.statics:
        if c.id == cid:
            return c
    raise KeyError(cid)


def _moved(w: WorldState, d: np.ndarray, dist: float) -> WorldState:
    g = w.gripper_pose
    return replace(w, gripper_pose=Pose2(g.x + dist * d[0], g.y + dist * d[1], g.theta))


def _unit(action) -> np.ndarray:
    d = np.asarray(getattr(action, "direction", action), dtype=float)
    n = float(np.linalg.norm(d))
    if n == 0:
        raise ValueError("action direction must be non-zero")
    return d / n


def _jitter(w: WorldState, dist: float) -> float:
    if w.noise.distance <= 0:
        return dist
    return max(0.0, dist + float(w.rng.normal(0.0, w.noise.distance)))


def execute_move(w: WorldState, action, max_dist: float):
    """Translate the grasped contour until first contact or ``max_dist``.

    Returns:
        ``(world, reading, traveled, contact)``. ``traveled`` is the measured
        stroke, which carries the contact-detection jitter.
    """
    d = _unit(action)
    hit = sweep_first_contact(w.moving, d, max_dist, w.statics)
    if hit is None:
        w2 = _moved(w, d, max_dist)
        return w2, zero_reading(w2), float(max_dist), False
    w2 = _moved(w, d, hit.distance)
    static = _static(w, hit.pair.env_edge[0])
    n = static.normals[hit.pair.env_edge[1]]
    reading = contact_reading(w2, w.probe_force * n, hit.contact_point)
    return w2, reading, _jitter(w2, hit.distance), True


def place(w: WorldState, xy) -> WorldState:
    """Lift the grasped object and set it down with its reference point at ``xy``."""
    return replace(w, gripper_pose=Pose2(float(xy[0]), float(xy[1]), w.gripper_pose.theta))


def probe_alignment(w: WorldState):
    """Press down at the current placement.

    Inside ``CHAMFER_MM`` of the goal the receptacle chamfer pushes the object
    sideways towards it; within one millimetre it drops in with no lateral
    load. Returns ``(reading, distance_to_goal)``.
    """
    goal = w.goal_world
    if goal is None:
        raise ValueError("scenario has no insertion goal")
    ref = w.gripper_pose.xy
    dist = float(np.linalg.norm(goal - ref))
    if dist < 1.0:
        return zero_reading(w), dist
    z = w.grasped.z_min
    if dist < CHAMFER_MM:
        u = (goal - ref) / dist
        c, s = np.cos(-w.gripper_pose.theta), np.sin(-w.gripper_pose.theta)
        f = CHAMFER_FORCE * np.array([c * u[0] - s * u[1], s * u[0] + c * u[1], 0.0])
        return sense(w, f, [0.0, 0.0, z]), dist
    return sense(w, [0.0, 0.0, w.probe_force], [0.0, 0.0, z]), dist


# --------------------------------------------------------------------------- pushing

@dataclass(frozen=True)
class PushEvent:
    kind: str  # "tool-block", "block-obstacle" or "tool-obstacle"
    pair: ContactPair
    distance: float = 0.0  # travel at which the contact occurred

    @property
    def obstacle(self) -> bool:
        return self.kind != "tool-block"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pair": self.pair.as_list(), "distance_mm": round(self.distance, 6)}


def _touch_normal(tool: Contour, block: Contour, tol: float = 1e-6) -> Optional[np.ndarray]:
    """Push direction into the block at a tool-block contact, or None when apart."""
    a, b = Polygon(tool.vertices), Polygon(block.vertices)
    if a.distance(b) > tol:
        return None
    patch = a.buffer(tol).intersection(b.exterior)
    if patch.is_empty:
        return None
    c = np.array(patch.centroid.coords[0])
    v = block.vertices
    w = np.roll(v, -1, axis=0)
    ab = w - v
    t = np.clip(((c - v) * ab).sum(1) / (ab * ab).sum(1), 0.0, 1.0)
    dist = np.linalg.norm(c - (v + t[:, None] * ab), axis=1)
    near = dist <= 10 * tol + 1e-9
    if not np.any(near):
        near = dist <= dist.min() + 1e-9
    n = -block.normals[near].sum(axis=0)
    return n / np.linalg.norm(n)


def _contact_on(tool: Contour, block: Contour, tol: float = 1e-6) -> np.ndarray:
    patch = Polygon(tool.vertices).buffer(tol).intersection(Polygon(block.vertices).exterior)
    return np.array(patch.centroid.coords[0])


def execute_push(w: WorldState, action, max_dist: float):
    """Move the tool along ``action``; a touched block sticks to it and moves rigidly.

    Returns:
        ``(world, reading, traveled, events)``. ``events`` lists tool-block and
        block-obstacle (or tool-obstacle) contacts met during the move.
    """
    if w.block is None:
        raise ValueError("scenario has no block to push")
    d = _unit(action)
    tool, block = w.moving, w.block
    events: list = []
    n = _touch_normal(tool, block)
    gap = 0.0
    if n is None:
        hit_b = sweep_first_contact(tool, d, max_dist, [block])
        hit_o = sweep_first_contact(tool, d, max_dist, list(w.obstacles)) if w.obstacles else None
        if hit_b is None or (hit_o is not None and hit_o.distance < hit_b.distance):
            log.warning("push along %s reaches no block; no-op", np.round(d, 3).tolist())
            return w, zero_reading(w), 0.0, events
        gap = hit_b.distance
        events.append(PushEvent("tool-block", hit_b.pair, gap))
        w = _moved(w, d, gap)
        tool = w.moving
    else:
        if float(d @ n) < -1e-9:
            log.warning("push along %s leaves the block; no-op", np.round(d, 3).tolist())
            return w, zero_reading(w), 0.0, events
        events.append(PushEvent("tool-block", ContactPair((block.id, -1), (tool.id, -1))))
    remaining = max_dist - gap
    obstacles = list(w.obstacles)
    hits = []
    if obstacles and remaining > 0:
        hb = sweep_first_contact(block, d, remaining, obstacles)
        ht = sweep_first_contact(tool, d, remaining, obstacles)
        if hb is not None:
            hits.append(("block-obstacle", hb))
        if ht is not None:
            hits.append(("tool-obstacle", ht))
    if not hits:
        w2 = replace(_moved(w, d, remaining), block=block.translated(remaining * d))
        return w2, zero_reading(w2), float(max_dist), events
    kind, hit = min(hits, key=lambda kh: kh[1].distance)
    w2 = replace(_moved(w, d, hit.distance), block=block.translated(hit.distance * d))
    events.append(PushEvent(kind, hit.pair, gap + hit.distance))
    obs = _static(w2, hit.pair.env_edge[0])
    f = w.probe_force * obs.normals[hit.pair.env_edge[1]]
    where = _contact_on(w2.moving, w2.block) if kind == "block-obstacle" else hit.contact_point
    reading = contact_reading(w2, f, where)
    return w2, reading, _jitter(w2, gap + hit.distance), events


# --------------------------------------------------------------------------- calibration data

CAL_BLOCK = Prism(build_contour([[-15, -15], [15, -15], [15, 15], [-15, 15]], "cal_block"), -45.0, -15.0)
CAL_FORCE = 20.0  # N


def synth_contact(body: Prism, rng: np.random.Generator, magnitude: float = CAL_FORCE,
                  max_tilt: float = np.pi / 6) -> tuple[np.ndarray, np.ndarray]:
    """Random pressing load on a side or bottom face of ``body``.

    Returns ``(point, force)`` in the gripper frame; the force points into the
    body within ``max_tilt`` of the inward normal.
    """
    c = body.contour
    k = int(rng.integers(len(c.edges) + 1))
    if k < len(c.edges):
        e = c.edges[k]
        xy = e.start + rng.uniform() * (e.end - e.start)
        point = np.array([xy[0], xy[1], rng.uniform(body.z_min, body.z_max)])
        inward = -np.array([e.normal[0], e.normal[1], 0.0])
    else:
        lo, hi = c.vertices.min(axis=0), c.vertices.max(axis=0)
        while True:
            xy = rng.uniform(lo, hi)
            if point_in_region(xy, c):
                break
        point = np.array([xy[0], xy[1], body.z_min])
        inward = np.array([0.0, 0.0, 1.0])
    # tilt the load within a cone around the inward normal
    t = rng.normal(size=3)
    t -= (t @ inward) * inward
    t /= np.linalg.norm(t)
    a = rng.uniform(0.0, max_tilt)
    return point, magnitude * (np.cos(a) * inward + np.sin(a) * t)


def synth_calibration(n: int, noise: NoiseConfig, seed: int, arms: LeverArms = DEFAULT_ARMS,
                      body: Prism = CAL_BLOCK, magnitude: float = CAL_FORCE) -> list[CalibrationSample]:
    """Calibration samples: known loads on a known block, read through noisy pads."""
    rngs = rng_streams(seed, ("truth", "noise"))
    out = []
    for _ in range(n):
        point, force = synth_contact(body, rngs["truth"], magnitude)
        left, right = synthesize_wrenches(force, point, arms, load_share(point, arms), DEFAULT_MAPPING)
        noisy = []
        for wr in (left, right):
            f = wr.force + (rngs["noise"].normal(0.0, noise.force, 3) if noise.force > 0 else 0.0)
            m = wr.torque + (rngs["noise"].normal(0.0, noise.torque, 3) if noise.torque > 0 else 0.0)
            noisy.append(Wrench(f, m, wr.frame))
        out.append(CalibrationSample(noisy[0], noisy[1], point))
    return out


# --------------------------------------------------------------------------- truth

def ground_truth_error(w: WorldState, estimate, subject: str = "grasped") -> float:
    """Distance from ``estimate`` to the true reference point of ``subject``.

    ``subject`` is ``"grasped"``, ``"block"``, ``"environment"`` or an obstacle id;
    obstacles share the environment frame origin as reference.

    Raises:
        KeyError: unknown subject.
    """
    if subject == "grasped":
        truth = w.gripper_pose.xy
    elif subject == "block":
        if w.block is None:
            raise KeyError("scenario has no block")
        truth = w.block.centroid
    elif subject == "environment" or subject in {c.id for c in w.obstacles}:
        truth = w.env_pose.xy
    else:
        raise KeyError(f"unknown subject {subject!r}")
    return float(np.linalg.norm(np.asarray(estimate, dtype=float) - truth))


def true_offset(w: WorldState) -> np.ndarray:
    """Grasped reference point in the environment frame."""
    return w.env_pose.inverse().apply(w.gripper_pose.xy)


# --------------------------------------------------------------------------- policy adapters

@dataclass(frozen=True)
class MoveResult:
    reading: SensorReading
    traveled: float
    contact: bool
    events: tuple = ()


class InsertionWorld:
    """Exposes a world to the exploration loop with the environment placement hidden.

    The environment frame is assumed axis-aligned with the world.
    """

    def __init__(self, state: WorldState, arms: Optional[LeverArms] = None):
        if state.prior is None:
            raise ScenarioError("insertion scenario needs a prior region")
        self.state = state
        self.environment = list(state.env_local)
        self.moving = state.grasped.contour
        self.prior = state.prior
        self.goal = state.goal
        self.body = state.grasped.body
        self.arms = arms or state.arms
        self.actions = None

    def gripper_pose(self) -> Pose2:
        return self.state.gripper_pose

    def markers(self) -> MarkerField:
        return _markers(self.state)

    def execute(self, action, max_dist: float) -> MoveResult:
        self.state, reading, traveled, contact = execute_move(self.state, action, max_dist)
        return MoveResult(reading, traveled, contact)

    def place(self, xy) -> None:
        self.state = place(self.state, xy)

    def probe_alignment(self):
        return probe_alignment(self.state)

    def localization_error(self, offset) -> float:
        return ground_truth_error(self.state, self.state.gripper_pose.xy - np.asarray(offset), "environment")


class PushWorld:
    """Obstacle localisation while the tool holds the block against it.

    The belief is over the block reference point (its centroid) relative to the
    obstacle frame, so the block is the moving contour and tactile readings are
    interpreted through it. Only directions that keep the tool pressed on the
    block are offered.
    """

    def __init__(self, state: WorldState, block_estimate, push_normal, actions: Sequence,
                 arms: Optional[LeverArms] = None):
        if state.block is None or state.prior is None:
            raise ScenarioError("push scenario needs a block and an obstacle prior")
        self.state = state
        self.block_estimate = np.asarray(block_estimate, dtype=float)
        c = state.block.centroid
        self.moving = build_contour(state.block.vertices - c, state.block.id)
        self.environment = list(state.env_local)
        # obstacle-origin region in the world -> block-minus-obstacle offsets
        self.prior = build_contour(self.block_estimate - state.prior.vertices, "prior")
        self.goal = None
        self.body = None
        self.arms = arms or state.arms
        n = np.asarray(push_normal, dtype=float)
        self.actions = [a for a in actions if float(np.dot(a.direction, n)) >= -1e-9]
        self.events: list = []

    def gripper_pose(self) -> Pose2:
        return self.state.gripper_pose

    def markers(self) -> MarkerField:
        return _markers(self.state)

    def execute(self, action, max_dist: float) -> MoveResult:
        d = _unit(action)
        self.state, reading, traveled, events = execute_push(self.state, d, max_dist)
        self.block_estimate = self.block_estimate + traveled * d
        self.events.extend(events)
        contact = any(e.obstacle for e in events)
        return MoveResult(reading, traveled, contact, tuple(events))

    def place(self, xy) -> None:
        raise NotImplementedError("the block cannot be lifted")

    def probe_alignment(self):
        raise NotImplementedError("pushing has no insertion goal")

    def obstacle_estimate(self, offset) -> np.ndarray:
        return self.block_estimate - np.asarray(offset, dtype=float)

    def localization_error(self, offset) -> float:
        return ground_truth_error(self.state, self.state.block.centroid - np.asarray(offset),
                                  self.environment[0].id if self.environment else "environment")
