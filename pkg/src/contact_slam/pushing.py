"""
Blind pushing: drive a block to a target with a held tool, discover an
unexpected obstacle by tactile exploration, and detour around it.

The block's starting pose is known and tracked through the tool (the tool
and block stick together while in contact); the obstacle's pose is not.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exploration import COMPASS, ExplorationConfig, ExplorationReport, run_policy
from .geometry import Contour, PenetrationError, point_in_region, rot2, sweep_first_contact
from .simulator import PushWorld, WorldState, execute_push, ground_truth_error

log = logging.getLogger(__name__)


@dataclass
class PushReport:
    success: bool = False
    message: str = ""
    explorations: int = 0
    exploration: Optional[ExplorationReport] = None
    obstacle_estimate: Optional[list] = None
    obstacle_error_mm: float = float("nan")
    block_final: Optional[list] = None
    segments: list = field(default_factory=list)

    def to_dict(self) -> dict:
        steps = self.exploration.to_dict()["steps"] if self.exploration else []
        return {
            "steps": steps,
            "segments": self.segments,
            "summary": {
                "success": self.success,
                "message": self.message,
                "explorations": self.explorations,
                "exploration_iterations": self.exploration.iterations if self.exploration else 0,
                "obstacle_estimate": self.obstacle_estimate,
                "obstacle_error_mm": (None if not np.isfinite(self.obstacle_error_mm)
                                      else round(self.obstacle_error_mm, 6)),
                "block_final": self.block_final,
            },
        }


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n == 0:
        raise ValueError("zero-length direction")
    return v / n


def detour_waypoints(block: np.ndarray, target: np.ndarray, push_dir: np.ndarray, obstacle: Contour,
                     body_lo: np.ndarray, body_hi: np.ndarray, margin: float) -> list[np.ndarray]:
    """Block-centre waypoints that skirt ``obstacle`` (world placement) on the cheaper side.

    Works in a frame whose +y axis is ``push_dir``. ``body_lo``/``body_hi``
    bound the block plus tool relative to the block centre in that frame.
    The route moves sideways until clear, forward until the tool's tail has
    passed the obstacle, sideways to the target line, then forward.
    """
    ang = np.arctan2(push_dir[1], push_dir[0]) - np.pi / 2
    R = rot2(-ang)  # world -> push frame
    c, t = R @ block, R @ target
    ov = obstacle.vertices @ R.T
    ox0, oy0 = ov.min(axis=0)
    ox1, oy1 = ov.max(axis=0)
    xl = ox0 - body_hi[0] - margin
    xr = ox1 - body_lo[0] + margin
    beside = c[1] + body_hi[1] > oy0
    if beside and c[0] >= ox1:
        x_side = xr
    elif beside and c[0] <= ox0:
        x_side = xl
    else:
        x_side = min((xl, xr), key=lambda x: abs(x - c[0]) + abs(x - t[0]))
    y_clear = max(c[1], oy1 - body_lo[1] + margin)
    pts = [np.array([x_side, c[1]]), np.array([x_side, y_clear]), np.array([t[0], y_clear]), t]
    if t[1] < y_clear:
        log.warning("target lies before the obstacle clearance line; detour cannot reach it")
    out = []
    prev = c
    for p in pts:
        if np.linalg.norm(p - prev) > 1e-9:
            out.append(R.T @ p)
            prev = p
    return out


def run_push(state: WorldState, config: ExplorationConfig, rngs: dict, margin: float = 8.0,
             max_explorations: int = 3, max_segments: int = 20) -> tuple[PushReport, WorldState]:
    """Push the block to the target centre, exploring and detouring when blocked.

    Returns the report and the final world.
    """
    if state.block is None:
        raise ValueError("scenario has no block")
    rep = PushReport()
    target = state.target.centroid
    if point_in_region(state.block.centroid, state.target):
        rep.success = True
        rep.message = "block already inside target"
        rep.block_final = [round(float(v), 6) for v in state.block.centroid]
        return rep, state

    block_est = state.block.centroid.copy()  # known at the start, then dead-reckoned
    push_dir = _unit(target - block_est)
    plan = [target]
    while plan:
        if len(rep.segments) >= max_segments:
            rep.message = "segment cap reached"
            break
        wp = plan.pop(0)
        delta = wp - block_est
        dist = float(np.linalg.norm(delta))
        if dist < 1e-6:
            continue
        d = delta / dist
        back = float(d @ push_dir)
        if -0.2 < back < 0:
            # dead-reckoning drift; never pull the tool away from the block
            d = _unit(d - back * push_dir)
            dist = float(delta @ d)
        # the tool may first have to close a gap to the block
        try:
            hit = sweep_first_contact(state.moving, d, 1e6,
                                      [state.block.translated(block_est - state.block.centroid)])
        except PenetrationError:
            hit = None
        gap = hit.distance if hit is not None else 0.0
        state, _, traveled, events = execute_push(state, d, gap + dist)
        engaged = [e for e in events if e.kind == "tool-block"]
        start = engaged[0].distance if engaged else traveled
        block_est = block_est + max(0.0, traveled - start) * d
        blocked = [e for e in events if e.obstacle]
        rep.segments.append({"direction": [round(float(v), 6) for v in d], "planned_mm": round(dist, 6),
                             "traveled_mm": round(float(traveled), 6),
                             "events": [e.to_dict() for e in events]})
        if not engaged:
            rep.message = "tool lost the block"
            break
        if not blocked:
            continue
        if rep.explorations >= max_explorations:
            rep.message = "exploration cap reached"
            break
        rep.explorations += 1
        pw = PushWorld(state, block_est, push_dir, COMPASS)
        explo = run_policy(pw, config, rngs, actions=pw.actions)
        state = pw.state
        block_est = pw.block_estimate
        rep.exploration = explo
        if not explo.converged:
            rep.message = "obstacle exploration did not converge"
            break
        obstacle_origin = pw.obstacle_estimate(explo.estimate)
        rep.obstacle_estimate = [round(float(v), 6) for v in obstacle_origin]
        rep.obstacle_error_mm = ground_truth_error(state, obstacle_origin, pw.environment[0].id)
        placed = pw.environment[0].translated(obstacle_origin)
        R = rot2(-(np.arctan2(push_dir[1], push_dir[0]) - np.pi / 2))
        rel = np.vstack([state.block.vertices - state.block.centroid,
                         state.moving.vertices - state.block.centroid]) @ R.T
        plan = detour_waypoints(block_est, target, push_dir, placed, rel.min(axis=0), rel.max(axis=0), margin)
    rep.block_final = [round(float(v), 6) for v in state.block.centroid]
    rep.success = point_in_region(state.block.centroid, state.target)
    if rep.success:
        rep.message = rep.message or "block inside target"
    elif not rep.message:
        rep.message = "block outside target"
    return rep, state
