"""
MAP estimation of the gripper and grasped-object pose chains, the
environment region, and the alignment test that ends a task.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPoint

from .geometry import Pose2, wrap_angle
from .tactile import pose_matrix, planar_pose

log = logging.getLogger(__name__)

SIGMA_GRIPPER = (0.1, 0.1, 1e-3)
SIGMA_OBJECT = (0.3, 0.3, 3e-3)
F_ALI = 0.3  # N
D_ALI = 1.0  # mm


class SingularSystemError(np.linalg.LinAlgError):
    pass


class BeliefCollapse(RuntimeError):
    """No hypothesis survives an update."""


@dataclass
class Region:
    """Particle-supported region: member points plus their convex hull."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))

    @property
    def hull(self):
        return MultiPoint([tuple(p) for p in self.points]).convex_hull

    @property
    def area(self) -> float:
        return float(self.hull.area) if len(self.points) else 0.0

    def contains(self, pts, tol: float = 1e-6) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        h = self.hull.buffer(tol)
        return shapely.contains_xy(h, pts[:, 0], pts[:, 1])


@dataclass
class StateChain:
    gripper_poses: list = field(default_factory=list)
    object_poses: list = field(default_factory=list)
    env_regions: list = field(default_factory=list)

    def get(self, key) -> Pose2:
        kind, t = key
        seq = self.gripper_poses if kind == "g" else self.object_poses
        if not 0 <= t < len(seq):
            raise KeyError(f"state {kind}{t} not in chain")
        return seq[t]

    def keys(self) -> list:
        return ([("g", t) for t in range(len(self.gripper_poses))]
                + [("l", t) for t in range(len(self.object_poses))])


@dataclass
class GaussianFactor:
    kind: str
    keys: tuple
    residual: Callable[..., np.ndarray]
    sigma: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(self.sigma <= 0):
            raise ValueError("covariance must be positive definite")

    def whitened(self, chain_values: dict) -> np.ndarray:
        r = np.asarray(self.residual(*[chain_values[k] for k in self.keys]), dtype=float)
        return r / self.sigma


def _pose_diff(a: Pose2, b: Pose2) -> np.ndarray:
    return np.array([a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta)])


def gripper_factor_residual(g: Pose2, prior: Pose2) -> np.ndarray:
    return _pose_diff(g, prior)


def predicted_object_pose(g: Pose2, in_hand: np.ndarray, gripper_to_sensor: Optional[np.ndarray] = None) -> Pose2:
    T = pose_matrix(g)
    if gripper_to_sensor is not None:
        T = T @ gripper_to_sensor
    return planar_pose(T @ in_hand)


def object_factor_residual(l: Pose2, g: Pose2, in_hand: np.ndarray,
                           gripper_to_sensor: Optional[np.ndarray] = None) -> np.ndarray:
    return _pose_diff(l, predicted_object_pose(g, in_hand, gripper_to_sensor))


def gripper_factor(t: int, prior: Pose2, sigma=SIGMA_GRIPPER) -> GaussianFactor:
    return GaussianFactor("gripper", (("g", t),), lambda g: gripper_factor_residual(g, prior), sigma)


def object_factor(t: int, in_hand: np.ndarray, gripper_to_sensor=None, sigma=SIGMA_OBJECT) -> GaussianFactor:
    return GaussianFactor("object", (("l", t), ("g", t)),
                          lambda l, g: object_factor_residual(l, g, in_hand, gripper_to_sensor), sigma)


def _values(keys, x) -> dict:
    return {k: Pose2(*x[3 * i:3 * i + 3]) for i, k in enumerate(keys)}


def _stack(factors, keys, x) -> np.ndarray:
    vals = _values(keys, x)
    return np.concatenate([f.whitened(vals) for f in factors])


def solve_map(chain: StateChain, factors: Sequence[GaussianFactor], max_iter: int = 50,
              tol: float = 1e-8, trace: Optional[list] = None) -> StateChain:
    """Damped Gauss-Newton on the whitened factor residuals.

    Args:
        chain: initial estimate; not modified.
        factors: Gaussian factors over keys ``("g", t)`` / ``("l", t)``.
        trace: if given, receives ``(iteration, cost, step_norm)`` tuples.

    Raises:
        SingularSystemError: some state is unconstrained.
    """
    keys = chain.keys()
    index = {k: i for i, k in enumerate(keys)}
    covered = {k for f in factors for k in f.keys}
    unknown = covered - set(index)
    if unknown:
        raise KeyError(f"factors reference states missing from the chain: {sorted(unknown)}")
    free = [k for k in keys if k not in covered]
    if free:
        raise SingularSystemError(f"unconstrained states: {', '.join(f'{a}{t}' for a, t in free)}")

    x = np.concatenate([chain.get(k).as_list() for k in keys]) if keys else np.zeros(0)
    r = _stack(factors, keys, x)
    cost = 0.5 * float(r @ r)
    if trace is not None:
        trace.append((0, cost, 0.0))
    h = 1e-6
    for it in range(1, max_iter + 1):
        J = np.empty((len(r), len(x)))
        for j in range(len(x)):
            dx = np.zeros_like(x)
            dx[j] = h
            J[:, j] = (_stack(factors, keys, x + dx) - _stack(factors, keys, x - dx)) / (2 * h)
        H = J.T @ J
        g = J.T @ r
        diag = np.diag(H)
        weak = [keys[j // 3] for j in range(len(x)) if diag[j] <= 1e-12]
        if weak:
            names = sorted({f"{a}{t}" for a, t in weak})
            raise SingularSystemError(f"singular normal equations; unconstrained: {', '.join(names)}")
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"singular normal equations: {exc}") from None
        alpha = 1.0
        for _ in range(9):
            x_new = x + alpha * step
            r_new = _stack(factors, keys, x_new)
            c_new = 0.5 * float(r_new @ r_new)
            if c_new <= cost:
                break
            alpha *= 0.5
        else:
            break
        step_norm = float(np.linalg.norm(alpha * step))
        x, r, cost = x_new, r_new, c_new
        if trace is not None:
            trace.append((it, cost, step_norm))
        if step_norm < tol:
            break

    vals = _values(keys, x)
    return replace(chain,
                   gripper_poses=[vals[("g", t)] for t in range(len(chain.gripper_poses))],
                   object_poses=[vals[("l", t)] for t in range(len(chain.object_poses))],
                   env_regions=list(chain.env_regions))


def env_region_update(e_prev: Optional[Region], l_t: Pose2, particle_support, tol: float = 1e-6) -> Region:
    """Environment-origin hypotheses consistent with the current belief, intersected with ``e_prev``.

    ``particle_support`` holds the surviving particle offsets (object reference
    point relative to the environment frame), so the environment origin
    candidates are ``l_t - support``.

    Raises:
        BeliefCollapse: nothing remains after the intersection.
    """
    pts = l_t.xy - np.atleast_2d(np.asarray(particle_support, dtype=float))
    if len(pts) == 0:
        raise BeliefCollapse("empty particle support")
    if e_prev is None or len(e_prev.points) == 0:
        return Region(pts)
    keep = e_prev.contains(pts, tol)
    if not np.any(keep):
        raise BeliefCollapse("particle support does not intersect the previous environment region")
    return Region(pts[keep])


def alignment_check(net_f, distance_to_goal: float, f_ali: float = F_ALI, d_ali: float = D_ALI) -> bool:
    """True when lateral forces and goal distance are all strictly under threshold."""
    f = np.asarray(net_f, dtype=float)
    return bool(abs(f[0]) < f_ali and abs(f[1]) < f_ali and distance_to_goal < d_ali)


def write_trace_csv(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,cost,step_norm\n")
        for it, c, s in trace:
            fh.write(f"{it},{c:.12g},{s:.12g}\n")
