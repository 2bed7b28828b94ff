"""
Active tactile exploration: particle belief over where the grasped object's
reference point sits relative to the environment, information-gain action
selection, contact-pair pruning, backtracking weight updates and the outer
exploration loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .estimation import (BeliefCollapse, Region, StateChain, alignment_check, env_region_update,
                         gripper_factor, object_factor, solve_map)
from .geometry import (EPS_N, Contour, ContactPair, Pose2, collinear_classes, edge_table, points_in_region,
                       sweep_batch, sweep_first_contact)
from .tactile import (F_MIN, DEFAULT_MAPPING, InconsistentMeasurement, Prism, in_hand_transform,
                      net_force, resultant_torque, surface_entries)

log = logging.getLogger(__name__)

NO_CONTACT = "NO_CONTACT"


@dataclass(frozen=True)
class Action:
    direction: tuple
    label: str

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = float(np.linalg.norm(d))
        if n == 0:
            raise ValueError("action direction must be non-zero")
        object.__setattr__(self, "direction", (float(d[0] / n), float(d[1] / n)))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.direction)


COMPASS = [Action((math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)), name)
           for k, name in enumerate(["E", "NE", "N", "NW", "W", "SW", "S", "SE"])]


@dataclass(frozen=True)
class Particle:
    pose: np.ndarray
    weight: float


@dataclass
class ParticleSet:
    positions: np.ndarray
    weights: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float)).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.positions) != len(self.weights):
            raise ValueError("positions and weights differ in length")
        if len(self.weights) and np.any(self.weights < 0):
            raise ValueError("negative particle weight")

    def __len__(self):
        return len(self.weights)

    @property
    def particles(self) -> list[Particle]:
        return [Particle(p.copy(), float(w)) for p, w in zip(self.positions, self.weights)]

    def normalized(self) -> "ParticleSet":
        s = float(self.weights.sum())
        if not s > 0 or not np.isfinite(s):
            raise BeliefCollapse("all particle weights vanished")
        return ParticleSet(self.positions, self.weights / s, self.time_index)

    def subset(self, mask) -> "ParticleSet":
        return ParticleSet(self.positions[mask], self.weights[mask], self.time_index)

    def shifted(self, delta) -> "ParticleSet":
        return ParticleSet(self.positions + np.asarray(delta, dtype=float), self.weights, self.time_index)

    def mean(self) -> np.ndarray:
        w = self.weights / self.weights.sum()
        return w @ self.positions

    def std(self) -> float:
        """Root of the trace of the weighted covariance (mm)."""
        w = self.weights / self.weights.sum()
        d = self.positions - w @ self.positions
        return float(np.sqrt(np.sum(w[:, None] * d * d)))


@dataclass(frozen=True)
class ContactObservation:
    time: int
    net_force: np.ndarray
    traveled: float
    candidate_pairs: tuple = ()

    def __post_init__(self):
        if self.traveled < 0:
            raise ValueError("traveled distance must be non-negative")

    @property
    def contact(self) -> bool:
        return bool(np.linalg.norm(np.asarray(self.net_force)[:2]) > F_MIN)


@dataclass
class ExplorationConfig:
    n_particles: int = 500
    alpha1: float = 1.0
    alpha2: float = 1.0
    gamma: float = 0.1
    delta_d: float = 3.0
    delta_thr: float = 5.0
    n_thr: int = 10
    w_thr_factor: float = 1.0
    replenish_target: int = 100
    replenish_trigger: int = 30
    jitter: float = 2.0
    max_dist: float = 12.0
    step_mm: float = 1.0
    pen_tol: float = 1.0
    contact_gate: float = 2.0
    max_iter: int = 40
    spiral_pitch: float = 1.0
    spiral_radius: float = 8.0
    f_ali: float = 0.3
    d_ali: float = 1.0
    f_min: float = F_MIN


def init_particles(region: Contour, n: int, seed=0,
                   accept: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> ParticleSet:
    """Uniform rejection sampling of ``n`` particles inside ``region``.

    ``seed`` may be an int or a ``numpy.random.Generator``. ``accept`` is an
    optional extra vectorised filter (e.g. non-penetration).
    """
    if n < 1:
        raise ValueError("need at least one particle")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x0, y0, x1, y1 = region.bounds()
    out = np.empty((0, 2))
    for _ in range(1000):
        cand = rng.uniform((x0, y0), (x1, y1), size=(max(2 * n, 64), 2))
        ok = points_in_region(cand, region)
        if accept is not None:
            ok &= accept(cand)
        out = np.vstack([out, cand[ok]])
        if len(out) >= n:
            break
    else:
        raise ValueError("region admits no valid particles")
    out = out[:n]
    return ParticleSet(out, np.full(n, 1.0 / n))


def peak_mask(ps: ParticleSet, w_thr_factor: float = 1.0) -> np.ndarray:
    # relative slack so uniform weights never split on rounding noise
    return ps.weights > w_thr_factor / len(ps) * (1.0 + 1e-9)


def detect_peaks(ps: ParticleSet, w_thr_factor: float = 1.0) -> list[Particle]:
    m = peak_mask(ps, w_thr_factor)
    return [p for p, keep in zip(ps.particles, m) if keep]


def support(ps: ParticleSet, w_thr_factor: float = 1.0) -> ParticleSet:
    """Peaks, or the whole set when no particle exceeds the threshold."""
    m = peak_mask(ps, w_thr_factor)
    return ps.subset(m) if np.any(m) else ps


def diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


def count_modes(points: np.ndarray, link: float) -> int:
    """Connected components of points closer than ``link``."""
    n = len(points)
    if n == 0:
        return 0
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    for i, j in zip(*np.nonzero(np.triu(d < link, 1))):
        parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


@dataclass
class Prediction:
    labels: list
    distances: np.ndarray
    inconsistent: np.ndarray


def predict_contacts(offsets, action: Action, env: Sequence[Contour], obj: Contour,
                     max_dist: float, pen_tol: float = 1e-3) -> Prediction:
    """Batched first-contact prediction for the object placed at each offset."""
    res = sweep_batch(obj, action.vector, max_dist, env, offsets, pen_tol=pen_tol)
    table = edge_table(env)
    labels = []
    for hit, si, mi in zip(np.isfinite(res.distance), res.env_index, res.obj_index):
        labels.append(ContactPair(table[si], (obj.id, int(mi))) if hit else NO_CONTACT)
    dist = np.where(np.isfinite(res.distance), res.distance, max_dist)
    return Prediction(labels, dist, res.penetration > pen_tol)


def predict_contact(pose, action: Action, env: Sequence[Contour], obj: Contour, max_dist: float):
    """(contact pair or NO_CONTACT, travel) for the object placed at ``pose``.

    Raises:
        PenetrationError: the object overlaps the environment at ``pose``.
    """
    hit = sweep_first_contact(obj.translated(pose), action.vector, max_dist, env)
    if hit is None:
        return NO_CONTACT, float(max_dist)
    return ContactPair(hit.pair.env_edge, (obj.id, hit.pair.obj_edge[1])), hit.distance


class PairCanon:
    """Maps a contact pair to a representative with collinear edges merged.

    Edges sharing a supporting line touch simultaneously and cannot be told
    apart by a normal force, so they are treated as one face.
    """

    def __init__(self, env: Sequence[Contour], obj: Contour):
        self.env = {c.id: collinear_classes(c) for c in env}
        self.normals = {c.id: c.normals for c in env}
        self.obj = collinear_classes(obj)

    def __call__(self, lab):
        if lab == NO_CONTACT:
            return lab
        (eid, ei), (oid, oi) = lab.env_edge, lab.obj_edge
        return ContactPair((eid, int(self.env[eid][ei])), (oid, int(self.obj[oi])))

    def observable(self, lab):
        """Outcome as a force reading sees it: the environment normal and the touched object face."""
        if lab == NO_CONTACT:
            return lab
        (eid, ei), (_, oi) = lab.env_edge, lab.obj_edge
        n = self.normals[eid][ei]
        return (round(float(n[0]), 6) + 0.0, round(float(n[1]), 6) + 0.0, int(self.obj[oi]))


def _identity(lab):
    return lab


def _entropy(labels, w) -> float:
    totals: dict = {}
    for lab, wi in zip(labels, w):
        totals[lab] = totals.get(lab, 0.0) + wi
    p = np.array([v for v in totals.values() if v > 0])
    p = p / p.sum()
    return float(-(p * np.log(p)).sum())


def information_gain_scores(ps: ParticleSet, actions: Sequence[Action], env, obj, alpha1: float = 1.0,
                            alpha2: float = 1.0, max_dist: float = 20.0, pen_tol: float = 1e-3,
                            canon: Callable = _identity) -> np.ndarray:
    scores = []
    for a in actions:
        pred = predict_contacts(ps.positions, a, env, obj, max_dist, pen_tol)
        w = np.where(pred.inconsistent, 0.0, ps.weights)
        if w.sum() <= 0:
            scores.append(0.0)
            continue
        w = w / w.sum()
        h = _entropy([canon(lab) for lab in pred.labels], w)
        mu = float(w @ pred.distances)
        var = float(w @ (pred.distances - mu) ** 2) / max_dist ** 2
        scores.append(alpha1 * h + alpha2 * var)
    # rounding keeps argmax independent of summation order
    return np.round(np.asarray(scores), 10)


def evaluate_information_gain(ps: ParticleSet, actions: Sequence[Action], env, obj, alpha1: float = 1.0,
                              alpha2: float = 1.0, max_dist: float = 20.0, w_thr_factor: float = 1.0,
                              pen_tol: float = 1e-3, canon: Callable = _identity) -> Action:
    """Action maximising alpha1 * label entropy + alpha2 * normalised distance variance over the peaks."""
    if not actions:
        raise ValueError("no actions to evaluate")
    sub = support(ps, w_thr_factor)
    scores = information_gain_scores(sub, actions, env, obj, alpha1, alpha2, max_dist, pen_tol, canon)
    return actions[int(np.argmax(scores))]


def select_contact_pairs(net_f, env: Sequence[Contour], obj: Contour, f_min: float = F_MIN) -> list[ContactPair]:
    """Edge pairs whose normals are antiparallel and bracket the planar force direction."""
    f = np.asarray(net_f, dtype=float)[:2]
    if np.linalg.norm(f) <= f_min:
        raise ValueError(f"force {np.linalg.norm(f):.3g} N is below the contact threshold {f_min} N")
    f = f / np.linalg.norm(f)
    pairs = []
    for c in env:
        for i, ni in enumerate(c.normals):
            if f @ ni <= 0:
                continue
            for j, nj in enumerate(obj.normals):
                if f @ nj < 0 and ni @ nj <= EPS_N:
                    pairs.append(ContactPair((c.id, i), (obj.id, j)))
    return pairs


def filter_pairs_by_contact(pairs: Sequence[ContactPair], entries_xy: np.ndarray, obj: Contour,
                            gate: float) -> list[ContactPair]:
    """Keep pairs whose object edge passes within ``gate`` of an estimated contact location."""
    if len(entries_xy) == 0:
        return list(pairs)
    v = obj.vertices
    keep = []
    for p in pairs:
        j = p.obj_edge[1]
        a, b = v[j], v[(j + 1) % len(v)]
        ab = b - a
        t = np.clip(((entries_xy - a) @ ab) / (ab @ ab), 0.0, 1.0)
        d = np.linalg.norm(entries_xy - (a + t[:, None] * ab), axis=1)
        if np.any(d <= gate):
            keep.append(p)
    return keep


def prune_particles(ps: ParticleSet, pairs: Sequence[ContactPair], contact_distance: float, action: Action,
                    env, obj, max_dist: float, delta_d: float = 3.0, prediction: Optional[Prediction] = None,
                    pen_tol: float = 1e-3, canon: Callable = _identity) -> ParticleSet:
    """Keep particles whose predicted first contact matches a candidate pair at the observed travel.

    ``ps`` holds the positions at the start of the move.

    Raises:
        ValueError: ``pairs`` is empty.
        BeliefCollapse: nothing survives.
    """
    if not pairs:
        raise ValueError("no candidate contact pairs")
    pred = prediction or predict_contacts(ps.positions, action, env, obj, max_dist, pen_tol)
    keep = _pair_gate(pred, pairs, contact_distance, delta_d, canon)
    if not np.any(keep):
        raise BeliefCollapse("no particle consistent with the observed contact")
    return ps.subset(keep).normalized()


def _pair_gate(pred: Prediction, pairs, contact_distance, delta_d, canon: Callable = _identity) -> np.ndarray:
    allowed = {canon(p) for p in pairs}
    match = np.array([lab != NO_CONTACT and canon(lab) in allowed for lab in pred.labels], dtype=bool)
    return match & (np.abs(pred.distances - contact_distance) <= delta_d) & ~pred.inconsistent


def trajectory_observations(traveled: float, net_f, pairs=(), step_mm: float = 1.0) -> list[ContactObservation]:
    """Per-step observations along a move: no contact until the final step, which carries ``net_f``."""
    T = max(1, int(math.ceil(traveled / step_mm - 1e-9)))
    zero = np.zeros(3)
    obs = [ContactObservation(t, zero, traveled * t / T) for t in range(1, T)]
    obs.append(ContactObservation(T, np.asarray(net_f, dtype=float), traveled, tuple(pairs)))
    return obs


def _backtrack_multipliers(free: np.ndarray, obs: Sequence[ContactObservation], gamma: float) -> np.ndarray:
    T = len(obs)
    D = obs[-1].traveled
    tol = max(0.5 * D / T, 1e-6)
    mult = np.ones(len(free))
    for k, o in enumerate(obs, start=1):
        predicted = free <= D * k / T + tol
        mismatch = predicted != o.contact
        mult = np.where(mismatch, mult * gamma, mult)
    return mult


def backtrack_weight_update(ps: ParticleSet, obs: Sequence[ContactObservation], action: Action, env, obj,
                            gamma: float = 0.1, pen_tol: float = 1e-3) -> ParticleSet:
    """Re-weight particles (end-of-move positions) against each intermediate observation.

    At step t of T the particle sits at ``p - (T - t) / T * Distance`` along the
    action; it predicts contact there when the free travel from the start of
    the move is used up. Each mismatch multiplies the weight by ``gamma``.
    """
    if not obs:
        return ps.normalized()
    D = obs[-1].traveled
    start = ps.positions - D * action.vector
    pred = predict_contacts(start, action, env, obj, D + 1.0, pen_tol)
    free = np.where(np.array([lab == NO_CONTACT for lab in pred.labels]), np.inf, pred.distances)
    mult = _backtrack_multipliers(free, obs, gamma)
    out = ParticleSet(ps.positions, ps.weights * mult, ps.time_index)
    return out.normalized()


def replenish(ps: ParticleSet, n_target: int, jitter: float, seed=0, prior: Optional[Contour] = None,
              accept: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> ParticleSet:
    """Resample survivors by weight, add Gaussian jitter, reset weights to uniform.

    An empty set is re-initialised from ``prior`` when given.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if len(ps) == 0 or not ps.weights.sum() > 0:
        if prior is None:
            raise BeliefCollapse("no survivors and no prior region to re-initialise from")
        log.warning("belief collapsed; re-initialising %d particles from the prior region", n_target)
        return init_particles(prior, n_target, rng, accept)
    w = ps.weights / ps.weights.sum()
    out = np.empty((0, 2))
    for _ in range(50):
        idx = rng.choice(len(ps), size=n_target, p=w)
        cand = ps.positions[idx] + rng.normal(0.0, jitter, size=(n_target, 2)) if jitter > 0 else ps.positions[idx]
        if accept is not None:
            cand = cand[accept(cand)]
        out = np.vstack([out, cand])
        if len(out) >= n_target:
            break
    if len(out) == 0:
        out = ps.positions[rng.choice(len(ps), size=n_target, p=w)]
    out = out[:n_target]
    return ParticleSet(out, np.full(len(out), 1.0 / len(out)), ps.time_index)


def spiral_search(center, pitch: float, max_radius: float) -> list[np.ndarray]:
    """Archimedean spiral ``r = pitch * phi / (2 pi)`` around ``center``.

    Angles advance in pi/8 sectors, subdivided where needed so consecutive
    waypoints stay within ``pitch`` of each other.
    """
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    c = np.asarray(center, dtype=float)
    pts = [c.copy()]
    sector = math.pi / 8
    phi = 0.0
    while True:
        r_end = pitch * (phi + sector) / (2 * math.pi)
        k = max(1, int(math.ceil(sector * (r_end + 0.25 * pitch) / (0.95 * pitch))))
        done = False
        for i in range(1, k + 1):
            ph = phi + sector * i / k
            r = pitch * ph / (2 * math.pi)
            if r > max_radius + 1e-12:
                done = True
                break
            pts.append(c + r * np.array([math.cos(ph), math.sin(ph)]))
        if done:
            break
        phi += sector
    return pts


@dataclass
class MoveRecord:
    action: Action
    traveled: float
    contact: bool
    net_force: np.ndarray
    pairs: tuple
    shift: np.ndarray


@dataclass
class StepRecord:
    step: int
    action: Optional[str]
    traveled_mm: float
    candidate_pairs: list
    particle_count: int
    particle_std_mm: float
    peak_count: int
    contact: bool = False

    def to_dict(self) -> dict:
        return {"step": self.step, "action": self.action, "traveled_mm": round(self.traveled_mm, 6),
                "candidate_pairs": self.candidate_pairs, "particle_count": self.particle_count,
                "particle_std_mm": round(self.particle_std_mm, 6), "peak_count": self.peak_count,
                "contact": self.contact}


@dataclass
class ExplorationReport:
    steps: list = field(default_factory=list)
    iterations: int = 0
    final_error_mm: float = float("nan")
    success: bool = False
    converged: bool = False
    aligned: bool = False
    spiral_waypoints: int = 0
    estimate: Optional[list] = None
    message: str = ""
    solver_trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "summary": {
                "iterations": self.iterations,
                "final_error_mm": None if not np.isfinite(self.final_error_mm) else round(self.final_error_mm, 6),
                "success": self.success,
                "converged": self.converged,
                "aligned": self.aligned,
                "spiral_waypoints": self.spiral_waypoints,
                "estimate": self.estimate,
                "message": self.message,
            },
        }


class ActiveExplorer:
    """Belief and update machinery for one unknown environment placement.

    Args:
        env: environment contours in their own frame.
        obj: moving contour in its own frame (reference point at the origin).
        prior: region of possible reference-point offsets in the environment frame.
        config: tuning constants.
        rngs: mapping with ``"belief"`` and ``"resample"`` generators.
        body: grasped-object surface for contact-point gating (optional).
    """

    def __init__(self, env: Sequence[Contour], obj: Contour, prior: Contour, config: ExplorationConfig,
                 rngs: dict, body: Optional[Prism] = None, arms=None, mapping=DEFAULT_MAPPING):
        self.env = list(env)
        self.obj = obj
        self.prior = prior
        self.cfg = config
        self.rngs = rngs
        self.body = body
        self.arms = arms
        self.mapping = mapping
        self.history: list[MoveRecord] = []
        self.region: Optional[Region] = None
        self.replenish_events = 0
        self.canon = PairCanon(self.env, obj)
        self.tabu: set = set()
        self.ps = init_particles(prior, config.n_particles, rngs["belief"], self._feasible)

    def _feasible(self, pts: np.ndarray) -> np.ndarray:
        pred = sweep_batch(self.obj, (1.0, 0.0), 0.0, self.env, pts, pen_tol=np.inf, labels=False)
        return pred.penetration <= self.cfg.pen_tol

    def support(self) -> ParticleSet:
        return support(self.ps, self.cfg.w_thr_factor)

    def converged(self) -> bool:
        """Peaks form fewer than n_thr clusters, span under delta_thr, and carry the belief.

        The last condition (overall spread under delta_thr) stops a handful of
        heavy particles from declaring convergence while real mass lies elsewhere.
        """
        pts = self.support().positions
        return (count_modes(pts, self.cfg.delta_thr) < self.cfg.n_thr
                and diameter(pts) < self.cfg.delta_thr
                and self.ps.std() < self.cfg.delta_thr)

    def estimate(self) -> np.ndarray:
        return self.support().mean()

    def choose_action(self, actions: Sequence[Action]) -> Action:
        """Information-gain choice over the peaks, skipping actions that just stalled.

        When no action separates the peaks, all particles are scored instead.
        """
        c = self.cfg
        allowed = [a for a in actions if a.label not in self.tabu] or list(actions)
        args = (self.env, self.obj, c.alpha1, c.alpha2, c.max_dist, c.pen_tol, self.canon.observable)
        scores = information_gain_scores(self.support(), allowed, *args)
        if scores.max() <= 0:
            scores = information_gain_scores(self.ps, allowed, *args)
        return allowed[int(np.argmax(scores))]

    def candidate_pairs(self, reading) -> list[ContactPair]:
        f = net_force(reading.left, reading.right, self.mapping)
        if np.linalg.norm(f[:2]) <= self.cfg.f_min:
            return []
        pairs = select_contact_pairs(f, self.env, self.obj, self.cfg.f_min)
        if self.body is not None and self.arms is not None and pairs:
            m = resultant_torque(reading.left, reading.right, self.arms, self.mapping)
            try:
                entries = surface_entries(f, m, self.body)
            except InconsistentMeasurement:
                entries = []
            xy = np.array([e[2][:2] for e in entries if e[1][0] == "side"]).reshape(-1, 2)
            gated = filter_pairs_by_contact(pairs, xy, self.obj, self.cfg.contact_gate)
            if gated:
                pairs = gated
        if not pairs:
            log.warning("unmodelled contact: no edge pair explains the measured force")
        return pairs

    def _move_weights(self, start: np.ndarray, rec: MoveRecord):
        """Keep-mask, weight multipliers and end positions of one recorded move.

        On a contact move each particle stops where its own predicted contact
        occurs, so survivors sit flush against the face they touched.
        """
        c = self.cfg
        end = start + rec.shift
        if rec.contact:
            pred = predict_contacts(start, rec.action, self.env, self.obj,
                                    rec.traveled + c.delta_d + 1.0, c.pen_tol)
            free = np.where(np.array([lab == NO_CONTACT for lab in pred.labels]), np.inf, pred.distances)
            if rec.pairs:
                keep = _pair_gate(pred, rec.pairs, rec.traveled, c.delta_d, self.canon)
                corr = np.where(keep, pred.distances - rec.traveled, 0.0)
                end = end + corr[:, None] * rec.action.vector
                # the corrected trajectory reaches contact exactly at the observed travel
                free = np.where(keep, rec.traveled, free)
            else:
                keep = ~pred.inconsistent
        else:
            pred = predict_contacts(start, rec.action, self.env, self.obj, rec.traveled + 1.0, c.pen_tol)
            keep = ~pred.inconsistent
            free = np.where(np.array([lab == NO_CONTACT for lab in pred.labels]), np.inf, pred.distances)
        obs = trajectory_observations(rec.traveled, rec.net_force if rec.contact else np.zeros(3),
                                      rec.pairs, c.step_mm)
        return keep, _backtrack_multipliers(free, obs, c.gamma), end

    def update(self, action: Action, traveled: float, shift: np.ndarray, reading, contact: bool) -> list:
        """Fold one executed move into the belief; returns the candidate pairs used."""
        c = self.cfg
        f = net_force(reading.left, reading.right, self.mapping)
        contact = contact and bool(np.linalg.norm(f[:2]) > c.f_min)
        pairs = self.candidate_pairs(reading) if contact else []
        rec = MoveRecord(action, float(traveled), contact, f, tuple(pairs), np.asarray(shift, dtype=float))
        keep, mult, end = self._move_weights(self.ps.positions, rec)
        moved = ParticleSet(end, self.ps.weights * mult, self.ps.time_index + 1)
        keep &= self._feasible(moved.positions)
        w0 = self.ps.weights / self.ps.weights.sum()
        w1 = np.where(keep, moved.weights, 0.0)
        # total-variation change of the belief; ~0 means the move taught nothing
        learned = w1.sum() <= 0 or 0.5 * float(np.abs(w1 / w1.sum() - w0).sum()) > 1e-3
        self.history.append(rec)
        if np.any(keep) and moved.weights[keep].sum() > 0:
            self.ps = moved.subset(keep).normalized()
        else:
            log.warning("belief collapse at step %d; replenishing", moved.time_index)
            self.ps = ParticleSet(np.empty((0, 2)), np.empty(0), moved.time_index)
        if len(self.ps) < c.replenish_trigger:
            self._replenish()
        # a move that taught nothing is not worth repeating until the belief changes
        if learned:
            self.tabu.clear()
        else:
            self.tabu.add(action.label)
        return pairs

    def _replenish(self):
        c = self.cfg
        t = self.ps.time_index
        self.replenish_events += 1
        prior_now = self.prior.translated(sum((r.shift for r in self.history), np.zeros(2)))
        for attempt in range(5):
            fresh = replenish(self.ps, c.replenish_target, c.jitter, self.rngs["resample"],
                              prior_now, self._feasible)
            w = fresh.weights.copy()
            keep = np.ones(len(fresh), dtype=bool)
            # replay past moves so new particles respect earlier contacts
            offset = np.zeros(2)
            for rec in reversed(self.history):
                offset = offset + rec.shift
                k, m, _ = self._move_weights(fresh.positions - offset, rec)
                keep &= k
                w *= m
            if np.any(keep) and w[keep].sum() > 0:
                self.ps = ParticleSet(fresh.positions[keep], w[keep], t).normalized()
                return
            log.warning("replenished particles inconsistent with history (attempt %d)", attempt + 1)
        self.ps = ParticleSet(fresh.positions, fresh.weights, t)

    def update_region(self, l_t: Pose2) -> Region:
        pts = self.support().positions
        try:
            self.region = env_region_update(self.region, l_t, pts)
        except BeliefCollapse:
            log.info("environment region reset after replenishment")
            self.region = env_region_update(None, l_t, pts)
        return self.region

    def record(self, step: int, action: Optional[Action], traveled: float, pairs, contact: bool) -> StepRecord:
        return StepRecord(step, action.label if action else None, float(traveled),
                          [p.as_list() for p in pairs], len(self.ps), self.ps.std(),
                          int(peak_mask(self.ps, self.cfg.w_thr_factor).sum()), contact)


class PoseTracker:
    """Gripper/object pose chain; each new step is solved against its own factors."""

    def __init__(self, g0: Pose2, in_hand0: np.ndarray):
        self.trace: list = []
        sol = solve_map(StateChain([g0], [g0]), [gripper_factor(0, g0), object_factor(0, in_hand0)],
                        trace=self.trace)
        self.chain = StateChain(sol.gripper_poses, sol.object_poses)

    def add(self, g_prior: Pose2, in_hand: np.ndarray) -> Pose2:
        sol = solve_map(StateChain([g_prior], [g_prior]),
                        [gripper_factor(0, g_prior), object_factor(0, in_hand)], trace=self.trace)
        self.chain.gripper_poses.append(sol.gripper_poses[0])
        self.chain.object_poses.append(sol.object_poses[0])
        return sol.object_poses[0]

    @property
    def gripper(self) -> Pose2:
        return self.chain.gripper_poses[-1]

    @property
    def current(self) -> Pose2:
        return self.chain.object_poses[-1]


def run_policy(world, config: ExplorationConfig, rngs: dict, actions: Optional[Sequence[Action]] = None,
               explorer: Optional[ActiveExplorer] = None) -> ExplorationReport:
    """Explore until the belief is unimodal, then move to the goal and search for alignment.

    ``world`` exposes ``environment``, ``moving``, ``prior``, ``goal`` (or None),
    ``body``, ``arms``, ``gripper_pose()``, ``markers()``, ``execute(action, max_dist)``,
    ``place(xy)``, ``probe_alignment()`` and ``localization_error(offset)``.
    """
    actions = list(actions or getattr(world, "actions", None) or COMPASS)
    rep = ExplorationReport()
    if world.goal is not None:
        reading, dist = world.probe_alignment()
        if alignment_check(net_force(reading.left, reading.right), dist, config.f_ali, config.d_ali):
            rep.aligned = rep.success = rep.converged = True
            rep.message = "already aligned"
            return rep

    ex = explorer or ActiveExplorer(world.environment, world.moving, world.prior, config, rngs,
                                    world.body, world.arms)
    tracker = PoseTracker(world.gripper_pose(), in_hand_transform(world.markers()))
    rep.steps.append(ex.record(0, None, 0.0, [], False))
    ex.update_region(tracker.current)
    it = 0
    while not ex.converged():
        if it >= config.max_iter:
            rep.message = f"iteration cap {config.max_iter} reached"
            break
        it += 1
        action = ex.choose_action(actions)
        move = world.execute(action, config.max_dist)
        prev = tracker.current
        g = tracker.gripper
        g_prior = Pose2(g.x + move.traveled * action.direction[0],
                        g.y + move.traveled * action.direction[1], g.theta)
        cur = tracker.add(g_prior, in_hand_transform(move.reading.markers))
        shift = cur.xy - prev.xy
        pairs = ex.update(action, move.traveled, shift, move.reading, move.contact)
        ex.update_region(cur)
        rep.steps.append(ex.record(it, action, move.traveled, pairs, move.contact))
    rep.iterations = it
    rep.solver_trace = tracker.trace
    rep.converged = ex.converged()
    est = ex.estimate()
    rep.estimate = [round(float(v), 6) for v in est]
    rep.final_error_mm = float(world.localization_error(est))
    if not rep.converged:
        return rep
    if world.goal is None:
        rep.success = True
        return rep

    # goal offset expressed as a world placement under the current estimate
    target = tracker.current.xy + (np.asarray(world.goal) - est)
    for k, wp in enumerate(spiral_search(target, config.spiral_pitch, config.spiral_radius)):
        world.place(wp)
        reading, dist = world.probe_alignment()
        if alignment_check(net_force(reading.left, reading.right), dist, config.f_ali, config.d_ali):
            rep.aligned = True
            rep.spiral_waypoints = k
            break
    else:
        rep.spiral_waypoints = k
        rep.message = "spiral search exhausted"
    rep.success = rep.aligned
    return rep
