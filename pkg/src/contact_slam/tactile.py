"""
Tactile wrench processing for a two-finger gripper.

Sensor readings from the left and right finger pads are mapped into the
gripper frame, combined into the net force on the grasped object and the
resultant torque about the equivalent rotation point ``O_e`` (the gripper
frame origin), and inverted for the contact location on the object surface.

Torques follow the usual ``m = r x f`` convention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import Contour, Pose2, points_in_region

F_MIN = 0.05  # N
EPS_SURF = 1.0  # mm

LEFT, RIGHT, GRIPPER = "left", "right", "gripper"

CSV_COLUMNS = ["fLx", "fLy", "fLz", "mLx", "mLy", "mLz",
               "fRx", "fRy", "fRz", "mRx", "mRy", "mRz", "cx", "cy", "cz"]


class FrameError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


class InconsistentMeasurement(ValueError):
    """The force line of action does not meet the object surface."""


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray
    frame: str

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        m = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
            raise ValueError("wrench components must be finite")
        if not self.frame:
            raise FrameError("wrench needs a frame id")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", m)

    @classmethod
    def zero(cls, frame: str) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)


@dataclass(frozen=True)
class SensorMapping:
    """Signed axis permutations taking each sensor frame into the gripper frame.

    The default reproduces the mirrored finger mounting: gripper
    ``(Fx, Fy, Fz) = (-fy, fz, fx)`` for the left pad and the negation for the right.
    """

    left: np.ndarray = field(default_factory=lambda: np.array(
        [[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
    right: np.ndarray = field(default_factory=lambda: np.array(
        [[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]]))

    def matrix(self, frame: str) -> np.ndarray:
        if frame == LEFT:
            return self.left
        if frame == RIGHT:
            return self.right
        if frame == GRIPPER:
            return np.eye(3)
        raise FrameError(f"unknown frame {frame!r}")


DEFAULT_MAPPING = SensorMapping()


@dataclass(frozen=True)
class LeverArms:
    """Offsets from O_e to the left and right sensor origins (mm, gripper frame)."""

    left: np.ndarray
    right: np.ndarray
    condition_number: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "left", np.asarray(self.left, dtype=float).reshape(3))
        object.__setattr__(self, "right", np.asarray(self.right, dtype=float).reshape(3))

    def to_dict(self) -> dict:
        return {"left": [float(x) for x in self.left], "right": [float(x) for x in self.right]}


@dataclass(frozen=True)
class CalibrationSample:
    left_wrench: Wrench
    right_wrench: Wrench
    contact_point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "contact_point", np.asarray(self.contact_point, dtype=float).reshape(3))


@dataclass(frozen=True)
class MarkerField:
    rest_points: np.ndarray
    displaced_points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.rest_points, dtype=float)
        q = np.asarray(self.displaced_points, dtype=float)
        if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"marker arrays must be matching (N, 3), got {p.shape} and {q.shape}")
        if len(p) < 3:
            raise ValueError("need at least 3 markers")
        sv = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise ValueError("markers are collinear; rotation about their axis is unobservable")
        object.__setattr__(self, "rest_points", p)
        object.__setattr__(self, "displaced_points", q)


@dataclass(frozen=True)
class SensorReading:
    """One tactile observation: both pad wrenches plus the left pad's marker field."""

    left: Wrench
    right: Wrench
    markers: MarkerField


@dataclass(frozen=True)
class Prism:
    """Grasped-body surface: a planar contour extruded over [z_min, z_max] in the gripper frame."""

    contour: Contour
    z_min: float
    z_max: float


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def to_gripper(w: Wrench, mapping: SensorMapping = DEFAULT_MAPPING) -> Wrench:
    P = mapping.matrix(w.frame)
    return Wrench(P @ w.force, P @ w.torque, GRIPPER)


def _check_pair(left: Wrench, right: Wrench):
    if left.frame != LEFT or right.frame != RIGHT:
        raise FrameError(f"expected (left, right) readings, got ({left.frame}, {right.frame})")


def net_force(left: Wrench, right: Wrench, mapping: SensorMapping = DEFAULT_MAPPING) -> np.ndarray:
    """Net force on the grasped object in the gripper frame (N)."""
    _check_pair(left, right)
    return mapping.left @ left.force + mapping.right @ right.force


def torque_about(w: Wrench, offset) -> np.ndarray:
    """Torque of ``w`` about a point displaced by ``-offset`` from the wrench origin.

    ``offset`` is the vector from the new reference point to the wrench origin.
    """
    return w.torque + np.cross(np.asarray(offset, dtype=float), w.force)


def resultant_torque(left: Wrench, right: Wrench, arms: LeverArms,
                     mapping: SensorMapping = DEFAULT_MAPPING) -> np.ndarray:
    _check_pair(left, right)
    return (torque_about(to_gripper(left, mapping), arms.left)
            + torque_about(to_gripper(right, mapping), arms.right))


def synthesize_wrenches(force, point, arms: LeverArms, share_left: float = 0.5,
                        mapping: SensorMapping = DEFAULT_MAPPING) -> tuple[Wrench, Wrench]:
    """Sensor readings produced by ``force`` (gripper frame) acting at ``point``.

    Each pad carries a fraction of the load as if it alone held the object,
    which keeps the summed torque about O_e equal to ``point x force``.
    """
    F = np.asarray(force, dtype=float)
    C = np.asarray(point, dtype=float)
    out = []
    for frame, arm, share in ((LEFT, arms.left, share_left), (RIGHT, arms.right, 1.0 - share_left)):
        Fs = share * F
        Ms = np.cross(C - arm, Fs)
        P = mapping.matrix(frame)
        out.append(Wrench(P.T @ Fs, P.T @ Ms, frame))
    return out[0], out[1]


def calibration_system(samples: Sequence[CalibrationSample], mapping: SensorMapping = DEFAULT_MAPPING):
    """Stacked linear system ``A @ [arm_L; arm_R] = b`` from the torque balance of each sample."""
    rows, rhs = [], []
    for s in samples:
        _check_pair(s.left_wrench, s.right_wrench)
        FL = mapping.left @ s.left_wrench.force
        FR = mapping.right @ s.right_wrench.force
        F = FL + FR
        rows.append(np.hstack([-skew(FL), -skew(FR)]))
        rhs.append(np.cross(s.contact_point, F)
                   - mapping.left @ s.left_wrench.torque - mapping.right @ s.right_wrench.torque)
    return np.vstack(rows), np.concatenate(rhs)


def calibrate_lever_arms(samples: Sequence[CalibrationSample], mapping: SensorMapping = DEFAULT_MAPPING,
                         max_condition: float = 1e8) -> LeverArms:
    """Least-squares lever arms for both sensors.

    Raises:
        CalibrationError: fewer than 6 samples or a rank-deficient design.
    """
    if len(samples) < 6:
        raise CalibrationError(f"rank deficient: need at least 6 samples, got {len(samples)}")
    A, b = calibration_system(samples, mapping)
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    cond = float(S[0] / S[-1]) if S[-1] > 0 else np.inf
    if cond > max_condition:
        weak = Vt[S < S[0] / max_condition]
        names = ["Lx", "Ly", "Lz", "Rx", "Ry", "Rz"]
        dirs = ["(" + ", ".join(f"{n}:{c:+.2f}" for n, c in zip(names, v) if abs(c) > 1e-3) + ")"
                for v in weak]
        raise CalibrationError(f"rank deficient design (condition {cond:.3g}); "
                               f"unobservable directions: {'; '.join(dirs)}")
    x = Vt.T @ ((U.T @ b) / S)
    return LeverArms(x[:3], x[3:], cond)


def line_residuals(samples: Sequence[CalibrationSample], arms: LeverArms,
                   mapping: SensorMapping = DEFAULT_MAPPING) -> np.ndarray:
    """Distance (mm) from each known contact point to the fitted line of action."""
    out = []
    for s in samples:
        F = net_force(s.left_wrench, s.right_wrench, mapping)
        M = resultant_torque(s.left_wrench, s.right_wrench, arms, mapping)
        out.append(np.linalg.norm(np.cross(s.contact_point, F) - M) / np.linalg.norm(F))
    return np.asarray(out)


def _faces(body: Prism):
    c = body.contour
    for i, e in enumerate(c.edges):
        n = np.array([e.normal[0], e.normal[1], 0.0])
        yield ("side", i), n, float(n[:2] @ e.start)
    yield ("bottom", -1), np.array([0.0, 0.0, -1.0]), -body.z_min
    yield ("top", -1), np.array([0.0, 0.0, 1.0]), body.z_max


def _on_face(X, face, body: Prism, tol: float):
    kind, i = face
    if kind == "side":
        e = body.contour.edges[i]
        u = e.end - e.start
        L = float(np.linalg.norm(u))
        t = float((X[:2] - e.start) @ u) / L
        if -tol <= t <= L + tol and body.z_min - tol <= X[2] <= body.z_max + tol:
            xy = e.start + np.clip(t, 0.0, L) * u / L
            return np.array([xy[0], xy[1], np.clip(X[2], body.z_min, body.z_max)])
        return None
    if points_in_region(X[:2][None], body.contour, tol)[0]:
        return X.copy()
    return None


def surface_entries(net_f, net_m, body: Prism, tol: float = EPS_SURF) -> list[tuple[float, tuple, np.ndarray]]:
    """Points where the line of action enters the body, ordered along the force.

    Each entry is ``(lambda, face, point)`` with face ``("side", edge)``,
    ``("bottom", -1)`` or ``("top", -1)``.
    """
    F = np.asarray(net_f, dtype=float)
    M = np.asarray(net_m, dtype=float)
    f2 = float(F @ F)
    u = F / np.sqrt(f2)
    c0 = np.cross(F, M) / f2
    out = []
    for face, n, h in _faces(body):
        nu = float(n @ u)
        if nu > -1e-9:
            continue
        lam = (h - float(n @ c0)) / nu
        X = c0 + lam * u
        pt = _on_face(X, face, body, tol)
        if pt is not None:
            out.append((lam, face, pt))
    out.sort(key=lambda t: t[0])
    return out


def estimate_contact_point(net_f, net_m, body: Prism, f_min: float = F_MIN,
                           tol: float = EPS_SURF) -> Optional[np.ndarray]:
    """Contact point on ``body`` consistent with ``net_m = C x net_f``.

    Returns None when the force is below ``f_min`` (no contact).

    Raises:
        InconsistentMeasurement: the line of action misses the surface by more than ``tol``.
    """
    F = np.asarray(net_f, dtype=float)
    if np.linalg.norm(F) <= f_min:
        return None
    # exact face hits first; the tolerance only rescues near-miss lines so it
    # must not let a neighbouring face win at an edge
    entries = surface_entries(F, net_m, body, 1e-7) or surface_entries(F, net_m, body, tol)
    if not entries:
        raise InconsistentMeasurement("line of action misses the grasped object")
    return entries[0][2]


def kabsch_registration(m: MarkerField) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R (det +1) and translation t minimising sum |p_i - (R p'_i + t)|^2."""
    p, q = m.rest_points, m.displaced_points
    cp, cq = p.mean(axis=0), q.mean(axis=0)
    H = (q - cq).T @ (p - cp)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cp - R @ cq


def homogeneous(R, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def in_hand_transform(m: MarkerField, fixed: Optional[np.ndarray] = None) -> np.ndarray:
    """Sensor-to-object transform: marker motion (rest to displaced) composed with ``fixed``."""
    R, t = kabsch_registration(m)
    motion = homogeneous(R.T, -R.T @ t)
    return motion @ (np.eye(4) if fixed is None else np.asarray(fixed, dtype=float))


def planar_pose(T: np.ndarray) -> Pose2:
    return Pose2(T[0, 3], T[1, 3], float(np.arctan2(T[1, 0], T[0, 0])))


def pose_matrix(p: Pose2) -> np.ndarray:
    c, s = np.cos(p.theta), np.sin(p.theta)
    return homogeneous(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), [p.x, p.y, 0.0])


def load_samples_csv(path) -> list[CalibrationSample]:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                v = [float(row[c]) for c in CSV_COLUMNS]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            samples.append(CalibrationSample(Wrench(v[0:3], v[3:6], LEFT), Wrench(v[6:9], v[9:12], RIGHT), v[12:15]))
    return samples


def write_samples_csv(path, samples: Iterable[CalibrationSample]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in samples:
            vals = [*s.left_wrench.force, *s.left_wrench.torque, *s.right_wrench.force,
                    *s.right_wrench.torque, *s.contact_point]
            w.writerow([repr(float(x)) for x in vals])
