"""Leg gait law and four-bar linkage geometry.

Angle convention (the only place it is defined):

    The sagittal plane has X pointing toward the tail and Y pointing up, with
    the hip joint O at the origin.  The long link OC points at ``theta_K + 10 deg``
    measured counter-clockwise from +X, and the short crank OA points at
    ``theta_H + theta_K + 140 deg``.  With these offsets the two circles that
    locate B never become tangent over the configured joint ranges, and the
    intersection with the larger Y coordinate is always the parallelogram
    solution B = A + C, so the branch never flips along a gait cycle.

The gait law uses the role labels ``theta_H_max`` / ``theta_K_min`` for the
fixed endpoints even though, numerically, ``theta_H_max`` (-100 deg) is the
smaller HFE angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LEG_NAMES = ("LF", "RF", "LH", "RH")

OC_OFFSET = math.radians(10.0)
OA_OFFSET = math.radians(140.0)

THETA_H_MAX = math.radians(-100.0)
THETA_K_MIN = math.radians(80.0)


class LinkageInfeasible(ValueError):
    """The two locating circles for B do not intersect."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t:.6f} s)")
        self.t = t


@dataclass(frozen=True)
class LinkageGeometry:
    len_OA: float = 0.035
    len_OC: float = 0.125
    len_BQ_ratio: float = 2.5
    web_side: float = 0.06
    web_mass: float = 0.010

    def __post_init__(self):
        for name in ("len_OA", "len_OC", "len_BQ_ratio", "web_side", "web_mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LinkageGeometry.{name} must be > 0")


@dataclass(frozen=True)
class GaitParams:
    """Sinusoidal joint law parameters; angles in radians, ``alpha`` per leg (LF, RF, LH, RH)."""

    theta_H_min: float
    theta_K_max: float
    freq: float
    phi: float = math.pi / 3
    alpha: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    theta_H_max: float = THETA_H_MAX
    theta_K_min: float = THETA_K_MIN

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.alpha) != 4:
            raise ValueError("alpha needs one phase per leg (LF, RF, LH, RH)")

    @property
    def period(self) -> float:
        return 1.0 / self.freq

    def mirrored(self) -> "GaitParams":
        """Swap left and right legs' phases (LF<->RF, LH<->RH)."""
        a = self.alpha
        return GaitParams(self.theta_H_min, self.theta_K_max, self.freq, self.phi,
                          (a[1], a[0], a[3], a[2]), self.theta_H_max, self.theta_K_min)

    def stationary(self) -> "GaitParams":
        """Same gait with both amplitudes collapsed to zero."""
        return GaitParams(self.theta_H_max, self.theta_K_min, self.freq, self.phi,
                          self.alpha, self.theta_H_max, self.theta_K_min)

    @classmethod
    def from_degrees(cls, theta_H_min, theta_K_max, freq, phi=math.pi / 3,
                     alpha=(0.0, 0.0, 0.0, 0.0), theta_H_max=-100.0, theta_K_min=80.0):
        """Angles in degrees, ``phi`` and ``alpha`` in radians."""
        return cls(math.radians(theta_H_min), math.radians(theta_K_max), freq, phi,
                   tuple(alpha), math.radians(theta_H_max), math.radians(theta_K_min))

    def to_dict(self) -> dict:
        return {
            "theta_H_min_deg": math.degrees(self.theta_H_min),
            "theta_K_max_deg": math.degrees(self.theta_K_max),
            "freq": self.freq,
            "phi": self.phi,
            "alpha": list(self.alpha),
            "theta_H_max_deg": math.degrees(self.theta_H_max),
            "theta_K_min_deg": math.degrees(self.theta_K_min),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaitParams":
        return cls.from_degrees(d["theta_H_min_deg"], d["theta_K_max_deg"], d["freq"],
                                d.get("phi", math.pi / 3), tuple(d.get("alpha", (0.0,) * 4)),
                                d.get("theta_H_max_deg", -100.0), d.get("theta_K_min_deg", 80.0))


@dataclass
class JointState:
    theta_H: np.ndarray | float
    theta_K: np.ndarray | float
    dtheta_H: np.ndarray | float
    dtheta_K: np.ndarray | float
    t: np.ndarray | float


@dataclass
class LinkagePose:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    web_angle: np.ndarray | float


@dataclass
class WebState:
    Q_pos: np.ndarray
    Q_vel: np.ndarray
    Q_acc: np.ndarray
    web_angle: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))


def gait_angles(g: GaitParams, leg_index: int, t) -> JointState:
    """Joint angles and their analytic rates for one leg; ``t`` may be an array."""
    t = np.asarray(t, dtype=float)
    w = 2.0 * math.pi * g.freq
    a = g.alpha[leg_index]
    amp_h = 0.5 * (g.theta_H_max - g.theta_H_min)
    mid_h = 0.5 * (g.theta_H_max + g.theta_H_min)
    amp_k = 0.5 * (g.theta_K_max - g.theta_K_min)
    mid_k = 0.5 * (g.theta_K_max + g.theta_K_min)
    ph = w * t + a
    pk = ph + g.phi
    return JointState(
        theta_H=amp_h * np.sin(ph) + mid_h,
        theta_K=amp_k * np.sin(pk) + mid_k,
        dtheta_H=amp_h * w * np.cos(ph),
        dtheta_K=amp_k * w * np.cos(pk),
        t=t,
    )


def joint_points(geom: LinkageGeometry, theta_H, theta_K):
    """Positions of A and C (shape ``(..., 2)``) from the joint angles."""
    th = np.asarray(theta_H, dtype=float)
    tk = np.asarray(theta_K, dtype=float)
    dir_c = tk + OC_OFFSET
    dir_a = th + tk + OA_OFFSET
    A = geom.len_OA * np.stack([np.cos(dir_a), np.sin(dir_a)], axis=-1)
    C = geom.len_OC * np.stack([np.cos(dir_c), np.sin(dir_c)], axis=-1)
    return A, C


def circle_intersection_upper(c1, r1, c2, r2, tol=1e-12):
    """Upper (larger-Y) intersection of two circles, vectorized over leading axes.

    Raises ``LinkageInfeasible`` if the circles miss each other by more than ``tol``
    metres; near-tangent cases within ``tol`` are snapped to the tangent point.
    """
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    d_vec = c2 - c1
    d = np.linalg.norm(d_vec, axis=-1)
    if np.any(d == 0):
        raise LinkageInfeasible("concentric circles")
    if np.any(d > r1 + r2 + tol) or np.any(d < abs(r1 - r2) - tol):
        raise LinkageInfeasible("circles do not intersect")
    a = (d**2 + r1**2 - r2**2) / (2.0 * d)
    h = np.sqrt(np.clip(r1**2 - a**2, 0.0, None))
    u = d_vec / d[..., None]
    base = c1 + a[..., None] * u
    perp = np.stack([-u[..., 1], u[..., 0]], axis=-1)
    p1 = base + h[..., None] * perp
    p2 = base - h[..., None] * perp
    pick = (p1[..., 1] >= p2[..., 1])[..., None]
    return np.where(pick, p1, p2)


def solve_linkage(geom: LinkageGeometry, j: JointState) -> LinkagePose:
    A, C = joint_points(geom, j.theta_H, j.theta_K)
    B = circle_intersection_upper(A, geom.len_OC, C, geom.len_OA)
    Q = B + geom.len_BQ_ratio * (B - C)
    calf = B - C
    web_angle = np.arctan2(calf[..., 1], calf[..., 0])
    return LinkagePose(A=A, B=B, C=C, Q=Q, web_angle=web_angle)


def finite_difference(x: np.ndarray, dt: float):
    """First and second derivatives along axis 0; central inside, one-sided at the ends."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    vel = np.zeros_like(x)
    acc = np.zeros_like(x)
    if n < 2:
        return vel, acc
    vel[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    vel[0] = (x[1] - x[0]) / dt
    vel[-1] = (x[-1] - x[-2]) / dt
    if n >= 3:
        acc[1:-1] = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / dt**2
        acc[0] = acc[1]
        acc[-1] = acc[-2]
    return vel, acc


def web_state_series(geom: LinkageGeometry, g: GaitParams, leg_index: int,
                     t0: float, dt: float, n: int) -> WebState:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    t = t0 + dt * np.arange(n)
    j = gait_angles(g, leg_index, t)
    try:
        pose = solve_linkage(geom, j)
    except LinkageInfeasible:
        # locate the first offending sample for the error message
        for ti in t:
            try:
                solve_linkage(geom, gait_angles(g, leg_index, ti))
            except LinkageInfeasible as exc:
                raise LinkageInfeasible(str(exc), float(ti)) from None
        raise
    vel, acc = finite_difference(pose.Q, dt)
    return WebState(Q_pos=pose.Q, Q_vel=vel, Q_acc=acc, web_angle=pose.web_angle, t=t)


def web_state_from_joints(geom: LinkageGeometry, j: JointState, dt: float) -> WebState:
    """Web kinematics from a joint-angle time series sampled at ``dt``."""
    pose = solve_linkage(geom, j)
    vel, acc = finite_difference(pose.Q, dt)
    return WebState(Q_pos=pose.Q, Q_vel=vel, Q_acc=acc, web_angle=pose.web_angle,
                    t=np.asarray(j.t, dtype=float))
