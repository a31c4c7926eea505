"""Quasi-steady leg force model and quadratic body drag."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import WebState

# Canonical 6-channel wrench order, shared with the CSV log and the LSTM target.
CHANNELS = ("tau_x", "tau_y", "tau_z", "f_x", "f_y", "f_z")
TAU = slice(0, 3)
FORCE = slice(3, 6)

# towing-tank fit, speed magnitudes 0.1-0.35 m/s
FORWARD_DRAG_COEFFS = (9.997, -0.132, 0.334)
LATERAL_DRAG_COEFFS = (15.571, 0.937, 0.055)
REST_BAND = 0.02


@dataclass(frozen=True)
class EfParams:
    rho_water: float = 1000.0
    a: float = 0.03
    C_R: float = 0.7
    m_web: float = 0.010

    def __post_init__(self):
        for name in ("rho_water", "a", "C_R", "m_web"):
            if not getattr(self, name) > 0:
                raise ValueError(f"EfParams.{name} must be > 0")

    @property
    def area(self) -> float:
        return (2.0 * self.a) ** 2


@dataclass(frozen=True)
class FlowConditions:
    """Free-stream speed along ``direction`` (a unit vector in the leg's sagittal plane).

    The default direction is head-to-tail, i.e. the flow a forward-swimming body sees.
    """

    V_flow: float = 0.0
    direction: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        n = math.hypot(*self.direction)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("flow direction must be a unit vector")


@dataclass
class Wrench:
    f: np.ndarray
    tau: np.ndarray

    def as_array(self) -> np.ndarray:
        """Array in ``CHANNELS`` order (torques first)."""
        return np.concatenate([np.asarray(self.tau, float), np.asarray(self.f, float)], axis=-1)

    @classmethod
    def from_array(cls, w) -> "Wrench":
        w = np.asarray(w, dtype=float)
        return cls(f=w[..., FORCE].copy(), tau=w[..., TAU].copy())

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))


@dataclass
class EfForce:
    F_A: np.ndarray
    F_D: np.ndarray
    F_I: np.ndarray
    F_T: np.ndarray
    wrench: np.ndarray  # (..., 6), leg frame, CHANNELS order


def web_normal(web_angle):
    w = np.asarray(web_angle, dtype=float)
    return np.stack([-np.sin(w), np.cos(w)], axis=-1)


def normal_relative_velocity(web: WebState, flow_velocity) -> np.ndarray:
    """Scalar flow-minus-web velocity along the web normal.

    ``flow_velocity`` is the sagittal flow vector, broadcastable against ``web.Q_vel``.
    """
    n = web_normal(web.web_angle)
    rel = np.asarray(flow_velocity, dtype=float) - web.Q_vel
    return np.sum(n * rel, axis=-1)


def ef_leg_force(p: EfParams, web: WebState, flow: FlowConditions | None = None,
                 flow_velocity=None) -> EfForce:
    """Added mass + quadratic drag + web inertia along the web normal.

    Either ``flow`` (uniform) or ``flow_velocity`` (per-sample sagittal vectors) may
    be given; with neither, the water is at rest.
    """
    if flow_velocity is None:
        flow = flow or FlowConditions()
        flow_velocity = flow.V_flow * np.asarray(flow.direction, dtype=float)
    n = web_normal(web.web_angle)
    v_rel = normal_relative_velocity(web, flow_velocity)
    acc_n = np.sum(n * web.Q_acc, axis=-1)

    F_A = 2.0 * math.pi * p.rho_water * p.a**3 * acc_n
    F_D = 0.5 * p.rho_water * p.area * p.C_R * np.abs(v_rel) * v_rel
    F_I = p.m_web * acc_n
    F_T = F_A + F_D + F_I

    # leg frame: x lateral, y forward (= -X sagittal), z up (= +Y sagittal)
    f_y = -F_T * n[..., 0]
    f_z = F_T * n[..., 1]
    r_y = -web.Q_pos[..., 0]
    r_z = web.Q_pos[..., 1]
    tau_x = r_y * f_z - r_z * f_y
    zero = np.zeros_like(F_T)
    wrench = np.stack([tau_x, zero, zero, zero, f_y, f_z], axis=-1)
    return EfForce(F_A=F_A, F_D=F_D, F_I=F_I, F_T=F_T, wrench=wrench)


def smoothstep(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _poly(coeffs, v):
    c2, c1, c0 = coeffs
    return c2 * v * v + c1 * v + c0


def drag_magnitudes(v_x, v_y):
    """Raw towing-tank polynomials (lateral, forward) evaluated at the speed magnitudes."""
    return (_poly(LATERAL_DRAG_COEFFS, np.abs(v_x)),
            _poly(FORWARD_DRAG_COEFFS, np.abs(v_y)))


def body_drag(v_x, v_y):
    """Body drag forces ``(F_dx, F_dy)`` in the body frame, opposing each velocity component.

    The fitted intercepts are faded out below ``REST_BAND`` m/s so drag vanishes at rest.
    """
    v_x = np.asarray(v_x, dtype=float)
    v_y = np.asarray(v_y, dtype=float)
    mag_x, mag_y = drag_magnitudes(v_x, v_y)
    F_dx = -np.sign(v_x) * mag_x * smoothstep(np.abs(v_x) / REST_BAND)
    F_dy = -np.sign(v_y) * mag_y * smoothstep(np.abs(v_y) / REST_BAND)
    return F_dx, F_dy
