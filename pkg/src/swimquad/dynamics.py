"""Leg wrench aggregation at the metacenter and planar explicit-Euler swimming.

Body frame: x to the right, y forward, z up.  World frame coincides with the body
frame at t = 0; yaw is counter-clockwise about z.  The force models describe a
left leg; right-leg wrenches are the mirror image (x -> -x) of the model output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hydro import EfParams, FORCE, TAU, Wrench, body_drag
from .kinematics import LEG_NAMES, GaitParams, JointState, LinkageGeometry, solve_linkage
from .lstm import LstmModel, forward_normalized

RIGHT_LEGS = (1, 3)
# reflection x -> -x: forces flip x, torques (pseudo-vectors) flip y and z
MIRROR = np.array([1.0, -1.0, -1.0, -1.0, 1.0, 1.0])


class AxisNotUnit(ValueError):
    pass


class NonFiniteState(FloatingPointError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t:.4f} s)")
        self.t = t


@dataclass(frozen=True)
class BodyConfig:
    mass: float = 2.5
    I_yaw: float = 0.05
    leg_mounts: tuple = ((-0.1, 0.12, 0.0), (0.1, 0.12, 0.0), (-0.1, -0.12, 0.0), (0.1, -0.12, 0.0))
    haa_axes: tuple = ((-1.0, 0.0, 0.0),) * 4
    haa_angles_deg: tuple = (30.0, 30.0, 0.0, 0.0)
    dt: float = 1.0 / 65.0
    t_max: float = 60.0
    finish_distance: float = 2.0

    def __post_init__(self):
        if not (self.mass > 0 and self.I_yaw > 0 and self.dt > 0):
            raise ValueError("mass, I_yaw and dt must be > 0")
        for ax in self.haa_axes:
            if abs(ax[1]) > 1e-12 or abs(math.hypot(*ax) - 1.0) > 1e-9:
                raise AxisNotUnit(f"HAA axis {ax} must be a unit vector with zero y component")

    @property
    def haa_angles(self) -> np.ndarray:
        return np.radians(np.asarray(self.haa_angles_deg, dtype=float))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


# --- wrench transforms -----------------------------------------------------

def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise AxisNotUnit(f"rotation axis {axis.tolist()} is not a unit vector")
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotate_leg_wrench(w: Wrench, axis, angle: float) -> Wrench:
    R = rotation_matrix(axis, angle)
    if angle == 0.0:
        return Wrench(np.array(w.f, dtype=float), np.array(w.tau, dtype=float))
    return Wrench(R @ np.asarray(w.f, float), R @ np.asarray(w.tau, float))


def metacenter_wrench(w: Wrench, mount, axis, angle: float) -> Wrench:
    r = rotate_leg_wrench(w, axis, angle)
    return Wrench(r.f, np.cross(np.asarray(mount, float), r.f) + r.tau)


def total_wrench(mc_wrenches, v_body) -> Wrench:
    """Sum of the four metacenter wrenches plus body drag for body-frame velocity (vx, vy)."""
    if len(mc_wrenches) != 4:
        raise ValueError("need exactly four leg wrenches")
    f = np.zeros(3)
    tau = np.zeros(3)
    for w in mc_wrenches:
        f = f + w.f
        tau = tau + w.tau
    F_dx, F_dy = body_drag(v_body[0], v_body[1])
    f = f + np.array([float(F_dx), float(F_dy), 0.0])
    return Wrench(f, tau)


def leg_transforms(cfg: BodyConfig):
    """Per-leg rotation matrices (4, 3, 3) and mount positions (4, 3)."""
    R = np.stack([rotation_matrix(ax, a) for ax, a in zip(cfg.haa_axes, cfg.haa_angles)])
    return R, np.asarray(cfg.leg_mounts, dtype=float)


def aggregate_legs(leg_w: np.ndarray, R: np.ndarray, mounts: np.ndarray) -> np.ndarray:
    """Vectorized metacenter sum: leg wrenches (..., 4, 6) -> body wrench (..., 6)."""
    F = np.einsum("lij,...lj->...li", R, leg_w[..., FORCE])
    tau = np.cross(mounts, F) + np.einsum("lij,...lj->...li", R, leg_w[..., TAU])
    # fixed summation order over legs
    F_sum = ((F[..., 0, :] + F[..., 1, :]) + F[..., 2, :]) + F[..., 3, :]
    T_sum = ((tau[..., 0, :] + tau[..., 1, :]) + tau[..., 2, :]) + tau[..., 3, :]
    return np.concatenate([T_sum, F_sum], axis=-1)


# --- state and integration -------------------------------------------------

@dataclass
class SimState:
    x_global: float | np.ndarray = 0.0
    y_global: float | np.ndarray = 0.0
    vx: float | np.ndarray = 0.0
    vy: float | np.ndarray = 0.0
    theta_yaw: float | np.ndarray = 0.0
    dtheta_yaw: float | np.ndarray = 0.0
    t: float | np.ndarray = 0.0

    def astuple(self):
        return (self.x_global, self.y_global, self.vx, self.vy, self.theta_yaw, self.dtheta_yaw, self.t)


def body_velocity(s: SimState):
    """World velocity expressed in the body frame (lateral, forward)."""
    c, sn = np.cos(s.theta_yaw), np.sin(s.theta_yaw)
    return c * s.vx + sn * s.vy, -sn * s.vx + c * s.vy


def to_world(w_body: np.ndarray, yaw) -> np.ndarray:
    """Rotate a body-frame wrench (..., 6) about z by ``yaw``."""
    c = np.cos(yaw)[..., None] if np.ndim(yaw) else math.cos(yaw)
    s = np.sin(yaw)[..., None] if np.ndim(yaw) else math.sin(yaw)
    out = np.array(w_body, dtype=float, copy=True)
    for sl in (TAU, FORCE):
        v = w_body[..., sl]
        out[..., sl.start] = (c * v[..., 0:1] - s * v[..., 1:2])[..., 0]
        out[..., sl.start + 1] = (s * v[..., 0:1] + c * v[..., 1:2])[..., 0]
    return out


def step(s: SimState, w_body, cfg: BodyConfig) -> SimState:
    """One explicit-Euler step under a body-frame wrench (CHANNELS order).

    The force is rotated into the world frame by the current yaw; z motion is ignored.
    """
    w = to_world(np.asarray(w_body, dtype=float), s.theta_yaw)
    dt = cfg.dt
    new = SimState(
        x_global=s.x_global + s.vx * dt,
        y_global=s.y_global + s.vy * dt,
        vx=s.vx + w[..., 3] / cfg.mass * dt,
        vy=s.vy + w[..., 4] / cfg.mass * dt,
        theta_yaw=s.theta_yaw + s.dtheta_yaw * dt,
        dtheta_yaw=s.dtheta_yaw + w[..., 2] / cfg.I_yaw * dt,
        t=s.t + dt,
    )
    if not all(np.all(np.isfinite(v)) for v in new.astuple()):
        raise NonFiniteState("integration diverged", float(np.max(s.t)))
    return new


# --- force models ----------------------------------------------------------

@dataclass
class GaitBatch:
    """Gait parameters for P individuals as arrays (alpha is (P, 4))."""

    theta_H_min: np.ndarray
    theta_K_max: np.ndarray
    freq: np.ndarray
    phi: np.ndarray
    alpha: np.ndarray
    theta_H_max: np.ndarray
    theta_K_min: np.ndarray

    @classmethod
    def of(cls, gaits: list[GaitParams]) -> "GaitBatch":
        a = lambda name: np.array([getattr(g, name) for g in gaits], dtype=float)  # noqa: E731
        return cls(a("theta_H_min"), a("theta_K_max"), a("freq"), a("phi"),
                   np.array([g.alpha for g in gaits], dtype=float),
                   a("theta_H_max"), a("theta_K_min"))

    def __len__(self):
        return len(self.freq)

    def angles(self, t):
        """Joint angles and rates, each shaped (P, 4, len(t))."""
        t = np.asarray(t, dtype=float)
        col = lambda v: v[:, None, None]  # noqa: E731
        w = 2.0 * math.pi * col(self.freq)
        amp_h = 0.5 * (col(self.theta_H_max) - col(self.theta_H_min))
        mid_h = 0.5 * (col(self.theta_H_max) + col(self.theta_H_min))
        amp_k = 0.5 * (col(self.theta_K_max) - col(self.theta_K_min))
        mid_k = 0.5 * (col(self.theta_K_max) + col(self.theta_K_min))
        ph = w * t[None, None, :] + self.alpha[:, :, None]
        pk = ph + col(self.phi)
        return (amp_h * np.sin(ph) + mid_h, amp_k * np.sin(pk) + mid_k,
                amp_h * w * np.cos(ph), amp_k * w * np.cos(pk))


class EfLegModel:
    """Empirical force model driven by the body's forward speed."""

    tag = "EF"

    def __init__(self, ef: EfParams = EfParams(), geom: LinkageGeometry = LinkageGeometry()):
        self.ef = ef
        self.geom = geom

    def start(self, gaits: GaitBatch, n_steps: int, dt: float):
        # samples at t = -dt .. (n_steps + 1) dt so every step has central differences
        t = dt * np.arange(-1, n_steps + 2)
        th, tk, dth, dtk = gaits.angles(t)
        pose = solve_linkage(self.geom, JointState(th, tk, dth, dtk, t))
        Q = pose.Q
        ang = pose.web_angle[..., 1:-1]
        vel = (Q[..., 2:, :] - Q[..., :-2, :]) / (2.0 * dt)
        acc = (Q[..., 2:, :] - 2.0 * Q[..., 1:-1, :] + Q[..., :-2, :]) / dt**2
        n = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        self._nx = n[..., 0]
        self._ny = n[..., 1]
        self._n_vel = np.sum(n * vel, axis=-1)
        self._n_acc = np.sum(n * acc, axis=-1)
        self._q = Q[..., 1:-1, :]
        self._k_drag = 0.5 * self.ef.rho_water * self.ef.area * self.ef.C_R
        self._k_acc = 2.0 * math.pi * self.ef.rho_water * self.ef.a**3 + self.ef.m_web

    def leg_wrench(self, k: int, v_forward: np.ndarray) -> np.ndarray:
        nx = self._nx[..., k]
        ny = self._ny[..., k]
        # the water streams head to tail (+X) past a forward-swimming body
        v_rel = v_forward[:, None] * nx - self._n_vel[..., k]
        F_T = self._k_acc * self._n_acc[..., k] + self._k_drag * np.abs(v_rel) * v_rel
        f_y = -F_T * nx
        f_z = F_T * ny
        q = self._q[..., k, :]
        tau_x = -q[..., 0] * f_z - q[..., 1] * f_y
        out = np.zeros(nx.shape + (6,))
        out[..., 0] = tau_x
        out[..., 4] = f_y
        out[..., 5] = f_z
        return out


class LstmLegModel:
    """LSTM surrogate fed a rolling 16-step window per leg (warm-started with the first row)."""

    tag = "LSTM"

    def __init__(self, model: LstmModel, window: int = 16, dtype=np.float32):
        self.model = model.astype(dtype)
        self.window = window
        self.dtype = np.dtype(dtype)

    def start(self, gaits: GaitBatch, n_steps: int, dt: float):
        t = dt * np.arange(n_steps + 1)
        th, tk, dth, dtk = gaits.angles(t)
        norm = self.model.input_norm
        joints = np.stack([th, tk, dth, dtk], axis=-1)
        self._joints = ((joints - norm.mean[1:]) / norm.std[1:]).astype(self.dtype)
        self._v_mean, self._v_std = norm.mean[0], norm.std[0]
        self._buf = None

    def _row(self, k, v_forward):
        P, L = self._joints.shape[:2]
        v = ((v_forward - self._v_mean) / self._v_std).astype(self.dtype)
        row = np.empty((P, L, 5), self.dtype)
        row[..., 0] = v[:, None]
        row[..., 1:] = self._joints[:, :, k]
        return row

    def leg_wrench(self, k: int, v_forward: np.ndarray) -> np.ndarray:
        row = self._row(k, v_forward)
        if self._buf is None:
            self._buf = np.repeat(row[:, :, None, :], self.window, axis=2)
        else:
            self._buf[:, :, :-1] = self._buf[:, :, 1:]
            self._buf[:, :, -1] = row
        P, L = row.shape[:2]
        y = forward_normalized(self.model, self._buf.reshape(P * L, self.window, 5))
        return self.model.target_norm.denormalize(y.astype(np.float64)).reshape(P, L, 6)


# --- simulation ------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    yaw: np.ndarray
    dyaw: np.ndarray
    wrench: np.ndarray  # (n_steps, 6) world-frame total wrench applied at each step
    gait: GaitParams
    model_tag: str
    mode: str
    dt: float
    turn_direction: float = 1.0
    status: str = "t_max"
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    def states(self) -> list[SimState]:
        return [SimState(*row) for row in zip(self.x, self.y, self.vx, self.vy, self.yaw, self.dyaw, self.t)]


def _leg_model(model, ef: EfParams, geom: LinkageGeometry):
    if isinstance(model, (EfLegModel, LstmLegModel)):
        return model
    if model is None or (isinstance(model, str) and model.upper() == "EF"):
        return EfLegModel(ef, geom)
    if isinstance(model, LstmModel):
        return LstmLegModel(model)
    raise ValueError(f"unknown force model {model!r}")


def simulate_batch(gaits: list[GaitParams], model="EF", cfg: BodyConfig = BodyConfig(),
                   mode: str = "straight", ef: EfParams = EfParams(),
                   geom: LinkageGeometry = LinkageGeometry(),
                   initial: SimState | None = None) -> list[Trajectory]:
    """Simulate several gaits in lock-step; each stops at its own termination event.

    A diverging individual is returned with ``status == "diverged"`` and its error
    message instead of aborting the batch.
    """
    if mode not in ("straight", "turn"):
        raise ValueError(f"unknown mode {mode!r}")
    P = len(gaits)
    leg_model = _leg_model(model, ef, geom)
    batch = GaitBatch.of(gaits)
    n_steps = cfg.n_steps
    dt = cfg.dt
    leg_model.start(batch, n_steps, dt)
    R, mounts = leg_transforms(cfg)
    mirror = np.ones((4, 6))
    mirror[list(RIGHT_LEGS)] = MIRROR

    init = initial or SimState()
    x, y, vx, vy, yaw, dyaw = (np.full(P, float(v)) for v in init.astuple()[:6])
    hist = np.zeros((n_steps + 1, 7, P))
    wlog = np.zeros((n_steps, P, 6))
    active = np.ones(P, dtype=bool)
    last = np.full(P, n_steps)
    status = np.array(["t_max"] * P, dtype=object)
    errors: list[str | None] = [None] * P
    cycle_steps = np.maximum(1, np.round(1.0 / (batch.freq * dt)).astype(int))
    tau_first_cycle = np.zeros(P)

    for k in range(n_steps):
        t = k * dt
        hist[k, 0] = t
        hist[k, 1:] = (x, y, vx, vy, yaw, dyaw)
        c, s = np.cos(yaw), np.sin(yaw)
        v_lat = c * vx + s * vy
        v_fwd = -s * vx + c * vy
        legs = leg_model.leg_wrench(k, v_fwd) * mirror
        wb = aggregate_legs(legs, R, mounts)
        F_dx, F_dy = body_drag(v_lat, v_fwd)
        wb[:, 3] += F_dx
        wb[:, 4] += F_dy
        ww = to_world(wb, yaw)
        wlog[k] = ww
        tau_first_cycle += np.where(k < cycle_steps, ww[:, 2], 0.0)

        nx = x + vx * dt
        ny = y + vy * dt
        nvx = vx + ww[:, 3] / cfg.mass * dt
        nvy = vy + ww[:, 4] / cfg.mass * dt
        nyaw = yaw + dyaw * dt
        ndyaw = dyaw + ww[:, 2] / cfg.I_yaw * dt
        upd = active
        x, y = np.where(upd, nx, x), np.where(upd, ny, y)
        vx, vy = np.where(upd, nvx, vx), np.where(upd, nvy, vy)
        yaw, dyaw = np.where(upd, nyaw, yaw), np.where(upd, ndyaw, dyaw)

        bad = active & ~np.isfinite(np.stack([x, y, vx, vy, yaw, dyaw])).all(axis=0)
        for i in np.flatnonzero(bad):
            errors[i] = str(NonFiniteState("integration diverged", t + dt))
            status[i] = "diverged"
        if mode == "straight":
            done = y >= cfg.finish_distance
        else:
            done = np.abs(yaw) >= 2.0 * math.pi
        finished = active & (done | bad)
        status[finished & ~bad] = "finished"
        last[finished] = k + 1
        active &= ~finished
        if not active.any():
            hist[k + 1, 0] = (k + 1) * dt
            hist[k + 1, 1:] = (x, y, vx, vy, yaw, dyaw)
            break
    else:
        hist[n_steps, 0] = n_steps * dt
        hist[n_steps, 1:] = (x, y, vx, vy, yaw, dyaw)

    trajs = []
    for i in range(P):
        n = last[i]
        h = hist[: n + 1, :, i]
        # frozen individuals keep their final state; rows after ``n`` are discarded
        h[n, 0] = n * dt
        direction = 1.0 if tau_first_cycle[i] >= 0 else -1.0
        trajs.append(Trajectory(
            t=h[:, 0].copy(), x=h[:, 1].copy(), y=h[:, 2].copy(), vx=h[:, 3].copy(),
            vy=h[:, 4].copy(), yaw=h[:, 5].copy(), dyaw=h[:, 6].copy(),
            wrench=wlog[:n, i].copy(), gait=gaits[i], model_tag=leg_model.tag, mode=mode,
            dt=dt, turn_direction=direction, status=str(status[i]), error=errors[i]))
    return trajs


def simulate(gait: GaitParams, model="EF", cfg: BodyConfig = BodyConfig(), mode: str = "straight",
             ef: EfParams = EfParams(), geom: LinkageGeometry = LinkageGeometry(),
             initial: SimState | None = None) -> Trajectory:
    traj = simulate_batch([gait], model, cfg, mode, ef, geom, initial)[0]
    if traj.status == "diverged":
        raise NonFiniteState(traj.error or "integration diverged")
    return traj


LEG_INDEX = {name: i for i, name in enumerate(LEG_NAMES)}
