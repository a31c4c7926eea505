"""Tables and summaries behind the CLI reports: model comparison and trajectory statistics."""

from __future__ import annotations

import io
import math
from typing import Callable

import numpy as np

from .data import RecordSet, Windows, windows_for
from .dynamics import Trajectory
from .hydro import CHANNELS, EfParams, FlowConditions, ef_leg_force
from .kinematics import LinkageGeometry, gait_angles, web_state_from_joints
from .lstm import aggregate_mse, channel_mse

Predictor = Callable[[np.ndarray], np.ndarray]


def ef_wrench(rs: RecordSet, ef: EfParams, geom: LinkageGeometry, fs: float) -> np.ndarray:
    """EF prediction for every row of a record set (tank frame, flow at ``rs.V_flow``)."""
    j = gait_angles(rs.params, 0, rs.t)
    web = web_state_from_joints(geom, j, 1.0 / fs)
    return ef_leg_force(ef, web, FlowConditions(rs.V_flow)).wrench


def ef_window_predictions(sets: list[RecordSet], w: Windows, ef: EfParams,
                          geom: LinkageGeometry, fs: float) -> np.ndarray:
    by_id = {s.set_id: s for s in sets}
    cache: dict[str, np.ndarray] = {}
    out = np.empty_like(w.targets)
    for sid in dict.fromkeys(w.set_ids.tolist()):
        if sid not in cache:
            cache[sid] = ef_wrench(by_id[sid], ef, geom, fs)
        mask = w.set_ids == sid
        out[mask] = cache[sid][w.row[mask]]
    return out


def per_set_mse(pred, w: Windows) -> dict[str, tuple[float, float]]:
    """Aggregate MSE and flow speed per record set, keyed by set id."""
    out = {}
    for sid in sorted(set(w.set_ids.tolist())):
        mask = w.set_ids == sid
        out[sid] = (float(w.v_flow[mask][0]), aggregate_mse(channel_mse(pred[mask], w.targets[mask])))
    return out


def box_stats(values) -> dict:
    """Median, quartiles, 1.5 IQR whiskers and outliers of a sample."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return {"n": 0, "median": math.nan, "q1": math.nan, "q3": math.nan,
                "whisker_lo": math.nan, "whisker_hi": math.nan, "outliers": []}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {"n": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3),
            "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
            "outliers": [float(x) for x in v if x < q1 - 1.5 * iqr or x > q3 + 1.5 * iqr]}


class Comparison:
    """LSTM and EF predictions on the same test windows, with per-speed summaries."""

    def __init__(self, test_sets: list[RecordSet], predict: Predictor, ef: EfParams,
                 geom: LinkageGeometry, fs: float, window: int):
        self.sets = test_sets
        self.windows = windows_for(test_sets, window)
        self.pred = {"LSTM": np.asarray(predict(self.windows.inputs), dtype=float),
                     "EF": ef_window_predictions(test_sets, self.windows, ef, geom, fs)}
        self.speeds = sorted(set(np.round(self.windows.v_flow, 6).tolist()))

    def speed_table(self) -> list[dict]:
        rows = []
        v = np.round(self.windows.v_flow, 6)
        for s in self.speeds:
            mask = v == s
            row = {"V_flow": s, "n_windows": int(mask.sum())}
            for tag, p in self.pred.items():
                ch = channel_mse(p[mask], self.windows.targets[mask])
                row[f"{tag.lower()}_aggregate_mse"] = aggregate_mse(ch)
                for name, val in zip(CHANNELS, ch):
                    row[f"{tag.lower()}_{name}"] = float(val)
            rows.append(row)
        return rows

    def box_table(self) -> list[dict]:
        rows = []
        for tag, p in self.pred.items():
            per_set = per_set_mse(p, self.windows)
            for s in self.speeds:
                vals = [m for v, m in per_set.values() if round(v, 6) == s]
                st = box_stats(vals)
                st["outliers"] = ";".join(repr(x) for x in st["outliers"])
                rows.append({"model": tag, "V_flow": s, **st})
        return rows

    def series(self, set_id: str) -> list[dict]:
        mask = self.windows.set_ids == set_id
        rs = next(s for s in self.sets if s.set_id == set_id)
        rows = []
        for k in np.flatnonzero(mask):
            r = {"t": float(rs.t[self.windows.row[k]])}
            for name, val in zip(CHANNELS, self.windows.targets[k]):
                r[f"truth_{name}"] = float(val)
            for tag, p in self.pred.items():
                for name, val in zip(CHANNELS, p[k]):
                    r[f"{tag.lower()}_{name}"] = float(val)
            rows.append(r)
        return rows

    def example_ids(self, n: int, speeds) -> list[str]:
        """First ``n`` test gaits (by set id), each at every requested speed present."""
        gaits = sorted({s.set_id.rsplit("@", 1)[0] for s in self.sets})[:n]
        want = {round(v, 6) for v in speeds}
        return [s.set_id for s in sorted(self.sets, key=lambda s: (s.set_id.rsplit("@", 1)[0], s.V_flow))
                if s.set_id.rsplit("@", 1)[0] in gaits and round(s.V_flow, 6) in want]


def csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for r in rows:
        buf.write(",".join(_cell(r[c]) for c in cols) + "\n")
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- trajectory summaries -------------------------------------------------

def station_crossings(traj: Trajectory, step: float = 0.25, stop: float = 2.0):
    """Lateral position where Y first reaches each station 0, step, ..., stop (NaN if never)."""
    stations = np.round(np.arange(0.0, stop + 1e-9, step), 12)
    xs = []
    for s in stations:
        if s <= traj.y[0]:
            xs.append(float(traj.x[0]))
            continue
        hit = np.flatnonzero(traj.y >= s)
        if hit.size == 0:
            xs.append(math.nan)
            continue
        k = hit[0]
        y0, y1 = traj.y[k - 1], traj.y[k]
        a = (s - y0) / (y1 - y0) if y1 != y0 else 1.0
        xs.append(float(traj.x[k - 1] + a * (traj.x[k] - traj.x[k - 1])))
    return stations, np.array(xs)


def fit_circle_radius(x, y) -> float:
    """Least-squares circle radius through the points (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        return math.nan
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    (c0, c1, c2), *_ = np.linalg.lstsq(A, b, rcond=None)
    r2 = c2 + (c0 / 2) ** 2 + (c1 / 2) ** 2
    return float(math.sqrt(r2)) if r2 > 0 else math.nan


def trajectory_summary(traj: Trajectory, finish_distance: float = 2.0, station_step: float = 0.25) -> dict:
    """Distance, time, yaw error, lateral deviation at Y stations, and turn radius."""
    stations, xs = station_crossings(traj, station_step, finish_distance)
    reached = ~np.isnan(xs)
    target = 0.0 if traj.mode == "straight" else 2.0 * math.pi * traj.turn_direction
    out = {
        "mode": traj.mode,
        "model": traj.model_tag,
        "status": traj.status,
        "t_final": traj.t_final,
        "distance_y": float(traj.y[-1] - traj.y[0]),
        "path_length": float(np.sum(np.hypot(np.diff(traj.x), np.diff(traj.y)))),
        "x_final": float(traj.x[-1]),
        "yaw_final": float(traj.yaw[-1]),
        "yaw_error": abs(float(traj.yaw[-1]) - target),
        "stations": [float(s) for s in stations],
        "x_at_stations": [None if math.isnan(v) else v for v in xs.tolist()],
        "stations_reached": int(reached.sum()),
        "mae_x": float(np.mean(np.abs(xs[reached]))) if reached.any() else None,
        "T_S": traj.t_final if traj.mode == "straight" and traj.status == "finished" else None,
        "T_T": traj.t_final if traj.mode == "turn" and traj.status == "finished" else None,
        "r_T": fit_circle_radius(traj.x, traj.y) if traj.mode == "turn" else None,
    }
    if out["r_T"] is not None and math.isnan(out["r_T"]):
        out["r_T"] = None
    return out


def trajectory_rows(traj: Trajectory) -> list[dict]:
    rows = []
    n = len(traj.t)
    for k in range(n):
        w = traj.wrench[k] if k < len(traj.wrench) else np.full(6, math.nan)
        r = {"t": float(traj.t[k]), "x": float(traj.x[k]), "y": float(traj.y[k]),
             "vx": float(traj.vx[k]), "vy": float(traj.vy[k]), "theta_yaw": float(traj.yaw[k]),
             "dtheta_yaw": float(traj.dyaw[k])}
        for name, val in zip(CHANNELS, w):
            r[name] = float(val)
        rows.append(r)
    return rows
