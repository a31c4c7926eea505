"""Force-log ingestion, preprocessing, windowing, splitting and the synthetic tank."""

from __future__ import annotations

import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .hydro import CHANNELS, EfParams, FlowConditions, ef_leg_force, normal_relative_velocity
from .kinematics import GaitParams, LinkageGeometry, gait_angles, web_state_from_joints

FS = 65.0
CUTOFF = 6.0
WINDOW = 16
N_CYCLES = 10
INPUT_CHANNELS = ("V_flow", "theta_H", "theta_K", "dtheta_H", "dtheta_K")
COLUMNS = ("t",) + INPUT_CHANNELS + CHANNELS
FORMAT_TAG = "swimquad-forcelog v1"

# data-collection grid
GRID_THETA_H_MIN_DEG = (10.0, -10.0, -30.0, -50.0)
GRID_THETA_K_MAX_DEG = (-20.0, -40.0, -60.0, -80.0)
GRID_FREQ = (0.3, 0.4, 0.5, 0.6)
GRID_PHI = tuple(k * math.pi / 3 for k in range(1, 6))
MEASURED_SPEEDS = (0.0, 0.1, 0.2, 0.3)
INTERP_SPEEDS = (0.05, 0.15, 0.25)


class SchemaError(ValueError):
    pass


class SamplingError(ValueError):
    pass


class InsufficientLength(ValueError):
    pass


class GridError(ValueError):
    pass


@dataclass
class ForceRecord:
    t: float
    V_flow: float
    theta_H: float
    theta_K: float
    dtheta_H: float
    dtheta_K: float
    wrench: np.ndarray


@dataclass
class RecordSet:
    """One logged run: a single gait parameter set at a single flow speed.

    ``data`` has one row per sample with columns ``COLUMNS``.
    """

    params: GaitParams
    V_flow: float
    data: np.ndarray
    set_id: str = ""

    def __len__(self):
        return self.data.shape[0]

    @property
    def t(self):
        return self.data[:, 0]

    @property
    def inputs(self):
        return self.data[:, 1:6]

    @property
    def wrench(self):
        return self.data[:, 6:12]

    @property
    def params_key(self) -> str:
        return json.dumps(self.params.to_dict(), sort_keys=True)

    def record(self, i: int) -> ForceRecord:
        r = self.data[i]
        return ForceRecord(r[0], r[1], r[2], r[3], r[4], r[5], r[6:12].copy())

    def with_wrench(self, wrench) -> "RecordSet":
        data = self.data.copy()
        data[:, 6:12] = wrench
        return RecordSet(self.params, self.V_flow, data, self.set_id)


def gait_record_set(params: GaitParams, V_flow: float, n: int | None = None,
                    fs: float = FS, set_id: str = "") -> RecordSet:
    """Kinematic columns for a tank run of ``N_CYCLES`` cycles; wrench columns zeroed."""
    if n is None:
        n = int(math.ceil(N_CYCLES * fs / params.freq))
    t = np.arange(n) / fs
    j = gait_angles(params, 0, t)
    data = np.zeros((n, len(COLUMNS)))
    data[:, 0] = t
    data[:, 1] = V_flow
    data[:, 2] = j.theta_H
    data[:, 3] = j.theta_K
    data[:, 4] = j.dtheta_H
    data[:, 5] = j.dtheta_K
    return RecordSet(params, V_flow, data, set_id)


# --- log file I/O ----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_force_log(path, sets: list[RecordSet], meta: dict | None = None, fs: float = FS):
    buf = io.StringIO()
    buf.write(f"# {FORMAT_TAG}\n")
    buf.write(f"# fs={_fmt(fs)}\n")
    if meta:
        buf.write("# meta=" + json.dumps(meta, sort_keys=True) + "\n")
    buf.write(",".join(COLUMNS) + "\n")
    for rs in sets:
        head = {"id": rs.set_id, "V_flow": rs.V_flow, "params": rs.params.to_dict()}
        buf.write("# set " + json.dumps(head, sort_keys=True) + "\n")
        for row in rs.data:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue())


def read_log_meta(path) -> dict:
    for line in Path(path).read_text().splitlines():
        if line.startswith("# meta="):
            return json.loads(line[len("# meta="):])
        if not line.startswith("#"):
            break
    return {}


def load_force_log(path, fs_tolerance: float = 0.01) -> list[RecordSet]:
    """Parse a force log into record sets, checking the header and sample spacing."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    fs = None
    header_seen = False
    blocks: list[tuple[dict, list[list[float]]]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("# set "):
            if not header_seen:
                raise SchemaError(f"{path}:{lineno}: set block before column header")
            try:
                blocks.append((json.loads(line[6:]), []))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: bad set header: {exc}") from None
        elif line.startswith("#"):
            if line.startswith("# fs="):
                fs = float(line[5:])
        elif not header_seen:
            if tuple(c.strip() for c in line.split(",")) != COLUMNS:
                raise SchemaError(f"{path}:{lineno}: unexpected header {line!r}")
            header_seen = True
        else:
            if not blocks:
                raise SchemaError(f"{path}:{lineno}: data row outside a '# set' block")
            cells = line.split(",")
            if len(cells) != len(COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(COLUMNS)} columns, got {len(cells)}")
            try:
                blocks[-1][1].append([float(c) for c in cells])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric cell") from None
    if not header_seen:
        raise SchemaError(f"{path}: missing column header")
    if fs is None:
        raise SchemaError(f"{path}: missing '# fs=' line")
    out = []
    for head, rows in blocks:
        data = np.asarray(rows, dtype=float).reshape(-1, len(COLUMNS))
        if data.shape[0] >= 2:
            dt = np.diff(data[:, 0])
            if np.any(np.abs(dt * fs - 1.0) > fs_tolerance):
                raise SamplingError(f"{path}: set {head.get('id')!r} is not uniformly sampled at {fs} Hz")
        params = GaitParams.from_dict(head["params"])
        out.append(RecordSet(params, float(head["V_flow"]), data, str(head.get("id", ""))))
    return out


# --- preprocessing ---------------------------------------------------------

def _lowpass_sos(cutoff: float, fs: float):
    return butter(2, cutoff, btype="low", fs=fs, output="sos")


def lowpass(series, cutoff: float = CUTOFF, fs: float = FS, axis: int = 0) -> np.ndarray:
    """Zero-phase second-order Butterworth low-pass (forward and reverse pass)."""
    if not fs > 2.0 * cutoff:
        raise ValueError("sampling rate must exceed twice the cutoff")
    x = np.asarray(series, dtype=float)
    sos = _lowpass_sos(cutoff, fs)
    padlen = 3 * (2 * len(sos) + 1)
    if x.shape[axis] <= padlen:
        raise InsufficientLength(f"need more than {padlen} samples to filter, got {x.shape[axis]}")
    return sosfiltfilt(sos, x, axis=axis, padlen=padlen)


def filter_record_set(rs: RecordSet, cutoff: float = CUTOFF, fs: float = FS) -> RecordSet:
    return rs.with_wrench(lowpass(rs.wrench, cutoff, fs, axis=0))


def _quadratic_weights(xs, x):
    """Lagrange weights reproducing a quadratic through ``xs`` at ``x``."""
    x0, x1, x2 = xs
    return np.array([
        (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2)),
        (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2)),
        (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1)),
    ])


def interpolate_velocity(sets: list[RecordSet], targets=INTERP_SPEEDS,
                         cutoff: float = CUTOFF, fs: float = FS) -> list[RecordSet]:
    """Synthesize record sets at ``targets`` flow speeds by pointwise quadratic fits in V.

    All ``sets`` must share gait parameters and start at the same cycle phase.
    """
    if not sets:
        raise GridError("no record sets given")
    key = sets[0].params_key
    if any(s.params_key != key for s in sets):
        raise GridError("interpolation needs record sets sharing one parameter set")
    by_speed = {}
    for s in sets:
        by_speed.setdefault(s.V_flow, s)
    speeds = sorted(by_speed)
    if len(speeds) < 3:
        raise GridError(f"need >= 3 flow speeds, got {speeds}")
    n = min(len(s) for s in by_speed.values())
    ref_t = by_speed[speeds[0]].t[:n]
    for v in speeds[1:]:
        if not np.allclose(by_speed[v].t[:n], ref_t, atol=1e-9):
            raise GridError("record sets are not phase-aligned")
    out = []
    for target in targets:
        nearest = sorted(speeds, key=lambda v: (abs(v - target), v))[:3]
        nearest.sort()
        w = _quadratic_weights(nearest, target)
        wrench = sum(wi * by_speed[v].wrench[:n] for wi, v in zip(w, nearest))
        base = by_speed[nearest[0]]
        data = base.data[:n].copy()
        data[:, 1] = target
        data[:, 6:12] = lowpass(wrench, cutoff, fs, axis=0)
        sid = f"{base.set_id.rsplit('@', 1)[0]}@{target:g}" if base.set_id else ""
        out.append(RecordSet(base.params, float(target), data, sid))
    return out


# --- windowing and splitting -----------------------------------------------

@dataclass
class SequenceSample:
    window: np.ndarray  # (16, 5)
    target: np.ndarray  # (6,), CHANNELS order
    set_id: str = ""


@dataclass
class Windows:
    """A batch of sequence samples stored as arrays."""

    inputs: np.ndarray  # (N, L, 5)
    targets: np.ndarray  # (N, 6)
    set_ids: np.ndarray  # (N,) str
    v_flow: np.ndarray  # (N,)
    row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, i) -> SequenceSample:
        return SequenceSample(self.inputs[i], self.targets[i], str(self.set_ids[i]))

    def subset(self, mask) -> "Windows":
        return Windows(self.inputs[mask], self.targets[mask], self.set_ids[mask],
                       self.v_flow[mask], self.row[mask])

    @classmethod
    def concat(cls, parts: list["Windows"]) -> "Windows":
        if not parts:
            return cls(np.zeros((0, WINDOW, 5)), np.zeros((0, 6)), np.zeros(0, dtype=str),
                       np.zeros(0), np.zeros(0, dtype=int))
        return cls(np.concatenate([p.inputs for p in parts]),
                   np.concatenate([p.targets for p in parts]),
                   np.concatenate([p.set_ids for p in parts]),
                   np.concatenate([p.v_flow for p in parts]),
                   np.concatenate([p.row for p in parts]))


def make_windows(rs: RecordSet, length: int = WINDOW) -> Windows:
    """Stride-1 windows over one record set; target is the wrench at each window's last row."""
    n = len(rs)
    if n < length:
        raise InsufficientLength(f"set {rs.set_id!r} has {n} records, need {length}")
    idx = np.arange(n - length + 1)[:, None] + np.arange(length)[None, :]
    inputs = rs.inputs[idx]
    last = idx[:, -1]
    targets = rs.wrench[last]
    m = len(last)
    return Windows(inputs, targets, np.full(m, rs.set_id, dtype=object),
                   np.full(m, rs.V_flow), last)


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(round(0.7 * n))
    n_val = int(round(0.1 * n))
    return n_train, n_val, n - n_train - n_val


def split_groups(keys: list[str], seed: int) -> tuple[list[str], list[str], list[str]]:
    """Shuffle unique ``keys`` with ``seed`` and cut them 70/10/20."""
    uniq = sorted(set(keys))
    order = np.random.default_rng(seed).permutation(len(uniq))
    shuffled = [uniq[i] for i in order]
    n_train, n_val, _ = split_counts(len(uniq))
    return (shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])


def split_dataset(sets: list[RecordSet], seed: int):
    """Partition record sets 70/10/20, keeping every flow speed of a gait in one partition."""
    if len(sets) < 10:
        raise ValueError("need at least 10 record sets to split")
    groups = [s.params_key for s in sets]
    train_k, val_k, test_k = (set(p) for p in split_groups(groups, seed))
    pick = lambda ks: [s for s, g in zip(sets, groups) if g in ks]  # noqa: E731
    return pick(train_k), pick(val_k), pick(test_k)


def windows_for(sets: list[RecordSet], length: int = WINDOW) -> Windows:
    return Windows.concat([make_windows(s, length) for s in sets])


# --- synthetic tank --------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Unsteady augmentation and sensor noise added on top of the EF prediction.

    Each channel gets ``aug_amp * gain * v_rel**2 * sin(h * gait_phase + offset)``
    with harmonic ``h`` of 2 or 3, plus white noise of ``force_std`` (N) or
    ``torque_std`` (N m).
    """

    aug_amp: float = 1.0
    force_std: float = 0.02
    torque_std: float = 0.002
    gains: tuple[float, ...] = (0.12, 0.06, 0.05, 0.4, 0.8, 0.6)
    harmonics: tuple[int, ...] = (2, 3, 2, 3, 2, 3)
    offsets: tuple[float, ...] = (0.3, 1.1, 2.0, 0.7, 1.6, 2.4)

    @classmethod
    def silent(cls) -> "NoiseSpec":
        return cls(aug_amp=0.0, force_std=0.0, torque_std=0.0)


@dataclass(frozen=True)
class Grid:
    theta_H_min_deg: tuple[float, ...] = GRID_THETA_H_MIN_DEG
    theta_K_max_deg: tuple[float, ...] = GRID_THETA_K_MAX_DEG
    freq: tuple[float, ...] = GRID_FREQ
    phi: tuple[float, ...] = GRID_PHI
    speeds: tuple[float, ...] = MEASURED_SPEEDS

    def gaits(self) -> list[GaitParams]:
        return [GaitParams.from_degrees(h, k, f, p)
                for h, k, f, p in itertools.product(self.theta_H_min_deg, self.theta_K_max_deg,
                                                    self.freq, self.phi)]

    def cells(self):
        return [(g, v) for g in self.gaits() for v in self.speeds]

    def __len__(self):
        return (len(self.theta_H_min_deg) * len(self.theta_K_max_deg) * len(self.freq)
                * len(self.phi) * len(self.speeds))


def synthetic_wrench(rs: RecordSet, ef: EfParams, geom: LinkageGeometry, noise: NoiseSpec,
                     rng: np.random.Generator | None, fs: float = FS) -> np.ndarray:
    """EF prediction plus the unsteady augmentation and noise for one record set."""
    j = gait_angles(rs.params, 0, rs.t)
    web = web_state_from_joints(geom, j, 1.0 / fs)
    flow = FlowConditions(rs.V_flow)
    w = ef_leg_force(ef, web, flow).wrench.copy()
    if noise.aug_amp:
        v_rel = normal_relative_velocity(web, rs.V_flow * np.asarray(flow.direction))
        phase = 2.0 * math.pi * rs.params.freq * rs.t
        for c in range(6):
            w[:, c] += (noise.aug_amp * noise.gains[c] * v_rel**2
                        * np.sin(noise.harmonics[c] * phase + noise.offsets[c]))
    if rng is not None and (noise.force_std or noise.torque_std):
        std = np.array([noise.torque_std] * 3 + [noise.force_std] * 3)
        w += rng.standard_normal(w.shape) * std
    return w


def synth_generate(grid: Grid, noise: NoiseSpec = NoiseSpec(), seed: int = 0,
                   ef: EfParams = EfParams(), geom: LinkageGeometry = LinkageGeometry(),
                   fs: float = FS) -> list[RecordSet]:
    """One record set per (gait, speed) cell of ``grid``; deterministic under ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for gi, g in enumerate(grid.gaits()):
        for v in grid.speeds:
            rs = gait_record_set(g, v, fs=fs, set_id=f"g{gi:04d}@{v:g}")
            out.append(rs.with_wrench(synthetic_wrench(rs, ef, geom, noise, rng, fs)))
    return out


def synth_meta(grid: Grid, noise: NoiseSpec, seed: int, ef: EfParams) -> dict:
    return {"grid": asdict(grid), "noise": asdict(noise), "seed": seed, "ef": asdict(ef),
            "fs": FS, "cycles": N_CYCLES}


def preprocess(sets: list[RecordSet], interp_targets=INTERP_SPEEDS,
               cutoff: float = CUTOFF, fs: float = FS) -> list[RecordSet]:
    """Filter every set, then add interpolated speeds for each gait (re-filtered)."""
    filtered = [filter_record_set(s, cutoff, fs) for s in sets]
    by_gait: dict[str, list[RecordSet]] = {}
    for s in filtered:
        by_gait.setdefault(s.params_key, []).append(s)
    out = list(filtered)
    if interp_targets:
        for group in by_gait.values():
            if len({s.V_flow for s in group}) >= 3:
                out.extend(interpolate_velocity(group, interp_targets, cutoff, fs))
    return out
