"""Two-layer LSTM force surrogate written directly in numpy.

Gate blocks in every weight matrix are ordered (input, forget, cell, output);
each layer's weight matrix acts on ``[x_t, h_{t-1}]``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hydro import CHANNELS

MODEL_FORMAT = "swimquad-lstm"
MODEL_VERSION = 1
N_INPUTS = 5
N_OUTPUTS = 6
HIDDEN = 64
PARAM_NAMES = ("l1.W", "l1.b", "l2.W", "l2.b", "head.W", "head.b")
AGGREGATE_CHANNELS = ("f_y", "f_z", "tau_x")


class NonFiniteLoss(FloatingPointError):
    pass


class ModelFormatError(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "Normalizer":
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x, dtype=float).reshape(-1, x.shape[-1])
        std = x.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(x.mean(axis=0), std)

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class LstmModel:
    params: dict[str, np.ndarray]
    input_norm: Normalizer
    target_norm: Normalizer

    @property
    def hidden(self) -> int:
        return self.params["l1.b"].shape[0] // 4

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = HIDDEN) -> "LstmModel":
        p = {}
        for name, n_in in (("l1", N_INPUTS), ("l2", hidden)):
            fan_in = n_in + hidden
            bound = 1.0 / math.sqrt(fan_in)
            p[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, 4 * hidden))
            b = np.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0  # forget gate
            p[f"{name}.b"] = b
        bound = 1.0 / math.sqrt(hidden)
        p["head.W"] = rng.uniform(-bound, bound, size=(hidden, N_OUTPUTS))
        p["head.b"] = np.zeros(N_OUTPUTS)
        return cls(p, Normalizer.identity(N_INPUTS), Normalizer.identity(N_OUTPUTS))

    @classmethod
    def zeros(cls, hidden: int = HIDDEN) -> "LstmModel":
        m = cls.init(np.random.default_rng(0), hidden)
        for v in m.params.values():
            v[...] = 0.0
        return m

    def copy(self) -> "LstmModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "LstmModel":
        """Copy with weights cast to ``dtype`` (normalization stats stay float64)."""
        return LstmModel({k: v.astype(dtype) for k, v in self.params.items()},
                         copy.deepcopy(self.input_norm), copy.deepcopy(self.target_norm))

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


# --- forward / backward ----------------------------------------------------

def _layer_forward(W, b, x, cache: dict | None):
    """Run one LSTM layer over ``x`` of shape (B, T, I); returns all hidden states (B, T, H)."""
    B, T, n_in = x.shape
    H = b.shape[0] // 4
    Wx, Wh = W[:n_in], W[n_in:]
    xz = x @ Wx + b  # input projection for every step at once
    dt = xz.dtype
    h = np.zeros((B, H), dt)
    c = np.zeros((B, H), dt)
    hs = np.empty((B, T, H), dt)
    if cache is not None:
        gates = np.empty((B, T, 4 * H), dt)
        cs = np.empty((B, T, H), dt)
    for t in range(T):
        z = xz[:, t] + h @ Wh
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t] = h
        if cache is not None:
            gates[:, t, :H] = i
            gates[:, t, H:2 * H] = f
            gates[:, t, 2 * H:3 * H] = g
            gates[:, t, 3 * H:] = o
            cs[:, t] = c
    if cache is not None:
        cache.update(x=x, hs=hs, gates=gates, cs=cs)
    return hs


def _layer_backward(W, cache, dhs):
    """BPTT through one layer given dL/dh_t for every step; returns (dW, db, dx)."""
    x, hs, gates, cs = cache["x"], cache["hs"], cache["gates"], cache["cs"]
    B, T, n_in = x.shape
    H = hs.shape[2]
    Wh = W[n_in:]
    dt = hs.dtype
    dz_all = np.empty((B, T, 4 * H), dt)
    dh_next = np.zeros((B, H), dt)
    dc_next = np.zeros((B, H), dt)
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ Wh.T
    h_prev = np.concatenate([np.zeros((B, 1, H), dt), hs[:, :-1]], axis=1)
    xh = np.concatenate([x, h_prev], axis=2).reshape(B * T, -1)
    dz_flat = dz_all.reshape(B * T, -1)
    dW = xh.T @ dz_flat
    db = dz_flat.sum(axis=0)
    dx = (dz_flat @ W[:n_in].T).reshape(B, T, n_in)
    return dW, db, dx


def forward_normalized(m: LstmModel, x_norm, mask=None, cache: dict | None = None):
    """Network output in normalized target units for normalized inputs (B, T, 5).

    ``mask`` multiplies the layer-1 outputs before they enter layer 2 (inverted dropout).
    """
    p = m.params
    c1 = {} if cache is not None else None
    c2 = {} if cache is not None else None
    h1 = _layer_forward(p["l1.W"], p["l1.b"], x_norm, c1)
    x2 = h1 * mask if mask is not None else h1
    h2 = _layer_forward(p["l2.W"], p["l2.b"], x2, c2)
    last = h2[:, -1]
    y = last @ p["head.W"] + p["head.b"]
    if cache is not None:
        cache.update(l1=c1, l2=c2, mask=mask, last=last)
    return y


def dropout_mask(rng: np.random.Generator, shape, rate: float, dtype=np.float64):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return ((rng.random(shape) < keep) / keep).astype(dtype)


def forward(m: LstmModel, window, mode: str = "infer", dropout_mask_=None,
            rng: np.random.Generator | None = None, rate: float = 0.21) -> np.ndarray:
    """Predict the de-normalized wrench for one (16, 5) window or a (B, 16, 5) batch."""
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    mask = None
    if mode == "train":
        mask = dropout_mask_
        if mask is None and rng is not None:
            mask = dropout_mask(rng, (w.shape[0], w.shape[1], m.hidden), rate)
    elif mode != "infer":
        raise ValueError(f"unknown mode {mode!r}")
    y = m.target_norm.denormalize(forward_normalized(m, m.input_norm.normalize(w), mask))
    return y[0] if single else y


def predict(m: LstmModel, windows: np.ndarray, chunk: int = 4096) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    out = np.empty((windows.shape[0], N_OUTPUTS))
    for s in range(0, windows.shape[0], chunk):
        out[s:s + chunk] = forward(m, windows[s:s + chunk])
    return out


def loss_and_grads(m: LstmModel, x_norm, y_norm, mask=None):
    """MSE over the batch and all six normalized channels, with analytic gradients."""
    cache: dict = {}
    y = forward_normalized(m, x_norm, mask, cache)
    diff = y - y_norm
    loss = float(np.mean(diff * diff))
    dy = 2.0 * diff / diff.size
    p = m.params
    g = {"head.W": cache["last"].T @ dy, "head.b": dy.sum(axis=0)}
    dh2 = np.zeros_like(cache["l2"]["hs"])
    dh2[:, -1] = dy @ p["head.W"].T
    g["l2.W"], g["l2.b"], dx2 = _layer_backward(p["l2.W"], cache["l2"], dh2)
    dh1 = dx2 * mask if mask is not None else dx2
    g["l1.W"], g["l1.b"], _ = _layer_backward(p["l1.W"], cache["l1"], dh1)
    return loss, g


# --- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    dropout: float = 0.21
    lr_min: float = 0.001
    lr_max: float = 0.1
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    grad_clip: float = 5.0
    hidden: int = HIDDEN
    samples_per_epoch: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size, patience must be >= 1 and max_epochs >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "epochs": [asdict(e) for e in self.epochs]}


def clip_gradients(grads: dict, ceiling: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if ceiling and norm > ceiling:
        scale = ceiling / norm
        for g in grads.values():
            g *= scale
    return norm


def train_epoch(m: LstmModel, x_norm: np.ndarray, y_norm: np.ndarray, cfg: TrainConfig,
                lr: float, rng: np.random.Generator) -> float:
    """One pass of clipped gradient descent over shuffled batches; updates ``m`` in place."""
    n = x_norm.shape[0]
    order = rng.permutation(n)
    if cfg.samples_per_epoch is not None and cfg.samples_per_epoch < n:
        order = order[:cfg.samples_per_epoch]
    total, count = 0.0, 0
    for s in range(0, len(order), cfg.batch_size):
        idx = order[s:s + cfg.batch_size]
        xb = x_norm[idx]
        mask = dropout_mask(rng, (len(idx), xb.shape[1], m.hidden), cfg.dropout, xb.dtype)
        loss, grads = loss_and_grads(m, xb, y_norm[idx], mask)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at lr={lr}")
        clip_gradients(grads, cfg.grad_clip)
        if lr:
            for k, g in grads.items():
                m.params[k] -= g.dtype.type(lr) * g
        total += loss * len(idx)
        count += len(idx)
    return total / max(count, 1)


def mse_normalized(m: LstmModel, x_norm, y_norm, chunk: int = 4096) -> float:
    if x_norm.shape[0] == 0:
        return float("nan")
    total = 0.0
    for s in range(0, x_norm.shape[0], chunk):
        d = forward_normalized(m, x_norm[s:s + chunk]) - y_norm[s:s + chunk]
        total += float(np.sum(d.astype(np.float64) ** 2))
    return total / y_norm.size


class PlateauSchedule:
    """Halve the rate after ``patience`` epochs without validation improvement."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = min(max(cfg.lr_max * 0.1, cfg.lr_min), cfg.lr_max)
        self.best = math.inf
        self.stale = 0
        self.floor_hits = 0

    def step(self, val: float) -> bool:
        """Record one epoch's validation loss; returns True when training should stop."""
        if val < self.best:
            self.best = val
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.cfg.patience:
            self.stale = 0
            if self.lr <= self.cfg.lr_min:
                self.floor_hits += 1
            else:
                self.floor_hits = 0
            self.lr = min(max(self.lr * 0.5, self.cfg.lr_min), self.cfg.lr_max)
            return self.floor_hits >= 3
        return False


def fit(train_x, train_y, val_x, val_y, cfg: TrainConfig, model: LstmModel | None = None,
        log=None) -> tuple[LstmModel, TrainHistory]:
    """Train on physical-unit windows/targets; normalization stats come from the train split."""
    rng = np.random.default_rng(cfg.seed)
    dt = np.dtype(cfg.dtype)
    m = model.copy() if model is not None else LstmModel.init(rng, cfg.hidden)
    m.input_norm = Normalizer.fit(np.asarray(train_x))
    m.target_norm = Normalizer.fit(np.asarray(train_y))
    m = m.astype(dt)
    xt = m.input_norm.normalize(train_x).astype(dt)
    yt = m.target_norm.normalize(train_y).astype(dt)
    xv = m.input_norm.normalize(val_x).astype(dt)
    yv = m.target_norm.normalize(val_y).astype(dt)
    sched = PlateauSchedule(cfg)
    hist = TrainHistory()
    best, best_val = m.copy(), math.inf
    for epoch in range(cfg.max_epochs):
        lr = sched.lr
        tr = train_epoch(m, xt, yt, cfg, lr, rng)
        va = mse_normalized(m, xv, yv) if xv.shape[0] else tr
        hist.epochs.append(EpochRecord(epoch, tr, va, lr))
        if log:
            log(f"epoch {epoch:3d}  train {tr:.5f}  val {va:.5f}  lr {lr:.4g}")
        if va < best_val:
            best_val, best, hist.best_epoch = va, m.copy(), epoch
        if sched.step(va):
            break
    return best.astype(np.float64), hist


# --- evaluation ------------------------------------------------------------

def channel_mse(pred, target) -> np.ndarray:
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return np.mean(d * d, axis=0)


def aggregate_mse(per_channel) -> float:
    idx = [CHANNELS.index(c) for c in AGGREGATE_CHANNELS]
    return float(np.mean(np.asarray(per_channel)[..., idx], axis=-1))


def score_predictions(pred, targets, v_flow, set_ids, target_norm: Normalizer | None = None) -> dict:
    """Per-channel and aggregate MSE overall, by flow speed and by record set."""
    pred = np.asarray(pred, dtype=float)
    targets = np.asarray(targets, dtype=float)
    v_flow = np.round(np.asarray(v_flow, dtype=float), 6)
    set_ids = np.asarray(set_ids)

    def summary(mask):
        ch = channel_mse(pred[mask], targets[mask])
        out = {"n": int(mask.sum()), "channel_mse": dict(zip(CHANNELS, ch.tolist())),
               "aggregate_mse": aggregate_mse(ch)}
        if target_norm is not None:
            chn = channel_mse(target_norm.normalize(pred[mask]), target_norm.normalize(targets[mask]))
            out["channel_mse_normalized"] = dict(zip(CHANNELS, chn.tolist()))
            out["aggregate_mse_normalized"] = aggregate_mse(chn)
        return out

    everything = np.ones(len(pred), dtype=bool)
    res = summary(everything)
    res["by_speed"] = {f"{v:g}": summary(v_flow == v) for v in sorted(set(v_flow.tolist()))}
    per_set = {}
    for sid in sorted(set(set_ids.tolist())):
        mask = set_ids == sid
        per_set[sid] = {"V_flow": float(v_flow[mask][0]),
                        "aggregate_mse": aggregate_mse(channel_mse(pred[mask], targets[mask]))}
    res["by_set"] = per_set
    return res


def evaluate(m: LstmModel, windows, targets, v_flow, set_ids) -> dict:
    return score_predictions(predict(m, windows), targets, v_flow, set_ids, m.target_norm)


# --- serialization ---------------------------------------------------------

def save_model(m: LstmModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": {"inputs": N_INPUTS, "hidden": m.hidden, "outputs": N_OUTPUTS, "layers": 2},
        "params": {k: {"shape": list(m.params[k].shape), "data": m.params[k].ravel().tolist()}
                   for k in PARAM_NAMES},
        "input_norm": {"mean": m.input_norm.mean.tolist(), "std": m.input_norm.std.tolist()},
        "target_norm": {"mean": m.target_norm.mean.tolist(), "std": m.target_norm.std.tolist()},
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def expected_shapes(hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        "l1.W": (N_INPUTS + hidden, 4 * hidden), "l1.b": (4 * hidden,),
        "l2.W": (2 * hidden, 4 * hidden), "l2.b": (4 * hidden,),
        "head.W": (hidden, N_OUTPUTS), "head.b": (N_OUTPUTS,),
    }


def load_model(path, hidden: int | None = HIDDEN) -> LstmModel:
    """Load a weight file; ``hidden=None`` accepts any width, otherwise it must match."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} file")
    dims = doc["dims"]
    if (dims["inputs"], dims["outputs"], dims["layers"]) != (N_INPUTS, N_OUTPUTS, 2):
        raise ModelFormatError(f"{path}: architecture mismatch {dims}")
    if hidden is not None and dims["hidden"] != hidden:
        raise ModelFormatError(f"{path}: hidden width {dims['hidden']} != {hidden}")
    shapes = expected_shapes(dims["hidden"])
    params = {}
    for k in PARAM_NAMES:
        entry = doc["params"][k]
        arr = np.asarray(entry["data"], dtype=float)
        if tuple(entry["shape"]) != shapes[k] or arr.size != math.prod(shapes[k]):
            raise ModelFormatError(f"{path}: {k} has shape {entry['shape']}, expected {shapes[k]}")
        params[k] = arr.reshape(shapes[k])
    norm = lambda d: Normalizer(np.asarray(d["mean"], float), np.asarray(d["std"], float))  # noqa: E731
    return LstmModel(params, norm(doc["input_norm"]), norm(doc["target_norm"]))
