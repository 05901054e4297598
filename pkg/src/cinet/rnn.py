"""Sequence-to-label recurrent classifier over model-snapshot encodings.

Three cell types (vanilla tanh, GRU, LSTM), one to three stacked layers,
final-step readout through a sigmoid head. Gradients come from exact
backpropagation through time; training uses Adam on mean binary
cross-entropy plus an L2 penalty on the weights (biases excluded).

Cell equations are the standard ones. GRU follows the original gated
formulation (reset gate applied to the previous hidden state before the
candidate transform); the hidden update is h = (1-z)*h_prev + z*h_cand.
LSTM uses input/forget/cell/output gates with the forget bias started at 1.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import InputMode, PairSet, TrainingPair
from .errors import ConfigError, DataError, FormatError, ShapeError, TrainingDiverged
from .fileio import atomic_write, derive_seed

logger = logging.getLogger(__name__)

RNN_FORMAT_VERSION = 1
CLAMP_EPS = 1e-12


class CellKind(Enum):
    VANILLA = "vanilla"
    GRU = "gru"
    LSTM = "lstm"


_GATE_MULT = {CellKind.VANILLA: 1, CellKind.GRU: 3, CellKind.LSTM: 4}


@dataclass(frozen=True)
class RnnConfig:
    cell: CellKind
    input_dim: int
    layers: int = 2
    hidden: int = 50
    input_mode: InputMode = InputMode.P_C
    l2_lambda: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 100
    seed: int = 0
    early_stop_patience: int = 10  # 0 disables early stopping
    max_epochs: int = 200

    def validate(self) -> None:
        if self.layers not in (1, 2, 3):
            raise ConfigError(f"layers must be 1, 2 or 3, got {self.layers}")
        if self.hidden < 1 or self.input_dim < 1:
            raise ConfigError(f"hidden and input_dim must be >= 1, got {self.hidden}, {self.input_dim}")
        if self.learning_rate <= 0 or self.l2_lambda < 0:
            raise ConfigError("learning_rate must be > 0 and l2_lambda >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1, patience >= 0")


@dataclass
class RnnModel:
    config: RnnConfig
    params: dict[str, np.ndarray]

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def init_model(config: RnnConfig) -> RnnModel:
    """Uniform(-r, r) weights with r = 1/sqrt(fan_in); biases zero except the
    LSTM forget gate, which starts at 1."""
    config.validate()
    rng = np.random.default_rng(derive_seed(config.seed, 11))
    mult = _GATE_MULT[config.cell]
    h = config.hidden
    params: dict[str, np.ndarray] = {}
    for li in range(config.layers):
        d_in = config.input_dim if li == 0 else h
        params[f"layer{li}.w_x"] = rng.uniform(-1, 1, size=(mult * h, d_in)) / np.sqrt(d_in)
        params[f"layer{li}.w_h"] = rng.uniform(-1, 1, size=(mult * h, h)) / np.sqrt(h)
        b = np.zeros(mult * h)
        if config.cell is CellKind.LSTM:
            b[h:2 * h] = 1.0
        params[f"layer{li}.b"] = b
    params["out.w"] = rng.uniform(-1, 1, size=h) / np.sqrt(h)
    params["out.b"] = np.zeros(1)
    return RnnModel(config=config, params=params)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Per-layer forward/backward over a (T, B, *) block of same-length sequences
# ---------------------------------------------------------------------------

def _layer_forward(cell: CellKind, w_x, w_h, b, x):
    t_len, batch, _ = x.shape
    h_dim = w_h.shape[1]
    hs = np.zeros((t_len + 1, batch, h_dim))
    pre_x = x @ w_x.T + b  # (T, B, mult*H)
    if cell is CellKind.VANILLA:
        for t in range(t_len):
            hs[t + 1] = np.tanh(pre_x[t] + hs[t] @ w_h.T)
        return hs[1:], (x, hs)
    if cell is CellKind.GRU:
        zs = np.empty((t_len, batch, h_dim))
        rs = np.empty_like(zs)
        cands = np.empty_like(zs)
        rh = np.empty_like(zs)
        for t in range(t_len):
            h_prev = hs[t]
            gate_pre = pre_x[t, :, :2 * h_dim] + h_prev @ w_h[:2 * h_dim].T
            z = _sigmoid(gate_pre[:, :h_dim])
            r = _sigmoid(gate_pre[:, h_dim:])
            masked = r * h_prev
            cand = np.tanh(pre_x[t, :, 2 * h_dim:] + masked @ w_h[2 * h_dim:].T)
            hs[t + 1] = (1.0 - z) * h_prev + z * cand
            zs[t], rs[t], cands[t], rh[t] = z, r, cand, masked
        return hs[1:], (x, hs, zs, rs, cands, rh)
    if cell is CellKind.LSTM:
        gates = np.empty((t_len, batch, 4 * h_dim))
        cs = np.zeros((t_len + 1, batch, h_dim))
        tcs = np.empty((t_len, batch, h_dim))
        for t in range(t_len):
            pre = pre_x[t] + hs[t] @ w_h.T
            i = _sigmoid(pre[:, :h_dim])
            f = _sigmoid(pre[:, h_dim:2 * h_dim])
            g = np.tanh(pre[:, 2 * h_dim:3 * h_dim])
            o = _sigmoid(pre[:, 3 * h_dim:])
            cs[t + 1] = f * cs[t] + i * g
            tcs[t] = np.tanh(cs[t + 1])
            hs[t + 1] = o * tcs[t]
            gates[t] = np.concatenate([i, f, g, o], axis=1)
        return hs[1:], (x, hs, gates, cs, tcs)
    raise ConfigError(f"unknown cell kind: {cell!r}")


def _layer_backward(cell: CellKind, w_x, w_h, b, cache, d_out):
    """Given d(loss)/d(output sequence), return (dw_x, dw_h, db, d_input_sequence)."""
    x = cache[0]
    t_len, batch, _ = x.shape
    h_dim = w_h.shape[1]
    dw_x = np.zeros_like(w_x)
    dw_h = np.zeros_like(w_h)
    db = np.zeros_like(b)
    dx = np.zeros_like(x)
    dh_next = np.zeros((batch, h_dim))

    if cell is CellKind.VANILLA:
        _, hs = cache
        for t in range(t_len - 1, -1, -1):
            dh = d_out[t] + dh_next
            da = dh * (1.0 - hs[t + 1] ** 2)
            dw_x += da.T @ x[t]
            dw_h += da.T @ hs[t]
            db += da.sum(axis=0)
            dx[t] = da @ w_x
            dh_next = da @ w_h
        return dw_x, dw_h, db, dx

    if cell is CellKind.GRU:
        _, hs, zs, rs, cands, rh = cache
        for t in range(t_len - 1, -1, -1):
            dh = d_out[t] + dh_next
            h_prev = hs[t]
            z, r, cand = zs[t], rs[t], cands[t]
            dcand = dh * z
            dz = dh * (cand - h_prev)
            dh_prev = dh * (1.0 - z)
            dcand_pre = dcand * (1.0 - cand ** 2)
            dmasked = dcand_pre @ w_h[2 * h_dim:]
            dr = dmasked * h_prev
            dh_prev += dmasked * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            dgate_pre = np.concatenate([dz_pre, dr_pre], axis=1)
            dw_x[:2 * h_dim] += dgate_pre.T @ x[t]
            dw_x[2 * h_dim:] += dcand_pre.T @ x[t]
            dw_h[:2 * h_dim] += dgate_pre.T @ h_prev
            dw_h[2 * h_dim:] += dcand_pre.T @ rh[t]
            db[:2 * h_dim] += dgate_pre.sum(axis=0)
            db[2 * h_dim:] += dcand_pre.sum(axis=0)
            dx[t] = dgate_pre @ w_x[:2 * h_dim] + dcand_pre @ w_x[2 * h_dim:]
            dh_next = dh_prev + dgate_pre @ w_h[:2 * h_dim]
        return dw_x, dw_h, db, dx

    if cell is CellKind.LSTM:
        _, hs, gates, cs, tcs = cache
        dc_next = np.zeros((batch, h_dim))
        for t in range(t_len - 1, -1, -1):
            dh = d_out[t] + dh_next
            i = gates[t, :, :h_dim]
            f = gates[t, :, h_dim:2 * h_dim]
            g = gates[t, :, 2 * h_dim:3 * h_dim]
            o = gates[t, :, 3 * h_dim:]
            tc = tcs[t]
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc ** 2)
            di = dc * g
            df = dc * cs[t]
            dg = dc * i
            dc_next = dc * f
            dpre = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            dw_x += dpre.T @ x[t]
            dw_h += dpre.T @ hs[t]
            db += dpre.sum(axis=0)
            dx[t] = dpre @ w_x
            dh_next = dpre @ w_h
        return dw_x, dw_h, db, dx

    raise ConfigError(f"unknown cell kind: {cell!r}")


def _forward_core(model: RnnModel, xs: np.ndarray):
    """xs: (T, B, input_dim). Returns (yhat (B,), layer caches, last hidden)."""
    cfg = model.config
    acts = xs
    caches = []
    for li in range(cfg.layers):
        acts, cache = _layer_forward(
            cfg.cell,
            model.params[f"layer{li}.w_x"],
            model.params[f"layer{li}.w_h"],
            model.params[f"layer{li}.b"],
            acts,
        )
        caches.append(cache)
    h_last = acts[-1]
    logit = h_last @ model.params["out.w"] + model.params["out.b"][0]
    return _sigmoid(logit), caches, h_last


def _backward_core(model: RnnModel, caches, h_last, d_logit, grads) -> None:
    cfg = model.config
    grads["out.w"] += d_logit @ h_last
    grads["out.b"] += d_logit.sum()
    t_len, batch, _ = caches[-1][0].shape if cfg.layers > 1 else caches[0][0].shape
    d_h = np.zeros((t_len, batch, cfg.hidden))
    d_h[-1] = d_logit[:, None] * model.params["out.w"][None, :]
    for li in range(cfg.layers - 1, -1, -1):
        dw_x, dw_h, db, d_h = _layer_backward(
            cfg.cell,
            model.params[f"layer{li}.w_x"],
            model.params[f"layer{li}.w_h"],
            model.params[f"layer{li}.b"],
            caches[li],
            d_h,
        )
        grads[f"layer{li}.w_x"] += dw_x
        grads[f"layer{li}.w_h"] += dw_h
        grads[f"layer{li}.b"] += db


def _check_sequence(model: RnnModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"expected a (steps, {model.config.input_dim}) sequence, got shape {x.shape}"
        )
    return x


def forward(model: RnnModel, x: np.ndarray) -> float:
    """Probability of incrementing, for one variable-length sequence."""
    x = _check_sequence(model, x)
    yhat, _, _ = _forward_core(model, x[:, None, :])
    return float(yhat[0])


def _is_bias(name: str) -> bool:
    return name.endswith(".b")


def _l2_term(model: RnnModel | None, l2_lambda: float) -> float:
    if model is None or l2_lambda == 0.0:
        return 0.0
    return l2_lambda * sum(
        float((w ** 2).sum()) for name, w in model.params.items() if not _is_bias(name)
    )


def loss(predictions, labels, model: RnnModel | None = None, l2_lambda: float = 0.0) -> float:
    """Mean binary cross-entropy plus l2_lambda * sum of squared weights."""
    preds = np.atleast_1d(np.asarray(predictions, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if preds.shape != ys.shape or preds.size == 0:
        raise DataError(f"predictions and labels must align, got {preds.shape} vs {ys.shape}")
    clamped = np.clip(preds, CLAMP_EPS, 1.0 - CLAMP_EPS)
    if (clamped != preds).any():
        logger.warning("clamped %d prediction(s) away from {0, 1} before the log", int((clamped != preds).sum()))
    bce = -float(np.mean(ys * np.log(clamped) + (1.0 - ys) * np.log(1.0 - clamped)))
    return bce + _l2_term(model, l2_lambda)


def _group_by_length(pairs: list[TrainingPair]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for idx, pair in enumerate(pairs):
        groups.setdefault(pair.x.shape[0], []).append(idx)
    return groups


def _loss_and_grads(model: RnnModel, batch: list[TrainingPair]):
    if not batch:
        raise DataError("gradient batch must be non-empty")
    for pair in batch:
        _check_sequence(model, pair.x)
    n = len(batch)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    bce_sum = 0.0
    for _, idxs in sorted(_group_by_length(batch).items()):
        xs = np.stack([batch[i].x for i in idxs], axis=1)
        ys = np.array([batch[i].y for i in idxs], dtype=np.float64)
        yhat, caches, h_last = _forward_core(model, xs)
        clamped = np.clip(yhat, CLAMP_EPS, 1.0 - CLAMP_EPS)
        bce_sum += -float((ys * np.log(clamped) + (1.0 - ys) * np.log(1.0 - clamped)).sum())
        _backward_core(model, caches, h_last, (yhat - ys) / n, grads)
    lam = model.config.l2_lambda
    if lam > 0:
        for name, w in model.params.items():
            if not _is_bias(name):
                grads[name] += 2.0 * lam * w
    return bce_sum / n + _l2_term(model, lam), grads


def gradients(model: RnnModel, batch: list[TrainingPair]) -> dict[str, np.ndarray]:
    """Exact BPTT gradients of the mean batch loss, L2 included."""
    return _loss_and_grads(model, batch)[1]


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(model: RnnModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in model.params.items()},
        v={k: np.zeros_like(v) for k, v in model.params.items()},
        beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(state: AdamState, model: RnnModel, grads: dict[str, np.ndarray], lr: float):
    """One bias-corrected Adam update; mutates and returns (state, model)."""
    state.t += 1
    b1c = 1.0 - state.beta1 ** state.t
    b2c = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        model.params[name] -= lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return state, model


def evaluate(model: RnnModel, pairs: PairSet | list[TrainingPair]) -> tuple[float, np.ndarray]:
    """Accuracy with threshold 0.5 (ties predict increment) plus raw probabilities."""
    if isinstance(pairs, PairSet):
        pairs = pairs.pairs
    if not pairs:
        raise DataError("cannot evaluate an empty pair list")
    probs = np.empty(len(pairs))
    for _, idxs in sorted(_group_by_length(pairs).items()):
        xs = np.stack([_check_sequence(model, pairs[i].x) for i in idxs], axis=1)
        yhat, _, _ = _forward_core(model, xs)
        probs[idxs] = yhat
    labels = np.array([p.y for p in pairs])
    accuracy = float(((probs >= 0.5).astype(int) == labels).mean())
    return accuracy, probs


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def train(pairs: PairSet, cfg: RnnConfig, monitor: str = "val") -> tuple[RnnModel, TrainHistory]:
    """Shuffled mini-batch Adam with accuracy-based early stopping.

    Stops once the monitored split has not improved for
    `early_stop_patience` epochs (0 keeps going to max_epochs) and returns
    the snapshot from the best monitored epoch.
    """
    cfg.validate()
    if monitor not in ("val", "test"):
        raise ConfigError(f"monitor must be 'val' or 'test', got {monitor!r}")
    if pairs.mode is not cfg.input_mode:
        raise ConfigError(f"pairs encode {pairs.mode.value} but config expects {cfg.input_mode.value}")
    if pairs.input_dim != cfg.input_dim:
        raise ConfigError(f"pairs have input_dim {pairs.input_dim}, config says {cfg.input_dim}")
    train_pairs = pairs.subset("train")
    monitor_pairs = pairs.subset(monitor)
    if not train_pairs or not monitor_pairs:
        raise DataError(
            f"need non-empty train and {monitor} splits, got {len(train_pairs)} and {len(monitor_pairs)}"
        )

    model = init_model(cfg)
    state = init_adam(model)
    rng = np.random.default_rng(derive_seed(cfg.seed, 13))
    history = TrainHistory()
    best_acc = -1.0
    best_params = model.copy_params()
    since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_pairs))
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
            batch_loss, grads = _loss_and_grads(model, batch)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (learning_rate={cfg.learning_rate})"
                )
            adam_step(state, model, grads, cfg.learning_rate)
            loss_sum += batch_loss * len(batch)
        train_acc, _ = evaluate(model, train_pairs)
        val_acc, _ = evaluate(model, monitor_pairs)
        history.records.append(EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / len(train_pairs),
            train_acc=train_acc,
            val_acc=val_acc,
        ))
        history.stopped_epoch = epoch
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = model.copy_params()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop_patience and since_best >= cfg.early_stop_patience:
                break

    return RnnModel(config=cfg, params=best_params), history


def write_metrics_csv(history: TrainHistory, path: str | Path) -> None:
    with atomic_write(path) as fh:
        fh.write("epoch,train_loss,train_acc,val_acc\n")
        for rec in history.records:
            fh.write(f"{rec.epoch},{rec.train_loss!r},{rec.train_acc!r},{rec.val_acc!r}\n")


def save_rnn(model: RnnModel, path: str | Path) -> None:
    cfg = model.config
    doc = {
        "format_version": RNN_FORMAT_VERSION,
        "config": {
            "cell": cfg.cell.value,
            "input_dim": cfg.input_dim,
            "layers": cfg.layers,
            "hidden": cfg.hidden,
            "input_mode": cfg.input_mode.value,
            "l2_lambda": cfg.l2_lambda,
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "early_stop_patience": cfg.early_stop_patience,
            "max_epochs": cfg.max_epochs,
        },
        "params": {name: arr.tolist() for name, arr in model.params.items()},
    }
    with atomic_write(path) as fh:
        json.dump(doc, fh)


def load_rnn(path: str | Path) -> RnnModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    version = doc.get("format_version")
    if version != RNN_FORMAT_VERSION:
        raise FormatError(f"{path}: format_version {version!r}, expected {RNN_FORMAT_VERSION}")
    raw = doc["config"]
    cfg = RnnConfig(
        cell=CellKind(raw["cell"]),
        input_dim=int(raw["input_dim"]),
        layers=int(raw["layers"]),
        hidden=int(raw["hidden"]),
        input_mode=InputMode(raw["input_mode"]),
        l2_lambda=float(raw["l2_lambda"]),
        learning_rate=float(raw["learning_rate"]),
        batch_size=int(raw["batch_size"]),
        seed=int(raw["seed"]),
        early_stop_patience=int(raw["early_stop_patience"]),
        max_epochs=int(raw["max_epochs"]),
    )
    params = {name: np.asarray(arr, dtype=np.float64) for name, arr in doc["params"].items()}
    model = RnnModel(config=cfg, params=params)
    expected = init_model(replace(cfg)).params
    for name, arr in expected.items():
        if name not in params or params[name].shape != arr.shape:
            raise FormatError(f"{path}: parameter {name!r} missing or mis-shaped")
    return model
