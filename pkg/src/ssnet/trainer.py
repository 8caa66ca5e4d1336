"""Mini-batch Adam training with validation-loss model selection and checkpoints.

Randomness is keyed by epoch: the shuffle and dropout generators of epoch k
are ``stream(seed, "shuffle", k)`` and ``stream(seed, "dropout", k)``. A run
resumed from the checkpoint written after epoch k therefore draws exactly
what the uninterrupted run would have drawn.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ssnet.autodiff import ops
from ssnet.autodiff.serialize import pack, sha256_bytes, unpack
from ssnet.autodiff.tensor import backward
from ssnet.errors import (
    ChecksumMismatch,
    DataError,
    DivergedLoss,
    EmptyDataset,
    LabelOutOfRange,
    NonFiniteGradient,
    SchemaVersionMismatch,
    ShapeMismatch,
)
from ssnet.model import SSNetConfig, SSNetModel, build
from ssnet.rng import get_state, stream

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


@dataclass
class HyperParams:
    learning_rate: float = 0.002
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    clip_norm: float | None = None

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be nonnegative")
        return self


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params: dict) -> AdamState:
        return cls({k: np.zeros_like(p.data) for k, p in params.items()}, {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, hp: HyperParams) -> None:
    """One Adam update, in place on ``params`` (name -> Tensor) and ``state``.

    A parameter without a gradient is treated as having a zero gradient.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"{name}: gradient has NaN or Inf entries")
        if state.m[name].shape != p.shape:
            raise ShapeMismatch(f"{name}: optimizer state shape {state.m[name].shape} != parameter shape {p.shape}")
    state.t += 1
    b1, b2 = hp.beta1, hp.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        m, v = state.m[name], state.v[name]
        m *= b1
        v *= b2
        if g is not None:
            m += (1.0 - b1) * g
            v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.eps_adam)).astype(p.data.dtype)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if norm > max_norm > 0:
        for g in grads.values():
            g *= max_norm / norm
    return norm


class EarlyStopping:
    """Stop once ``patience`` consecutive evaluations fail to improve on the best loss.

    With patience 2 and a strictly worsening loss, the run stops at the third
    evaluation: the best one plus two without improvement.
    """

    def __init__(self, patience: int, best: float = np.inf, wait: int = 0, best_epoch: int = -1):
        self.patience = patience
        self.best = best
        self.wait = wait
        self.best_epoch = best_epoch

    def update(self, loss: float, epoch: int) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if loss < self.best:
            self.best, self.wait, self.best_epoch = loss, 0, epoch
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience

    def state(self) -> dict:
        return {"patience": self.patience, "best": self.best, "wait": self.wait, "best_epoch": self.best_epoch}


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def epochs_completed(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainHistory:
        return cls(**d)


@dataclass
class TrainerState:
    model: SSNetModel
    adam: AdamState
    history: TrainHistory
    stopper: EarlyStopping
    best_arrays: dict
    hp: HyperParams
    epoch: int = 0  # epochs completed

    def rng_state(self) -> dict:
        k = self.epoch
        return {
            "scheme": "philox keyed by (seed, stream, epoch)",
            "seed": self.hp.seed,
            "next_epoch": k,
            "shuffle": get_state(stream(self.hp.seed, "shuffle", k)),
            "dropout": get_state(stream(self.hp.seed, "dropout", k)),
        }


def batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    """Consecutive slices of ``order``; a trailing batch of one joins the previous batch
    (batch-norm statistics need two examples)."""
    out = [order[lo : lo + batch_size] for lo in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def evaluate(model: SSNetModel, x: np.ndarray, y: np.ndarray, chunk: int = 256) -> tuple[float, float, np.ndarray]:
    """Eval-mode mean cross-entropy, accuracy and predictions."""
    total, preds = 0.0, []
    for lo in range(0, len(x), chunk):
        logits = model.forward(x[lo : lo + chunk])
        total += float(ops.softmax_cross_entropy(logits, y[lo : lo + chunk]).data) * len(logits.data)
        preds.append(np.argmax(logits.data, axis=1))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return total / max(len(x), 1), float(np.mean(pred == y)) if len(y) else 0.0, pred


def _check_set(model: SSNetModel, x: np.ndarray, y: np.ndarray, what: str) -> None:
    if len(x) == 0:
        raise EmptyDataset(f"{what} set is empty")
    cfg = model.config
    if x.shape[1:] != (cfg.n_channels, cfg.epoch_len):
        raise ShapeMismatch(f"{what} epochs are {x.shape[1:]}, model expects {(cfg.n_channels, cfg.epoch_len)}")
    if y.min() < 0 or y.max() >= cfg.n_classes:
        raise LabelOutOfRange(f"{what} labels span [{y.min()}, {y.max()}], model has {cfg.n_classes} classes")


def _as_xy(data):
    if hasattr(data, "x") and hasattr(data, "labels"):
        return np.asarray(data.x), np.asarray(data.labels)
    x, y = data
    return np.asarray(x), np.asarray(y)


def train(model: SSNetModel, train_set, val_set, hp: HyperParams, resume: TrainerState | None = None,
          checkpoint_dir=None, on_epoch=None) -> tuple[SSNetModel, TrainHistory, TrainerState]:
    """Train ``model`` in place and return (best-validation model, history, final state).

    ``train_set`` and ``val_set`` are EpochSets or (x, y) pairs. With
    ``resume`` the run continues from a loaded checkpoint state instead.
    """
    hp.validate()
    x_tr, y_tr = _as_xy(train_set)
    x_va, y_va = _as_xy(val_set)
    _check_set(model, x_tr, y_tr, "training")
    _check_set(model, x_va, y_va, "validation")
    dtype = model.dtype
    params = model.named_parameters()
    if resume is None:
        state = TrainerState(model, AdamState.init(params), TrainHistory(), EarlyStopping(hp.patience), {}, hp)
    else:
        state = resume
        state.hp = hp
        model = state.model
        params = model.named_parameters()
    history, stopper = state.history, state.stopper

    while state.epoch < hp.max_epochs and not history.stopped_early:
        k = state.epoch
        started = time.perf_counter()
        order = stream(hp.seed, "shuffle", k).permutation(len(x_tr))
        drop_rng = stream(hp.seed, "dropout", k)
        loss_sum = 0.0
        for idx in batches(len(x_tr), hp.batch_size, order):
            xb = x_tr[idx].astype(dtype, copy=False)
            model.zero_grad()
            loss = ops.softmax_cross_entropy(model.forward(xb, train=True, rng=drop_rng), y_tr[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergedLoss(f"epoch {k}: training loss became {value}")
            backward(loss)
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            if hp.clip_norm:
                clip_global_norm(grads, hp.clip_norm)
            adam_step(params, grads, state.adam, hp)
            loss_sum += value * len(idx)
        val_loss, val_acc, _ = evaluate(model, x_va.astype(dtype, copy=False), y_va)
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"epoch {k}: validation loss became {val_loss}")
        history.train_loss.append(loss_sum / len(x_tr))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.epoch_seconds.append(time.perf_counter() - started)
        improved, stop = stopper.update(val_loss, k)
        if improved:
            state.best_arrays = {n: a.copy() for n, a in model.state_arrays().items()}
            history.best_epoch = k
        history.stopped_early = stop
        state.epoch = k + 1
        log.info("epoch %d train_loss %.5f val_loss %.5f val_acc %.4f", k, history.train_loss[-1], val_loss, val_acc)
        if checkpoint_dir is not None:
            checkpoint_save(state, Path(checkpoint_dir) / "last")
            if improved:
                checkpoint_save(state, Path(checkpoint_dir) / "best")
        if on_epoch is not None:
            on_epoch(state)

    best = model.copy()
    if state.best_arrays:
        best.load_state_arrays(state.best_arrays)
    return best, history, state


# checkpoints

_WEIGHTS = "weights.bin"
_META = "meta.json"


def checkpoint_save(state: TrainerState, path, extra: dict | None = None) -> dict:
    """Write parameters, buffers, Adam moments and best parameters to ``path``/weights.bin
    and everything else to ``path``/meta.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {f"model/{k}": v for k, v in state.model.state_arrays().items()}
    arrays.update({f"adam_m/{k}": v for k, v in state.adam.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.adam.v.items()})
    arrays.update({f"best/{k}": v for k, v in state.best_arrays.items()})
    blob, index = pack(arrays)
    (path / _WEIGHTS).write_bytes(blob)
    meta = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config": state.model.config.to_dict(),
        "init_seed": state.model.init_seed,
        "hyperparams": asdict(state.hp),
        "adam_t": state.adam.t,
        "epoch": state.epoch,
        "history": state.history.to_dict(),
        "early_stopping": state.stopper.state(),
        "rng": state.rng_state(),
        "index": index,
        **(extra or {}),
    }
    text = json.dumps(meta, indent=2, sort_keys=True, default=float)
    (path / _META).write_text(text)
    return meta


def checkpoint_load(path) -> TrainerState:
    path = Path(path)
    if not (path / _META).exists() or not (path / _WEIGHTS).exists():
        raise DataError(f"no checkpoint at {path}")
    meta = json.loads((path / _META).read_text())
    if meta.get("schema_version") != CHECKPOINT_SCHEMA:
        raise SchemaVersionMismatch(f"checkpoint schema {meta.get('schema_version')}, expected {CHECKPOINT_SCHEMA}")
    blob = (path / _WEIGHTS).read_bytes()
    if sha256_bytes(blob) != meta["index"]["sha256"]:
        raise ChecksumMismatch(f"checkpoint weights at {path} fail their checksum")
    arrays = unpack(blob, meta["index"])
    config = SSNetConfig.from_dict(meta["config"])
    model = build(config, meta["init_seed"] or 0)
    model.init_seed = meta["init_seed"]

    def group(prefix):
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    model.load_state_arrays(group("model/"))
    adam = AdamState(group("adam_m/"), group("adam_v/"), meta["adam_t"])
    es = meta["early_stopping"]
    stopper = EarlyStopping(es["patience"], es["best"], es["wait"], es["best_epoch"])
    hp = HyperParams(**meta["hyperparams"])
    return TrainerState(model, adam, TrainHistory.from_dict(meta["history"]), stopper, group("best/"), hp, meta["epoch"])


def best_model(state: TrainerState) -> SSNetModel:
    model = state.model.copy()
    if state.best_arrays:
        model.load_state_arrays(state.best_arrays)
    return model
