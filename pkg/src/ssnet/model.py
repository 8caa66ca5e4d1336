"""The dual-branch SSNet classifier.

A convolutional branch (five conv -> relu -> max-pool -> dropout blocks and a
flatten) and a recurrent branch (LSTM -> batch-norm -> LSTM) read the same
30-second epoch. Their features are concatenated and a dense layer emits the
class logits.

The recurrent branch sees the epoch as ``epoch_len`` time steps of
``n_channels`` features. The first LSTM returns its last hidden state, which is
batch-normalized and fed to the second LSTM as a one-step sequence.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ssnet.autodiff import ops
from ssnet.autodiff.params import BatchNormParams, ConvParams, DenseParams, LSTMParams
from ssnet.autodiff.serialize import pack, unpack
from ssnet.autodiff.tensor import Tensor, concat, flatten, reshape, transpose
from ssnet.errors import InvalidConfig, ShapeMismatch

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class SSNetConfig:
    n_channels: int = 4
    epoch_len: int = 3000
    n_classes: int = 3
    cnn_maps: tuple = (64, 32, 20, 16, 10)
    cnn_kernels: tuple = (5, 3, 2, 8, 3)
    pool: int = 3
    dropout: float = 0.02
    lstm_sizes: tuple = (64, 20)
    recurrent_dropout: float = 0.02
    dtype: str = "float32"

    def __post_init__(self):
        # accept lists from JSON/YAML
        for name in ("cnn_maps", "cnn_kernels", "lstm_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self):
        if self.n_channels < 1:
            raise InvalidConfig("n_channels must be >= 1")
        if self.n_classes < 2:
            raise InvalidConfig("n_classes must be >= 2")
        if len(self.cnn_maps) != len(self.cnn_kernels) or not self.cnn_maps:
            raise InvalidConfig("cnn_maps and cnn_kernels must be non-empty and of equal length")
        if any(k < 1 for k in self.cnn_kernels) or any(m < 1 for m in self.cnn_maps):
            raise InvalidConfig("kernel sizes and map counts must be >= 1")
        if self.pool < 1:
            raise InvalidConfig("pool must be >= 1")
        minimum = self.pool ** len(self.cnn_maps)
        if self.epoch_len < minimum:
            raise InvalidConfig(f"epoch_len {self.epoch_len} is shorter than {minimum} required by the pooling chain")
        if len(self.lstm_sizes) != 2 or min(self.lstm_sizes) < 1:
            raise InvalidConfig("lstm_sizes must hold two positive sizes")
        for rate in (self.dropout, self.recurrent_dropout):
            if not 0 <= rate < 1:
                raise InvalidConfig("dropout rates must lie in [0, 1)")
        if self.dtype not in DTYPES:
            raise InvalidConfig(f"dtype must be one of {sorted(DTYPES)}")
        return self

    def shape_chain(self) -> list[int]:
        """Sequence length at the input and after each pooling stage."""
        chain = [self.epoch_len]
        for _ in self.cnn_maps:
            chain.append(chain[-1] // self.pool)
        return chain

    @property
    def cnn_features(self) -> int:
        return self.shape_chain()[-1] * self.cnn_maps[-1]

    @property
    def lstm_features(self) -> int:
        return self.lstm_sizes[-1]

    @property
    def concat_features(self) -> int:
        return self.cnn_features + self.lstm_features

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("cnn_maps", "cnn_kernels", "lstm_sizes"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SSNetConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


SLEEP_EDFX = SSNetConfig(n_channels=4, epoch_len=3000)
ISRUC = SSNetConfig(n_channels=5, epoch_len=6000)


@dataclass
class SSNetModel:
    config: SSNetConfig
    convs: list
    lstm1: LSTMParams
    norm: BatchNormParams
    lstm2: LSTMParams
    classifier: DenseParams
    init_seed: int | None = None
    overrides: dict = field(default_factory=dict)

    # parameters

    def named_parameters(self) -> dict:
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out[f"conv{i}.weight"] = conv.weight
            out[f"conv{i}.bias"] = conv.bias
        out["lstm1.weight"] = self.lstm1.weight
        out["lstm1.bias"] = self.lstm1.bias
        out["norm.gamma"] = self.norm.gamma
        out["norm.beta"] = self.norm.beta
        out["lstm2.weight"] = self.lstm2.weight
        out["lstm2.bias"] = self.lstm2.bias
        out["dense.weight"] = self.classifier.weight
        out["dense.bias"] = self.classifier.bias
        return out

    def bind_parameters(self, tensors: dict) -> None:
        """Swap in the given Tensor objects as parameters (used to differentiate w.r.t. external leaves)."""
        slots = {}
        for i, conv in enumerate(self.convs, start=1):
            slots[f"conv{i}.weight"], slots[f"conv{i}.bias"] = (conv, "weight"), (conv, "bias")
        for prefix, holder, a, b in (
            ("lstm1", self.lstm1, "weight", "bias"),
            ("norm", self.norm, "gamma", "beta"),
            ("lstm2", self.lstm2, "weight", "bias"),
            ("dense", self.classifier, "weight", "bias"),
        ):
            slots[f"{prefix}.{a}"], slots[f"{prefix}.{b}"] = (holder, a), (holder, b)
        for name, t in tensors.items():
            holder, attr = slots[name]
            setattr(holder, attr, t)

    def buffers(self) -> dict:
        return {"norm.running_mean": self.norm.running_mean, "norm.running_var": self.norm.running_var}

    def state_arrays(self) -> dict:
        """Every parameter and buffer as a plain array, in a fixed order."""
        arrays = {name: t.data for name, t in self.named_parameters().items()}
        arrays.update(self.buffers())
        return arrays

    def load_state_arrays(self, arrays: dict) -> None:
        params = self.named_parameters()
        expected = set(params) | set(self.buffers())
        if set(arrays) != expected:
            raise ShapeMismatch(f"state names differ: missing {sorted(expected - set(arrays))}, extra {sorted(set(arrays) - expected)}")
        for name, t in params.items():
            if arrays[name].shape != t.shape:
                raise ShapeMismatch(f"{name}: stored shape {arrays[name].shape} != model shape {t.shape}")
            t.data = np.array(arrays[name], dtype=t.dtype)
        for name, buf in self.buffers().items():
            buf[...] = arrays[name]

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def copy(self) -> SSNetModel:
        clone = build(self.config, self.init_seed if self.init_seed is not None else 0)
        clone.init_seed = self.init_seed
        clone.overrides = dict(self.overrides)
        clone.load_state_arrays({k: v.copy() for k, v in self.state_arrays().items()})
        return clone

    @property
    def dtype(self):
        return DTYPES[self.config.dtype]

    # forward

    def _check_batch(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.n_channels or x.shape[2] != cfg.epoch_len:
            raise ShapeMismatch(
                f"batch shape {x.shape} does not match [batch, {cfg.n_channels}, {cfg.epoch_len}]"
            )
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        return x

    def branch_features(self, batch, train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Pre-concatenation activations of the convolutional and recurrent branches."""
        cfg = self.config
        x = self._check_batch(batch)
        if train and rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        y = x
        for conv in self.convs:
            y = ops.conv1d(y, conv.weight, conv.bias)
            y = ops.relu(y)
            y = ops.maxpool1d(y, cfg.pool)
            y = ops.dropout(y, cfg.dropout, train, rng)
        cnn = flatten(y)

        seq = transpose(x, (0, 2, 1))
        h = ops.lstm_sequence(seq, self.lstm1.weight, self.lstm1.bias, cfg.recurrent_dropout, train, rng)
        h = ops.batchnorm(h, self.norm, train)
        h = reshape(h, (h.shape[0], 1, h.shape[1]))
        rnn = ops.lstm_sequence(h, self.lstm2.weight, self.lstm2.bias, cfg.recurrent_dropout, train, rng)
        return cnn, rnn

    def classify(self, cnn: Tensor, rnn: Tensor) -> Tensor:
        return ops.dense(concat([cnn, rnn], axis=1), self.classifier.weight, self.classifier.bias)

    def forward(self, batch, train: bool = False, rng=None) -> Tensor:
        """Logits [batch, n_classes]; softmax is left to the loss or :meth:`predict`."""
        return self.classify(*self.branch_features(batch, train, rng))

    __call__ = forward

    def predict(self, batch, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Class indices and softmax probabilities (eval mode, ties to the lower index)."""
        batch = np.asarray(batch)
        probs = []
        for lo in range(0, len(batch), chunk):
            logits = self.forward(batch[lo : lo + chunk]).data.astype(np.float64)
            probs.append(ops.softmax(logits))
        p = np.concatenate(probs) if probs else np.zeros((0, self.config.n_classes))
        return np.argmax(p, axis=1), p

    # reporting

    def param_summary(self) -> dict:
        rows = [{"name": name, "shape": list(t.shape), "count": int(t.data.size)} for name, t in self.named_parameters().items()]
        return {
            "layers": rows,
            "shape_chain": self.config.shape_chain(),
            "cnn_features": self.config.cnn_features,
            "lstm_features": self.config.lstm_features,
            "concat_features": self.config.concat_features,
            "total": sum(r["count"] for r in rows),
        }

    def manifest(self) -> dict:
        _, index = pack(self.state_arrays())
        summary = self.param_summary()
        return {
            "config": self.config.to_dict(),
            "overrides": self.overrides,
            "shape_chain": summary["shape_chain"],
            "cnn_features": summary["cnn_features"],
            "concat_features": summary["concat_features"],
            "parameter_count": summary["total"],
            "init_seed": self.init_seed,
            "weights_sha256": index["sha256"],
        }

    def to_bytes(self) -> tuple[bytes, dict]:
        return pack(self.state_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes, index: dict, config: SSNetConfig) -> SSNetModel:
        model = build(config, 0)
        model.load_state_arrays(unpack(blob, index))
        return model


def build(config: SSNetConfig, init_seed: int = 0) -> SSNetModel:
    """Initialize every parameter deterministically from ``init_seed``."""
    config.validate()
    rng = np.random.Generator(np.random.Philox(init_seed))
    dtype = DTYPES[config.dtype]
    convs, in_ch = [], config.n_channels
    for maps, k in zip(config.cnn_maps, config.cnn_kernels):
        convs.append(ConvParams.init(rng, maps, in_ch, k, dtype))
        in_ch = maps
    h1, h2 = config.lstm_sizes
    lstm1 = LSTMParams.init(rng, config.n_channels, h1, dtype)
    norm = BatchNormParams.init(h1, dtype)
    lstm2 = LSTMParams.init(rng, h1, h2, dtype)
    classifier = DenseParams.init(rng, config.concat_features, config.n_classes, dtype)
    defaults = SSNetConfig(n_channels=config.n_channels, epoch_len=config.epoch_len, n_classes=config.n_classes)
    overrides = {
        k: v for k, v in config.to_dict().items() if v != defaults.to_dict()[k]
    }
    return SSNetModel(config, convs, lstm1, norm, lstm2, classifier, init_seed, overrides)


def with_dtype(model: SSNetModel, dtype: str) -> SSNetModel:
    """A copy of ``model`` with every parameter cast to ``dtype``."""
    clone = build(replace(model.config, dtype=dtype), model.init_seed or 0)
    clone.init_seed = model.init_seed
    clone.load_state_arrays(model.state_arrays())
    return clone


def manifest_json(model: SSNetModel) -> str:
    return json.dumps(model.manifest(), indent=2, sort_keys=True)
