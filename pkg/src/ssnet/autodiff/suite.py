"""Finite-difference gradient checks for every layer, over many random shapes.

Each case draws its shapes and values from a seed, wraps the layer output in
a fixed random projection (so the loss is scalar and every output entry gets
an O(1) gradient), and compares analytic and numeric gradients at 64-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ssnet.autodiff import ops
from ssnet.autodiff.gradcheck import FLOOR, grad_check, projection_loss
from ssnet.autodiff.params import BatchNormParams
from ssnet.autodiff.tensor import Tensor, accumulate, make

TOL = 1e-5
TOL_UNROLLED = 1e-4
# the whole-model loss mixes gradients down to ~1e-9 (inputs early in a
# 243-step unroll) with O(1) ones; below this magnitude entries are compared
# in absolute terms (tolerance * floor = 1e-10)
MODEL_FLOOR = 1e-6


def _perturbed(t: Tensor, factor: float) -> Tensor:
    """Identity forward whose backward scales the gradient (mutation hook for testing the checker)."""

    def _backward(g):
        accumulate(t, g * factor)

    return make(t.data, (t,), _backward, "perturb")


def _spread(rng, shape, gap=0.05):
    """Random values whose pairwise gaps are at least ``gap``: no max-pool near-ties, no relu kinks."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * gap + rng.uniform(-0.2, 0.2) * gap
    return vals.reshape(shape)


def case_conv1d(rng):
    n, c, L, m, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 6)
    x, w, b = rng.standard_normal((n, c, L)), rng.standard_normal((m, c, k)), rng.standard_normal(m)
    proj = projection_loss(rng, (n, m, L))
    return lambda t: proj(ops.conv1d(*t)), [x, w, b], None, TOL


def case_relu(rng):
    shape = tuple(rng.integers(1, 6, size=2))
    x = rng.standard_normal(shape)
    x[np.abs(x) < 1e-3] = 0.5
    proj = projection_loss(rng, shape)
    return lambda t: proj(ops.relu(t[0])), [x], None, TOL


def case_maxpool(rng):
    n, c, L = rng.integers(1, 3), rng.integers(1, 4), rng.integers(3, 14)
    x = _spread(rng, (n, c, L))
    proj = projection_loss(rng, (n, c, L // 3))
    return lambda t: proj(ops.maxpool1d(t[0], 3)), [x], None, TOL


def case_dropout_eval(rng):
    shape = tuple(rng.integers(1, 6, size=2))
    proj = projection_loss(rng, shape)
    return lambda t: proj(ops.dropout(t[0], 0.3, train=False)), [rng.standard_normal(shape)], None, TOL


def case_dropout_train(rng):
    shape = tuple(rng.integers(1, 6, size=2))
    proj = projection_loss(rng, shape)
    seed = int(rng.integers(1 << 30))
    return lambda t: proj(ops.dropout(t[0], 0.3, train=True, seed=seed)), [rng.standard_normal(shape)], None, TOL


def case_batchnorm(rng, train=True):
    n, f = rng.integers(2, 6), rng.integers(1, 5)
    x = rng.standard_normal((n, f)) * rng.uniform(0.5, 2.0) + rng.standard_normal(f)
    gamma, beta = rng.standard_normal(f), rng.standard_normal(f)
    running_mean, running_var = rng.standard_normal(f), rng.uniform(0.5, 2.0, f)
    proj = projection_loss(rng, (n, f))

    def f_(t):
        # fresh running buffers each call, so a train-mode update does not leak into the next evaluation
        p = BatchNormParams(t[1], t[2], running_mean.copy(), running_var.copy(), 0.99, 1e-3)
        return proj(ops.batchnorm(t[0], p, train))

    return f_, [x, gamma, beta], None, TOL


def case_batchnorm_eval(rng):
    return case_batchnorm(rng, train=False)


def _lstm_params(rng, inp, hidden):
    return rng.standard_normal((4, hidden, hidden + inp)) * 0.7, rng.standard_normal((4, hidden)) * 0.5


def case_lstm_cell(rng):
    n, inp, hidden = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    w, b = _lstm_params(rng, inp, hidden)
    x, h0, c0 = rng.standard_normal((n, inp)), rng.standard_normal((n, hidden)), rng.standard_normal((n, hidden))
    ph, pc = projection_loss(rng, (n, hidden)), projection_loss(rng, (n, hidden))

    def f_(t):
        h, c = ops.lstm_cell(*t)
        return ph(h) + pc(c)

    return f_, [x, h0, c0, w, b], None, TOL


def case_lstm_sequence(rng):
    n, steps, inp, hidden = rng.integers(1, 4), int(rng.integers(1, 6)), rng.integers(1, 4), rng.integers(1, 4)
    w, b = _lstm_params(rng, inp, hidden)
    x = rng.standard_normal((n, steps, inp))
    proj = projection_loss(rng, (n, hidden))
    seed = int(rng.integers(1 << 30))
    return lambda t: proj(ops.lstm_sequence(t[0], t[1], t[2], 0.3, True, seed)), [x, w, b], None, TOL_UNROLLED


def case_dense(rng):
    n, i, o = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 5)
    proj = projection_loss(rng, (n, o))
    return lambda t: proj(ops.dense(*t)), [rng.standard_normal((n, i)), rng.standard_normal((i, o)), rng.standard_normal(o)], None, TOL


def case_softmax_ce(rng):
    n, k = rng.integers(1, 6), rng.integers(2, 6)
    labels = rng.integers(0, k, size=n)
    return lambda t: ops.softmax_cross_entropy(t[0], labels), [rng.standard_normal((n, k)) * 2], None, TOL


def case_tiny_model(rng):
    from ssnet.model import SSNetConfig, build

    cfg = SSNetConfig(n_channels=2, epoch_len=243, n_classes=2, cnn_maps=(3, 3, 2, 2, 2), lstm_sizes=(3, 2), dtype="float64")
    model = build(cfg, int(rng.integers(1 << 30)))
    x = rng.standard_normal((3, 2, 243))
    y = rng.integers(0, 2, size=3)
    params = model.named_parameters()
    names = list(params)

    def f_(t):
        model.bind_parameters(dict(zip(names, t[1:])))
        return ops.softmax_cross_entropy(model.forward(t[0], train=True, rng=seed), y)

    seed = int(rng.integers(1 << 30))
    return f_, [x] + [params[n].data.copy() for n in names], None, TOL_UNROLLED


LAYERS = {
    "conv1d": case_conv1d,
    "relu": case_relu,
    "maxpool1d": case_maxpool,
    "dropout_eval": case_dropout_eval,
    "dropout_train": case_dropout_train,
    "batchnorm_train": case_batchnorm,
    "batchnorm_eval": case_batchnorm_eval,
    "lstm_cell": case_lstm_cell,
    "lstm_sequence": case_lstm_sequence,
    "dense": case_dense,
    "softmax_ce": case_softmax_ce,
}


@dataclass
class LayerResult:
    layer: str
    max_rel_error: float
    tolerance: float
    n_cases: int
    n_entries: int
    seconds: float
    worst_seed: int = -1
    errors: list = field(default_factory=list)
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.layer:<16} max rel err {self.max_rel_error:.2e} (tol {self.tolerance:.0e}) "
            f"over {self.n_cases} cases / {self.n_entries} entries in {self.seconds:.1f}s"
            + (f", {self.n_skipped} skipped at kinks" if self.n_skipped else "")
        )


def check_layer(name: str, n_seeds: int = 20, base_seed: int = 0, perturb: float | None = None,
                max_entries: int | None = None) -> LayerResult:
    whole_model = name == "ssnet_tiny"
    builder = case_tiny_model if whole_model else LAYERS[name]
    started = time.perf_counter()
    worst, worst_seed, entries, errors, tol, skipped = 0.0, -1, 0, [], TOL, 0
    for s in range(n_seeds):
        rng = np.random.default_rng([base_seed, s, len(name)])
        f, inputs, exclude, tol = builder(rng)
        if perturb is not None:
            inner = f

            def f(t, inner=inner):
                return _perturbed(inner(t), perturb)

        report = grad_check(f, [np.asarray(v, dtype=np.float64).copy() for v in inputs], tol, exclude=exclude,
                            max_entries=max_entries, seed=s, name=name, kink_guard=whole_model,
                            floor=MODEL_FLOOR if whole_model else FLOOR)
        skipped += report.n_skipped
        errors.append(report.max_rel_error)
        entries += report.n_checked
        if report.max_rel_error >= worst:
            worst, worst_seed = report.max_rel_error, s
    return LayerResult(name, worst, tol, n_seeds, entries, time.perf_counter() - started, worst_seed, errors, skipped)


def run_suite(n_seeds: int = 20, base_seed: int = 0, perturb_layer: str | None = None, perturb_factor: float = 1.01,
              include_model: bool = True) -> list[LayerResult]:
    names = list(LAYERS) + (["ssnet_tiny"] if include_model else [])
    results = []
    for name in names:
        factor = perturb_factor if name == perturb_layer else None
        seeds = max(1, n_seeds // 5) if name == "ssnet_tiny" else n_seeds
        results.append(check_layer(name, seeds, base_seed, factor, max_entries=40 if name == "ssnet_tiny" else None))
    return results
