"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ssnet.autodiff.tensor import Tensor, backward

STEP = 1e-5
# Denominator floor for the relative error: below this magnitude a gradient
# entry is compared in absolute terms, since finite differences at STEP carry
# ~1e-10 of rounding noise in float64; probed errors sit near 1e-7.
FLOOR = 1e-8


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int
    per_input: list = field(default_factory=list)
    n_skipped: int = 0  # entries excluded by the kink guard

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        skipped = f", {self.n_skipped} at kinks" if self.n_skipped else ""
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.0e}, {self.n_checked} entries{skipped})"


def relative_error(analytic, numeric, floor=FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _kinked(f0, up, down, h) -> bool:
    """One-sided slopes that disagree by far more than smooth curvature allows."""
    right, left = (up - f0) / h, (f0 - down) / h
    return abs(right - left) > 1e-3 * max(abs(right), abs(left)) + 1e-7


def grad_check(f, inputs, tolerance=1e-5, h=STEP, exclude=None, max_entries=None, seed=0, name="",
               kink_guard=False, floor=FLOOR) -> GradCheckReport:
    """Compare the backward pass of ``f`` with central differences.

    ``f`` maps the list of input tensors to a scalar tensor. Each input must be
    float64 and is perturbed in place. ``exclude`` maps an input position to a
    boolean mask of entries left out (kinks such as relu at exactly 0).
    ``max_entries`` caps the number of entries probed per input, picked at
    random with ``seed``.

    With ``kink_guard`` an entry whose one-sided difference quotients
    disagree (a relu or max-pool switch inside [x - h, x + h]) is re-probed
    with steps h/16 and h/256; if the disagreement persists it is skipped and
    counted in ``n_skipped``. The guard looks only at values of ``f``, never
    at the analytic gradient, so it cannot hide a wrong backward pass.

    ``floor`` is the smallest denominator of the relative error. Difference
    quotients carry about eps * |f| / h of rounding noise, so for losses of
    order one the floor must sit well above 1e-11 / tolerance.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64)) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f(inputs)
    backward(loss)
    rng = np.random.default_rng(seed)
    worst, total, per_input, skipped = 0.0, 0, [], 0
    f0 = float(f(inputs).data) if kink_guard else 0.0
    for pos, t in enumerate(inputs):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        candidates = np.arange(t.data.size)
        if exclude and pos in exclude:
            candidates = candidates[~np.asarray(exclude[pos]).reshape(-1)]
        if max_entries is not None and candidates.size > max_entries:
            candidates = np.sort(rng.choice(candidates, size=max_entries, replace=False))
        flat = t.data.reshape(-1)
        errs = []
        for idx in candidates:
            orig = flat[idx]
            for step in (h, h / 16, h / 256) if kink_guard else (h,):
                flat[idx] = orig + step
                up = float(f(inputs).data)
                flat[idx] = orig - step
                down = float(f(inputs).data)
                flat[idx] = orig
                if not kink_guard or not _kinked(f0, up, down, step):
                    break
            else:
                skipped += 1
                continue
            numeric = (up - down) / (2 * step)
            errs.append(relative_error(analytic.reshape(-1)[idx], numeric, floor))
        err = float(max(errs)) if errs else 0.0
        per_input.append(err)
        worst = max(worst, err)
        total += len(errs)
    return GradCheckReport(name, worst, tolerance, total, per_input, skipped)


def projection_loss(rng: np.random.Generator, shape):
    """A fixed random linear functional, so every output entry carries an O(1) gradient."""
    weights = rng.standard_normal(shape)

    def loss(y: Tensor) -> Tensor:
        return (y * weights).sum()

    return loss
