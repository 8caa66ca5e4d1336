"""Class-balancing undersampling and train/validation/test splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from ssnet.dataset.epochs import EpochSet, stage_code
from ssnet.errors import TargetExceedsAvailable
from ssnet.rng import stream

# published per-stage selections (stages W, N1, N2, N3, REM)
PRESETS = {
    "sleep-edfx": {"W": 25201, "N1": 3207, "N2": 16748, "N3": 5246, "REM": 21602},
    "isruc": {"W": 19810, "N1": 4935, "N2": 12668, "N3": 7846, "REM": 11256},
}
# per-stage totals before selection, as published
AVAILABILITY = {
    "sleep-edfx": {"W": 25201, "N1": 10420, "N2": 52502, "N3": 14236, "REM": 21602},
    "isruc": {"W": 19810, "N1": 11101, "N2": 27398, "N3": 17325, "REM": 11256},
}


def _resolve_targets(epochs: EpochSet, targets: dict) -> dict:
    """Map target keys (class index, class name or stage name) to label values."""
    names = list(epochs.class_names)
    out = {}
    for key, count in targets.items():
        if isinstance(key, (int, np.integer)):
            cls = int(key)
        elif key in names:
            cls = names.index(key)
        else:
            cls = stage_code(key)
            if epochs.scheme:
                raise ValueError(f"stage name {key!r} is ambiguous under label scheme {epochs.scheme}; use class names")
        out[cls] = int(count)
    return out


def undersample_indices(labels: np.ndarray, targets: dict, seed: int) -> np.ndarray:
    """Sorted indices keeping ``targets[c]`` random members of each targeted class and all others."""
    labels = np.asarray(labels)
    keep = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        want = targets.get(int(cls))
        if want is None:
            keep.append(members)
            continue
        if want > len(members):
            raise TargetExceedsAvailable(f"class {cls}: target {want} exceeds {len(members)} available epochs")
        if want < 0:
            raise ValueError(f"class {cls}: negative target {want}")
        keep.append(stream(seed, "undersample", int(cls)).choice(members, size=want, replace=False))
    for cls, want in targets.items():
        if want > 0 and not np.any(labels == cls):
            raise TargetExceedsAvailable(f"class {cls}: target {want} but no epochs available")
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def undersample(epochs: EpochSet, targets: dict, seed: int) -> EpochSet:
    return epochs.subset(undersample_indices(epochs.labels, _resolve_targets(epochs, targets), seed))


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 0
    mode: str = "stratified"  # or "random", "subject"

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9 or min(self.train_frac, self.val_frac, self.test_frac) < 0:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {total}")
        if self.mode not in ("stratified", "random", "subject"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    train = _round_half_up(n * spec.train_frac)
    val = _round_half_up(n * spec.val_frac)
    return train, val, n - train - val


def allocate(class_counts: np.ndarray, sizes) -> np.ndarray:
    """Integer [classes, splits] table with the given row and column sums and
    every cell within one of its proportional share ``count * size / N``.

    Cells start at the floor of their share; the remaining units are placed by
    a max-flow over (class -> split) edges of capacity one per fractional cell,
    which always saturates by integrality of flows.
    """
    class_counts = np.asarray(class_counts, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    n = int(class_counts.sum())
    if n == 0:
        return np.zeros((len(class_counts), len(sizes)), dtype=np.int64)
    # exact rational shares: count * size / n
    num = class_counts[:, None] * sizes[None, :]
    base = num // n
    frac = num % n != 0
    row_need = class_counts - base.sum(axis=1)
    col_need = sizes - base.sum(axis=0)
    g = nx.DiGraph()
    for c, need in enumerate(row_need):
        if need:
            g.add_edge("s", ("c", c), capacity=int(need))
    for s, need in enumerate(col_need):
        if need:
            g.add_edge(("p", s), "t", capacity=int(need))
    for c, s in zip(*np.nonzero(frac)):
        g.add_edge(("c", int(c)), ("p", int(s)), capacity=1)
    table = base.copy()
    if row_need.sum():
        value, flow = nx.maximum_flow(g, "s", "t")
        if value != row_need.sum():
            raise RuntimeError("stratified allocation is infeasible")
        for c, s in zip(*np.nonzero(frac)):
            table[c, s] += flow[("c", int(c))].get(("p", int(s)), 0)
    return table


def split_indices(labels: np.ndarray, spec: SplitSpec, groups: np.ndarray | None = None) -> tuple[np.ndarray, ...]:
    labels = np.asarray(labels)
    n = len(labels)
    if n < 10:
        raise ValueError(f"splitting needs at least 10 epochs, got {n}")
    sizes = split_sizes(n, spec)
    if spec.mode == "random":
        order = stream(spec.seed, "split", "random").permutation(n)
        bounds = np.cumsum((0,) + sizes)
        return tuple(np.sort(order[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:]))
    if spec.mode == "subject":
        if groups is None:
            raise ValueError("subject-wise split needs recording ids")
        return _split_groups(np.asarray(groups), sizes, spec.seed)
    classes = np.unique(labels)
    table = allocate(np.array([np.sum(labels == c) for c in classes]), sizes)
    parts = [[], [], []]
    for row, cls in zip(table, classes):
        members = stream(spec.seed, "split", int(cls)).permutation(np.flatnonzero(labels == cls))
        bounds = np.cumsum(np.concatenate([[0], row]))
        for s in range(3):
            parts[s].append(members[bounds[s] : bounds[s + 1]])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def _split_groups(groups: np.ndarray, sizes, seed: int):
    """Whole recordings go to one split; each is placed by where its midpoint falls
    along the shuffled cumulative epoch count, so split sizes are approximate."""
    names, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    order = stream(seed, "split", "subject").permutation(len(names))
    bounds = np.cumsum(sizes)[:-1]
    assign = np.empty(len(names), dtype=np.int64)
    start = 0
    for g in order:
        mid = start + counts[g] / 2
        assign[g] = int(np.searchsorted(bounds, mid, side="right"))
        start += counts[g]
    return tuple(np.flatnonzero(assign[inverse] == s) for s in range(3))


def split(epochs: EpochSet, spec: SplitSpec) -> tuple[EpochSet, EpochSet, EpochSet]:
    idx = split_indices(epochs.labels, spec, epochs.recording)
    return tuple(epochs.subset(i) for i in idx)


def preset_targets(name: str, epochs: EpochSet) -> dict:
    """A named preset expressed in the label space of ``epochs`` (stage codes)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    if epochs.scheme not in (None, "five_class"):
        raise ValueError("presets are per-stage counts; apply them before merging classes")
    return {stage_code(k): v for k, v in PRESETS[name].items()}
