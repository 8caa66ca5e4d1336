"""Epoch sets, label schemes and recording epoching."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ssnet.errors import EmptyOverlap, NonFiniteInput
from ssnet.signal_io.hypnogram import EPOCH_S, SCORED, Stage, StageAnnotations
from ssnet.signal_io.records import MultiChannelRecord, sample_rate

# stage codes stored in every EpochSet: position in SCORED
STAGE_NAMES = tuple(s.value for s in SCORED)  # ("W", "N1", "N2", "N3", "REM")
STAGE_CODE = {s: k for k, s in enumerate(SCORED)}


@dataclass(frozen=True)
class LabelScheme:
    variant: str
    mapping: dict  # stage code -> class index
    class_names: tuple

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def apply(self, stages: np.ndarray) -> np.ndarray:
        lut = np.array([self.mapping[k] for k in range(len(STAGE_NAMES))], dtype=np.int64)
        return lut[np.asarray(stages, dtype=np.int64)]


FIVE_CLASS = LabelScheme("five_class", {0: 0, 1: 1, 2: 2, 3: 3, 4: 4}, ("W", "N1", "N2", "N3", "REM"))
THREE_CLASS = LabelScheme("three_class", {0: 0, 1: 1, 2: 1, 3: 1, 4: 2}, ("W", "NREM", "REM"))
SCHEMES = {"five_class": FIVE_CLASS, "three_class": THREE_CLASS, "five": FIVE_CLASS, "three": THREE_CLASS}


def get_scheme(name) -> LabelScheme:
    if isinstance(name, LabelScheme):
        return name
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown label scheme {name!r}; expected one of {sorted(SCHEMES)}") from None


@dataclass
class EpochSet:
    """Epochs sharing channel layout and length.

    ``stages`` holds stage codes (index into ``STAGE_NAMES``); class labels
    come from ``scheme`` when one is set, otherwise they are the stage codes.
    """

    x: np.ndarray  # [n, channels, epoch_len]
    stages: np.ndarray  # int, [n]
    recording: np.ndarray  # str, [n]
    index: np.ndarray  # int, [n], epoch position within its recording
    channels: tuple = ()
    sample_rate_hz: float = 100.0
    scheme: str | None = None
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.stages = np.asarray(self.stages, dtype=np.int64)
        self.recording = np.asarray(self.recording, dtype=str)
        self.index = np.asarray(self.index, dtype=np.int64)
        n = len(self.x)
        if not (len(self.stages) == len(self.recording) == len(self.index) == n):
            raise ValueError("epoch arrays disagree in length")
        if self.x.ndim != 3:
            raise ValueError(f"samples must be [n, channels, epoch_len], got {self.x.shape}")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def n_channels(self) -> int:
        return self.x.shape[1]

    @property
    def epoch_len(self) -> int:
        return self.x.shape[2]

    @property
    def label_scheme(self) -> LabelScheme | None:
        return get_scheme(self.scheme) if self.scheme else None

    @property
    def class_names(self) -> tuple:
        return self.label_scheme.class_names if self.scheme else STAGE_NAMES

    @property
    def labels(self) -> np.ndarray:
        if self.scheme:
            return self.label_scheme.apply(self.stages)
        return self.stages.copy()

    @property
    def provenance_ids(self) -> list[str]:
        return [f"{r}:{i}" for r, i in zip(self.recording, self.index)]

    def class_counts(self) -> dict:
        names = self.class_names
        counts = np.bincount(self.labels, minlength=len(names))
        return {name: int(c) for name, c in zip(names, counts)}

    def subset(self, idx) -> EpochSet:
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, x=self.x[idx], stages=self.stages[idx], recording=self.recording[idx], index=self.index[idx])

    @staticmethod
    def concat(sets: list) -> EpochSet:
        first = sets[0]
        for s in sets[1:]:
            if s.x.shape[1:] != first.x.shape[1:] or s.sample_rate_hz != first.sample_rate_hz:
                raise ValueError("cannot concatenate epoch sets with different layouts")
        return replace(
            first,
            x=np.concatenate([s.x for s in sets]),
            stages=np.concatenate([s.stages for s in sets]),
            recording=np.concatenate([s.recording for s in sets]),
            index=np.concatenate([s.index for s in sets]),
        )


def epoch_recording(record: MultiChannelRecord, ann: StageAnnotations, recording_id: str | None = None, dtype=np.float32) -> EpochSet:
    """Cut ``record`` into labelled 30-s epochs.

    Windows labelled MOVEMENT or UNKNOWN and a partial trailing window are
    dropped; kept epochs remember their window index.
    """
    fs = sample_rate(record)
    epoch_len = int(round(EPOCH_S * fs))
    if abs(epoch_len - EPOCH_S * fs) > 1e-9:
        raise ValueError(f"sample rate {fs} Hz does not give a whole number of samples per epoch")
    labels = ann.epoch_labels()
    n_samples = min((len(trace) for _, trace in record.channels), default=0)
    n_windows = min(len(labels), n_samples // epoch_len)
    keep = [k for k in range(n_windows) if labels[k] in STAGE_CODE]
    if not keep:
        raise EmptyOverlap("no labelled 30-s window lies inside the recording")
    data = np.stack([trace[: n_windows * epoch_len].reshape(n_windows, epoch_len) for _, trace in record.channels], axis=1)
    x = data[keep].astype(dtype)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("recording contains non-finite samples inside labelled epochs")
    rid = recording_id or record.header.recording_id or record.source or "recording"
    return EpochSet(
        x=x,
        stages=np.array([STAGE_CODE[labels[k]] for k in keep]),
        recording=np.array([rid] * len(keep)),
        index=np.array(keep),
        channels=tuple(record.labels),
        sample_rate_hz=fs,
        meta={"label_source": ann.source} if ann.source else {},
    )


def map_labels(epochs: EpochSet, scheme) -> EpochSet:
    """Attach a label scheme; the stored stage codes are unchanged."""
    return replace(epochs, scheme=get_scheme(scheme).variant)


def stage_code(name) -> int:
    if isinstance(name, Stage):
        return STAGE_CODE[name]
    aliases = {"R": "REM", "WAKE": "W"}
    key = aliases.get(str(name).upper(), str(name).upper())
    return STAGE_NAMES.index(key)
