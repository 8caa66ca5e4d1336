"""Sleep-stage annotations: EDF+ hypnograms and ISRUC per-epoch label lists."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ssnet.errors import DataError, OverlappingEntries, UnknownStageToken
from ssnet.signal_io.edf import parse_edf

EPOCH_S = 30.0


class Stage(enum.Enum):
    W = "W"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"
    N4 = "N4"  # R&K stage 4; merged into N3 on parse, never emitted
    REM = "REM"
    MOVEMENT = "MOVEMENT"
    UNKNOWN = "UNKNOWN"


SCORED = (Stage.W, Stage.N1, Stage.N2, Stage.N3, Stage.REM)

EDF_TOKENS = {
    "Sleep stage W": Stage.W,
    "Sleep stage 1": Stage.N1,
    "Sleep stage 2": Stage.N2,
    "Sleep stage 3": Stage.N3,
    "Sleep stage 4": Stage.N3,  # AASM merge of R&K stages 3 and 4
    "Sleep stage R": Stage.REM,
    "Movement time": Stage.MOVEMENT,
    "Sleep stage ?": Stage.UNKNOWN,
    "?": Stage.UNKNOWN,
}

ISRUC_CODES = {0: Stage.W, 1: Stage.N1, 2: Stage.N2, 3: Stage.N3, 5: Stage.REM}


@dataclass(frozen=True)
class StageEntry:
    onset_s: float
    duration_s: float
    stage: Stage

    @property
    def end_s(self) -> float:
        return self.onset_s + self.duration_s


@dataclass(frozen=True)
class StageAnnotations:
    entries: tuple = ()
    source: str | None = None  # which label file was read, kept for provenance

    def __post_init__(self):
        prev_end = -np.inf
        for e in self.entries:
            if e.duration_s <= 0:
                raise DataError(f"stage entry at {e.onset_s}s has non-positive duration {e.duration_s}")
            if e.stage in SCORED and e.duration_s % EPOCH_S:
                raise DataError(f"stage entry at {e.onset_s}s lasts {e.duration_s}s, not a multiple of {EPOCH_S:g}")
            if e.onset_s < prev_end - 1e-9:
                raise OverlappingEntries(f"entry at {e.onset_s}s starts before the previous one ends ({prev_end}s)")
            prev_end = e.end_s

    @property
    def total_duration_s(self) -> float:
        return float(sum(e.duration_s for e in self.entries))

    def epoch_labels(self) -> list[Stage]:
        """One stage per 30-s window from time 0; uncovered windows are UNKNOWN."""
        if not self.entries:
            return []
        n = int(np.floor(self.entries[-1].end_s / EPOCH_S + 1e-9))
        labels = [Stage.UNKNOWN] * n
        for e in self.entries:
            first = int(np.ceil(e.onset_s / EPOCH_S - 1e-9))
            last = int(np.floor(e.end_s / EPOCH_S + 1e-9))
            for k in range(first, min(last, n)):
                labels[k] = e.stage
        return labels


def _stage_token(text: str) -> Stage:
    token = text.strip()
    if token in EDF_TOKENS:
        return EDF_TOKENS[token]
    raise UnknownStageToken(f"unrecognized stage annotation {token!r}")


def _build(raw: list, source) -> StageAnnotations:
    raw.sort(key=lambda e: e.onset_s)
    return StageAnnotations(tuple(raw), source)


def parse_hypnogram(data: bytes, format: str = "edfplus_annotations", source: str | None = None) -> StageAnnotations:
    """Read stage annotations.

    ``format`` is ``"edfplus_annotations"`` (an EDF+ file whose annotation
    signal holds "Sleep stage ..." texts) or ``"isruc_epoch_list"`` (one
    integer per 30-s epoch, whitespace separated).
    """
    if format == "edfplus_annotations":
        record = parse_edf(data)
        entries = [StageEntry(a.onset_s, a.duration_s, _stage_token(a.text)) for a in record.annotations]
        return _build(entries, source)
    if format == "isruc_epoch_list":
        entries = []
        for k, tok in enumerate(bytes(data).decode("ascii", "replace").split()):
            try:
                code = int(tok)
            except ValueError:
                raise UnknownStageToken(f"epoch {k}: label {tok!r} is not an integer") from None
            if code not in ISRUC_CODES:
                raise UnknownStageToken(f"epoch {k}: label code {code} has no stage")
            entries.append(StageEntry(k * EPOCH_S, EPOCH_S, ISRUC_CODES[code]))
        return _build(entries, source)
    raise ValueError(f"unknown hypnogram format {format!r}")


def read_hypnogram(path, format: str | None = None) -> StageAnnotations:
    path = Path(path)
    if format is None:
        format = "edfplus_annotations" if path.suffix.lower() == ".edf" else "isruc_epoch_list"
    return parse_hypnogram(path.read_bytes(), format, source=str(path))


def from_stages(stages, source: str | None = None) -> StageAnnotations:
    """Consecutive 30-s entries, one per given stage (fixture helper)."""
    return StageAnnotations(tuple(StageEntry(k * EPOCH_S, EPOCH_S, Stage(s) if not isinstance(s, Stage) else s) for k, s in enumerate(stages)), source)
