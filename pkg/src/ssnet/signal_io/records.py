"""In-memory polysomnography records and channel selection."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace

import numpy as np

from ssnet.errors import MissingChannel, MixedSampleRate


@dataclass(frozen=True)
class RecordingHeader:
    version_tag: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_datetime: dt.datetime = dt.datetime(2000, 1, 1)
    n_data_records: int = 0
    record_duration_s: float = 1.0
    n_signals: int = 0
    reserved: str = ""  # "EDF+C" / "EDF+D" for EDF+ files

    @property
    def header_bytes(self) -> int:
        return 256 + 256 * self.n_signals

    @property
    def is_edfplus(self) -> bool:
        return self.reserved.startswith("EDF+")

    @property
    def discontinuous(self) -> bool:
        return self.reserved.startswith("EDF+D")


@dataclass(frozen=True)
class ChannelSpec:
    label: str
    physical_dim: str = ""
    physical_min: float = -32768.0
    physical_max: float = 32767.0
    digital_min: int = -32768
    digital_max: int = 32767
    samples_per_record: int = 1
    sample_rate_hz: float = 1.0
    transducer: str = ""
    prefilter: str = ""

    @property
    def gain(self) -> float:
        """Physical units per digital step (one quantization step)."""
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)


@dataclass(frozen=True)
class Annotation:
    onset_s: float
    duration_s: float
    text: str


@dataclass(frozen=True)
class MultiChannelRecord:
    header: RecordingHeader
    channels: tuple = ()  # of (ChannelSpec, np.ndarray)
    annotations: tuple = ()  # of Annotation, from an EDF+ annotation channel
    source: str | None = None

    @property
    def labels(self) -> list[str]:
        return [spec.label for spec, _ in self.channels]

    def trace(self, label: str) -> np.ndarray:
        for spec, samples in self.channels:
            if spec.label == label:
                return samples
        raise MissingChannel(label)

    @property
    def duration_s(self) -> float:
        return self.header.n_data_records * self.header.record_duration_s

    def inventory(self) -> dict:
        """JSON-friendly header and per-channel summary."""
        h = self.header
        return {
            "version": h.version_tag,
            "patient_id": h.patient_id,
            "recording_id": h.recording_id,
            "start": h.start_datetime.isoformat(),
            "n_data_records": h.n_data_records,
            "record_duration_s": h.record_duration_s,
            "n_signals": h.n_signals,
            "edf_plus": h.reserved.strip() or None,
            "n_annotations": len(self.annotations),
            "channels": [
                {
                    "label": s.label,
                    "physical_dim": s.physical_dim,
                    "physical_min": s.physical_min,
                    "physical_max": s.physical_max,
                    "digital_min": s.digital_min,
                    "digital_max": s.digital_max,
                    "samples_per_record": s.samples_per_record,
                    "sample_rate_hz": s.sample_rate_hz,
                    "n_samples": int(len(x)),
                }
                for s, x in self.channels
            ],
        }


def make_record(traces: dict, sample_rate_hz: float, record_duration_s: float = 1.0, **header_fields) -> MultiChannelRecord:
    """Build a record from ``{label: samples}`` sharing one rate, with ranges fitted to the data."""
    spr = int(round(sample_rate_hz * record_duration_s))
    channels = []
    n_records = None
    for label, samples in traces.items():
        samples = np.asarray(samples, dtype=np.float64)
        if len(samples) % spr:
            raise ValueError(f"{label}: {len(samples)} samples is not a whole number of {spr}-sample records")
        n = len(samples) // spr
        if n_records is not None and n != n_records:
            raise ValueError("all traces must span the same number of records")
        n_records = n
        lo, hi = fitted_range(samples)
        spec = ChannelSpec(label, "uV", lo, hi, -32768, 32767, spr, spr / record_duration_s)
        channels.append((spec, samples))
    header = RecordingHeader(
        n_data_records=n_records or 0, record_duration_s=record_duration_s, n_signals=len(channels), **header_fields
    )
    return MultiChannelRecord(header, tuple(channels))


def fitted_range(samples: np.ndarray) -> tuple[float, float]:
    """A physical range covering ``samples`` with 1% headroom, exact in an 8-character EDF field."""
    from ssnet.signal_io.edf import format_number

    lo, hi = (float(samples.min()), float(samples.max())) if samples.size else (-1.0, 1.0)
    pad = max(0.01 * (hi - lo), 1e-3 * max(abs(lo), abs(hi)), 1e-6)
    return float(format_number(lo - pad)), float(format_number(hi + pad))


def _match(labels: list[str], name: str) -> int:
    if name in labels:
        return labels.index(name)
    # fall back to a unique case-insensitive suffix match, so "Fpz-Cz"
    # finds "EEG Fpz-Cz"
    key = name.strip().lower()
    hits = [i for i, lab in enumerate(labels) if lab.strip().lower().endswith(key)]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        raise MissingChannel(f"channel {name!r} not found in {labels}")
    raise MissingChannel(f"channel {name!r} is ambiguous among {[labels[i] for i in hits]}")


def select_channels(record: MultiChannelRecord, names: list[str]) -> MultiChannelRecord:
    """Keep ``names`` in the requested order; traces are shared, not copied."""
    labels = record.labels
    picked = [record.channels[_match(labels, n)] for n in names]
    rates = {spec.sample_rate_hz for spec, _ in picked}
    if len(rates) > 1:
        raise MixedSampleRate(f"selected channels have different sample rates: {sorted(rates)}")
    header = replace(record.header, n_signals=len(picked))
    return replace(record, header=header, channels=tuple(picked))


def sample_rate(record: MultiChannelRecord) -> float:
    rates = {spec.sample_rate_hz for spec, _ in record.channels}
    if len(rates) != 1:
        raise MixedSampleRate(f"record has sample rates {sorted(rates)}")
    return rates.pop()


__all__ = [
    "Annotation",
    "ChannelSpec",
    "MultiChannelRecord",
    "RecordingHeader",
    "make_record",
    "sample_rate",
    "select_channels",
]
