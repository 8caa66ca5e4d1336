"""EDF / EDF+ reader and writer.

Layout: a 256-byte fixed header, 256 bytes of per-signal fields (stored
field-major: all labels, then all transducers, ...), then ``n_data_records``
data records, each holding ``samples_per_record`` little-endian int16 values
for every signal in turn. EDF+ files carry "EDF Annotations" signals whose
bytes are time-stamped annotation lists (TALs) instead of samples.
"""

from __future__ import annotations

import datetime as dt
import math
import re
import warnings
from pathlib import Path

import numpy as np

from ssnet.errors import CalibrationDegenerate, MalformedHeader, RangeOverflow, TruncatedData
from ssnet.signal_io.records import Annotation, ChannelSpec, MultiChannelRecord, RecordingHeader

MAGIC = b"0       "
ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of the per-signal fields, in file order
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)

_TAL = re.compile(rb"([+-]\d+(?:\.\d*)?)(?:\x15(\d+(?:\.\d*)?))?\x14((?:[^\x00])*?)\x14?\x00")


class EDFDiscontinuityWarning(UserWarning):
    """An EDF+D file was read as if its data records were contiguous."""


def _text(raw: bytes) -> str:
    # latin-1 keeps any non-ASCII byte as one code point, so ids round-trip verbatim
    return raw.decode("latin-1").strip()


def _number(raw: bytes, what: str, cast=float):
    try:
        return cast(_text(raw))
    except ValueError:
        raise MalformedHeader(f"{what} is not numeric: {raw!r}") from None


def _int_field(raw: bytes, what: str) -> int:
    value = _number(raw, what, float)
    if value != int(value):
        raise MalformedHeader(f"{what} is not an integer: {raw!r}")
    return int(value)


def _parse_datetime(date_raw: bytes, time_raw: bytes) -> dt.datetime:
    date, clock = _text(date_raw), _text(time_raw)
    try:
        day, month, yy = (int(v) for v in re.split(r"[.:/-]", date))
        hour, minute, sec = (int(v) for v in re.split(r"[.:]", clock))
    except ValueError:
        raise MalformedHeader(f"bad start date/time {date!r} {clock!r}") from None
    # EDF clipping date convention: yy 85..99 -> 1985..1999, 00..84 -> 2000..2084
    year = 1900 + yy if yy >= 85 else 2000 + yy
    try:
        return dt.datetime(year, month, day, hour, minute, sec)
    except ValueError as exc:
        raise MalformedHeader(f"bad start date/time: {exc}") from None


def parse_tal(raw: bytes) -> list[tuple[float, float | None, list[str]]]:
    """Split an annotation signal's bytes into (onset, duration, texts) triples."""
    out = []
    for m in _TAL.finditer(raw):
        onset = float(m.group(1))
        duration = float(m.group(2)) if m.group(2) else None
        texts = [t.decode("utf-8", "replace") for t in m.group(3).split(b"\x14") if t]
        out.append((onset, duration, texts))
    return out


def parse_edf(data: bytes, source: str | None = None) -> MultiChannelRecord:
    """Decode an EDF/EDF+ byte string into physical-unit traces."""
    data = bytes(data)
    if len(data) < 256:
        raise MalformedHeader(f"file is {len(data)} bytes, shorter than the 256-byte fixed header")
    if data[:8] != MAGIC:
        raise MalformedHeader(f"version field is {data[:8]!r}, expected {MAGIC!r}")
    n_signals = _int_field(data[252:256], "number of signals")
    if n_signals < 0:
        raise MalformedHeader(f"negative signal count {n_signals}")
    header_len = 256 + 256 * n_signals
    declared = _int_field(data[184:192], "header byte count")
    if declared != header_len:
        raise MalformedHeader(f"header byte count {declared} disagrees with {n_signals} signals")
    if len(data) < header_len:
        raise MalformedHeader(f"file ends inside the signal header ({len(data)} < {header_len} bytes)")
    n_records = _int_field(data[236:244], "number of data records")
    duration = _number(data[244:252], "record duration")
    if duration <= 0 and n_signals:
        raise MalformedHeader(f"record duration must be positive, got {duration}")
    reserved = _text(data[192:236])

    fields, pos = {}, 256
    for name, width in _SIGNAL_FIELDS:
        fields[name] = [data[pos + i * width : pos + (i + 1) * width] for i in range(n_signals)]
        pos += width * n_signals

    specs, is_annotation = [], []
    for i in range(n_signals):
        label = _text(fields["label"][i])
        spr = _int_field(fields["samples_per_record"][i], f"{label}: samples per record")
        dmin = _int_field(fields["digital_min"][i], f"{label}: digital minimum")
        dmax = _int_field(fields["digital_max"][i], f"{label}: digital maximum")
        pmin = _number(fields["physical_min"][i], f"{label}: physical minimum")
        pmax = _number(fields["physical_max"][i], f"{label}: physical maximum")
        if spr < 1:
            raise MalformedHeader(f"{label}: samples per record must be >= 1")
        if dmin == dmax:
            raise CalibrationDegenerate(f"{label}: digital minimum equals digital maximum ({dmin})")
        if dmin > dmax:
            raise MalformedHeader(f"{label}: digital minimum {dmin} exceeds maximum {dmax}")
        if pmin == pmax:
            raise CalibrationDegenerate(f"{label}: physical minimum equals physical maximum ({pmin})")
        specs.append(
            ChannelSpec(
                label=label,
                physical_dim=_text(fields["physical_dim"][i]),
                physical_min=pmin,
                physical_max=pmax,
                digital_min=dmin,
                digital_max=dmax,
                samples_per_record=spr,
                sample_rate_hz=spr / duration,
                transducer=_text(fields["transducer"][i]),
                prefilter=_text(fields["prefilter"][i]),
            )
        )
        is_annotation.append(label == ANNOTATION_LABEL)

    record_samples = sum(s.samples_per_record for s in specs)
    body = len(data) - header_len
    if n_records == -1:
        # unknown in the header: count the whole records present
        n_records = body // (2 * record_samples) if record_samples else 0
    elif n_records < 0:
        raise MalformedHeader(f"invalid data record count {n_records}")
    need = n_records * record_samples * 2
    if body < need:
        raise TruncatedData(f"header promises {need} data bytes, file holds {body}")

    digits = np.frombuffer(data, dtype="<i2", count=n_records * record_samples, offset=header_len)
    digits = digits.reshape(n_records, record_samples)
    channels, annotations, col = [], [], 0
    for spec, annot in zip(specs, is_annotation):
        block = digits[:, col : col + spec.samples_per_record]
        col += spec.samples_per_record
        if annot:
            for rec in block:
                for onset, dur, texts in parse_tal(rec.astype("<i2").tobytes()):
                    annotations.extend(Annotation(onset, dur or 0.0, t) for t in texts)
            continue
        scale = (spec.physical_max - spec.physical_min) / (spec.digital_max - spec.digital_min)
        trace = (block.reshape(-1).astype(np.float64) - spec.digital_min) * scale + spec.physical_min
        channels.append((spec, trace))

    if reserved.startswith("EDF+D"):
        warnings.warn("EDF+D (discontinuous) file read as contiguous", EDFDiscontinuityWarning, stacklevel=2)
    header = RecordingHeader(
        version_tag=_text(data[:8]),
        patient_id=_text(data[8:88]),
        recording_id=_text(data[88:168]),
        start_datetime=_parse_datetime(data[168:176], data[176:184]),
        n_data_records=n_records,
        record_duration_s=duration,
        n_signals=len(channels),
        reserved=reserved,
    )
    return MultiChannelRecord(header, tuple(channels), tuple(annotations), source)


def read_edf(path) -> MultiChannelRecord:
    path = Path(path)
    return parse_edf(path.read_bytes(), source=str(path))


# writer


def format_number(value: float, width: int = 8) -> str:
    """Shortest text of at most ``width`` characters for ``value``, rounding when needed."""
    if math.isfinite(value) and value == int(value) and len(str(int(value))) <= width:
        return str(int(value))
    for digits in range(width, 0, -1):
        text = f"{value:.{digits}g}"
        if "e" in text:
            mant, exp = text.split("e")
            text = f"{mant}e{int(exp)}"
        if len(text) <= width:
            return text
    raise ValueError(f"{value!r} does not fit in {width} characters")


def _field(text: str, width: int) -> bytes:
    raw = text.encode("latin-1")
    if len(raw) > width:
        raise ValueError(f"header field {text!r} exceeds {width} bytes")
    return raw.ljust(width, b" ")


def _tal_blocks(record: MultiChannelRecord, n_records: int) -> list[bytes]:
    """One TAL byte string per data record: a time-keeping TAL, plus all annotations in the first."""
    blocks = []
    for k in range(n_records):
        chunk = f"+{format_number(k * record.header.record_duration_s, 16)}\x14\x14\x00".encode()
        if k == 0:
            for a in record.annotations:
                dur = f"\x15{format_number(a.duration_s, 16)}" if a.duration_s else ""
                chunk += f"+{format_number(a.onset_s, 16)}{dur}\x14{a.text}\x14\x00".encode()
        blocks.append(chunk)
    return blocks


def check_range(spec: ChannelSpec, trace: np.ndarray) -> None:
    trace = np.asarray(trace, dtype=np.float64)
    lo, hi = sorted((spec.physical_min, spec.physical_max))
    slack = 1e-9 * (hi - lo)
    if trace.size and (not np.all(np.isfinite(trace)) or trace.min() < lo - slack or trace.max() > hi + slack):
        raise RangeOverflow(f"{spec.label}: samples outside physical range [{lo}, {hi}]")


def encode_trace(spec: ChannelSpec, trace: np.ndarray) -> np.ndarray:
    """Physical values to int16 digits, clipped to the digital range."""
    trace = np.asarray(trace, dtype=np.float64)
    scale = (spec.digital_max - spec.digital_min) / (spec.physical_max - spec.physical_min)
    digits = np.rint((trace - spec.physical_min) * scale + spec.digital_min)
    return np.clip(digits, spec.digital_min, spec.digital_max).astype("<i2")


def write_edf(record: MultiChannelRecord) -> bytes:
    """Serialize ``record``; an annotation signal is appended for EDF+ records or when annotations exist."""
    h = record.header
    n_records = h.n_data_records
    specs = [spec for spec, _ in record.channels]
    digit_blocks = []
    for spec, trace in record.channels:
        if spec.digital_min >= spec.digital_max:
            raise CalibrationDegenerate(f"{spec.label}: digital minimum must be below maximum")
        if len(trace) != n_records * spec.samples_per_record:
            raise ValueError(f"{spec.label}: {len(trace)} samples != {n_records} records x {spec.samples_per_record}")
        check_range(spec, trace)
        # quantize against the physical range as it will read back from the header
        stored = ChannelSpec(
            spec.label,
            physical_min=float(format_number(spec.physical_min)),
            physical_max=float(format_number(spec.physical_max)),
            digital_min=spec.digital_min,
            digital_max=spec.digital_max,
        )
        if stored.physical_min == stored.physical_max:
            raise CalibrationDegenerate(f"{spec.label}: physical range collapses when written")
        digit_blocks.append(encode_trace(stored, trace).reshape(n_records, spec.samples_per_record))

    reserved = h.reserved
    if record.annotations and not reserved.startswith("EDF+"):
        reserved = "EDF+C"
    if reserved.startswith("EDF+"):
        tals = _tal_blocks(record, n_records)
        width = max((len(t) for t in tals), default=2)
        spr = (width + 1) // 2
        specs.append(ChannelSpec(ANNOTATION_LABEL, "", -1.0, 1.0, -32768, 32767, spr))
        blob = np.zeros((n_records, spr), dtype="<i2")
        for k, t in enumerate(tals):
            raw = np.frombuffer(t.ljust(2 * spr, b"\x00"), dtype="<i2")
            blob[k] = raw
        digit_blocks.append(blob)

    ns = len(specs)
    out = bytearray()
    out += _field(h.version_tag, 8)
    out += _field(h.patient_id, 80)
    out += _field(h.recording_id, 80)
    out += _field(h.start_datetime.strftime("%d.%m.%y"), 8)
    out += _field(h.start_datetime.strftime("%H.%M.%S"), 8)
    out += _field(str(256 + 256 * ns), 8)
    out += _field(reserved, 44)
    out += _field(str(n_records), 8)
    out += _field(format_number(h.record_duration_s), 8)
    out += _field(str(ns), 4)
    values = {
        "label": [s.label for s in specs],
        "transducer": [s.transducer for s in specs],
        "physical_dim": [s.physical_dim for s in specs],
        "physical_min": [format_number(s.physical_min) for s in specs],
        "physical_max": [format_number(s.physical_max) for s in specs],
        "digital_min": [str(s.digital_min) for s in specs],
        "digital_max": [str(s.digital_max) for s in specs],
        "prefilter": [s.prefilter for s in specs],
        "samples_per_record": [str(s.samples_per_record) for s in specs],
        "reserved": ["" for _ in specs],
    }
    for name, width in _SIGNAL_FIELDS:
        for v in values[name]:
            out += _field(v, width)
    if digit_blocks:
        out += np.concatenate(digit_blocks, axis=1).astype("<i2").tobytes()
    return bytes(out)


def write_edf_file(record: MultiChannelRecord, path) -> None:
    Path(path).write_bytes(write_edf(record))
