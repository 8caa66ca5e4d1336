import numpy as np
import pytest

from ssnet.signal_io import make_record


def edf_bytes(signals, n_records=1, duration=1.0, version=b"0", reserved=b"", start=(b"01.01.00", b"00.00.00")):
    """Hand-assemble an EDF file. ``signals``: list of dicts with label, pmin, pmax, dmin, dmax, digits [n_records, spr]."""

    def field(v, w):
        v = v if isinstance(v, bytes) else str(v).encode()
        return v.ljust(w, b" ")[:w]

    ns = len(signals)
    head = field(version, 8) + field(b"patient", 80) + field(b"recording", 80) + start[0] + start[1]
    head += field(256 + 256 * ns, 8) + field(reserved, 44) + field(n_records, 8) + field(duration, 8) + field(ns, 4)
    cols = [("label", 16), ("transducer", 80), ("dim", 8), ("pmin", 8), ("pmax", 8), ("dmin", 8), ("dmax", 8),
            ("prefilter", 80), ("spr", 8), ("res", 32)]
    for key, width in cols:
        for s in signals:
            if key == "spr":
                val = np.asarray(s["digits"]).reshape(n_records, -1).shape[1]
            else:
                val = s.get(key, "")
            head += field(val, width)
    body = b""
    for r in range(n_records):
        for s in signals:
            body += np.asarray(s["digits"]).reshape(n_records, -1)[r].astype("<i2").tobytes()
    return head + body


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def golden_record():
    """Four-channel, Sleep-EDFX-style fixture with fixed contents."""
    t = np.arange(300) / 100.0
    traces = {
        "EEG Fpz-Cz": 40 * np.sin(2 * np.pi * 10 * t),
        "EEG Pz-Oz": 25 * np.sin(2 * np.pi * 2 * t + 0.3),
        "EOG horizontal": 80 * np.cos(2 * np.pi * 0.5 * t),
        "EMG submental": 5 * np.sin(2 * np.pi * 30 * t) + 1.0,
    }
    import datetime as dt

    return make_record(traces, 100.0, patient_id="X F 01-JAN-1970 fixture", recording_id="Startdate 01-JAN-2000 golden",
                       start_datetime=dt.datetime(2000, 1, 1, 22, 30, 0))
