from ssnet.signal_io.edf import parse_edf, read_edf, write_edf, write_edf_file
from ssnet.signal_io.hypnogram import Stage, StageAnnotations, StageEntry, parse_hypnogram, read_hypnogram
from ssnet.signal_io.records import ChannelSpec, MultiChannelRecord, RecordingHeader, make_record, select_channels

__all__ = [
    "ChannelSpec",
    "MultiChannelRecord",
    "RecordingHeader",
    "Stage",
    "StageAnnotations",
    "StageEntry",
    "make_record",
    "parse_edf",
    "parse_hypnogram",
    "read_edf",
    "read_hypnogram",
    "select_channels",
    "write_edf",
    "write_edf_file",
]
