"""On-disk epoch shards: fixed-size binary blocks plus a JSON manifest.

Each block file holds, little-endian, the float32 samples [n, channels,
epoch_len], the int32 stage codes, the int32 recording index (into the
manifest's ``recordings`` list) and the int32 epoch index. The manifest keeps
the layout of every block and its SHA-256.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ssnet.autodiff.serialize import pack, sha256_bytes, unpack
from ssnet.dataset.epochs import EpochSet
from ssnet.errors import ChecksumMismatch, DataError, SchemaVersionMismatch

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
BLOCK_SIZE = 2048


def export_shards(epochs: EpochSet, path, block_size: int = BLOCK_SIZE, extra: dict | None = None) -> dict:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    recordings, rec_index = np.unique(epochs.recording, return_inverse=True)
    blocks = []
    for b, lo in enumerate(range(0, max(len(epochs), 1), block_size)):
        hi = min(lo + block_size, len(epochs))
        if hi <= lo:
            break
        blob, index = pack(
            {
                "x": epochs.x[lo:hi].astype("<f4"),
                "stages": epochs.stages[lo:hi].astype("<i4"),
                "recording": rec_index[lo:hi].astype("<i4"),
                "index": epochs.index[lo:hi].astype("<i4"),
            }
        )
        name = f"block-{b:05d}.bin"
        (path / name).write_bytes(blob)
        blocks.append({"file": name, "n": hi - lo, **index})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n_epochs": len(epochs),
        "channels": list(epochs.channels),
        "sample_rate_hz": epochs.sample_rate_hz,
        "epoch_len": epochs.epoch_len,
        "n_channels": epochs.n_channels,
        "label_scheme": epochs.scheme,
        "class_names": list(epochs.class_names),
        "class_counts": epochs.class_counts(),
        "normalized": bool(epochs.normalized),
        "recordings": recordings.tolist(),
        "meta": epochs.meta,
        "blocks": blocks,
    }
    if extra:
        manifest.update(extra)
    text = json.dumps(manifest, indent=2, sort_keys=True)
    (path / MANIFEST).write_text(text)
    manifest["manifest_sha256"] = sha256_bytes(text.encode())
    return manifest


def read_manifest(path) -> dict:
    path = Path(path)
    file = path / MANIFEST
    if not file.exists():
        raise DataError(f"no shard manifest at {file}")
    manifest = json.loads(file.read_text())
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"shard schema version {version}, expected {SCHEMA_VERSION}")
    return manifest


def import_shards(path) -> EpochSet:
    path = Path(path)
    manifest = read_manifest(path)
    parts = {"x": [], "stages": [], "recording": [], "index": []}
    for block in manifest["blocks"]:
        file = path / block["file"]
        if not file.exists():
            raise DataError(f"missing shard block {file}")
        try:
            arrays = unpack(file.read_bytes(), block)
        except ChecksumMismatch:
            raise ChecksumMismatch(f"shard block {file} fails its checksum") from None
        for k in parts:
            parts[k].append(arrays[k])
    recordings = np.array(manifest["recordings"], dtype=str)
    shape = (0, manifest["n_channels"], manifest["epoch_len"])
    cat = {k: (np.concatenate(v) if v else None) for k, v in parts.items()}
    x = cat["x"] if cat["x"] is not None else np.zeros(shape, dtype=np.float32)
    if len(x) != manifest["n_epochs"]:
        raise DataError(f"shards hold {len(x)} epochs, manifest says {manifest['n_epochs']}")
    empty = np.zeros(0, dtype=np.int64)
    return EpochSet(
        x=x,
        stages=cat["stages"] if cat["stages"] is not None else empty,
        recording=recordings[cat["recording"]] if cat["recording"] is not None else np.zeros(0, dtype=str),
        index=cat["index"] if cat["index"] is not None else empty,
        channels=tuple(manifest["channels"]),
        sample_rate_hz=manifest["sample_rate_hz"],
        scheme=manifest["label_scheme"],
        normalized=manifest["normalized"],
        meta=manifest.get("meta", {}),
    )
