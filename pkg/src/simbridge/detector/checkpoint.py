"""Checkpoint files: a binary blob of float32 tensors plus a JSON manifest.

``<stem>.bin``::

    b"JCKP" | u32 version (=1) | u32 n_tensors | tensors as float32 little-endian, manifest order

``<stem>.json`` lists ``name``, ``shape``, ``offset`` (bytes, from the start of
the file), ``group`` (``shared``, ``domain:<name>`` or ``buffer``) and the
detector configuration needed to rebuild the model.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..alignment import MemoryBank
from ..geometry import PartitionConfig
from .features import BevGridConfig
from .network import BevDetector, DetectorConfig

MAGIC = b"JCKP"
VERSION = 1
HEADER = 12


def save_checkpoint(stem, model: BevDetector, banks: dict | None = None, extra: dict | None = None) -> dict:
    """Write ``stem.bin`` and ``stem.json``; ``banks`` maps a prefix to a :class:`MemoryBank`."""
    stem = Path(stem)
    tensors = [(n, model.params[n], model.groups[n]) for n in sorted(model.params)]
    bank_meta = {}
    for prefix, bank in sorted((banks or {}).items()):
        if bank is None:
            continue
        for n, arr in bank.to_tensors(prefix).items():
            tensors.append((n, arr, "buffer"))
        bank_meta[prefix] = {"momentum": bank.momentum, "source_domain": bank.source_domain,
                             "partition": asdict(bank.partition)}
    entries, chunks, off = [], [], HEADER
    for name, arr, group in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": off, "group": group})
        chunks.append(raw)
        off += len(raw)
    blob = MAGIC + struct.pack("<II", VERSION, len(entries)) + b"".join(chunks)
    stem.with_suffix(".bin").write_bytes(blob)
    cfg = model.cfg
    manifest = {
        "format": "jckp", "version": VERSION,
        "detector": {"d_feat": cfg.d_feat, "n_cls": cfg.n_cls, "sim_channels": cfg.sim_channels,
                     "real_channels": cfg.real_channels, "domain_aware": cfg.domain_aware,
                     "grid": asdict(cfg.grid)},
        "tensors": entries,
        "banks": bank_meta,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        manifest["extra"] = extra
    with open(stem.with_suffix(".json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def load_checkpoint(stem):
    """Returns ``(model, banks, manifest)``."""
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    with open(stem.with_suffix(".json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    blob = stem.with_suffix(".bin").read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{stem}.bin is not a checkpoint")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != VERSION or n != len(manifest["tensors"]):
        raise ValueError(f"{stem}: checkpoint header does not match manifest")
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    d = manifest["detector"]
    cfg = DetectorConfig(BevGridConfig(**d["grid"]), d["d_feat"], d["n_cls"], d["sim_channels"],
                         d["real_channels"], d["domain_aware"])
    model = BevDetector(cfg)
    for e in manifest["tensors"]:
        if e["group"] != "buffer":
            model.params[e["name"]] = tensors[e["name"]]
            model.groups[e["name"]] = e["group"]
    banks = {}
    for prefix, meta in manifest.get("banks", {}).items():
        part = meta["partition"]
        part = PartitionConfig(part["n_azimuth"], tuple(part["radial_bounds"]), part["n_heading"],
                               part["n_cls"])
        banks[prefix] = MemoryBank.from_tensors(tensors, prefix, part, meta["momentum"],
                                                meta["source_domain"])
    return model, banks, manifest
