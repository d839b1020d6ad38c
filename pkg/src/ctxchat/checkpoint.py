"""Single-file model checkpoints with an explicit named-tensor directory.

Layout: 8-byte magic, little-endian uint32 header length, canonical JSON
header (format version, model kind, config echo, vocabulary, tensor
directory with shapes and contiguous byte offsets), then the payload of
concatenated little-endian float32 values in directory order. Canonical JSON
plus fixed ordering makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CTXCHKP1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable files or config/kind mismatches."""


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def save_checkpoint(
    path,
    model_kind: str,
    config: dict,
    tensors: dict[str, np.ndarray],
    vocab_tokens: list[str] | None = None,
) -> None:
    """Write tensors (insertion order) with non-overlapping contiguous offsets."""
    directory = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        directory.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model_kind,
        "config": config,
        "tensors": directory,
    }
    if vocab_tokens is not None:
        header["vocab"] = vocab_tokens
    hbytes = _canon_json(header)
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


class LoadedCheckpoint:
    def __init__(self, header: dict, tensors: dict[str, np.ndarray]):
        self.header = header
        self.tensors = tensors

    @property
    def model_kind(self) -> str:
        return self.header["model_kind"]

    @property
    def config(self) -> dict:
        return self.header["config"]

    @property
    def vocab_tokens(self) -> list[str] | None:
        return self.header.get("vocab")


def load_checkpoint(path, expect_kind: str | None = None) -> LoadedCheckpoint:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    raw = p.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{p} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{p} has a corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{p}: unsupported format version {header.get('format_version')}")
    if expect_kind is not None and header["model_kind"] != expect_kind:
        raise CheckpointError(
            f"{p} holds a {header['model_kind']!r} model, expected {expect_kind!r}"
        )
    payload = raw[12 + hlen :]
    tensors: dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start != expected_offset:
            raise CheckpointError(f"{p}: tensor {entry['name']!r} offset gap or overlap")
        end = start + 4 * n
        if end > len(payload):
            raise CheckpointError(f"{p}: payload truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
        expected_offset = end
    if expected_offset != len(payload):
        raise CheckpointError(f"{p}: {len(payload) - expected_offset} trailing payload bytes")
    return LoadedCheckpoint(header, tensors)


def require_config_match(loaded: LoadedCheckpoint, runtime_config: dict, keys: list[str]) -> None:
    """Fail loudly when the checkpoint was produced under a different config."""
    stored = loaded.config
    for key in keys:
        s, r = stored, runtime_config
        for part in key.split("."):
            s = s.get(part) if isinstance(s, dict) else None
            r = r.get(part) if isinstance(r, dict) else None
        if s != r:
            raise CheckpointError(
                f"checkpoint config {key}={s!r} does not match runtime config {key}={r!r}"
            )
