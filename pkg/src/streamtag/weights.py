"""SATW weight-file format: save, load, and seeded random initialization.

Layout (little-endian throughout):

    bytes 0..3    magic b"SATW"
    bytes 4..7    format version, u32 (currently 1)
    bytes 8..15   header length in bytes, u64
    header        UTF-8 JSON: {"tensors": [{"name", "dtype", "shape",
                  "byte_offset"}, ...]}
    payload       starts at the first 64-byte boundary at or after
                  16 + header length; row-major f32 tensors, each
                  byte_offset relative to payload start and 64-aligned

See docs/FORMAT.md for the full contract.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, WeightSet, expected_shapes, optional_shapes

MAGIC = b"SATW"
VERSION = 1
ALIGN = 64


class WeightFormatError(ValueError):
    """Raised for malformed or mismatched SATW files."""


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def canonical_order(cfg: ModelConfig, names) -> list[str]:
    """Required tensors in declaration order, then optional, then the rest."""
    ordered = [n for n in expected_shapes(cfg) if n in names]
    ordered += [n for n in optional_shapes(cfg) if n in names]
    ordered += sorted(set(names) - set(ordered))
    return ordered


def save(w: WeightSet, path) -> None:
    """Write a WeightSet as a SATW file; load(save(w)) is bit-exact."""
    names = canonical_order(w.cfg, w.names())
    entries = []
    offset = 0
    for name in names:
        arr = w.raw(name)
        entries.append(
            {
                "name": name,
                "dtype": "f32",
                "shape": list(arr.shape),
                "byte_offset": offset,
            }
        )
        offset = _align(offset + arr.nbytes)
    header = json.dumps({"tensors": entries}).encode("utf-8")
    payload_start = _align(16 + len(header))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(b"\0" * (payload_start - 16 - len(header)))
        for name, entry in zip(names, entries):
            fh.seek(payload_start + entry["byte_offset"])
            arr = np.ascontiguousarray(w.raw(name)).astype("<f4", copy=False)
            fh.write(arr.tobytes())


def read_header(path) -> dict:
    """Parse and validate a SATW header without touching the payload."""
    with open(path, "rb") as fh:
        prefix = fh.read(16)
        if len(prefix) < 16 or prefix[:4] != MAGIC:
            raise WeightFormatError(f"bad magic in {path}")
        version, header_len = struct.unpack("<IQ", prefix[4:])
        if version != VERSION:
            raise WeightFormatError(f"unknown format version {version}")
        header = fh.read(header_len)
        if len(header) != header_len:
            raise WeightFormatError("truncated header")
    try:
        meta = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"unreadable header: {exc}") from exc
    if not isinstance(meta.get("tensors"), list):
        raise WeightFormatError("header lacks a tensors list")
    meta["_payload_start"] = _align(16 + header_len)
    return meta


def load(path, cfg: ModelConfig) -> WeightSet:
    """Load and validate a SATW file against a model configuration."""
    meta = read_header(path)
    payload_start = meta["_payload_start"]
    with open(path, "rb") as fh:
        blob = fh.read()
    payload = blob[payload_start:]
    required = expected_shapes(cfg)
    optional = optional_shapes(cfg)
    seen: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for entry in meta["tensors"]:
        name = entry["name"]
        if name in seen:
            raise WeightFormatError(f"duplicate tensor {name!r}")
        if entry.get("dtype") != "f32":
            raise WeightFormatError(f"tensor {name!r}: unsupported dtype {entry.get('dtype')}")
        shape = tuple(int(s) for s in entry["shape"])
        want = required.get(name) or optional.get(name)
        if want is None:
            raise WeightFormatError(f"unknown tensor {name!r} for {cfg.variant}")
        if shape != want:
            raise WeightFormatError(
                f"tensor {name!r} has shape {list(shape)}, expected {list(want)} "
                f"for {cfg.variant}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        off = int(entry["byte_offset"])
        if off < 0 or off + nbytes > len(payload):
            raise WeightFormatError(f"tensor {name!r}: truncated payload")
        spans.append((off, off + nbytes, name))
        seen[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise WeightFormatError(f"tensors {name_a!r} and {name_b!r} overlap")
    missing = sorted(set(required) - set(seen))
    if missing:
        raise WeightFormatError(f"missing required tensor {missing[0]!r}")
    return WeightSet(cfg, seen)


# --- deterministic seeded initialization -------------------------------

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(state: np.ndarray) -> np.ndarray:
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _uniforms(stream_seed: int, count: int) -> np.ndarray:
    """count doubles in (0, 1], platform-independent."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = np.uint64(stream_seed) + idx * _SM64_GAMMA
        bits = _splitmix64(states)
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def _trunc_normals(stream_seed: int, count: int, std: float) -> np.ndarray:
    pairs = (count + 1) // 2
    u = _uniforms(stream_seed, 2 * pairs)
    u1, u2 = u[:pairs], u[pairs:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return np.clip(z[:count] * std, -2.0 * std, 2.0 * std)


def seeded_init(cfg: ModelConfig, seed: int = 0, init_std: float = 0.02) -> WeightSet:
    """Deterministic random WeightSet for testing; same seed -> same bits.

    Weight matrices, position tables and the cls token (when pooling is
    'cls') draw truncated normals; norm scales are 1, all biases and norm
    shifts 0.  No frontend-norm tensors are emitted (identity fallback).
    """
    shapes = dict(expected_shapes(cfg))
    if cfg.pooling == "cls":
        shapes["cls_token"] = (cfg.embed_dim,)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        is_norm = ".norm" in name or name.startswith("norm.")
        if leaf == "bias" or (is_norm and leaf == "bias"):
            arr = np.zeros(shape, dtype=np.float32)
        elif is_norm and leaf == "weight":
            arr = np.ones(shape, dtype=np.float32)
        else:
            count = int(np.prod(shape, dtype=np.int64))
            stream = (seed ^ _fnv1a64(name)) & 0xFFFFFFFFFFFFFFFF
            arr = _trunc_normals(stream, count, init_std).astype(np.float32).reshape(shape)
        tensors[name] = arr
    return WeightSet(cfg, tensors)
