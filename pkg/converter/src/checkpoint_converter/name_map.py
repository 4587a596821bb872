"""Source-checkpoint to SATW tensor-name mapping.

The exact parameter names in published checkpoints vary between releases,
so the mapping is data: a NameMap is an ordered list of entries, each
naming one source tensor, one canonical SATW target, and an optional
transform (transpose / reshape / axis slice).  A built-in map covers the
common timm-style layout with a fused ``attn.qkv`` projection; anything
else can be supplied as JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MapEntry:
    source: str
    target: str
    # None, {"op": "transpose"}, {"op": "reshape", "shape": [...]},
    # or {"op": "slice", "axis": a, "start": s, "stop": e}
    transform: dict | None = None

    def apply(self, arr: np.ndarray) -> np.ndarray:
        t = self.transform
        if t is None:
            return arr
        if t["op"] == "transpose":
            return arr.T
        if t["op"] == "reshape":
            return arr.reshape(t["shape"])
        if t["op"] == "slice":
            index = [slice(None)] * arr.ndim
            index[t["axis"]] = slice(t["start"], t["stop"])
            return arr[tuple(index)]
        raise ValueError(f"unknown transform op {t['op']!r}")


@dataclass
class NameMap:
    entries: list[MapEntry] = field(default_factory=list)

    def __post_init__(self):
        targets = [e.target for e in self.entries]
        dupes = {t for t in targets if targets.count(t) > 1}
        if dupes:
            raise ValueError(f"target mapped more than once: {sorted(dupes)[0]!r}")

    def sources(self) -> set[str]:
        return {e.source for e in self.entries}

    @classmethod
    def from_json(cls, path) -> "NameMap":
        with open(path) as fh:
            body = json.load(fh)
        return cls(entries=[
            MapEntry(source=e["source"], target=e["target"],
                     transform=e.get("transform"))
            for e in body["entries"]
        ])

    def to_json(self) -> str:
        return json.dumps({"entries": [
            {"source": e.source, "target": e.target,
             **({"transform": e.transform} if e.transform else {})}
            for e in self.entries
        ]}, indent=2)


def default_map(n_layers: int, embed_dim: int) -> NameMap:
    """Mapping for timm-style checkpoints with fused qkv projections."""
    d = embed_dim
    entries = [
        MapEntry("patch_embed.proj.weight", "patch_embed.weight"),
        MapEntry("patch_embed.proj.bias", "patch_embed.bias"),
        MapEntry("time_pos_embed", "pos_embed.time",
                 {"op": "reshape", "shape": [64, d]}),
        MapEntry("freq_pos_embed", "pos_embed.freq",
                 {"op": "reshape", "shape": [4, d]}),
    ]
    for l in range(n_layers):
        src, dst = f"blocks.{l}.", f"blocks.{l}."
        entries += [
            MapEntry(src + "norm1.weight", dst + "norm1.weight"),
            MapEntry(src + "norm1.bias", dst + "norm1.bias"),
        ]
        for i, proj in enumerate(("wq", "wk", "wv")):
            sl = {"op": "slice", "axis": 0, "start": i * d, "stop": (i + 1) * d}
            entries += [
                MapEntry(src + "attn.qkv.weight", dst + f"attn.{proj}.weight", sl),
                MapEntry(src + "attn.qkv.bias", dst + f"attn.{proj}.bias", sl),
            ]
        entries += [
            MapEntry(src + "attn.proj.weight", dst + "attn.wo.weight"),
            MapEntry(src + "attn.proj.bias", dst + "attn.wo.bias"),
            MapEntry(src + "norm2.weight", dst + "norm2.weight"),
            MapEntry(src + "norm2.bias", dst + "norm2.bias"),
            MapEntry(src + "mlp.fc1.weight", dst + "mlp.fc1.weight"),
            MapEntry(src + "mlp.fc1.bias", dst + "mlp.fc1.bias"),
            MapEntry(src + "mlp.fc2.weight", dst + "mlp.fc2.weight"),
            MapEntry(src + "mlp.fc2.bias", dst + "mlp.fc2.bias"),
        ]
    entries += [
        MapEntry("norm.weight", "norm.weight"),
        MapEntry("norm.bias", "norm.bias"),
        MapEntry("head.weight", "head.weight"),
        MapEntry("head.bias", "head.bias"),
    ]
    return NameMap(entries=entries)
