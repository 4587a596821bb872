"""Checkpoint -> SATW conversion and logit crosschecking."""

from __future__ import annotations

import numpy as np
import torch

from streamtag import (
    MelSpectrogram,
    ModelConfig,
    WeightSet,
    add_pos_embed,
    forward_logits,
    load,
    normalize,
    patchify,
    save,
    transformer_block,
)

from .name_map import NameMap, default_map
from .reference import reference_logits

DIVERGENCE_LIMIT = 1e-3


class ConversionError(Exception):
    pass


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Load a torch checkpoint as a flat name -> float32 ndarray dict.

    Accepts either a bare state_dict or the common {"state_dict": ...} /
    {"model": ...} wrappers.
    """
    blob = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("state_dict", "model"):
        if isinstance(blob, dict) and key in blob and isinstance(blob[key], dict):
            blob = blob[key]
    if not isinstance(blob, dict) or not all(
            torch.is_tensor(v) for v in blob.values()):
        raise ConversionError(f"{path}: not a tensor state_dict")
    return {k: v.detach().numpy().astype(np.float32) for k, v in blob.items()}


def convert(src_path, arch: str, out_path, name_map: NameMap | None = None) -> dict:
    """Convert a checkpoint to SATW; returns a full mapping report.

    Fails hard (naming the canonical key) when a required target has no
    source; unmapped source tensors are reported as skipped, never
    silently dropped.
    """
    cfg = ModelConfig.from_variant(arch)
    state = load_checkpoint(src_path)
    nmap = name_map or default_map(cfg.n_layers, cfg.embed_dim)

    tensors: dict[str, np.ndarray] = {}
    mapped = []
    for entry in nmap.entries:
        if entry.source not in state:
            raise ConversionError(
                f"missing canonical tensor {entry.target!r}: source "
                f"{entry.source!r} not in checkpoint"
            )
        try:
            arr = entry.apply(state[entry.source])
        except ValueError as exc:
            raise ConversionError(
                f"transform for {entry.target!r} failed: {exc}") from exc
        tensors[entry.target] = arr
        mapped.append({"source": entry.source, "target": entry.target,
                       "shape": list(arr.shape)})
    skipped = sorted(set(state) - nmap.sources())

    try:
        weights = WeightSet(cfg, tensors)
    except ValueError as exc:
        raise ConversionError(str(exc)) from exc
    save(weights, out_path)

    source_total = sum(int(a.size) for a in state.values())
    skipped_total = sum(int(state[n].size) for n in skipped)
    return {
        "arch": arch,
        "out": str(out_path),
        "mapped": mapped,
        "skipped": [{"source": n, "shape": list(state[n].shape)} for n in skipped],
        "param_count": weights.param_count(),
        "source_param_count": source_total,
        "skipped_param_count": skipped_total,
    }


def _infer_arch(satw_path) -> str:
    from streamtag.weights import read_header

    header = read_header(satw_path)
    dims = {t["name"]: t["shape"] for t in header["tensors"]}
    d = dims["head.weight"][1]
    for variant in ("tiny", "small", "base"):
        if ModelConfig.from_variant(variant).embed_dim == d:
            return variant
    raise ConversionError(f"embed dim {d} matches no known variant")


def crosscheck(src_path, satw_path, seed: int = 0,
               name_map: NameMap | None = None) -> dict:
    """Compare reference (torch) and engine logits on a seeded mel chunk.

    On divergence beyond 1e-3 the report carries the first layer at which
    the two forward passes disagree.
    """
    arch = _infer_arch(satw_path)
    cfg = ModelConfig.from_variant(arch)
    state = load_checkpoint(src_path)
    weights = load(satw_path, cfg)

    rng = np.random.default_rng(seed)
    mel = MelSpectrogram(values=rng.normal(size=(cfg.n_mels, 192)))

    ref_logits, ref_layers = reference_logits(state, cfg, mel.values)
    eng_logits, _ = forward_logits(mel, cfg, weights)
    diff = float(np.max(np.abs(ref_logits - eng_logits)))

    report = {"arch": arch, "seed": seed, "max_abs_diff": diff,
              "ok": diff <= DIVERGENCE_LIMIT}
    if not report["ok"]:
        report["first_divergent_layer"] = _first_divergence(
            mel, cfg, weights, ref_layers)
    return report


def _first_divergence(mel, cfg, weights, ref_layers) -> int | None:
    """Index of the first block whose output disagrees beyond the limit."""
    grid = add_pos_embed(patchify(normalize(mel, weights.normalizer), cfg, weights),
                         weights)
    x = grid
    for layer in range(cfg.n_layers):
        x, _ = transformer_block(x, layer, cfg, weights)
        if np.max(np.abs(x.tokens - ref_layers[layer])) > DIVERGENCE_LIMIT:
            return layer
    return None


def compare_satw(satw_a, satw_b, seed: int = 0) -> float:
    """Engine-only logit comparison of two SATW files (0.0 when identical)."""
    arch = _infer_arch(satw_a)
    cfg = ModelConfig.from_variant(arch)
    rng = np.random.default_rng(seed)
    mel = MelSpectrogram(values=rng.normal(size=(cfg.n_mels, 192)))
    a, _ = forward_logits(mel, cfg, load(satw_a, cfg))
    b, _ = forward_logits(mel, cfg, load(satw_b, cfg))
    return float(np.max(np.abs(a - b)))
