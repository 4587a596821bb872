"""Analytic flops / peak-activation-memory estimates plus a measured hook.

Counting convention (documented so table comparisons stay apples-to-apples):
dense (parametric) matmuls count 2 flops per multiply-accumulate; the two
non-parametric attention contractions (scores and apply) are together
counted once, i.e. N * context * d per layer.  This matches the magnitude
convention of the reported Gflops columns, which exclude non-parametric
matmuls from double counting, while keeping the estimate monotone in both
token count and cache length.
"""

from __future__ import annotations

import json
import tracemalloc
from dataclasses import dataclass

from .model import ModelConfig

BYTES_F32 = 4


@dataclass(frozen=True)
class CostReport:
    flops: int
    peak_activation_bytes: int
    token_count: int
    context_length: int

    def __post_init__(self):
        if min(self.flops, self.peak_activation_bytes, self.token_count,
               self.context_length) < 0:
            raise ValueError("cost fields must be non-negative")

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    def to_json(self, **extra) -> str:
        body = {
            "flops": self.flops,
            "gflops": round(self.gflops, 4),
            "peak_activation_bytes": self.peak_activation_bytes,
            "token_count": self.token_count,
            "context_length": self.context_length,
        }
        body.update(extra)
        return json.dumps(body)

    def to_markdown(self, model_name: str = "") -> str:
        header = "| Model | #Token | M (bytes) | Gflops |\n|---|---:|---:|---:|"
        tokens = (f"{self.token_count}/{self.context_length - self.token_count}"
                  if self.context_length > self.token_count else str(self.token_count))
        row = (f"| {model_name} | {tokens} | {self.peak_activation_bytes:,} "
               f"| {self.gflops:.2f} |")
        return header + "\n" + row


def estimate_flops(cfg: ModelConfig, n_tokens: int, cache_len: int = 0) -> int:
    """Forward-pass flop estimate for one chunk of n_tokens with a cache."""
    if n_tokens < 0 or cache_len < 0:
        raise ValueError("token and cache counts must be non-negative")
    d = cfg.embed_dim
    n, ctx = n_tokens, n_tokens + cache_len
    dense_macs_per_layer = 4 * n * d * d + 2 * n * d * cfg.mlp_dim
    attn_flops_per_layer = n * ctx * d
    per_layer = 2 * dense_macs_per_layer + attn_flops_per_layer
    patch = 2 * n * d * cfg.patch_size * cfg.patch_size
    head = 2 * d * cfg.n_classes
    return cfg.n_layers * per_layer + patch + head


def estimate_peak_memory(cfg: ModelConfig, n_tokens: int, cache_len: int = 0) -> int:
    """Peak activation bytes (f32), parameters excluded, cache included.

    Accounting assumes every layer's buffers stay resident for the whole
    forward pass (how caching allocators behave in practice, and the
    convention behind the reported peak-memory columns): per layer the
    token buffer, Q/K/V projections, the per-head attention matrix and
    the MLP hidden activation, summed over layers, plus the K/V cache
    when streaming.
    """
    d = cfg.embed_dim
    n, ctx = n_tokens, n_tokens + cache_len
    per_layer = (
        n * d            # token buffer
        + 3 * n * d      # Q, K, V projections
        + cfg.n_heads * n * ctx  # attention matrix
        + n * cfg.mlp_dim        # MLP hidden
    )
    cache = 2 * cfg.n_layers * cache_len * d
    return BYTES_F32 * (cfg.n_layers * per_layer + cache)


def report(cfg: ModelConfig, n_tokens: int, cache_len: int = 0) -> CostReport:
    return CostReport(
        flops=estimate_flops(cfg, n_tokens, cache_len),
        peak_activation_bytes=estimate_peak_memory(cfg, n_tokens, cache_len),
        token_count=n_tokens,
        context_length=n_tokens + cache_len,
    )


TRACE_NOISE_FLOOR = 1024  # interpreter frame churn; below this reads as 0


def measured_peak_memory(run) -> int:
    """High-water mark of traced allocations while ``run()`` executes.

    Process-global (tracemalloc); callers must serialize measurements.
    Peaks below a 1 KiB noise floor (call-frame churn from invoking the
    closure itself) are reported as 0.
    """
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    try:
        baseline, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        run()
        _, peak = tracemalloc.get_traced_memory()
        above = peak - baseline
        return above if above >= TRACE_NOISE_FLOOR else 0
    finally:
        if not was_tracing:
            tracemalloc.stop()
