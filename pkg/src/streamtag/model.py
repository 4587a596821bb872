"""ViT encoder over mel patches with cache-aware self-attention.

The forward path is patchify -> position embeddings -> 12 pre-norm
transformer blocks -> final norm -> pooled sigmoid head.  Each block's
attention can prepend cached key/value projections from the previous
chunk, which is the whole streaming trick: queries come from the current
chunk only, keys/values from [cache || current].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import kernels
from .frontend import N_MELS, MelSpectrogram, NormalizerParams, normalize

N_CLASSES = 527
LAYERNORM_EPS = 1e-6

_VARIANTS = {
    "tiny": (192, 3),
    "small": (384, 6),
    "base": (768, 12),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "tiny"
    embed_dim: int = 192
    n_heads: int = 3
    n_layers: int = 12
    patch_size: int = 16
    mlp_ratio: int = 4
    n_classes: int = N_CLASSES
    pooling: str = "mean"
    n_mels: int = N_MELS
    max_time_patches: int = 64  # 1024 frames = 10.24 s at 100 fps

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if (self.embed_dim, self.n_heads) != _VARIANTS[self.variant]:
            raise ValueError(
                f"(embed_dim, n_heads) must be {_VARIANTS[self.variant]} "
                f"for {self.variant}"
            )
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.n_mels % self.patch_size:
            raise ValueError("patch_size must divide n_mels")
        if self.pooling not in ("mean", "cls"):
            raise ValueError("pooling must be 'mean' or 'cls'")

    @classmethod
    def from_variant(cls, variant: str, **kw) -> "ModelConfig":
        d, h = _VARIANTS[variant]
        return cls(variant=variant, embed_dim=d, n_heads=h, **kw)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def n_freq_patches(self) -> int:
        return self.n_mels // self.patch_size

    @property
    def mlp_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape for a config (required tensors only)."""
    d, p = cfg.embed_dim, cfg.patch_size
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (d, 1, p, p),
        "patch_embed.bias": (d,),
        "pos_embed.time": (cfg.max_time_patches, d),
        "pos_embed.freq": (cfg.n_freq_patches, d),
    }
    for l in range(cfg.n_layers):
        pre = f"blocks.{l}."
        shapes[pre + "norm1.weight"] = (d,)
        shapes[pre + "norm1.bias"] = (d,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[pre + f"attn.{proj}.weight"] = (d, d)
            shapes[pre + f"attn.{proj}.bias"] = (d,)
        shapes[pre + "norm2.weight"] = (d,)
        shapes[pre + "norm2.bias"] = (d,)
        shapes[pre + "mlp.fc1.weight"] = (cfg.mlp_dim, d)
        shapes[pre + "mlp.fc1.bias"] = (cfg.mlp_dim,)
        shapes[pre + "mlp.fc2.weight"] = (d, cfg.mlp_dim)
        shapes[pre + "mlp.fc2.bias"] = (d,)
    shapes["norm.weight"] = (d,)
    shapes["norm.bias"] = (d,)
    shapes["head.weight"] = (cfg.n_classes, d)
    shapes["head.bias"] = (cfg.n_classes,)
    return shapes


def optional_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "frontend_norm.mean": (cfg.n_mels,),
        "frontend_norm.var": (cfg.n_mels,),
        "frontend_norm.weight": (cfg.n_mels,),
        "frontend_norm.bias": (cfg.n_mels,),
        "cls_token": (cfg.embed_dim,),
    }
    return shapes


class WeightSet:
    """Immutable bag of named float32 parameter tensors for one config.

    Linear layers follow the (out_features, in_features) weight layout,
    applied as ``x @ W.T + b``.  Tensors are stored float32 (the file
    payload dtype); float64 views used by the forward pass are cached.
    """

    def __init__(self, cfg: ModelConfig, tensors: dict[str, np.ndarray]):
        required = expected_shapes(cfg)
        optional = optional_shapes(cfg)
        store: dict[str, np.ndarray] = {}
        for name, arr in tensors.items():
            if name in required:
                want = required[name]
            elif name in optional:
                want = optional[name]
            else:
                raise ValueError(f"unexpected tensor {name!r}")
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            if arr.shape != want:
                raise ValueError(
                    f"tensor {name!r} has shape {arr.shape}, expected {want}"
                )
            if not np.isfinite(arr).all():
                raise ValueError(f"tensor {name!r} contains non-finite values")
            store[name] = arr
        missing = sorted(set(required) - set(store))
        if missing:
            raise ValueError(f"missing required tensor {missing[0]!r}")
        self.cfg = cfg
        self._tensors = store
        self._f64: dict[str, np.ndarray] = {}

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def raw(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __getitem__(self, name: str) -> np.ndarray:
        # float64 compute copy, cached
        out = self._f64.get(name)
        if out is None:
            out = self._tensors[name].astype(np.float64)
            out.flags.writeable = False
            self._f64[name] = out
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    @property
    def normalizer(self) -> NormalizerParams:
        if "frontend_norm.mean" in self._tensors:
            return NormalizerParams(
                mean=self["frontend_norm.mean"],
                var=self["frontend_norm.var"],
                gamma=self["frontend_norm.weight"],
                beta=self["frontend_norm.bias"],
            )
        return NormalizerParams.identity()


@dataclass
class TokenGrid:
    """N x d patch tokens, frequency-major: token index = t * n_freq + f."""

    tokens: np.ndarray
    n_freq_patches: int
    n_time_patches: int

    def __post_init__(self):
        n, _ = self.tokens.shape
        if n != self.n_freq_patches * self.n_time_patches:
            raise ValueError("token count does not match the patch grid")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


@dataclass
class LayerKV:
    """Cached key/value projections, shape (n_heads, context, head_dim)."""

    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.keys.shape != self.values.shape:
            raise ValueError("keys and values must have identical shape")

    @property
    def context_len(self) -> int:
        return self.keys.shape[1]


def patchify(mel: MelSpectrogram, cfg: ModelConfig, w: WeightSet) -> TokenGrid:
    """Non-overlapping PxP convolution over the spectrogram.

    Time frames beyond the last full patch column are dropped, so the
    token count is n_freq_patches * floor(T / P).
    """
    p = cfg.patch_size
    t_frames = mel.n_frames
    if t_frames < p:
        raise ValueError(f"need at least {p} mel frames, got {t_frames}")
    n_time = t_frames // p
    n_freq = cfg.n_freq_patches
    vals = mel.values[:, : n_time * p]
    # patches[f, i, t, j] = vals[f*P + i, t*P + j]
    patches = vals.reshape(n_freq, p, n_time, p)
    kern = w["patch_embed.weight"][:, 0]  # (d, P, P)
    tokens = np.einsum("dij,fitj->tfd", kern, patches, optimize=True)
    tokens = tokens.reshape(n_time * n_freq, cfg.embed_dim) + w["patch_embed.bias"]
    return TokenGrid(tokens=tokens, n_freq_patches=n_freq, n_time_patches=n_time)


def add_pos_embed(grid: TokenGrid, w: WeightSet) -> TokenGrid:
    """Add separable absolute position embeddings, local to the chunk."""
    time_table = w["pos_embed.time"]
    freq_table = w["pos_embed.freq"]
    if grid.n_time_patches > time_table.shape[0]:
        raise ValueError(
            f"chunk spans {grid.n_time_patches} time patches but the position "
            f"table holds {time_table.shape[0]}"
        )
    nt, nf = grid.n_time_patches, grid.n_freq_patches
    d = grid.tokens.shape[1]
    tok = grid.tokens.reshape(nt, nf, d) + time_table[:nt, None, :] + freq_table[None, :nf, :]
    return TokenGrid(tokens=tok.reshape(nt * nf, d), n_freq_patches=nf, n_time_patches=nt)


def layer_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LAYERNORM_EPS) * weight + bias


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    hd = d // n_heads
    return np.ascontiguousarray(x.reshape(n, n_heads, hd).transpose(1, 0, 2))


def _attend_tokens(
    x: np.ndarray, layer: int, cfg: ModelConfig, w: WeightSet, cache: LayerKV | None
) -> tuple[np.ndarray, LayerKV]:
    pre = f"blocks.{layer}.attn."
    n = x.shape[0]
    q = _split_heads(x @ w[pre + "wq.weight"].T + w[pre + "wq.bias"], cfg.n_heads)
    k_cur = _split_heads(x @ w[pre + "wk.weight"].T + w[pre + "wk.bias"], cfg.n_heads)
    v_cur = _split_heads(x @ w[pre + "wv.weight"].T + w[pre + "wv.bias"], cfg.n_heads)
    if cache is not None:
        if cache.keys.shape[0] != cfg.n_heads or cache.keys.shape[2] != cfg.head_dim:
            raise ValueError("cache head dimensions do not match the config")
        k_ctx = np.ascontiguousarray(np.concatenate([cache.keys, k_cur], axis=1))
        v_ctx = np.ascontiguousarray(np.concatenate([cache.values, v_cur], axis=1))
    else:
        k_ctx, v_ctx = k_cur, v_cur
    expected_ctx = n + (cache.context_len if cache is not None else 0)
    assert k_ctx.shape[1] == expected_ctx
    scale = 1.0 / math.sqrt(cfg.head_dim)
    heads = kernels.attention_heads(q, k_ctx, v_ctx, scale)
    merged = np.ascontiguousarray(heads.transpose(1, 0, 2)).reshape(n, cfg.embed_dim)
    out = merged @ w[pre + "wo.weight"].T + w[pre + "wo.bias"]
    return out, LayerKV(keys=k_cur, values=v_cur)


def attention(
    x: TokenGrid, layer: int, cfg: ModelConfig, w: WeightSet, cache: LayerKV | None = None
) -> tuple[TokenGrid, LayerKV]:
    """Multi-head self-attention with optional cached context.

    Queries come from the current tokens only; keys/values are the cache
    (previous chunk) concatenated with the current projections.  The
    returned LayerKV holds the *current* chunk's K/V, i.e. the cache for
    the next chunk.
    """
    out, kv = _attend_tokens(x.tokens, layer, cfg, w, cache)
    grid = TokenGrid(out, x.n_freq_patches, x.n_time_patches)
    return grid, kv


def _block_tokens(
    x: np.ndarray, layer: int, cfg: ModelConfig, w: WeightSet, cache: LayerKV | None
) -> tuple[np.ndarray, LayerKV]:
    pre = f"blocks.{layer}."
    attn_out, kv = _attend_tokens(
        layer_norm(x, w[pre + "norm1.weight"], w[pre + "norm1.bias"]),
        layer, cfg, w, cache,
    )
    h = x + attn_out
    y = layer_norm(h, w[pre + "norm2.weight"], w[pre + "norm2.bias"])
    y = gelu(y @ w[pre + "mlp.fc1.weight"].T + w[pre + "mlp.fc1.bias"])
    y = y @ w[pre + "mlp.fc2.weight"].T + w[pre + "mlp.fc2.bias"]
    return h + y, kv


def transformer_block(
    x: TokenGrid, layer: int, cfg: ModelConfig, w: WeightSet, cache: LayerKV | None = None
) -> tuple[TokenGrid, LayerKV]:
    """Pre-norm residual block: x + Attn(LN1(x)), then + MLP(LN2(.))."""
    out, kv = _block_tokens(x.tokens, layer, cfg, w, cache)
    return TokenGrid(out, x.n_freq_patches, x.n_time_patches), kv


def classify(tokens: np.ndarray, cfg: ModelConfig, w: WeightSet) -> np.ndarray:
    """Pool final-layer tokens and apply the sigmoid head; returns (527,)."""
    logits = classify_logits(tokens, cfg, w)
    return 1.0 / (1.0 + np.exp(-logits))


def classify_logits(tokens: np.ndarray, cfg: ModelConfig, w: WeightSet) -> np.ndarray:
    if cfg.pooling == "cls":
        pooled = tokens[0]
    else:
        pooled = tokens.mean(axis=0)
    return pooled @ w["head.weight"].T + w["head.bias"]


def forward_logits(
    mel: MelSpectrogram,
    cfg: ModelConfig,
    w: WeightSet,
    caches: list[LayerKV | None] | None = None,
) -> tuple[np.ndarray, list[LayerKV]]:
    """Full encoder forward on one chunk; returns (logits, new caches)."""
    if caches is None:
        caches = [None] * cfg.n_layers
    if len(caches) != cfg.n_layers:
        raise ValueError("cache list length must equal n_layers")
    grid = add_pos_embed(patchify(normalize(mel, w.normalizer), cfg, w), w)
    x = grid.tokens
    if cfg.pooling == "cls":
        if "cls_token" not in w:
            raise ValueError("pooling='cls' requires a cls_token tensor")
        x = np.concatenate([w["cls_token"][None, :], x], axis=0)
    new_caches: list[LayerKV] = []
    for layer in range(cfg.n_layers):
        x, kv = _block_tokens(x, layer, cfg, w, caches[layer])
        new_caches.append(kv)
    x = layer_norm(x, w["norm.weight"], w["norm.bias"])
    return classify_logits(x, cfg, w), new_caches


def forward(
    mel: MelSpectrogram,
    cfg: ModelConfig,
    w: WeightSet,
    caches: list[LayerKV | None] | None = None,
) -> tuple[np.ndarray, list[LayerKV]]:
    """As forward_logits, but returns per-class sigmoid probabilities."""
    logits, new_caches = forward_logits(mel, cfg, w, caches)
    return 1.0 / (1.0 + np.exp(-logits)), new_caches
