"""Independent torch forward pass over an *unconverted* state_dict.

This is the second implementation for the logit crosscheck: it consumes the
source checkpoint's own fused-qkv layout directly, so a mapping bug in the
converter cannot cancel out.  Everything runs in float64.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

LAYERNORM_EPS = 1e-6


def _t(state: dict[str, np.ndarray], name: str) -> torch.Tensor:
    if name not in state:
        raise KeyError(f"reference forward needs tensor {name!r}")
    return torch.from_numpy(state[name]).double()


def reference_logits(state: dict[str, np.ndarray], cfg,
                     mel: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward one mel chunk; returns (logits, per-block token outputs)."""
    d, heads, p = cfg.embed_dim, cfg.n_heads, cfg.patch_size
    x = torch.from_numpy(mel).double()[None, None]  # (1, 1, 64, T)
    x = F.conv2d(x, _t(state, "patch_embed.proj.weight"),
                 _t(state, "patch_embed.proj.bias"), stride=p)
    nf, nt = x.shape[2], x.shape[3]
    # token order: index = t * n_freq_patches + f
    x = x[0].permute(2, 1, 0).reshape(nt * nf, d)

    time_pos = _t(state, "time_pos_embed").reshape(-1, d)[:nt]
    freq_pos = _t(state, "freq_pos_embed").reshape(-1, d)
    x = x + (time_pos[:, None, :] + freq_pos[None, :, :]).reshape(nt * nf, d)

    hd = d // heads
    scale = 1.0 / math.sqrt(hd)
    layer_outputs: list[np.ndarray] = []
    for l in range(cfg.n_layers):
        pre = f"blocks.{l}."
        y = F.layer_norm(x, (d,), _t(state, pre + "norm1.weight"),
                         _t(state, pre + "norm1.bias"), eps=LAYERNORM_EPS)
        qkv = y @ _t(state, pre + "attn.qkv.weight").T + _t(state, pre + "attn.qkv.bias")
        q, k, v = (part.view(-1, heads, hd).transpose(0, 1)
                   for part in qkv.split(d, dim=-1))
        attn = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1) @ v
        attn = attn.transpose(0, 1).reshape(-1, d)
        x = x + attn @ _t(state, pre + "attn.proj.weight").T \
              + _t(state, pre + "attn.proj.bias")
        y = F.layer_norm(x, (d,), _t(state, pre + "norm2.weight"),
                         _t(state, pre + "norm2.bias"), eps=LAYERNORM_EPS)
        y = F.gelu(y @ _t(state, pre + "mlp.fc1.weight").T
                   + _t(state, pre + "mlp.fc1.bias"))
        x = x + y @ _t(state, pre + "mlp.fc2.weight").T + _t(state, pre + "mlp.fc2.bias")
        layer_outputs.append(x.numpy().copy())

    x = F.layer_norm(x, (d,), _t(state, "norm.weight"), _t(state, "norm.bias"),
                     eps=LAYERNORM_EPS)
    pooled = x.mean(dim=0)
    logits = pooled @ _t(state, "head.weight").T + _t(state, "head.bias")
    return logits.numpy(), layer_outputs
