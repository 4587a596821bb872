import numpy as np
import pytest
import torch

from streamtag import ModelConfig, seeded_init


def fuse_to_checkpoint(weights, cfg) -> dict[str, torch.Tensor]:
    """Rewrite engine weights in the fused-qkv source layout."""
    def t(name):
        return torch.from_numpy(weights.raw(name).copy())

    state = {
        "patch_embed.proj.weight": t("patch_embed.weight"),
        "patch_embed.proj.bias": t("patch_embed.bias"),
        "time_pos_embed": t("pos_embed.time")[None],  # [1, 64, d]
        "freq_pos_embed": t("pos_embed.freq")[None],  # [1, 4, d]
        "norm.weight": t("norm.weight"),
        "norm.bias": t("norm.bias"),
        "head.weight": t("head.weight"),
        "head.bias": t("head.bias"),
    }
    for l in range(cfg.n_layers):
        pre = f"blocks.{l}."
        state[pre + "attn.qkv.weight"] = torch.cat(
            [t(pre + f"attn.{p}.weight") for p in ("wq", "wk", "wv")])
        state[pre + "attn.qkv.bias"] = torch.cat(
            [t(pre + f"attn.{p}.bias") for p in ("wq", "wk", "wv")])
        state[pre + "attn.proj.weight"] = t(pre + "attn.wo.weight")
        state[pre + "attn.proj.bias"] = t(pre + "attn.wo.bias")
        for name in ("norm1.weight", "norm1.bias", "norm2.weight", "norm2.bias",
                     "mlp.fc1.weight", "mlp.fc1.bias",
                     "mlp.fc2.weight", "mlp.fc2.bias"):
            state[pre + name] = t(pre + name)
    return state


@pytest.fixture(scope="session")
def cfg_tiny():
    return ModelConfig.from_variant("tiny")


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, cfg_tiny):
    """Synthetic source checkpoint in the fused-qkv layout."""
    weights = seeded_init(cfg_tiny, 4321)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    torch.save(fuse_to_checkpoint(weights, cfg_tiny), path)
    return str(path)
