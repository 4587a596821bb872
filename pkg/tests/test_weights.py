import json
import struct

import numpy as np
import pytest

from streamtag import ModelConfig, load, save, seeded_init
from streamtag.weights import (
    WeightFormatError,
    canonical_order,
    read_header,
)

TABLE_SIZES_M = {"tiny": 5.6, "small": 22, "base": 86}


class TestSaveLoad:
    def test_roundtrip_bitwise(self, cfg_tiny, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        loaded = load(path, cfg_tiny)
        for name in weights_tiny.names():
            assert np.array_equal(loaded.raw(name), weights_tiny.raw(name)), name
        # save(load(...)) byte-identical
        path2 = tmp_path / "t2.satw"
        save(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_lists_patch_kernel_shape(self, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        meta = read_header(path)
        shapes = {e["name"]: e["shape"] for e in meta["tensors"]}
        assert shapes["patch_embed.weight"] == [192, 1, 16, 16]
        assert all(e["dtype"] == "f32" for e in meta["tensors"])
        assert all(e["byte_offset"] % 64 == 0 for e in meta["tensors"])

    def test_bad_magic(self, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"WRNG"
        path.write_bytes(blob)
        with pytest.raises(WeightFormatError, match="magic"):
            load(path, weights_tiny.cfg)

    def test_unknown_version(self, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(blob)
        with pytest.raises(WeightFormatError, match="version"):
            load(path, weights_tiny.cfg)

    def test_config_mismatch_names_tensor(self, tmp_path):
        base = seeded_init(ModelConfig.from_variant("base"), 0)
        path = tmp_path / "b.satw"
        save(base, path)
        with pytest.raises(WeightFormatError, match=r"patch_embed\.weight"):
            load(path, ModelConfig.from_variant("tiny"))

    def test_missing_normalizer_gives_identity(self, cfg_tiny, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        loaded = load(path, cfg_tiny)
        norm = loaded.normalizer
        assert np.all(norm.mean == 0) and np.all(norm.var == 1)
        assert np.all(norm.gamma == 1) and np.all(norm.beta == 0)

    def test_truncated_payload(self, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 1000])
        with pytest.raises(WeightFormatError, match="truncated"):
            load(path, weights_tiny.cfg)

    def test_corrupt_header_fuzz(self, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        blob = path.read_bytes()
        rng = np.random.default_rng(0)
        for _ in range(20):
            cut = int(rng.integers(0, len(blob)))
            path.write_bytes(blob[:cut])
            with pytest.raises(WeightFormatError):
                load(path, weights_tiny.cfg)

    def test_overlapping_tensors_rejected(self, weights_tiny, tmp_path):
        path = tmp_path / "t.satw"
        save(weights_tiny, path)
        meta = read_header(path)
        meta["tensors"][1]["byte_offset"] = meta["tensors"][0]["byte_offset"]
        header = json.dumps({"tensors": meta["tensors"]}).encode()
        blob = path.read_bytes()
        _, old_len = struct.unpack("<IQ", blob[4:16])
        payload_start = (16 + old_len + 63) // 64 * 64
        new_start = (16 + len(header) + 63) // 64 * 64
        out = b"SATW" + struct.pack("<IQ", 1, len(header)) + header
        out += b"\0" * (new_start - len(out)) + blob[payload_start:]
        path.write_bytes(out)
        with pytest.raises(WeightFormatError, match="overlap|duplicate"):
            load(path, weights_tiny.cfg)

    @pytest.mark.parametrize("variant", ["tiny", "small", "base"])
    def test_param_counts_match_published_sizes(self, variant):
        w = seeded_init(ModelConfig.from_variant(variant), 0)
        want = TABLE_SIZES_M[variant] * 1e6
        assert abs(w.param_count() - want) / want < 0.05


class TestSeededInit:
    def test_same_seed_bitwise_identical(self, cfg_tiny):
        a = seeded_init(cfg_tiny, 99)
        b = seeded_init(cfg_tiny, 99)
        for name in a.names():
            assert np.array_equal(a.raw(name), b.raw(name))

    def test_different_seeds_differ(self, cfg_tiny):
        a = seeded_init(cfg_tiny, 1)
        b = seeded_init(cfg_tiny, 2)
        assert any(not np.array_equal(a.raw(n), b.raw(n)) for n in a.names())

    def test_weight_statistics(self, cfg_tiny, weights_tiny):
        for layer in (0, 5, 11):
            t = weights_tiny.raw(f"blocks.{layer}.attn.wq.weight")
            # sample mean within 3 standard errors of zero
            assert abs(t.mean()) <= 3 * 0.02 / np.sqrt(t.size)
            assert abs(t).max() <= 0.04 + 1e-9

    def test_norms_identity_biases_zero(self, weights_tiny):
        assert np.all(weights_tiny.raw("blocks.0.norm1.weight") == 1)
        assert np.all(weights_tiny.raw("blocks.0.norm1.bias") == 0)
        assert np.all(weights_tiny.raw("blocks.3.attn.wq.bias") == 0)
        assert np.all(weights_tiny.raw("head.bias") == 0)

    def test_canonical_order_required_first(self, cfg_tiny, weights_tiny):
        order = canonical_order(cfg_tiny, weights_tiny.names())
        assert order[0] == "patch_embed.weight"
        assert order[-1] == "head.bias"
