"""
Tests for the binary weight format and text configuration files.
"""

import struct
from dataclasses import replace

import numpy as np
import pytest

from attention.attention import SRA, LinearSRA
from backbone.config import all_variants, config_for, micro_config
from backbone.model import PyramidVisionTransformerV2, init_weights
from modelio.config_file import load_config, parse_config, render_config
from modelio.weights import WeightStore, decode_weights, encode_weights, load_weights, save_weights
from tensor.tensor import SeededNormal, Tensor, tensor_create
from utils.errors import (
    ConfigParseError,
    InvalidShapeError,
    WeightCorruptionError,
    WeightFormatError,
    WeightVersionError,
)
from utils.image_utils import random_image


# =============================================================================
# Weight store
# =============================================================================

class TestWeightStore:

    def test_duplicate_path(self):
        store = WeightStore([("a", tensor_create((2,)))])
        with pytest.raises(InvalidShapeError):
            store.add("a", tensor_create((2,)))

    def test_scope(self):
        store = WeightStore([("blk.attn.q.weight", tensor_create((2, 2)))])
        scope = store.scope("blk").scope("attn")
        assert "q.weight" in scope
        assert scope["q.weight"] is store["blk.attn.q.weight"]
        assert scope.get("k.weight") is None

    def test_replace_keeps_order(self):
        store = WeightStore([(name, tensor_create((1,))) for name in "abc"])
        swapped = store.replace("b", tensor_create((3,)))
        assert swapped.paths() == ["a", "b", "c"]
        assert swapped["b"].shape == (3,) and store["b"].shape == (1,)
        with pytest.raises(KeyError):
            store.replace("z", tensor_create((1,)))


# =============================================================================
# Binary format
# =============================================================================

class TestWeightFile:

    def test_rank_one_entry_size(self):
        payload = encode_weights(WeightStore([("w", tensor_create((4,), dtype=np.float32))]))
        assert len(payload) == 50
        assert payload[:4] == b"PVT2"
        assert struct.unpack_from("<IQ", payload, 4) == (1, 1)

    def test_rank_two_entry_size(self):
        payload = encode_weights(WeightStore([("w", tensor_create((2, 2), dtype=np.float32))]))
        assert len(payload) == 58

    def test_little_endian_data(self):
        payload = encode_weights(WeightStore([("w", Tensor(np.array([1.0, -2.0]), dtype=np.float64))]))
        assert payload[-16:] == struct.pack("<2d", 1.0, -2.0)

    def test_model_round_trip_is_bit_identical(self, tmp_path):
        store = init_weights(micro_config(), seed=9)
        target = tmp_path / "micro.pvt2"
        written = save_weights(store, target)
        assert written == target.stat().st_size
        loaded = load_weights(target)
        assert loaded.bit_equal(store)
        assert loaded.paths() == store.paths()

        image = random_image(32, seed=2)
        before = PyramidVisionTransformerV2(micro_config(), weights=store).classify(image).numpy()
        after = PyramidVisionTransformerV2(micro_config(), weights=loaded).classify(image).numpy()
        assert before.tobytes() == after.tobytes()

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(5,), (2, 3), (2, 3, 4), (2, 1, 3, 2)])
    def test_round_trip_every_rank(self, tmp_path, dtype, shape):
        store = WeightStore([("w", tensor_create(shape, SeededNormal(seed=len(shape)), dtype=dtype))])
        target = tmp_path / "w.pvt2"
        save_weights(store, target)
        loaded = load_weights(target)
        assert loaded.bit_equal(store)
        assert loaded["w"].dtype == np.dtype(dtype)
        assert loaded["w"].shape == shape

    def test_mixed_dtypes_preserved(self):
        store = WeightStore([
            ("a", tensor_create((2, 3), SeededNormal(1), dtype=np.float32)),
            ("b", tensor_create((5,), SeededNormal(2), dtype=np.float64)),
        ])
        decoded = decode_weights(encode_weights(store))
        assert decoded["a"].dtype == np.float32 and decoded["b"].dtype == np.float64
        assert decoded.bit_equal(store)

    def test_unicode_path(self):
        store = WeightStore([("stufe.ä", tensor_create((1,)))])
        assert decode_weights(encode_weights(store)).paths() == ["stufe.ä"]

    def test_bad_magic(self):
        payload = bytearray(encode_weights(WeightStore([("w", tensor_create((4,)))])))
        payload[:4] = b"PVT1"
        with pytest.raises(WeightFormatError, match="magic"):
            decode_weights(bytes(payload))

    def test_unsupported_version(self):
        payload = bytearray(encode_weights(WeightStore([("w", tensor_create((4,)))])))
        payload[4:8] = struct.pack("<I", 2)
        with pytest.raises(WeightVersionError):
            decode_weights(bytes(payload))

    @pytest.mark.parametrize("cut", [1, 10, 16, 30])
    def test_truncated(self, cut):
        payload = encode_weights(WeightStore([("w", tensor_create((4,)))]))
        with pytest.raises(WeightCorruptionError):
            decode_weights(payload[:-cut])

    def test_trailing_bytes(self):
        payload = encode_weights(WeightStore([("w", tensor_create((4,)))]))
        with pytest.raises(WeightCorruptionError, match="trailing"):
            decode_weights(payload + b"\0")

    def test_duplicate_entry(self):
        entry = encode_weights(WeightStore([("w", tensor_create((4,)))]))[16:]
        payload = b"PVT2" + struct.pack("<IQ", 1, 2) + entry + entry
        with pytest.raises(WeightCorruptionError, match="duplicate"):
            decode_weights(payload)

    def test_unknown_dtype_tag(self):
        payload = bytearray(encode_weights(WeightStore([("w", tensor_create((4,)))])))
        payload[16 + 4 + 1] = 7
        with pytest.raises(WeightCorruptionError, match="dtype"):
            decode_weights(bytes(payload))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError, match="missing.pvt2"):
            load_weights(tmp_path / "missing.pvt2")


# =============================================================================
# Configuration files
# =============================================================================

class TestConfigFile:

    @pytest.mark.parametrize("name", all_variants())
    def test_render_round_trip(self, name):
        config = config_for(name)
        assert parse_config(render_config(config)) == config

    def test_round_trip_with_flags(self):
        config = replace(micro_config(num_classes=7), conv_ffn=False, linear_sra_refine=False)
        assert parse_config(render_config(config)) == config

    def test_variant(self):
        assert parse_config("variant = B0\n") == config_for("B0")

    def test_overrides(self):
        config = parse_config(
            "variant = B2   # base grid\n"
            "\n"
            "name = b2-wide-head\n"
            "num_classes = 21\n"
            "conv_ffn = off\n"
            "stage1.attn = linear:5\n"
            "stage3.L = 4\n"
        )
        b2 = config_for("B2")
        assert config.variant_name == "b2-wide-head"
        assert config.num_classes == 21 and not config.conv_ffn
        assert config.stages[0].attn == LinearSRA(5)
        assert config.stages[2].depth == 4
        assert config.stages[1] == b2.stages[1] and config.stages[3] == b2.stages[3]

    def test_custom_stages(self):
        text = (
            "stage1.S = 4\nstage1.C = 8\nstage1.L = 1\nstage1.attn = sra:2\nstage1.N = 1\nstage1.E = 2\n"
            "stage2.S = 2\nstage2.C = 16\nstage2.L = 1\nstage2.attn = sra:1\nstage2.N = 2\nstage2.E = 2\n"
            "num_classes = 10\n"
        )
        config = parse_config(text)
        assert config.variant_name == "custom"
        assert config.stages == micro_config().stages
        assert config.stages[1].attn == SRA(1)

    def test_load_from_file(self, tmp_path):
        target = tmp_path / "micro.cfg"
        target.write_text(render_config(micro_config()), encoding="utf-8")
        assert load_config(target) == micro_config()

    @pytest.mark.parametrize("text, line_no, fragment", [
        ("variant = B2\nvariant = B3\n", 2, "already set on line 1"),
        ("variant = B2\ncolour = red\n", 2, "unknown key"),
        ("variant = B9\n", 1, "unknown variant"),
        ("variant = B2\n\nstage5.C = 8\n", 3, "stage index"),
        ("variant = B2\nstage1.Q = 8\n", 2, "unknown stage field"),
        ("variant = B2\nstage1.C = -4\n", 2, "positive"),
        ("variant = B2\nstage1.L = two\n", 2, "integer"),
        ("variant = B2\nconv_ffn = maybe\n", 2, "true or false"),
        ("variant = B2\nstage2.attn = pool:3\n", 2, "attention"),
        ("variant = B2\njust text\n", 2, "key = value"),
        ("variant = B2\nstage1.S = 3\n", 2, "stride"),
        ("variant = B2\nstage2.N = 3\n", 2, "heads"),
        ("stage2.S = 2\n", 1, "stage1 is missing"),
        ("stage1.S = 4\nstage1.C = 8\n", 1, "missing L"),
        ("variant = B2\n\n\nstage2.C = 32\n", 4, "nondecreasing"),
        ("variant = B2\nnum_classes = 10\nstage1.S = 2\n", 3, "strides"),
        ("variant = B2\nstage1.C = 32\nstage01.C = 96\n", 3, "leading zero"),
    ])
    def test_parse_errors(self, text, line_no, fragment):
        with pytest.raises(ConfigParseError) as excinfo:
            parse_config(text)
        assert excinfo.value.line_no == line_no
        assert fragment in str(excinfo.value)

    def test_empty_file(self):
        with pytest.raises(ConfigParseError):
            parse_config("# nothing here\n")
