"""Round-trip and corruption behavior of the two binary containers."""

import numpy as np
import pytest

from headprune.errors import ConfigError, FormatError
from headprune.pipeline.checkpoint import (
    Checkpoint,
    fnv1a64,
    load_checkpoint,
    save_checkpoint,
)
from headprune.pipeline.config import RunConfig, default_config
from headprune.pipeline.data import gen_dataset, read_dataset, write_dataset


class TestDatasetFile:
    def test_generation_is_deterministic(self, tmp_path):
        a = gen_dataset(seed=3, count=32, classes=4)
        b = gen_dataset(seed=3, count=32, classes=4)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        pa, pb = tmp_path / "a.apmd", tmp_path / "b.apmd"
        write_dataset(str(pa), *a, num_classes=4)
        write_dataset(str(pb), *b, num_classes=4)
        assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_changes_bytes(self, tmp_path):
        a = gen_dataset(seed=3, count=8, classes=4)
        b = gen_dataset(seed=4, count=8, classes=4)
        assert not np.array_equal(a[0], b[0])

    def test_round_trip(self, tmp_path):
        images, labels = gen_dataset(seed=1, count=16, classes=5)
        path = str(tmp_path / "d.apmd")
        write_dataset(path, images, labels, num_classes=5)
        r_images, r_labels, classes = read_dataset(path)
        np.testing.assert_array_equal(r_images, images)
        np.testing.assert_array_equal(r_labels, labels)
        assert classes == 5

    def test_empty_file_valid(self, tmp_path):
        path = str(tmp_path / "empty.apmd")
        write_dataset(path, np.zeros((0, 32, 32, 1), np.uint8),
                      np.zeros(0, np.uint8), num_classes=3)
        images, labels, classes = read_dataset(path)
        assert images.shape == (0, 32, 32, 1)
        assert labels.shape == (0,)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.apmd"
        images, labels = gen_dataset(seed=2, count=4, classes=2)
        write_dataset(str(path), images, labels, num_classes=2)
        blob = bytearray(path.read_bytes())
        blob[0] = ord(b"X")
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            read_dataset(str(path))

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.apmd"
        images, labels = gen_dataset(seed=2, count=4, classes=2)
        write_dataset(str(path), images, labels, num_classes=2)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(FormatError, match="length"):
            read_dataset(str(path))

    def test_out_of_range_label_rejected(self, tmp_path):
        path = tmp_path / "labels.apmd"
        images = np.zeros((2, 32, 32, 1), np.uint8)
        labels = np.array([0, 9], np.uint8)
        with pytest.raises(FormatError, match="range"):
            write_dataset(str(path), images, labels, num_classes=2)


class TestFnv:
    def test_known_vectors(self):
        # reference values for 64-bit FNV-1a
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8


def _checkpoint():
    cfg = default_config("hybrid")
    rng = np.random.default_rng(0)
    tensors = {
        "param.block0.q": rng.standard_normal((8, 8)).astype(np.float32),
        "ind.block0.qk": rng.uniform(0, 1, 8).astype(np.float32),
        "mask.block0.qk": rng.integers(0, 2, 8).astype(np.uint8),
        "opt.step": np.array([12.0], dtype=np.float32),
    }
    return Checkpoint(phase="searched", config=cfg.to_dict(), tensors=tensors)


class TestCheckpointFile:
    def test_round_trip_bit_exact(self, tmp_path):
        ckpt = _checkpoint()
        path = str(tmp_path / "c.apmc")
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert loaded.phase == "searched"
        assert loaded.config == ckpt.config
        assert set(loaded.tensors) == set(ckpt.tensors)
        for name, arr in ckpt.tensors.items():
            assert loaded.tensors[name].dtype == arr.dtype
            np.testing.assert_array_equal(loaded.tensors[name], arr)

    def test_save_is_deterministic(self, tmp_path):
        ckpt = _checkpoint()
        pa, pb = tmp_path / "a.apmc", tmp_path / "b.apmc"
        save_checkpoint(str(pa), ckpt)
        save_checkpoint(str(pb), ckpt)
        assert pa.read_bytes() == pb.read_bytes()

    def test_corrupted_payload_byte_fails_checksum(self, tmp_path):
        path = tmp_path / "c.apmc"
        save_checkpoint(str(path), _checkpoint())
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(str(path))

    def test_corrupted_checksum_detected(self, tmp_path):
        path = tmp_path / "c.apmc"
        save_checkpoint(str(path), _checkpoint())
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(str(path))

    def test_short_file_rejected(self, tmp_path):
        path = tmp_path / "tiny.apmc"
        path.write_bytes(b"APMC")
        with pytest.raises(FormatError, match="short"):
            load_checkpoint(str(path))

    def test_no_stray_tmp_file_after_save(self, tmp_path):
        path = tmp_path / "c.apmc"
        save_checkpoint(str(path), _checkpoint())
        assert not (tmp_path / "c.apmc.tmp").exists()


class TestConfigParsing:
    def test_round_trip(self):
        cfg = default_config("linear")
        again = RunConfig.from_json(cfg.to_json())
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_top_level_key_rejected(self):
        raw = default_config("hybrid").to_dict()
        raw["learning_rate"] = 1.0
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig.from_dict(raw)

    def test_unknown_nested_key_rejected(self):
        raw = default_config("hybrid").to_dict()
        raw["ablation"]["extra"] = True
        with pytest.raises(ConfigError, match="extra"):
            RunConfig.from_dict(raw)

    def test_unknown_model_key_rejected(self):
        raw = default_config("hybrid").to_dict()
        raw["model"]["depth"] = 3
        with pytest.raises(Exception, match="depth"):
            RunConfig.from_dict(raw)

    def test_invalid_rho_rejected(self):
        raw = default_config("hybrid").to_dict()
        raw["rho_target"] = 0.0
        with pytest.raises(ConfigError, match="rho"):
            RunConfig.from_dict(raw)

    def test_not_json_rejected(self):
        with pytest.raises(ConfigError, match="JSON"):
            RunConfig.from_json("{nope")
