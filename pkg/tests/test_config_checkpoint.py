"""Config text format and binary checkpoint round-trips."""

import numpy as np
import pytest

from twostream.backbone import BackboneConfig
from twostream.checkpoint import CHECKPOINT_MAGIC, load_checkpoint, save_checkpoint
from twostream.config import load_config, parse_config, serialize_config
from twostream.errors import ConfigError, DataError
from twostream.model import build_model, forward_clip


class TestConfigFormat:
    def test_defaults_from_empty(self):
        cfg = parse_config("")
        assert cfg.model.num_categories == 6
        assert cfg.training.lambda_weight == 2.0
        assert cfg.flow.alpha == 15.0
        assert cfg.backbone.stage_channels == (16, 32, 64)

    def test_parse_values(self):
        text = """
        [model]
        num_categories = 4
        time_step = 5

        [backbone]
        input_size = 16
        stage_channels = 4, 8
        convs_per_stage = 1, 1

        [training]
        lambda_weight = 1.5
        seed = 9
        """
        cfg = parse_config(text)
        assert cfg.model.num_categories == 4
        assert cfg.backbone.input_size == (16, 16)
        assert cfg.backbone.stage_channels == (4, 8)
        assert cfg.training.lambda_weight == 1.5
        assert cfg.training.seed == 9

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[nonsense]\nx = 1\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("[model]\nnum_categories = 3\ntypo_key = 1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("[model]\ntime_step = 2\ntime_step = 3\n")

    def test_key_outside_section_rejected(self):
        with pytest.raises(ConfigError, match="outside"):
            parse_config("num_categories = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="integer"):
            parse_config("[model]\nnum_categories = many\n")

    def test_invalid_component_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[flow]\nalpha = -3.0\n")

    def test_serialize_parse_fixed_point(self):
        cfg = parse_config("[training]\nlambda_weight = 0.25\nseed = 3\n[model]\ntime_step = 4\n")
        text1 = serialize_config(cfg)
        cfg2 = parse_config(text1)
        text2 = serialize_config(cfg2)
        assert text1 == text2
        assert cfg2 == cfg

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# comment\n\n[model]\n# another\nnum_categories = 3\n")
        assert cfg.model.num_categories == 3

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "absent.cfg")


def tiny_model(seed=0, representation="lstm"):
    cfg = BackboneConfig(input_size=(8, 8), stage_channels=(4, 8), convs_per_stage=1)
    return build_model(3, 2, backbone_config=cfg, seed=seed, lstm_hidden=8,
                       representation=representation)


def tiny_pairs(rng):
    return [(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8),
             rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)) for _ in range(2)]


class TestCheckpoint:
    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(tiny_model(), path)
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC == b"RHAR"

    def test_roundtrip_outputs_close(self, tmp_path):
        model = tiny_model(seed=11)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        rng = np.random.default_rng(0)
        for _ in range(20):
            pairs = tiny_pairs(rng)
            a = forward_clip(model, pairs).final_probs.data
            b = forward_clip(loaded, pairs).final_probs.data
            assert np.abs(a - b).max() < 1e-6

    def test_roundtrip_is_32bit_exact(self, tmp_path):
        model = tiny_model(seed=4)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for (na, pa), (nb, pb) in zip(model.parameters(), loaded.parameters()):
            assert na == nb
            np.testing.assert_array_equal(pb.data, pa.data.astype(np.float32).astype(np.float64))

    def test_save_load_save_identical_bytes(self, tmp_path):
        model = tiny_model(seed=2)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_architecture_preserved(self, tmp_path):
        model = tiny_model(representation="sum")
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.representation == "sum"
        assert loaded.num_categories == 3
        assert loaded.time_step == 2
        assert loaded.lstm1.hidden == 8
        assert loaded.backbone_frame.config.stage_channels == (4, 8)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(tiny_model(), path)
        payload = b"XXXX" + path.read_bytes()[4:]
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(payload)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(bad)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(tiny_model(), path)
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(bad)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError, match="does not exist"):
            load_checkpoint(tmp_path / "absent.ckpt")
