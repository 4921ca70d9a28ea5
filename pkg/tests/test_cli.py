"""CLI subcommands: outputs, exit codes, and byte-reproducibility."""

import filecmp
import hashlib
from pathlib import Path

import numpy as np
import pytest

from twostream.cli import main
from twostream.data import read_manifest
from twostream.flow import read_flo
from twostream.imageio import read_pgm, read_ppm, write_ppm

TINY_CONFIG = """
[model]
num_categories = 4
time_step = 3
lstm_hidden = 8
seed = 0

[backbone]
input_size = 16
stage_channels = 4, 8
convs_per_stage = 1, 1

[flow]
iterations = 30
pyramid_levels = 2

[synth]
num_motion_categories = 2
num_appearance_categories = 2
train_clips_per_category = 2
test_clips_per_category = 1
frame_size = 16
frames_per_clip = 4
noise_std = 0.01
seed = 0

[training]
batch_size = 2
max_epochs = 2
seed = 0
"""


def tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth + train run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.cfg"
    config.write_text(TINY_CONFIG)
    data_dir = root / "data"
    assert main(["synth", "--config", str(config), "--out", str(data_dir)]) == 0
    ckpt = root / "model.ckpt"
    assert main(["train", "--config", str(config), "--data", str(data_dir / "manifest.tsv"),
                 "--out", str(ckpt)]) == 0
    return {"root": root, "config": config, "data": data_dir, "ckpt": ckpt}


class TestSynth:
    def test_writes_expected_clip_count(self, workspace):
        entries = read_manifest(workspace["data"] / "manifest.tsv")
        assert len(entries) == 4 * 2 + 4 * 1
        assert sum(1 for _, s in entries if s == "train") == 8

    def test_byte_identical_rerun(self, workspace, tmp_path):
        second = tmp_path / "data2"
        assert main(["synth", "--config", str(workspace["config"]), "--out", str(second)]) == 0
        a = tree_digest(workspace["data"])
        b = tree_digest(second)
        assert a == b

    def test_missing_config_exit_code_names_path(self, tmp_path, capsys):
        rc = main(["synth", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "d")])
        assert rc == 1
        assert "absent.cfg" in capsys.readouterr().err


class TestTrain:
    def test_history_log_written(self, workspace):
        history = Path(str(workspace["ckpt"]) + ".history.tsv")
        lines = history.read_text().strip().split("\n")
        assert lines[0].startswith("epoch\tphase")
        assert len(lines) == 3

    def test_rerun_identical_outputs(self, workspace, tmp_path):
        ckpt2 = tmp_path / "model2.ckpt"
        assert main(["train", "--config", str(workspace["config"]),
                     "--data", str(workspace["data"] / "manifest.tsv"), "--out", str(ckpt2)]) == 0
        assert workspace["ckpt"].read_bytes() == ckpt2.read_bytes()
        assert Path(str(workspace["ckpt"]) + ".history.tsv").read_text() == \
            Path(str(ckpt2) + ".history.tsv").read_text()

    def test_bad_manifest_exit_2(self, workspace, tmp_path, capsys):
        rc = main(["train", "--config", str(workspace["config"]),
                   "--data", str(tmp_path / "no.tsv"), "--out", str(tmp_path / "m.ckpt")])
        assert rc == 2


class TestEval:
    def test_metric_files_and_rerun_identical(self, workspace, tmp_path):
        out1 = tmp_path / "m1"
        out2 = tmp_path / "m2"
        args = ["eval", "--checkpoint", str(workspace["ckpt"]),
                "--data", str(workspace["data"] / "manifest.tsv"),
                "--config", str(workspace["config"])]
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert (out1 / "ap_table.tsv").exists()
        assert (out1 / "confusion.tsv").exists()
        assert filecmp.cmp(out1 / "ap_table.tsv", out2 / "ap_table.tsv", shallow=False)
        assert filecmp.cmp(out1 / "confusion.tsv", out2 / "confusion.tsv", shallow=False)

    def test_ap_table_layout(self, workspace, tmp_path):
        out = tmp_path / "m"
        main(["eval", "--checkpoint", str(workspace["ckpt"]),
              "--data", str(workspace["data"] / "manifest.tsv"),
              "--config", str(workspace["config"]), "--out", str(out)])
        header, row = (out / "ap_table.tsv").read_text().strip().split("\n")
        assert header.split("\t") == ["cat0", "cat1", "cat2", "cat3", "Mean"]
        assert len(row.split("\t")) == 5

    def test_category_count_mismatch_exit_2(self, workspace, tmp_path, capsys):
        import shutil

        clip_dir = next(p for p, s in read_manifest(workspace["data"] / "manifest.tsv")
                        if s == "test")
        rogue = tmp_path / "rogue"
        shutil.copytree(clip_dir, rogue)
        (rogue / "label.txt").write_text("9\n")
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text(f"{rogue}\ttest\n")
        rc = main(["eval", "--checkpoint", str(workspace["ckpt"]), "--data", str(manifest),
                   "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "categories" in capsys.readouterr().err


class TestFlow:
    @pytest.fixture()
    def frame_pair(self, tmp_path):
        y, x = np.mgrid[0:64, 0:64].astype(float)
        tex = 0.5 + 0.2 * np.sin(2 * np.pi * x / 16) + 0.2 * np.sin(2 * np.pi * y / 16)
        prev = (np.stack([tex] * 3, axis=-1) * 255).astype(np.uint8)
        curr = np.roll(prev, 1, axis=1)
        pa, ca = tmp_path / "prev.ppm", tmp_path / "curr.ppm"
        write_ppm(prev, pa)
        write_ppm(curr, ca)
        return pa, ca

    def test_identical_inputs_all_white(self, frame_pair, tmp_path):
        pa, _ = frame_pair
        rc = main(["flow", str(pa), str(pa), str(tmp_path / "o.flo"), str(tmp_path / "o.ppm")])
        assert rc == 0
        assert (read_ppm(tmp_path / "o.ppm") == 255).all()

    def test_flo_reread_and_translation(self, frame_pair, tmp_path):
        pa, ca = frame_pair
        out_flo = tmp_path / "o.flo"
        assert main(["flow", str(pa), str(ca), str(out_flo), str(tmp_path / "o.ppm")]) == 0
        field = read_flo(out_flo)
        epe = np.sqrt((field.u - 1.0) ** 2 + field.v ** 2).mean()
        assert epe <= 0.5

    def test_size_mismatch_exit_2(self, frame_pair, tmp_path):
        pa, _ = frame_pair
        small = tmp_path / "small.ppm"
        write_ppm(np.zeros((16, 16, 3), dtype=np.uint8), small)
        rc = main(["flow", str(pa), str(small), str(tmp_path / "x.flo"), str(tmp_path / "x.ppm")])
        assert rc == 2

    def test_byte_identical_rerun(self, frame_pair, tmp_path):
        pa, ca = frame_pair
        outs = []
        for tag in ("a", "b"):
            flo = tmp_path / f"{tag}.flo"
            img = tmp_path / f"{tag}.ppm"
            assert main(["flow", str(pa), str(ca), str(flo), str(img)]) == 0
            outs.append((flo.read_bytes(), img.read_bytes()))
        assert outs[0] == outs[1]


class TestSaliency:
    def test_map_count_and_determinism(self, workspace, tmp_path):
        clip_dir = next(p for p, s in read_manifest(workspace["data"] / "manifest.tsv") if s == "test")
        out1 = tmp_path / "s1"
        out2 = tmp_path / "s2"
        args = ["saliency", "--checkpoint", str(workspace["ckpt"]), str(clip_dir), "1"]
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        maps1 = sorted(out1.iterdir())
        assert len(maps1) == 2 * 3  # one per frame image and one per flow image
        assert tree_digest(out1) == tree_digest(out2)

    def test_bad_category_exit_code(self, workspace, tmp_path, capsys):
        clip_dir = next(p for p, s in read_manifest(workspace["data"] / "manifest.tsv") if s == "test")
        rc = main(["saliency", "--checkpoint", str(workspace["ckpt"]), str(clip_dir), "9",
                   "--out", str(tmp_path / "s")])
        assert rc != 0

    def test_zero_fc2_checkpoint_black_maps(self, workspace, tmp_path):
        from twostream.checkpoint import load_checkpoint, save_checkpoint

        model = load_checkpoint(workspace["ckpt"])
        model.fc2.w.assign(np.zeros_like(model.fc2.w.data))
        model.fc2.b.assign(np.zeros_like(model.fc2.b.data))
        zero_ckpt = tmp_path / "zero.ckpt"
        save_checkpoint(model, zero_ckpt)
        clip_dir = next(p for p, s in read_manifest(workspace["data"] / "manifest.tsv") if s == "test")
        out = tmp_path / "s"
        assert main(["saliency", "--checkpoint", str(zero_ckpt), str(clip_dir), "0",
                     "--out", str(out)]) == 0
        for path in out.iterdir():
            assert not read_pgm(path).any()


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 1
