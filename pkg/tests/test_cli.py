"""End-to-end command-line behavior: commands, exit codes, dumps, overrides."""

import csv
import os

import numpy as np
import pytest
from PIL import Image

from avmae import cli, engine

TINY = """
model.audio_grid=32,8
model.audio_patch=8,4
model.video_shape=4,8,8
model.video_tubelet=2,4,4
model.d=16
model.layers=2
model.heads=2
model.mlp=24
model.dec_d=12
model.dec_layers=1
model.dec_heads=2
model.dec_mlp=16
model.S=1
model.alpha_video=0.5
data.num_classes=4
data.num_samples=16
data.eval_samples=8
data.frames=4
data.image_size=8
data.spec_frames=32
data.spec_bins=8
data.noise=0.05
train.epochs=2
train.warmup_epochs=0.5
"""


def cfg_file(tmp_path, extra="", base=TINY, name="run.cfg"):
    def entries(text):
        out = {}
        for ln in text.strip().splitlines():
            ln = ln.strip()
            if ln and not ln.startswith("#"):
                k, _, v = ln.partition("=")
                out[k.strip()] = v.strip()
        return out

    merged = entries(base)
    merged.update(entries(extra))  # overrides win; the file bans duplicates
    p = tmp_path / name
    p.write_text("".join(f"{k}={v}\n" for k, v in merged.items()))
    return str(p)


def run(argv, capsys):
    rc = cli.main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


def printed(stdout, key):
    for line in stdout.splitlines():
        if line.startswith(key + "="):
            return line.split("=", 1)[1]
    raise AssertionError(f"{key}= not printed in:\n{stdout}")


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    """One tiny pretrained checkpoint shared by the downstream commands."""
    root = tmp_path_factory.mktemp("pre")
    cfg = cfg_file(root)
    out = str(root / "ckpt")
    rc = cli.main(["pretrain", "--config", cfg, "--out", out])
    assert rc == 0
    return cfg, out


class TestPretrain:
    def test_minimal_config_populates_checkpoint(self, pretrained):
        _, out = pretrained
        assert os.path.exists(os.path.join(out, "manifest.json"))
        assert os.path.exists(os.path.join(out, "history.csv"))

    def test_prints_dump_and_final_loss(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path)
        rc, stdout, _ = run(["pretrain", "--config", cfg,
                             "--out", str(tmp_path / "o")], capsys)
        assert rc == 0
        assert "# effective config" in stdout
        assert "model.encoder=mid" in stdout
        final = float(printed(stdout, "final loss"))
        hist = engine.History.read(str(tmp_path / "o" / "history.csv"))
        losses = [v for _, _, met, v in hist if met == "loss"]
        assert final == losses[-1]

    def test_rerun_from_dump_is_bit_identical(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path)
        rc, stdout, _ = run(["pretrain", "--config", cfg,
                             "--out", str(tmp_path / "a")], capsys)
        assert rc == 0
        dump_lines = [ln for ln in stdout.splitlines()
                      if "=" in ln and not ln.startswith(("#", "final", "checkpoint"))]
        cfg2 = tmp_path / "dump.cfg"
        cfg2.write_text("\n".join(dump_lines) + "\n")
        rc, _, _ = run(["pretrain", "--config", str(cfg2),
                        "--out", str(tmp_path / "b")], capsys)
        assert rc == 0
        a = (tmp_path / "a" / "history.csv").read_text()
        b = (tmp_path / "b" / "history.csv").read_text()
        assert a == b

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "bogus.key=1\n")
        rc, _, err = run(["pretrain", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "bogus.key" in err

    def test_unknown_fusion_name_exits_2(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "model.encoder=quantum\n")
        rc, _, err = run(["pretrain", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "quantum" in err

    def test_separate_encoder_with_inpainting_exits_2(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "model.encoder=separate\ntrain.objective=inpaint\n")
        rc, _, err = run(["pretrain", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "separate" in err

    def test_divergence_exits_4(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "train.base_lr=1e18\ntrain.warmup_epochs=0\n"
                                 "train.epochs=20\n")
        with np.errstate(all="ignore"):
            rc, _, err = run(["pretrain", "--config", cfg,
                              "--out", str(tmp_path / "o")], capsys)
        assert rc == 4
        assert "non-finite" in err

    def test_seed_flag_and_env_override(self, tmp_path, capsys, monkeypatch):
        cfg = cfg_file(tmp_path, "train.epochs=0.5\ntrain.warmup_epochs=0\n")
        rc, stdout, _ = run(["pretrain", "--config", cfg, "--seed", "5",
                             "--out", str(tmp_path / "s")], capsys)
        assert rc == 0 and printed(stdout, "train.seed") == "5"
        monkeypatch.setenv("AVMAE_SEED", "11")
        rc, stdout, _ = run(["pretrain", "--config", cfg, "--seed", "5",
                             "--out", str(tmp_path / "e")], capsys)
        assert rc == 0 and printed(stdout, "train.seed") == "11"


class TestFinetuneEval:
    def test_finetune_then_eval_match_history(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        ft_cfg = cfg_file(tmp_path, f"finetune.checkpoint={ckpt}\n"
                                    "finetune.heads=label:4\nfinetune.fusion_layer=1\n")
        out = str(tmp_path / "clf")
        rc, stdout, _ = run(["finetune", "--config", ft_cfg, "--out", out], capsys)
        assert rc == 0
        printed_acc = printed(stdout, "label_top1")
        hist = engine.History.read(os.path.join(out, "history.csv"))
        evals = [v for _, sp, met, v in hist if sp == "eval" and met == "label_top1"]
        assert float(printed_acc) == evals[-1]

        ev_cfg = cfg_file(tmp_path, f"eval.checkpoint={out}\n", name="ev.cfg")
        ev_out = str(tmp_path / "ev")
        rc, stdout, _ = run(["eval", "--config", ev_cfg, "--out", ev_out,
                             "--views", "1"], capsys)
        assert rc == 0
        acc = printed(stdout, "label_top1")
        rows = engine.History.read(os.path.join(ev_out, "history.csv"))
        assert rows[-1][2] == "label_top1" and rows[-1][3] == float(acc)

    def test_finetune_from_other_fusion_variant(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "model.encoder=early\n")
        pre_out = str(tmp_path / "pre_early")
        assert cli.main(["pretrain", "--config", cfg, "--out", pre_out]) == 0
        capsys.readouterr()
        ft_cfg = cfg_file(tmp_path, f"model.encoder=early\n"
                                    f"finetune.checkpoint={pre_out}\n"
                                    "finetune.heads=label:4\nfinetune.fusion_layer=1\n",
                          name="ft.cfg")
        rc, _, _ = run(["finetune", "--config", ft_cfg,
                        "--out", str(tmp_path / "clf")], capsys)
        assert rc == 0

    def test_missing_checkpoint_key_exits_2(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "finetune.heads=label:4\n")
        rc, _, err = run(["finetune", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "finetune.checkpoint" in err

    def test_eval_rejects_pretrain_checkpoint(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        ev_cfg = cfg_file(tmp_path, f"eval.checkpoint={ckpt}\n")
        rc, _, err = run(["eval", "--config", ev_cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 3
        assert "classifier" in err

    def test_views_coincide_when_clip_matches(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        ft_cfg = cfg_file(tmp_path, f"finetune.checkpoint={ckpt}\n"
                                    "finetune.heads=label:4\nfinetune.fusion_layer=1\n"
                                    "train.epochs=1\n")
        out = str(tmp_path / "clf")
        assert cli.main(["finetune", "--config", ft_cfg, "--out", out]) == 0
        capsys.readouterr()
        ev_cfg = cfg_file(tmp_path, f"eval.checkpoint={out}\n", name="ev.cfg")
        # the data's 4 frames equal the model's clip length: all views coincide
        rc, out1, _ = run(["eval", "--config", ev_cfg,
                           "--out", str(tmp_path / "e1"), "--views", "1"], capsys)
        rc4, out4, _ = run(["eval", "--config", ev_cfg,
                            "--out", str(tmp_path / "e4"), "--views", "4"], capsys)
        assert rc == 0 and rc4 == 0
        assert printed(out1, "label_top1") == printed(out4, "label_top1")


class TestProbe:
    def test_probe_prints_match_history(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        cfg = cfg_file(tmp_path, f"probe.checkpoint={ckpt}\nprobe.steps=200\n")
        out = str(tmp_path / "probe")
        rc, stdout, _ = run(["probe", "--config", cfg, "--out", out], capsys)
        assert rc == 0
        rows = engine.History.read(os.path.join(out, "history.csv"))
        assert rows[-1][2] == "eval_top1"
        assert float(printed(stdout, "eval_top1")) == rows[-1][3]

    def test_probe_requires_eval_split(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        cfg = cfg_file(tmp_path, f"probe.checkpoint={ckpt}\ndata.eval_samples=0\n")
        rc, _, err = run(["probe", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "eval" in err


class TestReconstruct:
    def test_writes_two_grids(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        cfg = cfg_file(tmp_path, f"reconstruct.checkpoint={ckpt}\n")
        out = str(tmp_path / "rc")
        rc, stdout, _ = run(["reconstruct", "--config", cfg, "--out", out], capsys)
        assert rc == 0
        files = sorted(os.listdir(out))
        assert files == ["audio.png", "video.png"]

    def test_alpha_zero_makes_rows_identical(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        cfg = cfg_file(tmp_path, f"reconstruct.checkpoint={ckpt}\n"
                                 "reconstruct.alpha_audio=0\nreconstruct.alpha_video=0\n")
        out = str(tmp_path / "rc0")
        rc, _, _ = run(["reconstruct", "--config", cfg, "--out", out], capsys)
        assert rc == 0
        img = np.asarray(Image.open(os.path.join(out, "video.png")))
        h = img.shape[0] // 3
        assert np.array_equal(img[h:2 * h], img[:h])

    def test_classifier_checkpoint_exits_3(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        ft_cfg = cfg_file(tmp_path, f"finetune.checkpoint={ckpt}\n"
                                    "finetune.heads=label:4\nfinetune.fusion_layer=1\n"
                                    "train.epochs=0.5\ntrain.warmup_epochs=0\n")
        clf_out = str(tmp_path / "clf")
        assert cli.main(["finetune", "--config", ft_cfg, "--out", clf_out]) == 0
        capsys.readouterr()
        cfg = cfg_file(tmp_path, f"reconstruct.checkpoint={clf_out}\n", name="rc.cfg")
        rc, _, err = run(["reconstruct", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 3
        assert "classifier" in err

    def test_sample_out_of_range_exits_2(self, pretrained, tmp_path, capsys):
        cfg_path, ckpt = pretrained
        cfg = cfg_file(tmp_path, f"reconstruct.checkpoint={ckpt}\n"
                                 "reconstruct.sample=99\n")
        rc, _, err = run(["reconstruct", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "out of range" in err


class TestSweep:
    def test_fusion_grid_results(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "train.epochs=0.5\ntrain.warmup_epochs=0\n"
                                 "probe.steps=50\n"
                                 "data.num_samples=8\ndata.eval_samples=4\n")
        out = str(tmp_path / "sw")
        rc, stdout, _ = run(["sweep", "--config", cfg, "--out", out], capsys)
        assert rc == 0
        with open(os.path.join(out, "results.csv")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 6
        assert [(r["encoder"], r["decoder"]) for r in rows] == list(cli.FUSION_GRID)
        for r in rows:
            assert float(r["final_loss"]) > 0
            assert os.path.exists(os.path.join(out, f"{r['encoder']}_{r['decoder']}",
                                               "manifest.json"))

    def test_masking_grid_results(self, tmp_path, capsys):
        # enough video tokens that even alpha 0.95 keeps at least one
        cfg = cfg_file(tmp_path, "train.epochs=0.5\ntrain.warmup_epochs=0\n"
                                 "probe.steps=50\n"
                                 "data.num_samples=8\ndata.eval_samples=4\n"
                                 "sweep.grid=masking\n", base="")
        out = str(tmp_path / "sw")
        rc, stdout, _ = run(["sweep", "--config", cfg, "--out", out], capsys)
        assert rc == 0
        with open(os.path.join(out, "results.csv")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 12
        pairs = {(float(r["alpha_audio"]), float(r["alpha_video"])) for r in rows}
        assert pairs == set(cli.MASKING_GRID)

    def test_unknown_grid_exits_2(self, tmp_path, capsys):
        cfg = cfg_file(tmp_path, "sweep.grid=decoder\n")
        rc, _, err = run(["sweep", "--config", cfg,
                          "--out", str(tmp_path / "o")], capsys)
        assert rc == 2
        assert "decoder" in err
