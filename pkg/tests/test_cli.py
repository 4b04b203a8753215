"""Command line behavior: config handling, the subcommands, exit codes,
and the files they leave behind."""

import numpy as np
import pytest

from rcnet import cli, data, model, netpbm

SMALL_NET = ["--set", "channels=4,8,8,8,8,4"]


def _train_args(drive_root, out_dir, extra=()):
    return (["train",
             "--set", f"dataset_root={drive_root}",
             "--set", f"out_dir={out_dir}",
             "--set", "epochs=1",
             "--set", "batch_size=2",
             "--set", "max_train_samples=2",
             "--set", "learning_rate=0.01"]
            + SMALL_NET + list(extra))


@pytest.fixture(scope="module")
def trained(drive_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    rc = cli.main(_train_args(drive_root, out))
    assert rc == 0
    return out


class TestConfigHandling:
    def test_defaults_without_file(self):
        cfg = cli.load_config()
        assert cfg.epochs == 10
        assert cfg.channels == (8, 16, 32, 32, 16, 8)
        assert cfg.class_weights == "auto"

    def test_file_parsing(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# a comment\n"
                     "epochs = 3   # trailing comment\n"
                     "\n"
                     "channels = 4,8,8,8,8,4\n"
                     "augment = true\n"
                     "class_weights = 1.0,2.5\n")
        cfg = cli.load_config(f)
        assert cfg.epochs == 3
        assert cfg.channels == (4, 8, 8, 8, 8, 4)
        assert cfg.augment is True
        assert cfg.class_weights == (1.0, 2.5)

    def test_overrides_win_over_file(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("epochs = 3\n")
        cfg = cli.load_config(f, overrides=["epochs=7"])
        assert cfg.epochs == 7

    def test_unknown_key_named(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("epocs = 3\n")
        with pytest.raises(cli.ConfigError, match="epocs"):
            cli.load_config(f)

    def test_bad_value_reported(self):
        with pytest.raises(cli.ConfigError, match="epochs"):
            cli.load_config(overrides=["epochs=three"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(cli.ConfigError):
            cli.load_config(tmp_path / "none.cfg")

    def test_malformed_line(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("just words\n")
        with pytest.raises(cli.ConfigError, match="run.cfg:1"):
            cli.load_config(f)

    def test_exit_code_2_on_config_error(self, capsys):
        rc = cli.main(["params", "--set", "bogus_key=1"])
        assert rc == 2
        assert "bogus_key" in capsys.readouterr().err


class TestParams:
    def test_default_count(self, capsys):
        assert cli.main(["params"]) == 0
        assert capsys.readouterr().out.strip() == "24570"

    def test_two_convs(self, capsys):
        assert cli.main(["params", "--set", "convs_per_block=2"]) == 0
        assert capsys.readouterr().out.strip() == "49098"

    def test_custom_widths(self, capsys):
        assert cli.main(["params"] + SMALL_NET) == 0
        n = int(capsys.readouterr().out.strip())
        p = model.build(model.RCNetConfig(channels=(4, 8, 8, 8, 8, 4)))
        assert n == model.count_params(p)


class TestTrain:
    def test_outputs(self, trained):
        ck = trained / "checkpoint.rcn"
        assert ck.is_file()
        params = model.load_checkpoint(ck)
        assert params.config.channels == (4, 8, 8, 8, 8, 4)
        log_lines = (trained / "train_log.csv").read_text().strip() \
            .splitlines()
        assert log_lines[0] == "epoch,mean_loss,train_acc,wall_seconds"
        assert len(log_lines) == 2  # one epoch
        resolved = trained / "resolved.cfg"
        assert resolved.is_file()

    def test_resolved_config_reloadable(self, trained):
        cfg = cli.load_config(trained / "resolved.cfg")
        assert cfg.channels == (4, 8, 8, 8, 8, 4)
        assert cfg.epochs == 1
        assert cfg.max_train_samples == 2

    def test_deterministic_checkpoints(self, drive_root, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert cli.main(_train_args(drive_root, out)) == 0
        a = (outs[0] / "checkpoint.rcn").read_bytes()
        b = (outs[1] / "checkpoint.rcn").read_bytes()
        assert a == b

    def test_missing_dataset_root(self, tmp_path, capsys):
        rc = cli.main(["train", "--set", f"out_dir={tmp_path / 'o'}"])
        assert rc == 2
        assert "dataset_root" in capsys.readouterr().err


class TestPredict:
    def test_single_image(self, trained, drive_root, tmp_path):
        img = drive_root / "test" / "images" / "e01.ppm"
        out = tmp_path / "pred"
        rc = cli.main(["predict", str(trained / "checkpoint.rcn"), str(img),
                       "--set", f"out_dir={out}"])
        assert rc == 0
        pm = netpbm.read_netpbm(out / "e01.pgm")
        assert pm.dtype == np.uint16
        assert pm.shape == data.DRIVE_HW  # cropped back to source size
        assert int(pm.max()) <= 65535

    def test_rerun_identical(self, trained, drive_root, tmp_path):
        img = drive_root / "test" / "images" / "e02.ppm"
        blobs = []
        for sub in ("p1", "p2"):
            out = tmp_path / sub
            assert cli.main(["predict", str(trained / "checkpoint.rcn"),
                             str(img), "--set", f"out_dir={out}"]) == 0
            blobs.append((out / "e02.pgm").read_bytes())
        assert blobs[0] == blobs[1]

    def test_missing_checkpoint(self, drive_root, tmp_path, capsys):
        img = drive_root / "test" / "images" / "e01.ppm"
        rc = cli.main(["predict", str(tmp_path / "none.rcn"), str(img),
                       "--set", f"out_dir={tmp_path / 'o'}"])
        assert rc == 2

    def test_missing_input(self, trained, tmp_path):
        rc = cli.main(["predict", str(trained / "checkpoint.rcn"),
                       str(tmp_path / "none.ppm"),
                       "--set", f"out_dir={tmp_path / 'o'}"])
        assert rc == 2


@pytest.fixture(scope="module")
def gt_preds(drive_root, tmp_path_factory):
    """Ground truth re-exported as prediction maps."""
    pred_dir = tmp_path_factory.mktemp("gt_preds")
    split = data.load_drive(drive_root)
    for s in split.test:
        h, w = s.orig_hw
        netpbm.write_pgm(pred_dir / f"{s.id}.pgm",
                         (s.label[:h, :w] * 255).astype(np.uint8))
    return pred_dir


class TestEvaluate:
    def test_ground_truth_scores_perfectly(self, drive_root, gt_preds,
                                           tmp_path, capsys):
        out = tmp_path / "eval"
        rc = cli.main(["evaluate", str(gt_preds),
                       "--set", f"dataset_root={drive_root}",
                       "--set", f"out_dir={out}"])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "pooled" in stdout
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 20 + 1
        pooled = lines[-1].split(",")
        assert pooled[0] == "POOLED"
        assert pooled[1:] == ["1.000000"] * 5
        overlays = sorted(out.glob("*_overlay.ppm"))
        assert len(overlays) == 20
        ov = netpbm.read_netpbm(overlays[0])
        assert ov.shape == (584, 565, 3)

    def test_missing_prediction_is_usage_error(self, drive_root, gt_preds,
                                               tmp_path, capsys):
        part = tmp_path / "partial"
        part.mkdir()
        for p in sorted(gt_preds.glob("*.pgm"))[:-1]:
            (part / p.name).write_bytes(p.read_bytes())
        rc = cli.main(["evaluate", str(part),
                       "--set", f"dataset_root={drive_root}",
                       "--set", f"out_dir={tmp_path / 'o'}"])
        assert rc == 2
        assert "e20" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_subsampled_run_passes(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "all passed" in out
        assert "overall: pass" in out


class TestAugmentCommand:
    def test_materializes_tiny_plan(self, drive_root, tmp_path):
        out = tmp_path / "aug"
        rc = cli.main(["augment",
                       "--set", f"dataset_root={drive_root}",
                       "--set", f"out_dir={out}",
                       "--set", "rotation_step=180",
                       "--set", "brightness_count=1"])
        assert rc == 0
        images = sorted((out / "images").glob("*.ppm"))
        assert len(images) == 20 * 3  # two angles + one brightness each
        assert (out / "images" / "t01_r000.ppm").is_file()
        assert (out / "images" / "t01_r180.ppm").is_file()
        assert (out / "images" / "t01_b00.ppm").is_file()
        assert len(list((out / "labels").glob("*.pgm"))) == 60
        assert len(list((out / "masks").glob("*.pgm"))) == 60
        # zero rotation round-trips source pixels exactly; materialized
        # copies carry padded geometry, so compare the unpadded region
        a = netpbm.read_netpbm(drive_root / "train" / "images" / "t01.ppm")
        b = netpbm.read_netpbm(out / "images" / "t01_r000.ppm")
        assert b.shape == (584, 568, 3)
        assert np.array_equal(b[:584, :565], a)


class TestDumpActivations:
    def test_writes_bridge_maps(self, trained, drive_root, tmp_path):
        img = drive_root / "test" / "images" / "e01.ppm"
        out = tmp_path / "acts"
        rc = cli.main(["dump-activations", str(trained / "checkpoint.rcn"),
                       str(img), "--set", f"out_dir={out}"])
        assert rc == 0
        maps = sorted(out.glob("bridge_c*.pgm"))
        assert len(maps) == 8  # bridge width of the small net
        plane = netpbm.read_netpbm(maps[0])
        assert plane.shape == (146, 142)
        assert plane.dtype == np.uint8

    def test_unknown_layer_is_usage_error(self, trained, drive_root,
                                          tmp_path, capsys):
        img = drive_root / "test" / "images" / "e01.ppm"
        rc = cli.main(["dump-activations", str(trained / "checkpoint.rcn"),
                       str(img), "--set", f"out_dir={tmp_path / 'o'}",
                       "--layers", "pool9"])
        assert rc == 2
        assert "pool9" in capsys.readouterr().err


class TestParserShape:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([])

    def test_console_script_entry(self):
        # the installed entry point resolves to main
        import importlib.metadata as md
        eps = md.entry_points()
        if hasattr(eps, "select"):
            scripts = eps.select(group="console_scripts", name="rcnet")
            assert any(e.value == "rcnet.cli:main" for e in scripts)
