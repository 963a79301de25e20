import json
from pathlib import Path

import numpy as np
import pytest
import tifffile

from ttfusion.cli import EXIT_INVALID, EXIT_OK, main
from ttfusion.config import CONFIG_ENV_VAR, RunConfigError, load_run_config, parse_run_config

FIXTURES = Path(__file__).parent / "fixtures"
COMMANDS = ("generate", "preprocess", "train", "predict", "evaluate")


def _config(tmp_path, dataset, out="run", **extra):
    cfg = {
        "dataset": str(dataset),
        "out_dir": out,
        "strategies": ["filter", "monthly_average", "augment"],
        "train": {"max_epochs": 2, "batch_size": 4},
        "model": {"texture": {"backbone": "small"}},
    }
    for k, v in extra.items():
        cfg[k] = v
    p = tmp_path / "run.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "d"
    rc = main(["generate", "--domains", "1", "--areas", "1", "--patches", "4", "--t", "24", "--seed", "7",
               "--val-domains", "1", "--test-domains", "1", "--out", str(out)])
    assert rc == EXIT_OK
    return out


@pytest.fixture(scope="module")
def unet_run(cli_dataset, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("unet")
    rc = main(["train", "--config", str(_config(tmp, cli_dataset)), "--unet-only", "--out", str(tmp / "run")])
    assert rc == EXIT_OK
    return tmp / "run"


class TestRunConfig:
    def test_defaults(self):
        cfg = parse_run_config({"dataset": "d"})
        tc = cfg.train_config()
        assert (tc.lr, tc.batch_size, tc.seed) == (0.001, 10, 2022)
        assert cfg.filter_config().coverage_threshold == 0.6
        assert cfg.fusion_config().sat_superpatch_size == 40

    def test_best_strategy_toggles(self):
        tc = parse_run_config({"dataset": "d", "strategies": ["filter", "monthly_average", "augment"]}).train_config()
        assert tc.use_filter and tc.use_monthly_average and tc.use_augmentation
        assert not tc.use_metadata and not tc.use_modality_dropout

    def test_errors_listed_together(self):
        with pytest.raises(RunConfigError) as ei:
            parse_run_config({"dataset": "d", "bogus": 1, "optim": {"lr": -1}, "train": {"batch_size": 0}})
        msg = str(ei.value)
        assert "bogus" in msg and "lr" in msg and "batch_size" in msg

    def test_duplicate_strategy(self):
        with pytest.raises(RunConfigError, match="strategies"):
            parse_run_config({"dataset": "d", "strategies": ["augment", "augment"]})

    def test_unet_only_has_no_temporal(self):
        assert parse_run_config({"dataset": "d", "model": {"unet_only": True}}).temporal_config() is None

    def test_relative_paths_and_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"dataset": "data", "out_dir": "out"}))
        cfg = load_run_config(p, {"train.max_epochs": 3})
        assert cfg.dataset == tmp_path / "data" and cfg.train.max_epochs == 3


class TestHelp:
    @pytest.mark.parametrize("cmd", COMMANDS)
    def test_help_exits_zero(self, cmd, capsys):
        assert main([cmd, "--help"]) == EXIT_OK
        text = capsys.readouterr().out
        assert "--out" in text or "--config" in text

    def test_unknown_flag(self):
        assert main(["generate", "--wat"]) == EXIT_INVALID


class TestGenerate:
    def test_layout(self, cli_dataset):
        assert (cli_dataset / "centroids_sp_to_patch.json").is_file()
        assert len(list((cli_dataset / "aerial_train").rglob("IMG_*.tif"))) == 4
        assert len(list((cli_dataset / "sen_train").rglob("SEN2_*_data.npy"))) == 1

    def test_refuses_without_force(self, cli_dataset):
        assert main(["generate", "--t", "24", "--out", str(cli_dataset)]) == EXIT_INVALID

    def test_t_out_of_range(self, tmp_path):
        assert main(["generate", "--t", "200", "--out", str(tmp_path / "x")]) == EXIT_INVALID

    def test_force_overwrites(self, tmp_path):
        out = tmp_path / "g"
        assert main(["generate", "--t", "20", "--out", str(out)]) == EXIT_OK
        assert main(["generate", "--t", "20", "--out", str(out), "--force"]) == EXIT_OK


class TestPreprocess:
    def test_writes_series(self, cli_dataset, tmp_path):
        out = tmp_path / "pp"
        assert main(["preprocess", "--dataset", str(cli_dataset), "--filter", "--monthly-average",
                     "--out", str(out)]) == EXIT_OK
        sats = sorted(out.glob("SAT_*.npy"))
        assert len(sats) == 4
        arr = np.load(sats[0])
        assert arr.shape[1:] == (10, 40, 40) and arr.shape[0] <= 12
        dates = json.loads((out / "dates_per_patch.json").read_text())
        assert len(dates) == 4

    def test_missing_dataset(self, tmp_path):
        assert main(["preprocess", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_INVALID


class TestTrain:
    def test_missing_dataset(self, tmp_path, capsys):
        cfg = _config(tmp_path, tmp_path / "missing")
        assert main(["train", "--config", str(cfg)]) == EXIT_INVALID
        assert "missing" in capsys.readouterr().err

    def test_invalid_config_exit_2(self, tmp_path, cli_dataset, capsys):
        cfg = _config(tmp_path, cli_dataset, optim={"lr": -3}, train={"batch_size": 0})
        assert main(["train", "--config", str(cfg)]) == EXIT_INVALID
        err = capsys.readouterr().err
        assert "lr" in err and "batch_size" in err

    def test_config_from_env(self, tmp_path, monkeypatch, cli_dataset):
        monkeypatch.setenv(CONFIG_ENV_VAR, str(_config(tmp_path, tmp_path / "missing")))
        assert main(["train"]) == EXIT_INVALID

    def test_no_config(self, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
        assert main(["train"]) == EXIT_INVALID

    def test_unet_only_outputs(self, unet_run, capsys):
        for name in ("best.ckpt", "history.jsonl", "run_config.json"):
            assert (unet_run / name).is_file()
        assert len((unet_run / "history.jsonl").read_text().splitlines()) == 2

    def test_fused_train_prints_val_miou(self, cli_dataset, tmp_path, capsys):
        cfg = _config(tmp_path, cli_dataset, train={"max_epochs": 1, "batch_size": 4})
        assert main(["train", "--config", str(cfg)]) == EXIT_OK
        assert "val mIoU" in capsys.readouterr().out


class TestPredictEvaluate:
    def test_unet_predict_is_deterministic(self, unet_run, cli_dataset, tmp_path):
        ck = str(unet_run / "best.ckpt")
        for name in ("a", "b"):
            assert main(["predict", "--checkpoint", ck, "--dataset", str(cli_dataset),
                         "--out", str(tmp_path / name)]) == EXIT_OK
        preds = sorted((tmp_path / "a").glob("PRED_*.tif"))
        assert len(preds) == 4
        for p in preds:
            arr = tifffile.imread(p)
            assert arr.shape == (512, 512) and arr.min() >= 1 and arr.max() <= 13
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_class_count_mismatch(self, unet_run, cli_dataset, tmp_path, capsys):
        import torch

        ck = torch.load(unet_run / "best.ckpt", weights_only=False)
        ck["nomenclature"] = ck["nomenclature"][:12]
        torch.save(ck, tmp_path / "bad.ckpt")
        assert main(["predict", "--checkpoint", str(tmp_path / "bad.ckpt"), "--dataset", str(cli_dataset),
                     "--out", str(tmp_path / "o")]) == EXIT_INVALID
        assert "12 classes" in capsys.readouterr().err

    def _labels_as_preds(self, cli_dataset, tmp_path):
        from ttfusion.data_model import remap_labels
        from ttfusion.dataset_io import read_label

        pred = tmp_path / "pred"
        pred.mkdir()
        for msk in (cli_dataset / "labels_test").rglob("MSK_*.tif"):
            px = remap_labels(read_label(msk)).pixels
            tifffile.imwrite(pred / msk.name.replace("MSK_", "PRED_"), px)
        return pred

    def test_identical_predictions(self, cli_dataset, tmp_path, capsys):
        pred = self._labels_as_preds(cli_dataset, tmp_path)
        assert main(["evaluate", "--pred", str(pred), "--labels", str(cli_dataset / "labels_test"),
                     "--out", str(tmp_path / "ev"), "--no-plots"]) == EXIT_OK
        assert "mIoU 1.0000" in capsys.readouterr().out
        assert json.loads((tmp_path / "ev/metrics.json").read_text())["miou"] == 1.0

    def test_benchmark_matrix(self, tmp_path, capsys):
        assert main(["evaluate", "--matrix", str(FIXTURES / "benchmark_unet_confusion.csv"),
                     "--out", str(tmp_path / "ev")]) == EXIT_OK
        assert "mIoU 0.5470" in capsys.readouterr().out
        assert (tmp_path / "ev/confusion_matrix.png").is_file()

    def test_empty_pred_dir(self, cli_dataset, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["evaluate", "--pred", str(tmp_path / "empty"), "--labels", str(cli_dataset / "labels_test"),
                     "--out", str(tmp_path / "ev")]) == EXIT_INVALID

    def test_id_mismatch_lists_missing(self, cli_dataset, tmp_path, capsys):
        pred = self._labels_as_preds(cli_dataset, tmp_path)
        victim = sorted(pred.glob("PRED_*.tif"))[0]
        victim.unlink()
        assert main(["evaluate", "--pred", str(pred), "--labels", str(cli_dataset / "labels_test"),
                     "--out", str(tmp_path / "ev")]) == EXIT_INVALID
        assert victim.stem.replace("PRED_", "") in capsys.readouterr().err

    def test_predict_without_checkpoint_file(self, cli_dataset, tmp_path):
        rc = main(["predict", "--checkpoint", str(tmp_path / "none.ckpt"), "--dataset", str(cli_dataset),
                   "--out", str(tmp_path / "o")])
        assert rc != EXIT_OK

