import json
import shutil
from importlib import resources

import numpy as np
import pandas as pd
import pytest

from hflm.cli import main, read_config
from hflm.core import ConfigError, PanelSpec
from hflm.simulate import read_surface, smooth_bump, write_surface


def write_cfg(path, **values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    target = tmp_path_factory.mktemp("sample") / "daily.csv"
    with resources.as_file(resources.files("hflm") / "data" / "sample_daily.csv") as src:
        shutil.copy(src, target)
    return target


@pytest.fixture
def fit_cfg(tmp_path, sample_csv):
    return write_cfg(
        tmp_path / "fit.cfg",
        data=sample_csv,
        output_dir="out",
        max_lag=10,
        hyperopt_init_count=3,
        hyperopt_iter_count=2,
        threshold_grid_size=12,
        log_wh_bounds="0,20",
    )


class TestConfig:
    def test_comments_and_relative_paths(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# header\ndata = d.csv  # trailing\noutput_dir = o\nmax_lag = 5\nlog_wv_bounds = 1, 2\n")
        values = read_config(cfg, "fit")
        assert values["data"] == tmp_path / "d.csv"
        assert values["max_lag"] == 5 and values["log_wv_bounds"] == (1.0, 2.0)

    @pytest.mark.parametrize(
        "text, needle",
        [
            ("wh_weight = 3\n", "wh_weight"),
            ("max_lag = 3\nmax_lag = 4\n", "duplicate"),
            ("max_lag = three\n", "max_lag"),
            ("just words\n", "key = value"),
            ("split_mode = random\n", "split_mode"),
        ],
    )
    def test_rejects(self, tmp_path, text, needle):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("data = d.csv\noutput_dir = o\n" + text)
        with pytest.raises(ConfigError, match=needle):
            read_config(cfg, "fit")

    def test_missing_required(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.cfg", data="d.csv")
        with pytest.raises(ConfigError, match="output_dir"):
            read_config(cfg, "fit")


class TestFit:
    def test_outputs(self, tmp_path, fit_cfg, capsys):
        code, out, _ = run(capsys, "fit", "--config", str(fit_cfg))
        assert code == 0
        manifest = json.loads(out)
        assert manifest["split_mode"] == "train80_val20"
        res = tmp_path / "out"
        for name in ("surface.csv", "delta.csv", "curve.csv", "manifest.json", "timings.json", "surface.png", "curve.png"):
            assert (res / name).is_file(), name
        surface = pd.read_csv(res / "surface.csv")
        assert len(surface) == 10 * 365
        delta = pd.read_csv(res / "delta.csv")
        assert len(delta) == 365 and delta["delta"].between(-1, 9).all()
        assert json.loads((res / "manifest.json").read_text()) == manifest

    def test_rerun_is_byte_identical(self, tmp_path, fit_cfg, capsys):
        run(capsys, "fit", "--config", str(fit_cfg), "--no-figures")
        first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir() if p.name != "timings.json"}
        run(capsys, "fit", "--config", str(fit_cfg), "--no-figures")
        second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir() if p.name != "timings.json"}
        assert first == second
        assert not any(name.endswith(".png") for name in first)

    def test_fixed_q_flag(self, tmp_path, fit_cfg, capsys):
        code, out, _ = run(capsys, "fit", "--config", str(fit_cfg), "--q", "0", "--no-figures")
        assert code == 0
        manifest = json.loads(out)
        assert manifest["q"] == 0.0 and manifest["support_size"] == manifest["coefficient_count"]

    def test_unknown_key_exit_2(self, tmp_path, sample_csv, capsys):
        cfg = write_cfg(tmp_path / "bad.cfg", data=sample_csv, output_dir="o", max_lag=5, wh_weight=3)
        code, out, err = run(capsys, "fit", "--config", str(cfg))
        assert code == 2 and "wh_weight" in err and out == ""

    def test_missing_data_exit_3(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", data="nowhere.csv", output_dir="o", max_lag=5)
        code, _, _ = run(capsys, "fit", "--config", str(cfg))
        assert code == 3

    def test_missing_config_exit_2(self, tmp_path, capsys):
        code, _, err = run(capsys, "fit", "--config", str(tmp_path / "none.cfg"))
        assert code == 2 and "not found" in err


class TestSimulate:
    def test_bad_target(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "s.cfg", output_dir="o", target_r2=1.2)
        code, _, err = run(capsys, "simulate", "--config", str(cfg))
        assert code == 2 and "target_r2" in err

    def test_small_study(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "s.cfg",
            output_dir="o",
            period_length=24,
            max_lag=6,
            replicate_count=10,
            lag_min=1,
            lag_max=4,
            replicate_runs=3,
            hyperopt_init_count=3,
            hyperopt_iter_count=1,
            threshold_grid_size=10,
        )
        code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--threads", "1")
        assert code == 0
        summary = json.loads(out)
        table = pd.read_csv(tmp_path / "o" / "study.csv")
        assert len(table) == 3
        assert (tmp_path / "o" / "study.png").is_file()
        assert read_surface(tmp_path / "o" / "truth_surface.csv").spec == PanelSpec(24, 6, 1)
        assert json.loads((tmp_path / "o" / "summary.json").read_text()) == summary


class TestEval:
    @pytest.fixture
    def surfaces(self, tmp_path):
        spec = PanelSpec(12, 5, 1)
        a = smooth_bump(spec, 3.0)
        write_surface(a, tmp_path / "a.csv")
        write_surface(smooth_bump(PanelSpec(12, 4, 1), 2.0), tmp_path / "small.csv")
        return tmp_path

    def test_identical(self, surfaces, capsys):
        cfg = write_cfg(surfaces / "e.cfg", truth_surface="a.csv", estimate_surface="a.csv")
        code, out, _ = run(capsys, "eval", "--config", str(cfg))
        assert code == 0
        report = json.loads(out)
        assert report["beta_r2"] == 1.0 and report["delta_bias"] == 0.0
        assert report["delta_corr"] is None
        assert "constant sequence" in json.dumps(report)

    def test_missing_file(self, surfaces, capsys):
        cfg = write_cfg(surfaces / "e.cfg", truth_surface="a.csv", estimate_surface="gone.csv")
        assert run(capsys, "eval", "--config", str(cfg))[0] == 3

    def test_grid_mismatch(self, surfaces, capsys):
        cfg = write_cfg(surfaces / "e.cfg", truth_surface="a.csv", estimate_surface="small.csv")
        code, _, err = run(capsys, "eval", "--config", str(cfg))
        assert code == 3 and "differ" in err

    def test_delta_file(self, surfaces, capsys):
        pd.DataFrame({"t": np.arange(1, 13), "delta": np.full(12, 2)}).to_csv(surfaces / "d.csv", index=False)
        cfg = write_cfg(surfaces / "e.cfg", truth_surface="a.csv", estimate_surface="a.csv", estimate_delta="d.csv")
        report = json.loads(run(capsys, "eval", "--config", str(cfg))[1])
        assert report["delta_bias"] == pytest.approx(2 - 3)
