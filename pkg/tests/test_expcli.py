import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from krylov_reservoir import expcli
from krylov_reservoir.expcli import (
    ConfigError,
    ExperimentConfig,
    PlotError,
    PlotSpec,
    config_hash,
    emit_plot,
    fit_power_law,
    load_config,
    main,
    parse_config_text,
    permutation_exceedance,
    run_experiment,
    write_result,
)
from krylov_reservoir.matrixcore import LinalgError

DATA = Path(__file__).parent / "data"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_parse(self):
        values = parse_config_text("# comment\nseed = 4\nhz_grid = 0.1, 0.2 # trailing\n\nfull_scale = yes\nfamilies = G1,MG\n")
        assert values == {"seed": 4, "hz_grid": (0.1, 0.2), "full_scale": True, "families": ("G1", "MG")}

    @pytest.mark.parametrize(
        "text,match",
        [("seed 4", "expected"), ("bogus = 1", "unknown key"), ("seed = x", "bad value"), ("seed = 1\nseed = 2", "duplicate")],
    )
    def test_parse_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("E7")
        with pytest.raises(ConfigError, match="empty"):
            ExperimentConfig("E2", hz_grid=())
        with pytest.raises(ConfigError):
            ExperimentConfig("E5", n_circuits=0)
        with pytest.raises(ConfigError):
            ExperimentConfig("E3", ls_fractions=(0.0,))
        with pytest.raises(ConfigError):
            ExperimentConfig("E3", time_scales=("tX",))
        with pytest.raises(ConfigError):
            ExperimentConfig("E5", families=("G7",))

    def test_load_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("seed = 3\nthreads = 2\n")
        cfg = load_config(path, "E1", seed=9, threads=None)
        assert cfg.seed == 9 and cfg.threads == 2 and cfg.experiment == "E1"
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.cfg", "E1")
        path.write_text("experiment = E2\n")
        with pytest.raises(ConfigError, match="E2"):
            load_config(path, "E1")

    def test_defaults_depend_on_experiment(self):
        assert ExperimentConfig("E1").resolved_n_grid() == (6, 8, 10)
        assert ExperimentConfig("E1", full_scale=True).resolved_n_grid() == (6, 8, 10, 12)
        assert ExperimentConfig("E5").circuits_for(6) == 100
        assert ExperimentConfig("E5").circuits_for(8) == 25
        assert ExperimentConfig("E5", full_scale=True).circuits_for(10) == 100

    def test_hash_ignores_threads_and_out(self):
        a = ExperimentConfig("E4", threads=1, out="x")
        b = ExperimentConfig("E4", threads=4, out="y")
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(ExperimentConfig("E4", seed=1))


class TestFitter:
    def test_constant(self):
        fit = fit_power_law([6, 8, 10, 12], [3.0] * 4)
        assert abs(fit.exponent) <= 1e-10

    def test_cubic(self):
        n = np.array([6, 8, 10])
        fit = fit_power_law(n, n**3.0)
        assert fit.exponent == pytest.approx(3.0, abs=1e-10)
        assert fit.prefactor == pytest.approx(1.0, rel=1e-9)

    def test_ci_contains_estimate(self):
        fit = fit_power_law([2, 4, 8, 16], [1.1, 3.9, 17.0, 63.0])
        assert fit.ci_low < fit.exponent < fit.ci_high

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            fit_power_law([1, 2], [0.0, 1.0])


class TestPermutation:
    def test_perfect_ranking_is_rarely_matched(self):
        rng = np.random.default_rng(0)
        rho, below = permutation_exceedance(np.arange(7.0), np.arange(7.0), 100, rng)
        assert rho == pytest.approx(1.0)
        assert below >= 95

    def test_shuffled_null_is_not_exceptional(self):
        # a random pairing should beat roughly as many shuffles as it loses to
        rng = np.random.default_rng(1)
        counts = [permutation_exceedance(np.arange(7.0), rng.permutation(np.arange(7.0)), 100, rng)[1] for _ in range(30)]
        assert 20 < np.mean(counts) < 80


class TestPlot:
    def test_single_series(self, tmp_path):
        csv_path = tmp_path / "two.csv"
        csv_path.write_text("x,y\n0,1\n1,3\n2,2\n")
        out = emit_plot(csv_path, PlotSpec("x", ("y",)))
        svg = out.read_text()
        assert out == tmp_path / "two.svg"
        assert svg.count("<polyline") == 1
        assert ">x</text>" in svg and ">y</text>" in svg

    def test_empty_rows(self, tmp_path):
        csv_path = tmp_path / "empty.csv"
        csv_path.write_text("x,y\n")
        with pytest.raises(PlotError):
            emit_plot(csv_path, PlotSpec("x", ("y",)))
        assert not (tmp_path / "empty.svg").exists()

    def test_missing_column(self, tmp_path):
        with pytest.raises(PlotError, match="missing"):
            emit_plot(DATA / "fixture.csv", PlotSpec("k", ("nope",)), tmp_path / "o.svg")

    def test_golden(self, tmp_path):
        spec = PlotSpec.from_text((DATA / "fixture.spec").read_text())
        out = emit_plot(DATA / "fixture.csv", spec, tmp_path / "fixture.svg")
        assert out.read_bytes() == (DATA / "fixture.svg").read_bytes()

    def test_grouping_and_filter(self, tmp_path):
        spec = PlotSpec("k", ("var_a",), group="family", kind="scatter")
        svg = emit_plot(DATA / "fixture.csv", spec, tmp_path / "g.svg").read_text()
        assert svg.count("<polyline") == 0 and ">G1<" in svg and ">G2<" in svg
        spec = PlotSpec("k", ("var_a",), where=(("family", "G1"),))
        svg = emit_plot(DATA / "fixture.csv", spec, tmp_path / "w.svg").read_text()
        assert svg.count("<circle") == 2

    def test_spec_errors(self):
        with pytest.raises(ConfigError):
            PlotSpec.from_text("x = a\n")
        with pytest.raises(ConfigError):
            PlotSpec.from_text("x = a\ny = b\nkind = bar\n")


def small(experiment, **kw):
    base = dict(
        E1=dict(n_grid=(4, 6), bank_size=4, n_times=400),
        E2=dict(n=6, hz_grid=(0.5, 1.0), bank_size=4, n_times=400),
        E3=dict(n=6, hz_grid=(0.2, 1.0), bank_size=3, n_times=300, ls_fractions=(1.0, 0.5)),
        E4=dict(k_grid=(0.5, 5.0), n_hilbert_grid=(40, 60), krylov_n_hilbert=(40,), map_bank_size=5, n_times=300),
        E5=dict(n_grid=(4,), n_circuits=3, families=("G1", "G3", "MG", "D2"), n_times=300),
        E6=dict(n_grid=(4,), n_circuits=3, families=("G1", "G3", "MG", "D2"), n_samples=20, n_times=300, n_shuffles=20),
    )[experiment]
    base.update(kw)
    return ExperimentConfig(experiment, **base)


class TestExperiments:
    def test_e1_columns(self):
        res = run_experiment(small("E1"))
        table = res.main
        assert table.columns[:3] == ["n", "dim", "median_t_s"]
        assert [r[0] for r in table.rows] == [4, 6]
        assert len({r[5] for r in table.rows}) == 1

    def test_e2_small_time_limit(self):
        cfg = small("E2", n=8, hz_grid=(1.0,), time_scales=("tS/1000",))
        row = run_experiment(cfg).main.rows[0]
        assert row[4] == pytest.approx(row[1], abs=1e-6)
        assert row[5] == 0

    def test_e3_layout(self):
        res = run_experiment(small("E3"))
        assert len(res.main.rows) == 2 * 4 * 2
        assert {r[1] for r in res.main.rows} == {"H", "tS/25", "tS", "tH"}

    def test_e4_layout(self):
        rows = run_experiment(small("E4")).main.rows
        assert len(rows) == 4
        assert all(math.isnan(r[3]) for r in rows if r[1] == 60)
        assert all(not math.isnan(r[3]) for r in rows if r[1] == 40)

    def test_e5_matchgate_sector(self):
        res = run_experiment(small("E5"))
        circ = res.tables["E5_circuits"]
        dims = [r[5] for r in circ.rows if r[0] == "MG"]
        # matchgates conserve Z-parity: a basis state explores at most half of the space
        assert max(dims) <= 8
        fams = [r[0] for r in res.main.rows]
        assert fams == ["G1", "G3", "MG", "D2"]

    def test_e6_rejects_mixed_hashes(self, tmp_path):
        res = run_experiment(small("E5"))
        write_result(res, small("E5"), tmp_path)
        lines = (tmp_path / "E5.csv").read_text().splitlines()
        lines[-1] = lines[-1].rsplit(",", 1)[0] + ",deadbeefdeadbeef"
        (tmp_path / "mixed.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigError, match="hashes"):
            run_experiment(small("E6", e5_csv=str(tmp_path / "mixed.csv")))
        out = run_experiment(small("E6", e5_csv=str(tmp_path / "E5.csv")))
        assert len(out.main.rows) == 4

    def test_write_result(self, tmp_path):
        cfg = small("E1")
        paths = write_result(run_experiment(cfg), cfg, tmp_path)
        assert [p.name for p in paths] == ["E1.csv", "E1.meta.json"]
        rows = read_rows(tmp_path / "E1.csv")
        assert {r["config_hash"] for r in rows} == {config_hash(cfg)}
        meta = json.loads((tmp_path / "E1.meta.json").read_text())
        assert meta["config_hash"] == config_hash(cfg)
        assert "numpy" in meta["versions"] and "qubit_order" in meta["conventions"]
        text = (tmp_path / "E1.csv").read_text()
        assert "\r" not in text and text.endswith("\n")


class TestCli:
    def test_run_and_plot(self, tmp_path, capsys):
        cfg = tmp_path / "e1.cfg"
        cfg.write_text("n_grid = 4, 6\nbank_size = 3\nn_times = 300\n")
        assert main(["run", "E1", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        spec = tmp_path / "p.spec"
        spec.write_text("x = n\ny = median_t_s\nxlog = true\nylog = true\n")
        assert main(["plot", "--csv", str(tmp_path / "o" / "E1.csv"), "--spec", str(spec)]) == 0
        assert (tmp_path / "o" / "E1.svg").exists()

    def test_config_error_exit(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("hz_grid = \n")
        assert main(["run", "E2", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert main(["plot", "--csv", str(tmp_path / "none.csv"), "--spec", str(cfg)]) == 2

    def test_numerical_failure_exit(self, tmp_path, monkeypatch):
        def boom(cfg):
            raise LinalgError("defective")

        monkeypatch.setitem(expcli.RUNNERS, "E1", boom)
        assert main(["run", "E1", "--out", str(tmp_path)]) == 3
