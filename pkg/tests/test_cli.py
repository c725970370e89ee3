import json
import re
import time

import numpy as np
import pytest

from riemann_avg import experiments as ex
from riemann_avg.cli import main
from riemann_avg.optim import Trajectory
from riemann_avg.streams import MatrixStream


def write_config(tmp_path, name="cfg.json", **fields):
    fields.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / name
    path.write_text(json.dumps(fields))
    return path


def predicted(summary):
    return float(re.search(r"predicted=(\S+)", summary).group(1))


def csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


class TestConfig:
    def test_defaults(self, tmp_path):
        cfg = ex.load_config(write_config(tmp_path, experiment="pca_conditioning"))
        assert (cfg.d, cfg.k, cfg.replicates, cfg.n_iters) == (50, 10, 10, 1_000_000)
        assert [s.label for s in cfg.schedule_objects()] == ["const_g0.01", "poly_C1_a0.5", "poly_C1_a1"]

    def test_counterexample_defaults(self, tmp_path):
        cfg = ex.load_config(write_config(tmp_path, experiment="counterexample"))
        assert cfg.d == 2 and cfg.k == 1
        assert [s.label for s in cfg.schedule_objects()] == ["const_g1", "poly_C1_a0.5"]

    def test_robustness_defaults(self, tmp_path):
        cfg = ex.load_config(write_config(tmp_path, experiment="pca_step_robustness"))
        assert [s.C for s in cfg.schedule_objects()] == [0.2, 1.0, 5.0]

    @pytest.mark.parametrize("fields,where", [
        ({"experiment": "pca_conditioning", "extra_key": 1}, "extra_key"),
        ({"experiment": "pca_conditioning", "n_iters": 50}, "n_iters"),
        ({"experiment": "pca_conditioning", "replicates": 0}, "replicates"),
        ({"experiment": "nope"}, "experiment"),
        ({"experiment": "sphere_mean", "schedules": [{"kind": "polynomial", "alpha": 1.5}]}, "alpha"),
        ({"experiment": "sphere_mean", "schedules": [{"kind": "constant", "gamma": 0.1}]}, "sphere_mean"),
        ({"experiment": "pca_conditioning", "d": 5, "k": 5}, "k must be smaller"),
        ({"experiment": "covariance_check", "eigenvalues": [1.0, -0.5]}, "non-negative"),
    ])
    def test_invalid_exit_2(self, tmp_path, caplog, fields, where):
        assert main(["run", str(write_config(tmp_path, **fields))]) == 2
        assert where in caplog.text

    def test_unreadable(self, tmp_path, caplog):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run", str(p)]) == 2
        assert "cannot read config" in caplog.text

    def test_seed_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RIEMANN_AVG_SEED", "77")
        assert ex.load_config(write_config(tmp_path, experiment="sphere_mean", seed=3)).seed == 77
        monkeypatch.setenv("RIEMANN_AVG_SEED", "x")
        with pytest.raises(ex.PreconditionError):
            ex.load_config(write_config(tmp_path, experiment="sphere_mean"))


class TestRun:
    def test_smoke_under_5s(self, tmp_path):
        cfg = write_config(tmp_path, experiment="pca_conditioning", replicates=1, n_iters=100)
        t0 = time.perf_counter()
        assert main(["run", str(cfg), "--workers", "1"]) == 0
        assert time.perf_counter() - t0 < 5
        out = tmp_path / "out"
        assert sorted(csv_bytes(out)) == ["const_g0.01__rep000.csv", "poly_C1_a0.5__rep000.csv",
                                          "poly_C1_a1__rep000.csv"]
        first = (out / "poly_C1_a1__rep000.csv").read_text().splitlines()
        assert first[0] == "n,gamma,err_sgd,err_avg"
        assert first[-1].startswith("100,")
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["presets"] == {"well": {"alpha": 1.0, "beta": 0.2}, "poor": {"alpha": 1.0, "beta": 0.001}}
        assert "slope" in (out / "summary.txt").read_text()

    @pytest.mark.parametrize("experiment", ["pca_step_robustness", "sphere_mean", "counterexample",
                                            "covariance_check"])
    def test_each_experiment(self, tmp_path, experiment):
        cfg = write_config(tmp_path, experiment=experiment, replicates=2, n_iters=200)
        assert main(["run", str(cfg), "--workers", "1"]) == 0
        summary = (tmp_path / "out" / "summary.txt").read_text()
        if experiment == "covariance_check":
            assert predicted(summary) == pytest.approx(0.75)
        if experiment == "counterexample":
            assert "claimed" in summary and "analytic" in summary and "montecarlo" in summary

    def test_euclidean_covariance(self, tmp_path):
        cfg = write_config(tmp_path, experiment="covariance_check", covariance_problem="euclidean",
                           d=5, replicates=3, n_iters=200)
        assert main(["run", str(cfg)]) == 0
        assert predicted((tmp_path / "out" / "summary.txt").read_text()) == pytest.approx(5.0)

    def test_deterministic_across_workers(self, tmp_path):
        base = dict(experiment="counterexample", replicates=3, n_iters=3000, seed=5)
        a = write_config(tmp_path, "a.json", output_dir=str(tmp_path / "a"), **base)
        b = write_config(tmp_path, "b.json", output_dir=str(tmp_path / "b"), **base)
        assert main(["run", str(a), "--workers", "1"]) == 0
        assert main(["run", str(b), "--workers", "2"]) == 0
        ca, cb = csv_bytes(tmp_path / "a"), csv_bytes(tmp_path / "b")
        assert ca and ca == cb
        assert (tmp_path / "a" / "metadata.json").read_bytes() == (tmp_path / "b" / "metadata.json").read_bytes()

    def test_abort_exit_3(self, tmp_path, monkeypatch, caplog):
        real = ex._build

        def negative_stream(cfg):
            built = real(cfg)
            built["stream"] = MatrixStream.fixed(-np.eye(cfg.d))
            return built

        monkeypatch.setattr(ex, "_build", negative_stream)
        cfg = write_config(tmp_path, experiment="covariance_check", replicates=2, n_iters=100,
                           schedules=[{"kind": "constant", "gamma": 1.0}])
        assert main(["run", str(cfg), "--workers", "1"]) == 3
        assert "aborted at iteration 1" in caplog.text


def planted(tmp_path, label, reps, f):
    n = np.unique(np.round(np.logspace(0, 4, 41)).astype(int))
    d = tmp_path / "run"
    d.mkdir(exist_ok=True)
    for r in range(reps):
        t = Trajectory(n, 1.0 / n, (r + 1) * f(n), (r + 1) * f(n), seed=0, metric_id="m")
        ex.write_trajectory_csv(d / f"{label}__rep{r:03d}.csv", t)
    return d


class TestReport:
    def test_single_replicate_identity(self, tmp_path):
        d = planted(tmp_path, "poly_C1_a1", 1, lambda n: 1.0 / n)
        assert main(["report", str(d)]) == 0
        assert (d / "report" / "aggregate__poly_C1_a1.csv").read_bytes() == (d / "poly_C1_a1__rep000.csv").read_bytes()

    def test_mean_and_slope(self, tmp_path):
        d = planted(tmp_path, "x", 3, lambda n: 1.0 / n)
        assert main(["report", str(d)]) == 0
        agg = ex.read_trajectory_csv(d / "report" / "aggregate__x.csv")
        np.testing.assert_allclose(agg.err_avg, 2.0 / agg.iters)
        summary = (d / "report" / "summary.txt").read_text()
        assert "err_avg: slope=-1.0000" in summary

    def test_idempotent(self, tmp_path):
        d = planted(tmp_path, "x", 2, lambda n: n**-0.5)
        assert main(["report", str(d)]) == 0
        first = {p.name: p.read_bytes() for p in (d / "report").iterdir()}
        assert main(["report", str(d)]) == 0
        assert first == {p.name: p.read_bytes() for p in (d / "report").iterdir()}

    @pytest.mark.parametrize("body", ["n,gamma,err\n1,2,3\n", "n,gamma,err_sgd,err_avg\n1,x,2,3\n",
                                      "n,gamma,err_sgd,err_avg\n", "n,gamma,err_sgd,err_avg\n1,1,1\n"])
    def test_malformed(self, tmp_path, caplog, body):
        d = planted(tmp_path, "x", 1, lambda n: 1.0 / n)
        (d / "x__rep001.csv").write_text(body)
        assert main(["report", str(d)]) == 2
        assert "x__rep001.csv" in caplog.text

    def test_grid_mismatch(self, tmp_path, caplog):
        d = planted(tmp_path, "x", 1, lambda n: 1.0 / n)
        (d / "x__rep001.csv").write_text("n,gamma,err_sgd,err_avg\n0,0,1,1\n")
        assert main(["report", str(d)]) == 2

    def test_empty_dir(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 2
        assert main(["report", str(tmp_path / "missing")]) == 2

    def test_after_run(self, tmp_path):
        cfg = write_config(tmp_path, experiment="sphere_mean", replicates=2, n_iters=300)
        assert main(["run", str(cfg)]) == 0
        assert main(["report", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "report" / "aggregate__poly_C1_a0.5.csv").exists()


class TestCsv:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal(50) ** 2 * 10.0 ** rng.integers(-300, 300, 50)
        t = Trajectory(np.arange(50), vals, vals[::-1], vals * np.pi, seed=0, metric_id="m")
        ex.write_trajectory_csv(tmp_path / "t.csv", t)
        back = ex.read_trajectory_csv(tmp_path / "t.csv")
        assert back.same_as(Trajectory(t.iters, t.gamma, t.err_sgd, t.err_avg, 0, ""))


def test_selftest():
    assert main(["selftest"]) == 0


def test_usage_error():
    assert main(["frobnicate"]) == 2
