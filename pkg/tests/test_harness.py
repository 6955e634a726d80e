import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from lkreg import _kernels
from lkreg.cli import main
from lkreg.harness import (
    TRACE_COLUMNS,
    ConfigError,
    ExperimentSpec,
    loping_savings,
    parse_decimal,
    read_trace,
    run_experiment,
)


def config(tmp_path, **overrides):
    cfg = {
        "problem_id": "fredholm-64-8",
        "solver": "llk",
        "tau": "3",
        "delta_ladder": ["1e-2"],
        "seeds": [1],
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config(tmp_path, **overrides)))
    return path


class TestConfig:
    def test_decimal_strings(self):
        assert parse_decimal("0.1") == 0.1
        assert parse_decimal("1e-2") == 0.01
        assert parse_decimal(3) == 3.0
        with pytest.raises(ConfigError):
            parse_decimal("abc")
        with pytest.raises(ConfigError):
            parse_decimal(True)

    def test_parse_full(self, tmp_path):
        spec = ExperimentSpec.from_dict(config(tmp_path, solver="elk", epsilon="scaled(0.5)", lambda_mode="half",
                                               max_cycles="500"))
        assert spec.epsilon == ("scaled", 0.5) and spec.lambda_mode == "half" and spec.max_cycles == 500
        spec = ExperimentSpec.from_dict(config(tmp_path, epsilon={"scaled": "2"}))
        assert spec.epsilon == ("scaled", 2.0)

    @pytest.mark.parametrize("bad", [
        {"solver": "newton"},
        {"epsilon": "square"},
        {"lambda_mode": "third"},
        {"seeds": []},
        {"colour": "red"},
        {"deltas": ["1e-2"] * 8},  # together with delta_ladder
    ])
    def test_rejects(self, tmp_path, bad):
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict(config(tmp_path, **bad))

    def test_tau_checked_against_problem(self, tmp_path):
        spec = ExperimentSpec.from_dict(config(tmp_path, problem_id="weak-nl-64-8-a05"))
        with pytest.raises(ConfigError, match="must exceed"):
            run_experiment(spec, write=False)

    def test_unknown_problem(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown problem"):
            run_experiment(ExperimentSpec.from_dict(config(tmp_path, problem_id="nope-1")), write=False)

    def test_output_root_env(self, tmp_path, monkeypatch):
        spec = ExperimentSpec.from_dict(config(tmp_path, output_dir="rel"))
        monkeypatch.setenv("LKREG_OUTPUT_ROOT", str(tmp_path / "root"))
        assert spec.output_path() == tmp_path / "root" / "rel"


class TestRunExperiment:
    def test_llk_row_and_trace(self, tmp_path):
        spec = ExperimentSpec.from_dict(config(tmp_path))
        summary = run_experiment(spec)
        assert summary.ok
        (row,) = summary.rows
        assert row["reason"] == "stationary_cycle" and row["terminal_max_residual_ratio"] <= 1
        assert row["n_star"] % 8 == 0
        path = tmp_path / "out" / row["trace"]
        with open(path) as fh:
            header = next(csv.reader(fh))
        assert tuple(header) == TRACE_COLUMNS
        rows = read_trace(path)
        assert int(rows[-1]["adjoint_evals_cum"]) == row["adjoint_evals"]
        assert all(int(r["omega"]) == 0 for r in rows[-8:])
        data = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert data["ok"] and data["rows"][0]["n_star"] == row["n_star"]

    def test_bitwise_reproducible(self, tmp_path):
        for name in ("a", "b"):
            run_experiment(ExperimentSpec.from_dict(config(tmp_path, output_dir=str(tmp_path / name),
                                                           seeds=[1, 2], solver="elk")))
        for f in sorted((tmp_path / "a" / "traces").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / "traces" / f.name).read_bytes()

    @pytest.mark.parametrize("solver", ["classical_lk", "landweber", "elk"])
    def test_other_solvers(self, tmp_path, solver):
        summary = run_experiment(ExperimentSpec.from_dict(config(tmp_path, solver=solver)))
        assert summary.ok
        rows = read_trace(tmp_path / "out" / summary.rows[0]["trace"])
        phases = {r["phase"] for r in rows}
        assert phases == ({"embed", "balance"} if solver == "elk" else {"full"})

    def test_landweber_vs_elk(self, tmp_path):
        lw = run_experiment(ExperimentSpec.from_dict(config(tmp_path, solver="landweber", max_cycles="100000")),
                            write=False)
        el = run_experiment(ExperimentSpec.from_dict(config(tmp_path, solver="elk")), write=False)
        assert el.rows[0]["terminal_error_to_exact"] <= 2 * lw.rows[0]["terminal_error_to_exact"]

    def test_ladder_trend(self, tmp_path):
        summary = run_experiment(ExperimentSpec.from_dict(config(tmp_path, delta_ladder=["1e-1", "1e-2", "1e-3"])),
                                 write=False)
        errs = [r["terminal_error_to_exact"] for r in summary.rows]
        assert errs[0] >= errs[1] >= errs[2]

    def test_weak_nl_run(self, tmp_path):
        summary = run_experiment(ExperimentSpec.from_dict(config(tmp_path, problem_id="weak-nl-64-8-a05", tau="7")))
        assert summary.ok and summary.rows[0]["reason"] == "stationary_cycle"

    def test_kernel_engine(self, tmp_path):
        a = run_experiment(ExperimentSpec.from_dict(config(tmp_path, engine="kernel")), write=False)
        b = run_experiment(ExperimentSpec.from_dict(config(tmp_path)), write=False)
        assert a.rows[0]["n_star"] == b.rows[0]["n_star"]
        with pytest.raises(ConfigError):
            run_experiment(ExperimentSpec.from_dict(config(tmp_path, engine="kernel", solver="elk")), write=False)

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(ConfigError, match="not writable"):
            run_experiment(ExperimentSpec.from_dict(config(tmp_path, output_dir=str(blocker / "sub"))))


class TestSavings:
    def test_noisy_savings(self, tmp_path):
        report = loping_savings(ExperimentSpec.from_dict(config(tmp_path, seeds=[1, 2])))
        assert report["ok"]
        for run in report["runs"]:
            assert run["skipped"] > 0 and run["final_cycle_llk"] == 0
            assert run["classical_adjoint_evals"] == 8 * run["cycles"]

    def test_noise_free_no_savings(self, tmp_path):
        report = loping_savings(ExperimentSpec.from_dict(config(tmp_path, delta_ladder=["0"], max_cycles="20")))
        (run,) = report["runs"]
        assert run["skipped"] == 0 and run["llk_reason"] == "max_cycles"

    def test_large_delta_lopes_first(self, tmp_path):
        deltas = ["1e-3"] * 8
        deltas[5] = "0.5"
        cfg = config(tmp_path, deltas=deltas)
        del cfg["delta_ladder"]
        report = loping_savings(ExperimentSpec.from_dict(cfg))
        assert report["runs"][0]["first_loped"] == 5


class TestCLI:
    def test_list(self, capsys):
        assert main(["list-problems"]) == 0
        out = capsys.readouterr().out
        assert "fredholm-64-8" in out and "weak-nl-64-8-a05" in out

    def test_verify(self, capsys):
        assert main(["verify", "--problem", "fredholm-64-8"]) == 0
        assert "PASS  adjoint<=1e-10" in capsys.readouterr().out

    def test_run_and_savings(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["run", "--config", str(path)]) == 0
        assert main(["savings", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "savings.json").exists()

    def test_bad_config_exit_code(self, tmp_path):
        path = write_config(tmp_path, tau="2")
        assert main(["run", "--config", str(path)]) == 2
        assert main(["verify", "--problem", "nope"]) == 2

    def test_module_entry(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "lkreg.cli", "list-problems"], capture_output=True, text=True)
        assert proc.returncode == 0 and "fredholm-64-8" in proc.stdout


class TestKernelSelection:
    def test_env_flag_selects_numpy(self):
        code = "from lkreg import _kernels; print(_kernels.USE_NUMBA)"
        env = dict(os.environ, LKREG_DISABLE_NUMBA="1")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True).stdout
        assert out.strip() == "False"

    def test_sweep_backends_agree(self, fredholm, noisy_fredholm):
        s = noisy_fredholm
        A = np.vstack([b.matrix for b in fredholm.system])
        offsets = np.arange(0, 65, 8, dtype=np.int64)
        y = np.concatenate(s.data)
        thr = np.full(8, 3e-2)
        outs = [k["kaczmarz_sweep"](A, offsets, y, thr, np.zeros(64), fredholm.x_exact, True, 100, _kernels.LOPING)
                for k in (_kernels.NUMBA_KERNELS, _kernels.NUMPY_KERNELS)]
        (x1, w1, r1, e1, n1, st1), (x2, w2, r2, e2, n2, st2) = outs
        assert (n1, st1) == (n2, st2) and st1 == _kernels.STATIONARY
        np.testing.assert_array_equal(w1[:n1], w2[:n2])
        np.testing.assert_allclose(x1, x2, atol=1e-12)
        np.testing.assert_allclose(r1[:n1], r2[:n2], rtol=1e-10)
        np.testing.assert_allclose(e1[:n1], e2[:n2], rtol=1e-10)
