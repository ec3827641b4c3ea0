import json

import numpy as np
import pytest

from stochnewton.cli import main

GOOD = "+1 1:0.5 3:1\n-1 2:1.5\n+1 1:-1 2:0.25 3:2\n"


@pytest.fixture
def libsvm(tmp_path):
    path = tmp_path / "d.svm"
    path.write_text(GOOD)
    return path


class TestParseCheck:
    def test_summary(self, libsvm, capsys):
        assert main(["parse-check", str(libsvm)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["count"] == 3 and info["dim"] == 3 and info["nnz"] == 6
        assert (info["positive"], info["negative"]) == (2, 1)
        assert info["max_row_norm"] == pytest.approx(np.sqrt(1 + 0.0625 + 4))

    def test_bad_file(self, tmp_path, capsys):
        path = tmp_path / "bad.svm"
        path.write_text("+1 1:0.5\n+1 3:1 2:1\n")
        assert main(["parse-check", str(path)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["parse-check", str(tmp_path / "none.svm")]) == 2


class TestNewtonRef:
    def test_writes_outputs(self, tmp_path, capsys):
        out = tmp_path / "ref"
        code = main(["newton-ref", "--synthetic", "300,5", "--mu", "1e-3", "--out", str(out)])
        assert code == 0
        assert capsys.readouterr().out.startswith("F* = ")
        info = json.loads((out / "newton_ref.json").read_text())
        assert info["grad_norm"] <= 1e-12
        assert np.loadtxt(out / "x_star.txt").shape == (5,)

    def test_separable_fails(self, tmp_path, capsys):
        path = tmp_path / "sep.svm"
        path.write_text("+1 1:1\n-1 1:-1\n")
        assert main(["newton-ref", "--data", str(path)]) == 2
        assert "separable" in capsys.readouterr().err


class TestRun:
    def test_local_sgd(self, tmp_path, capsys):
        out = tmp_path / "run"
        argv = ["run", "--alg", "local-sgd", "--synthetic", "200,4", "--mu", "0.01",
                "-M", "2", "-K", "3", "-R", "4", "--eta", "0.3", "--reps", "2", "--out", str(out)]  # fmt: skip
        assert main(argv) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("alg,mu,M,K,R")
        assert lines[1].startswith("local-sgd,0.01,2,3,4,0.3,0.0,,")
        assert {p.name for p in out.iterdir()} == {"results.csv", "trajectories.jsonl", "meta.json"}

    def test_fedac_needs_regularisation(self, tmp_path, capsys):
        argv = ["run", "--alg", "fedac1", "--synthetic", "50,3", "-M", "1", "-K", "1", "-R", "1",
                "--out", str(tmp_path)]  # fmt: skip
        assert main(argv) == 2
        assert "mu" in capsys.readouterr().err

    def test_fedac_internal(self, tmp_path, capsys):
        argv = ["run", "--alg", "fedac2", "--synthetic", "50,3", "-M", "2", "-K", "2", "-R", "2",
                "--lambda-internal", "1e-3", "--eta", "0.1", "--out", str(tmp_path)]  # fmt: skip
        assert main(argv) == 0
        assert ",0.001," in capsys.readouterr().out

    def test_budget_error(self, tmp_path, capsys):
        argv = ["run", "--alg", "fedsn", "--synthetic", "100,3", "--mu", "0.01",
                "-M", "2", "-K", "20", "-R", "3", "--out", str(tmp_path)]  # fmt: skip
        assert main(argv) == 2
        assert "R=3" in capsys.readouterr().err


class TestTune:
    def config(self, tmp_path, **kw):
        raw = {"algorithms": ["minibatch-sgd", "fedsn-lite"],
               "data": {"synthetic": {"count": 150, "dim": 4, "seed": 2}},
               "mu": [0.01], "M": [2], "K": [3], "R": [3], "eta_grid": [0.1, 1.0],
               "beta_grid": [0.0], "tuning_reps": 2, "final_reps": 2, "f_star": 0.5}  # fmt: skip
        raw.update(kw)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(raw))
        return path

    def test_threads_and_seed(self, tmp_path):
        cfg = self.config(tmp_path)
        outs = []
        for name, extra in [("a", []), ("b", ["--threads", "3"]), ("c", ["--seed", "9"])]:
            assert main(["tune", "--config", str(cfg), "--out", str(tmp_path / name), *extra]) == 0
            outs.append((tmp_path / name / "results.csv").read_bytes())
        assert outs[0] == outs[1]
        assert outs[0] != outs[2]

    def test_invalid_config(self, tmp_path, capsys):
        cfg = self.config(tmp_path, M=[])
        assert main(["tune", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "invalid config" in capsys.readouterr().err


def test_print_schema(capsys):
    assert main(["print-schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "algorithms" in schema["properties"]
