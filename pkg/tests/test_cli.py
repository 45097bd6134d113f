import csv
import io
import json
import os

import pytest

from ibmtail.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))


def test_tail_example(capsys):
    code, out, _ = run(capsys, "tail", "--m", "1", "--norm", "sup", "--r", "2", "--n", "100000",
                       "--is", "endpoint", "--seed", "7", "--grid", "1024")
    assert code == 0
    assert out.startswith("# ibmtail tail seed=7 config_hash=")
    header, row = rows(out)
    assert header == ["m", "norm", "p", "r", "method", "estimate", "stderr", "n", "seed", "reference"]
    d = dict(zip(header, row))
    est, ref = float(d["estimate"]), float(d["reference"])
    assert d["method"] == "importance" and d["seed"] == "7"
    assert ref == pytest.approx(0.000570930, rel=1e-5)
    assert 0.5 <= est / ref <= 1.5


def test_spectrum_example(capsys):
    code, out, _ = run(capsys, "spectrum", "--m", "0", "--nodes", "200")
    assert code == 0
    d = json.loads(out)
    assert abs(d["eigenvalues"][0] - 0.405285) < 1e-6
    assert d["n_nodes"] == 200 and "config_hash" in d and "gap" in d and "trace_check" in d


def test_outputs_are_deterministic_and_atomic(tmp_path, capsys):
    outs = []
    for k, threads in enumerate(("1", "2")):
        path = tmp_path / f"t{k}.csv"
        code, _, _ = run(capsys, "compare", "--m", "1", "--norm", "l2", "--r", "1.5,2", "--n", "5000",
                         "--mean-n", "2000", "--threads", threads, "--output", str(path))
        assert code == 0
        outs.append(path.read_bytes())
        man = json.loads((tmp_path / f"t{k}.csv.manifest.json").read_text())
        assert man["config"]["threads"] == int(threads)
        assert {"config_hash", "seed", "versions", "wall_time_seconds"} <= set(man)
    # thread count is not part of the result
    assert outs[0] == outs[1]
    assert sorted(os.listdir(tmp_path)) == ["t0.csv", "t0.csv.manifest.json", "t1.csv",
                                            "t1.csv.manifest.json"]
    header = rows(outs[0].decode())[0]
    assert header == ["r", "mc_estimate", "mc_stderr", "asymptotic", "borell", "thm2", "ratio_mc_asym"]


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("IBMTAIL_SEED", "99")
    code, out, _ = run(capsys, "simulate", "--m", "1", "--grid", "4", "--n", "1")
    assert code == 0 and "seed=99" in out
    monkeypatch.setenv("IBMTAIL_SEED", "x")
    code, _, err = run(capsys, "simulate", "--m", "1")
    assert code == 2 and json.loads(err)["error"] == "usage"


@pytest.mark.parametrize("argv", [
    ["tail", "--m", "1", "--r", "-1"],
    ["tail", "--m", "1", "--norm", "lp", "--r", "1"],
    ["tail", "--m", "1", "--norm", "l2", "--r", "1", "--is", "endpoint"],
    ["spectrum", "--m", "99"],
    ["laplace", "--r", "1", "--theta", "2"],
    ["bogus"],
    ["tail", "--m", "1"],
])
def test_usage_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == ""
    assert len(err.strip().splitlines()) == 1
    assert json.loads(err)["error"] == "usage"


def test_numeric_error(capsys, tmp_path):
    path = tmp_path / "lap.csv"
    code, _, err = run(capsys, "laplace", "--m", "1", "--r", "1", "--n", "50", "--grid", "64",
                       "--output", str(path))
    msg = json.loads(err)
    assert code == 1 and msg["error"] == "numeric" and msg["type"] == "SpliceError"
    assert not path.exists() and os.listdir(tmp_path) == []


@pytest.mark.parametrize("argv", [
    ["kernel", "--m", "2", "--grid", "3"],
    ["kernel", "--m", "1", "--t", "0.5,1", "--format", "json"],
    ["spectrum", "--m", "1", "--nodes", "32", "--format", "csv", "--terms", "4"],
    ["simulate", "--m", "2", "--grid", "8", "--n", "3", "--method", "cholesky", "--format", "json"],
    ["smallball", "--m", "0", "--eps", "0.6,0.55,0.5,0.45", "--n", "20000", "--grid", "256"],
    ["laplace", "--m", "1", "--r", "1,2", "--n", "20000", "--grid", "128", "--method", "direct-mc"],
    ["laplace", "--m", "2", "--norm", "lp", "--p", "3", "--r", "1", "--method", "asymptotic"],
    ["compare", "--m", "0", "--norm", "sup", "--r", "2,3", "--n", "20000", "--grid", "512"],
    ["tail", "--m", "1", "--norm", "lp", "--p", "3", "--r", "0.5", "--n", "5000", "--grid", "64",
     "--format", "json"],
])
def test_commands_run_and_repeat(capsys, argv):
    code, out, _ = run(capsys, *argv)
    assert code == 0 and out
    code2, out2, _ = run(capsys, *argv)
    assert code2 == 0 and out2 == out


def test_kernel_values(capsys):
    _, out, _ = run(capsys, "kernel", "--m", "1", "--t", "0.5,1", "--format", "json")
    d = json.loads(out)
    assert d["kernel"][0][1] == pytest.approx(0.25 * 2.5 / 6, rel=1e-14)
