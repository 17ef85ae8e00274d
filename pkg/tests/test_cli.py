"""End-to-end runs of every subcommand against golden files.

Set ``SLATECV_UPDATE_GOLDEN=1`` to rewrite the golden outputs after an
intentional format change; review the diff before committing.
"""
import io
import json
import os
from pathlib import Path

import pytest

from slatecv import read_jsonl
from slatecv.cli import main

GOLDEN = Path(__file__).parent / "golden"
UPDATE = os.environ.get("SLATECV_UPDATE_GOLDEN") == "1"

TINY_BENCH = ["--cardinalities", "3,3", "--estimators", "pi,wpi,picvs,picvm,crossfit"]


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def check_golden(name, text):
    path = GOLDEN / name
    if UPDATE:
        path.write_text(text, encoding="utf-8")
    assert text == path.read_text(encoding="utf-8"), f"output differs from {path}"


@pytest.fixture
def bench_config(tmp_path):
    path = tmp_path / "bench.json"
    path.write_text(json.dumps({"num_tensors": 2, "reps_per_tensor": 4, "sample_sizes": [10, 30]}))
    return str(path)


def test_evaluate_two_record_example():
    code, out, _ = run("evaluate", "--input", str(GOLDEN / "two_record.jsonl"), "--estimators", "pi,wpi,picvs")
    assert code == 0
    reports = [json.loads(line) for line in out.splitlines()]
    assert [r["estimator"] for r in reports] == ["PI", "wPI", "PICVs"]
    assert [r["estimate"] for r in reports] == [1.0, 1.0, 1.0]
    check_golden("evaluate_two_record.jsonl", out)


def test_evaluate_csv():
    code, out, _ = run("evaluate", "--input", str(GOLDEN / "two_record.jsonl"), "--format", "csv")
    assert code == 0
    assert out.splitlines()[0] == "estimator,estimate,plugin_variance,n,weights,flags"
    check_golden("evaluate_two_record.csv", out)


def test_evaluate_zero_propensity():
    code, out, err = run("evaluate", "--input", str(GOLDEN / "zero_mu.jsonl"))
    assert code == 2 and out == ""
    assert "line 3" in err and "'mu'" in err


def test_evaluate_crossfit_needs_three():
    code, _, err = run("evaluate", "--input", str(GOLDEN / "two_record.jsonl"), "--estimators", "crossfit")
    assert code == 2
    assert "n >= 3 required" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["evaluate", "--input", "/nonexistent.jsonl"],
        ["evaluate", "--input", "x", "--estimators", "bogus"],
        ["bench", "--config", "/nonexistent.json"],
        ["frobnicate"],
    ],
)
def test_bad_invocations_exit_2(argv):
    assert run(*argv)[0] == 2


def test_simulate_golden_and_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        assert run("simulate", "--cardinalities", "3,3", "--n", "8", "--seed", "7", "--output", str(path))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    check_golden("simulate_seed7.jsonl", a.read_text())
    c = tmp_path / "c.jsonl"
    run("simulate", "--cardinalities", "3,3", "--n", "8", "--seed", "8", "--output", str(c))
    assert c.read_bytes() != a.read_bytes()


def test_simulate_evaluate_round_trip(tmp_path):
    data = tmp_path / "d.jsonl"
    model = tmp_path / "m.json"
    assert run("simulate", "--n", "200", "--seed", "3", "--output", str(data), "--model-output", str(model))[0] == 0
    assert len(read_jsonl(str(data))) == 200
    code, out, err = run("evaluate", "--input", str(data), "--estimators", "pi,wpi,picvs,picvm,crossfit")
    assert code == 0 and err == ""
    assert len(out.splitlines()) == 5
    assert run("oracle", "--model", str(model))[0] == 0


def test_bench_csv_golden(bench_config):
    code, out, _ = run("bench", "--config", bench_config, *TINY_BENCH, "--format", "csv")
    assert code == 0
    assert out.splitlines()[0] == "estimator,n,tensor,mse,log10_rmse,se,defined,undefined"
    check_golden("bench_tiny.csv", out)


def test_bench_jobs_identical(bench_config, tmp_path):
    outputs = []
    for jobs in ("1", "2"):
        path = tmp_path / f"bench{jobs}.json"
        assert run("bench", "--config", bench_config, *TINY_BENCH, "--jobs", jobs, "--output", str(path))[0] == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    echoed = json.loads(outputs[0])["config"]
    assert echoed["reps_per_tensor"] == 4 and echoed["crossfit_seed"] == 0


def test_oracle_additive_golden():
    code, out, _ = run("oracle", "--model", str(GOLDEN / "additive_model.json"), "--target-slate", "1,2")
    assert code == 0
    data = json.loads(out)
    truth = data["ground_truth"]
    assert truth["additive"]
    assert truth["theta"] == pytest.approx(truth["policy_value"], abs=1e-12)
    assert truth["policy_value"] == pytest.approx(0.3, abs=1e-15)
    check_golden("oracle_additive.json", out)


def test_oracle_cap_exit_3():
    code, _, err = run("oracle", "--cardinalities", "1000,1001")
    assert code == 3
    assert "cap" in err
