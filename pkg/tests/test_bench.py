import csv
import io
import json
import math

import numpy as np
import pytest

from slatecv import SimConfig, ValidationError
from slatecv.bench import CSV_COLUMNS, loglog_slope, run_benchmark

SMALL = dict(cardinalities=(3, 3), num_tensors=2, reps_per_tensor=6, sample_sizes=(20, 60))


@pytest.fixture(scope="module")
def report():
    return run_benchmark(SimConfig(**SMALL))


def test_cells_cover_grid(report):
    cfg = report.config
    assert len(report.cells) == len(cfg.estimators) * len(cfg.sample_sizes) * (cfg.num_tensors + 1)
    for c in report.cells:
        assert c.defined + c.undefined == cfg.reps_per_tensor * (cfg.num_tensors if c.tensor is None else 1)


def test_mse_recomputes_from_stored_errors(report):
    for c in report.cells:
        if c.tensor is None or c.missing:
            continue
        sq = report.squared_errors(c.estimator, c.n, c.tensor)
        sq = sq[np.isfinite(sq)]
        assert abs(c.mse - sq.mean()) <= 1e-12
        assert c.log10_rmse == pytest.approx(math.log10(sq.mean()) / 2, abs=1e-12)


def test_aggregate_is_mean_over_tensors(report):
    for name in report.estimators:
        for n in report.config.sample_sizes:
            agg = report.cell(name, n)
            per = [report.cell(name, n, t) for t in range(report.config.num_tensors)]
            assert agg.mse == pytest.approx(np.mean([c.mse for c in per]), rel=1e-12)
            assert agg.log10_rmse == pytest.approx(np.mean([c.log10_rmse for c in per]), abs=1e-12)


def test_deterministic_across_runs_and_jobs(report):
    again = run_benchmark(SimConfig(**SMALL))
    parallel = run_benchmark(SimConfig(**SMALL), jobs=2)
    assert again.to_json() == report.to_json() == parallel.to_json()
    assert parallel.to_csv() == report.to_csv()


def test_data_seed_changes_output(report):
    other = run_benchmark(SimConfig(**{**SMALL, "data_seed": 99}))
    assert other.to_json() != report.to_json()
    # tensors depend only on the tensor seed
    assert other.thetas == report.thetas


def test_target_equals_logging_collapses_estimators():
    cfg = SimConfig(**{**SMALL, "target": "logging", "reward_kind": "deterministic_means"})
    rep = run_benchmark(cfg)
    for n in cfg.sample_sizes:
        for t in range(cfg.num_tensors):
            base = rep.estimates[("PI", n, t)]
            for name in cfg.estimators:
                np.testing.assert_array_equal(rep.estimates[(name, n, t)], base)


def test_csv_output(report):
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + len(report.cells)
    first = dict(zip(rows[0], rows[1]))
    assert first["tensor"] == "all"
    assert float(first["mse"]) == report.cells[0].mse


def test_json_output(report):
    data = json.loads(report.to_json())
    assert data["config"]["cardinalities"] == [3, 3]
    assert len(data["replications"]["PI"]["20"]) == 2
    assert len(data["replications"]["PI"]["20"][0]) == 6
    assert "replications" not in json.loads(report.to_json(include_replications=False))


def test_undefined_wpi_counted():
    # G is 19, 9 or -1 here; one partial hit among ten misses gives sum(G) == 0
    cfg = SimConfig(cardinalities=(10, 10), num_tensors=1, reps_per_tensor=40, sample_sizes=(10,), estimators=("PI", "wPI"))
    rep = run_benchmark(cfg)
    cell = rep.cell("wPI", 10, 0)
    assert cell.undefined > 0
    assert cell.defined + cell.undefined == 40
    assert rep.cell("PI", 10, 0).undefined == 0
    assert int(np.isnan(rep.estimates[("wPI", 10, 0)]).sum()) == cell.undefined


def test_benchmark_validation():
    with pytest.raises(ValidationError):
        run_benchmark(SimConfig(**SMALL), estimators=["FixedWeights"])
    with pytest.raises(ValidationError):
        run_benchmark(SimConfig(**{**SMALL, "sample_sizes": (2,)}), estimators=["CrossFit"])


@pytest.mark.parametrize(
    "sizes, logs, slope",
    [
        ((100, 1000, 10000), (-1.0, -1.5, -2.0), -0.5),
        ((10, 100), (0.0, 1.0), 1.0),
    ],
)
def test_loglog_slope(sizes, logs, slope):
    assert loglog_slope(sizes, logs) == pytest.approx(slope, abs=1e-12)
