"""Synthetic benchmark: tensors x replications x sample sizes x estimators."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import estimators as est
from .errors import ValidationError
from .oracle import enumerate_ground_truth
from .simulator import SimConfig, generate_logs

CSV_COLUMNS = ("estimator", "n", "tensor", "mse", "log10_rmse", "se", "defined", "undefined")


@dataclass(frozen=True)
class BenchCell:
    estimator: str
    n: int
    tensor: Optional[int]  # None for the average over tensors
    mse: Optional[float]
    log10_rmse: Optional[float]
    se: Optional[float]
    defined: int
    undefined: int
    estimate_variance: Optional[float]

    @property
    def missing(self) -> bool:
        return self.defined == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "n": self.n,
            "tensor": "all" if self.tensor is None else self.tensor,
            "mse": _finite_or_none(self.mse),
            "log10_rmse": _finite_or_none(self.log10_rmse),
            "se": _finite_or_none(self.se),
            "defined": self.defined,
            "undefined": self.undefined,
            "estimate_variance": _finite_or_none(self.estimate_variance),
            "missing": self.missing,
        }


def _finite_or_none(x: Optional[float]) -> Optional[float]:
    return None if x is None or not math.isfinite(x) else x


@dataclass(frozen=True, eq=False)
class BenchReport:
    config: SimConfig
    estimators: Tuple[str, ...]
    thetas: Tuple[float, ...]
    # (estimator, n, tensor) -> per-replication estimates, NaN where undefined
    estimates: Dict[Tuple[str, int, int], np.ndarray]
    cells: Tuple[BenchCell, ...]

    def squared_errors(self, estimator: str, n: int, tensor: int) -> np.ndarray:
        e = self.estimates[(estimator, n, tensor)]
        return (e - self.thetas[tensor]) ** 2

    def cell(self, estimator: str, n: int, tensor: Optional[int] = None) -> BenchCell:
        for c in self.cells:
            if c.estimator == estimator and c.n == n and c.tensor == tensor:
                return c
        raise KeyError((estimator, n, tensor))

    def to_dict(self, include_replications: bool = True) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "config": self.config.to_dict(),
            "estimators": list(self.estimators),
            "thetas": list(self.thetas),
            "cells": [c.to_dict() for c in self.cells],
        }
        if include_replications:
            reps: Dict[str, Dict[str, List[List[Optional[float]]]]] = {}
            for (name, n, t), vals in sorted(self.estimates.items()):
                reps.setdefault(name, {}).setdefault(str(n), []).append([_finite_or_none(v) for v in vals.tolist()])
            out["replications"] = reps
        return out

    def to_json(self, include_replications: bool = True) -> str:
        return json.dumps(self.to_dict(include_replications), allow_nan=False, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for c in self.cells:
            d = c.to_dict()
            writer.writerow(["" if d[col] is None else repr(d[col]) if isinstance(d[col], float) else d[col] for col in CSV_COLUMNS])
        return buf.getvalue()


def _run_tensor(config: SimConfig, estimators: Sequence[str], t: int) -> Tuple[float, Dict[Tuple[str, int], np.ndarray]]:
    model = config.tensor(t)
    logging, target = config.logging_policy(), config.target_policy()
    theta = enumerate_ground_truth(model, logging, target).theta
    out = {(name, n): np.full(config.reps_per_tensor, np.nan) for name in estimators for n in config.sample_sizes}
    for n in config.sample_sizes:
        for rep in range(config.reps_per_tensor):
            data = generate_logs(model, logging, target, n, config.data_seed_for(t, rep, n))
            for name in estimators:
                report = est.run_estimator(name, data, seed=config.crossfit_seed)
                if report.defined:
                    out[(name, n)][rep] = report.estimate
    return theta, out


def _tensor_cell(name: str, n: int, t: int, estimates: np.ndarray, theta: float) -> BenchCell:
    ok = np.isfinite(estimates)
    defined = int(ok.sum())
    undefined = int(estimates.shape[0] - defined)
    if defined == 0:
        return BenchCell(name, n, t, None, None, None, 0, undefined, None)
    sq = (estimates[ok] - theta) ** 2
    mse = math.fsum(sq.tolist()) / defined
    log10_rmse = math.log10(mse) / 2.0 if mse > 0 else -math.inf
    se = est.delta_method_se(sq).se if defined >= 2 and mse > 0 else None
    var = est._sample_variance(estimates[ok])
    return BenchCell(name, n, t, mse, log10_rmse, se, defined, undefined, var)


def _aggregate(name: str, n: int, cells: Sequence[BenchCell]) -> BenchCell:
    present = [c for c in cells if not c.missing]
    defined = sum(c.defined for c in cells)
    undefined = sum(c.undefined for c in cells)
    if not present:
        return BenchCell(name, n, None, None, None, None, 0, undefined, None)
    mse = math.fsum(c.mse for c in present) / len(present)
    logs = np.array([c.log10_rmse for c in present])
    log10_rmse = math.fsum(logs.tolist()) / len(present)
    if len(present) >= 2 and np.all(np.isfinite(logs)):
        se = math.sqrt(est._sample_variance(logs) / len(present))
    else:
        se = present[0].se if len(present) == 1 else None
    variances = [c.estimate_variance for c in present if c.estimate_variance is not None]
    var = math.fsum(variances) / len(variances) if variances else None
    return BenchCell(name, n, None, mse, log10_rmse, se, defined, undefined, var)


def run_benchmark(config: SimConfig, estimators: Optional[Sequence[str]] = None, jobs: int = 1) -> BenchReport:
    """Run every (tensor, replication, sample size) cell and aggregate.

    Replication ``r`` of tensor ``t`` at size ``n`` uses data seed
    ``derive_seed(data_seed, t, r, n)``; tensor ``t`` uses
    ``derive_seed(tensor_seed, t)``.  Per-tensor MSE excludes undefined
    replications (their count is reported); the ``tensor=None`` cells average
    MSE and log10-RMSE over tensors, with the standard error taken across
    tensors (or the delta-method one when there is a single tensor).
    """
    names = tuple(est.canonical_estimator_name(e) for e in (estimators or config.estimators))
    if "FixedWeights" in names:
        raise ValidationError("FixedWeights is not a benchmark estimator", field="estimators")
    if "CrossFit" in names and min(config.sample_sizes) < 3:
        raise ValidationError("CrossFit needs sample sizes >= 3", field="sample_sizes")
    tensors = range(config.num_tensors)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_tensor, [config] * len(tensors), [names] * len(tensors), tensors))
    else:
        results = [_run_tensor(config, names, t) for t in tensors]
    thetas = tuple(theta for theta, _ in results)
    estimates = {(name, n, t): res[(name, n)] for t, (_, res) in enumerate(results) for (name, n) in res}
    cells: List[BenchCell] = []
    for name in names:
        for n in config.sample_sizes:
            per_tensor = [_tensor_cell(name, n, t, estimates[(name, n, t)], thetas[t]) for t in tensors]
            cells.append(_aggregate(name, n, per_tensor))
            cells.extend(per_tensor)
    return BenchReport(config, names, thetas, estimates, tuple(cells))


def loglog_slope(sample_sizes: Sequence[int], log10_rmse: Sequence[float]) -> float:
    """Least-squares slope of ``log10 RMSE`` against ``log10 n``."""
    x = np.log10(np.asarray(sample_sizes, dtype=float))
    y = np.asarray(log10_rmse, dtype=float)
    if x.shape[0] < 2:
        raise ValidationError("slope needs at least two sample sizes")
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
