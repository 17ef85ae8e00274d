"""Pseudoinverse estimators and their control-variate refinements.

Every estimator here is a function of the per-record slot ratios
``Y_k = pi_k / mu_k`` and of ``G = 1 + sum_k (Y_k - 1)``:

* ``PI``      mean of ``G R``
* ``wPI``     ``sum G R / sum G``
* fixed ``w`` mean of ``Gamma_w = G R - sum_k w_k (Y_k - 1)``
* ``PICVs``   fixed estimator at the fitted single weight (control variate ``G - 1``)
* ``PICVm``   fixed estimator at the fitted per-slot weights
* ``CrossFit`` three-fold estimator whose weights are fitted on the next fold

Sums are taken with :func:`math.fsum`, so results do not depend on record
order or on how work is scheduled.  ``G - 1`` is accumulated slot by slot,
left to right, starting from ``Y_1 - 1``; ``G`` is ``1 + (G - 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ValidationError
from .policy import LoggedRecord, SlateDataset

DEGENERATE_TOL = 1e-12
WPI_TOL = 1e-12
DEFAULT_CROSSFIT_SEED = 0

ESTIMATOR_NAMES = ("PI", "wPI", "PICVs", "PICVm", "CrossFit", "FixedWeights")
CLI_ESTIMATORS = {"pi": "PI", "wpi": "wPI", "picvs": "PICVs", "picvm": "PICVm", "crossfit": "CrossFit"}


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.shape[0]


def _sample_variance(x: np.ndarray) -> Optional[float]:
    n = x.shape[0]
    if n < 2:
        return None
    m = _mean(x)
    return math.fsum(((x - m) ** 2).tolist()) / (n - 1)


def _plugin_variance(gamma: np.ndarray) -> Optional[float]:
    v = _sample_variance(gamma)
    return None if v is None else v / gamma.shape[0]


@dataclass(frozen=True)
class RatioVector:
    y: Tuple[float, ...]
    g: float

    @property
    def g_minus_one(self) -> float:
        return self.g - 1.0


def compute_ratios(record: LoggedRecord) -> RatioVector:
    """Slot ratios of one record."""
    y = []
    for k, (p, m) in enumerate(zip(record.target_marginals, record.logging_propensities)):
        if not m > 0.0:
            raise ValidationError(f"slot {k} logging propensity must be positive, got {m!r}", field="mu")
        y.append(p / m)
    gm1 = 0.0
    for yk in y:
        gm1 = gm1 + (yk - 1.0)
    return RatioVector(tuple(y), 1.0 + gm1)


class Ratios:
    """Column-wise ratio quantities for a whole dataset."""

    __slots__ = ("y", "cv", "gm1", "g", "gr", "n", "K")

    def __init__(self, mu: np.ndarray, pi: np.ndarray, rewards: np.ndarray):
        if np.any(~(mu > 0.0)):
            raise ValidationError("logging propensities must be positive", field="mu")
        self.y = pi / mu
        self.cv = self.y - 1.0
        self.n, self.K = self.y.shape
        gm1 = np.zeros(self.n) + self.cv[:, 0]
        for k in range(1, self.K):
            gm1 = gm1 + self.cv[:, k]
        self.gm1 = gm1
        self.g = 1.0 + gm1
        self.gr = self.g * rewards

    @classmethod
    def of(cls, dataset: SlateDataset) -> "Ratios":
        return cls(dataset.mu, dataset.pi, dataset.rewards)

    def take(self, idx: np.ndarray) -> "Ratios":
        sub = object.__new__(Ratios)
        sub.y, sub.cv, sub.gm1, sub.g, sub.gr = self.y[idx], self.cv[idx], self.gm1[idx], self.g[idx], self.gr[idx]
        sub.n, sub.K = len(idx), self.K
        return sub


@dataclass(frozen=True)
class WeightVector:
    """Control-variate weights: one shared ``beta`` (single) or one per slot (multi)."""

    values: Tuple[float, ...]
    mode: str = "multi"
    flags: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(self.values, dtype=float)))
        if self.mode not in ("single", "multi"):
            raise ValidationError(f"unknown weight mode {self.mode!r}")
        if self.mode == "single" and len(vals) != 1:
            raise ValidationError("a single-mode weight vector holds exactly one value")
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("weights must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "flags", tuple(self.flags))

    @classmethod
    def single(cls, beta: float, flags: Sequence[str] = ()) -> "WeightVector":
        return cls((beta,), "single", tuple(flags))

    @classmethod
    def multi(cls, w: Sequence[float], flags: Sequence[str] = ()) -> "WeightVector":
        return cls(tuple(w), "multi", tuple(flags))

    @property
    def beta(self) -> float:
        if self.mode != "single":
            raise AttributeError("beta is only defined for single-mode weights")
        return self.values[0]

    def slot_weights(self, num_slots: int) -> np.ndarray:
        if self.mode == "single":
            return np.full(num_slots, self.values[0])
        if len(self.values) != num_slots:
            raise ValidationError(f"{len(self.values)} weights given for {num_slots} slots", field="weights")
        return np.array(self.values)

    def to_list(self) -> List[float]:
        return list(self.values)


@dataclass(frozen=True)
class EstimateReport:
    estimator_name: str
    estimate: float
    n: int
    weights: Optional[WeightVector] = None
    plugin_variance: Optional[float] = None
    flags: Tuple[str, ...] = ()

    @property
    def defined(self) -> bool:
        return "undefined" not in self.flags

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator_name,
            "estimate": self.estimate if math.isfinite(self.estimate) else None,
            "weights": None if self.weights is None else self.weights.to_list(),
            "plugin_variance": self.plugin_variance,
            "n": self.n,
            "flags": list(self.flags),
        }


def _require_nonempty(dataset: SlateDataset) -> None:
    if len(dataset) < 1:
        raise ValidationError("estimation needs at least one record", field="records")


def _gamma(r: Ratios, weights: WeightVector) -> np.ndarray:
    if weights.mode == "single":
        return r.gr - weights.beta * r.gm1
    w = weights.slot_weights(r.K)
    gamma = r.gr
    for k in range(r.K):
        gamma = gamma - w[k] * r.cv[:, k]
    return gamma


def _fit_beta(r: Ratios) -> WeightVector:
    num = _mean(r.gr * r.gm1)
    den = math.fsum(_mean(r.cv[:, k] ** 2) for k in range(r.K))
    if den < DEGENERATE_TOL:
        return WeightVector.single(0.0, ("degenerate",))
    return WeightVector.single(num / den)


def _fit_w(r: Ratios) -> WeightVector:
    w, flags = [], []
    for k in range(r.K):
        den = _mean(r.cv[:, k] ** 2)
        if den < DEGENERATE_TOL:
            w.append(0.0)
            flags.append(f"degenerate:slot={k}")
        else:
            w.append(_mean(r.gr * r.cv[:, k]) / den)
    return WeightVector.multi(w, flags)


def _pi(r: Ratios) -> EstimateReport:
    return EstimateReport("PI", _mean(r.gr), r.n, plugin_variance=_plugin_variance(r.gr))


def _wpi(r: Ratios) -> EstimateReport:
    sum_g = math.fsum(r.g.tolist())
    if abs(sum_g / r.n) < WPI_TOL:
        return EstimateReport("wPI", math.nan, r.n, flags=("undefined",))
    return EstimateReport("wPI", math.fsum(r.gr.tolist()) / sum_g, r.n)


def _fixed(r: Ratios, weights: WeightVector, name: str = "FixedWeights") -> EstimateReport:
    gamma = _gamma(r, weights)
    return EstimateReport(name, _mean(gamma), r.n, weights, _plugin_variance(gamma), weights.flags)


def estimate_pi(dataset: SlateDataset) -> EstimateReport:
    _require_nonempty(dataset)
    return _pi(Ratios.of(dataset))


def estimate_wpi(dataset: SlateDataset) -> EstimateReport:
    """Self-normalized PI; flagged ``undefined`` when the mean of ``G`` vanishes."""
    _require_nonempty(dataset)
    return _wpi(Ratios.of(dataset))


def estimate_fixed_weights(dataset: SlateDataset, w: Union[WeightVector, Sequence[float], float]) -> EstimateReport:
    _require_nonempty(dataset)
    if not isinstance(w, WeightVector):
        w = WeightVector.single(float(w)) if np.ndim(w) == 0 else WeightVector.multi(w)
    if w.mode == "multi" and len(w.values) != dataset.schema.num_slots:
        raise ValidationError(
            f"{len(w.values)} weights given for {dataset.schema.num_slots} slots", field="weights"
        )
    return _fixed(Ratios.of(dataset), w)


def fit_beta_star(dataset: SlateDataset) -> WeightVector:
    """Data-driven single weight ``E_n[GR(G-1)] / sum_k E_n[(Y_k-1)^2]``.

    Falls back to 0 (flag ``degenerate``) when the denominator is below 1e-12.
    """
    _require_nonempty(dataset)
    return _fit_beta(Ratios.of(dataset))


def fit_w_star(dataset: SlateDataset) -> WeightVector:
    """Data-driven per-slot weights ``E_n[GR(Y_k-1)] / E_n[(Y_k-1)^2]``."""
    _require_nonempty(dataset)
    return _fit_w(Ratios.of(dataset))


def estimate_picvs(dataset: SlateDataset) -> EstimateReport:
    _require_nonempty(dataset)
    r = Ratios.of(dataset)
    return _fixed(r, _fit_beta(r), "PICVs")


def estimate_picvm(dataset: SlateDataset) -> EstimateReport:
    _require_nonempty(dataset)
    r = Ratios.of(dataset)
    return _fixed(r, _fit_w(r), "PICVm")


# --- cross-fitting ---

def fold_sizes(n: int) -> Tuple[int, int, int]:
    """Three sizes differing by at most one; the remainder goes to folds 0 then 1."""
    q, rem = divmod(n, 3)
    return tuple(q + (1 if j < rem else 0) for j in range(3))  # type: ignore[return-value]


def crossfit_folds(n: int, seed: int = DEFAULT_CROSSFIT_SEED) -> List[np.ndarray]:
    """Seeded random split of ``range(n)`` into three folds.

    The permutation comes from ``numpy.random.Generator(PCG64(seed))``;
    fold 0 takes the first ``fold_sizes(n)[0]`` permuted indices, and so on.
    """
    if n < 3:
        raise ValidationError(f"cross-fitting needs n >= 3 records, got {n}", field="records")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    bounds = np.cumsum((0,) + fold_sizes(n))
    return [np.sort(perm[bounds[j] : bounds[j + 1]]) for j in range(3)]


def _crossfit(r: Ratios, folds: Sequence[np.ndarray], fold_weights: Optional[Sequence[Sequence[float]]]) -> EstimateReport:
    if len(folds) != 3:
        raise ValidationError("cross-fitting uses exactly three folds")
    parts = [r.take(np.asarray(f, dtype=np.int64)) for f in folds]
    if any(p.n == 0 for p in parts):
        raise ValidationError("cross-fitting fold is empty")
    if sum(p.n for p in parts) != r.n:
        raise ValidationError("folds do not partition the dataset")
    flags: List[str] = []
    if fold_weights is None:
        fits = [_fit_w(p) for p in parts]
        weights = [np.array(f.values) for f in fits]
        for j, f in enumerate(fits):
            flags.extend(f"fold={j}:{flag}" for flag in f.flags)
    else:
        weights = [np.asarray(w, dtype=float).reshape(r.K) for w in fold_weights]
    terms = []
    u = np.empty(r.n)
    for j, part in enumerate(parts):
        w = weights[(j + 1) % 3]
        share = part.n / r.n
        for k in range(r.K):
            terms.append(share * w[k] * _mean(part.cv[:, k]))
        gamma = part.gr
        for k in range(r.K):
            gamma = gamma - w[k] * part.cv[:, k]
        u[np.asarray(folds[j], dtype=np.int64)] = gamma
    estimate = _mean(r.gr) - math.fsum(terms)
    return EstimateReport("CrossFit", estimate, r.n, None, _plugin_variance(u), tuple(flags))


def estimate_crossfit(dataset: SlateDataset, seed: int = DEFAULT_CROSSFIT_SEED) -> EstimateReport:
    """Three-fold cross-fitted estimator; fold ``j`` is corrected with the weights fitted on fold ``j+1 mod 3``."""
    if len(dataset) < 3:
        raise ValidationError(f"n >= 3 required for cross-fitting, got n={len(dataset)}", field="records")
    r = Ratios.of(dataset)
    return _crossfit(r, crossfit_folds(r.n, seed), None)


def estimate_crossfit_from_folds(
    dataset: SlateDataset,
    folds: Sequence[Sequence[int]],
    fold_weights: Optional[Sequence[Sequence[float]]] = None,
) -> EstimateReport:
    """Cross-fit with an explicit partition, optionally overriding the per-fold weights."""
    return _crossfit(Ratios.of(dataset), [np.asarray(f, dtype=np.int64) for f in folds], fold_weights)


def run_estimator(name: str, dataset: SlateDataset, *, seed: int = DEFAULT_CROSSFIT_SEED, weights=None) -> EstimateReport:
    """Dispatch by name (PI, wPI, PICVs, PICVm, CrossFit, FixedWeights; case-insensitive)."""
    key = name.lower()
    if key == "pi":
        return estimate_pi(dataset)
    if key == "wpi":
        return estimate_wpi(dataset)
    if key == "picvs":
        return estimate_picvs(dataset)
    if key == "picvm":
        return estimate_picvm(dataset)
    if key == "crossfit":
        return estimate_crossfit(dataset, seed)
    if key in ("fixed", "fixedweights"):
        if weights is None:
            raise ValidationError("FixedWeights needs weights")
        return estimate_fixed_weights(dataset, weights)
    raise ValidationError(f"unknown estimator {name!r}", field="estimators")


def canonical_estimator_name(name: str) -> str:
    lookup = {n.lower(): n for n in ESTIMATOR_NAMES}
    lookup["fixed"] = "FixedWeights"
    try:
        return lookup[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown estimator {name!r}", field="estimators") from None


# --- population variance constants ---

@dataclass(frozen=True)
class VarianceReport:
    """Asymptotic variances of PI (``v0``), wPI (``v_theta``), the best single
    control variate (``v_dagger``) and the best per-slot weights (``v_star``)."""

    v0: float
    v_theta: float
    v_dagger: float
    v_star: float
    beta_star: float
    w_star: Tuple[float, ...]
    improvements: Dict[str, float]
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "V0": self.v0,
            "Vtheta": self.v_theta,
            "Vdagger": self.v_dagger,
            "Vstar": self.v_star,
            "beta_star": self.beta_star,
            "w_star": list(self.w_star),
            "improvements": dict(self.improvements),
            "flags": list(self.flags),
        }


def single_cv_variance(moments, beta: float) -> float:
    """``Var(G R - beta (G - 1))`` as a quadratic in ``beta``."""
    return moments.var_gr - 2.0 * beta * moments.e_gr_gm1 + beta * beta * moments.e_gm1_sq


def variance_report(moments, tol: float = 1e-10) -> VarianceReport:
    """Closed-form variance constants from exact population moments.

    ``moments`` is a :class:`slatecv.oracle.PopulationMoments`.  Raises
    :class:`ValidationError` when a variance is negative beyond ``tol`` or the
    ordering ``V* <= V_dagger <= min(V0, V_theta)`` fails.
    """
    scale = max(1.0, abs(moments.var_gr))
    atol = tol * scale
    for name in ("var_gr", "e_gm1_sq"):
        if getattr(moments, name) < -atol:
            raise ValidationError(f"inconsistent moments: {name} = {getattr(moments, name)!r} is negative")
    if any(v < -atol for v in moments.var_yk):
        raise ValidationError("inconsistent moments: negative slot ratio variance")
    theta = moments.theta
    v0 = moments.var_gr
    v_theta = single_cv_variance(moments, theta)
    flags = []

    sum_var = math.fsum(moments.var_yk)
    if sum_var < DEGENERATE_TOL:
        beta_star, v_dagger = 0.0, v0
        pi_gap_single = 0.0
        wpi_gap = v_theta - v0
        flags.append("degenerate")
    else:
        num = moments.e_g2r - theta
        beta_star = num / sum_var
        v_dagger = v0 - num * num / sum_var
        # improvement formulas, written in terms of E[GR(G-1)] and E[(G-1)^2]
        pi_gap_single = moments.e_gr_gm1**2 / moments.e_gm1_sq
        wpi_gap = (
            pi_gap_single
            - 2.0 * theta * moments.e_g2r
            + theta * theta * (2.0 + moments.e_gm1_sq)
        )

    w_star, terms = [], []
    for k, (c, v) in enumerate(zip(moments.e_gr_yk, moments.var_yk)):
        if v < DEGENERATE_TOL:
            w_star.append(0.0)
            flags.append(f"degenerate:slot={k}")
        else:
            w_star.append(c / v)
            terms.append(c * c / v)
    pi_gap_multi = math.fsum(terms)
    v_star = v0 - pi_gap_multi

    improvements = {
        "PI_minus_Vdagger": pi_gap_single,
        "wPI_minus_Vdagger": wpi_gap,
        "PI_minus_Vstar": pi_gap_multi,
        "Vdagger_minus_Vstar": pi_gap_multi - pi_gap_single,
    }
    for name, v in (("V0", v0), ("Vtheta", v_theta), ("Vdagger", v_dagger), ("Vstar", v_star)):
        if v < -atol:
            raise ValidationError(f"inconsistent moments: {name} = {v!r} is negative")
    if not (v_star <= v_dagger + atol and v_dagger <= min(v0, v_theta) + atol):
        raise ValidationError(
            f"variance ordering violated: V*={v_star!r}, Vdagger={v_dagger!r}, V0={v0!r}, Vtheta={v_theta!r}"
        )
    return VarianceReport(v0, v_theta, v_dagger, v_star, beta_star, tuple(w_star), improvements, tuple(flags))


# --- reporting helpers ---

@dataclass(frozen=True)
class LogRMSE:
    log10_rmse: float
    se: Optional[float]
    flags: Tuple[str, ...] = ()


def delta_method_se(squared_errors: Sequence[float]) -> LogRMSE:
    """``log10(RMSE)`` and its delta-method standard error from replicate squared errors.

    With ``m`` replicates, ``se = (sd(sq) / sqrt(m)) / (mean(sq) * 2 ln 10)``
    where ``sd`` uses ``m - 1`` degrees of freedom.
    """
    sq = np.asarray(squared_errors, dtype=float)
    if sq.ndim != 1 or sq.shape[0] < 2:
        raise ValidationError("delta method needs at least two squared errors")
    if not np.all(np.isfinite(sq)) or np.any(sq < 0):
        raise ValidationError("squared errors must be finite and nonnegative")
    mse = _mean(sq)
    if mse == 0.0:
        return LogRMSE(-math.inf, None, ("zero_mse",))
    sd = math.sqrt(_sample_variance(sq))
    se = (sd / math.sqrt(sq.shape[0])) / (mse * 2.0 * math.log(10.0))
    return LogRMSE(math.log10(mse) / 2.0, se)
