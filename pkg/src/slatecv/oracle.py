"""Exact population quantities by brute-force enumeration of the slate space.

Everything here is computed from the reward model's mean (and second
moment) tables weighted by the factored logging probabilities, summing with
:func:`math.fsum` in row-major slate order.  Only desk-sized instances are
supported.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import estimators as est
from .errors import CapacityError, UndefinedEstimateError, ValidationError
from .policy import FactoredPolicy
from .simulator import RewardModel, check_coverage

ORACLE_CAP = 10**6


def _fsum_dot(p: np.ndarray, x: np.ndarray) -> float:
    return math.fsum((p * x).tolist())


@dataclass(frozen=True)
class GroundTruth:
    theta: float
    policy_value: float
    additive: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"theta": self.theta, "policy_value": self.policy_value, "additive": self.additive}


@dataclass(frozen=True)
class PopulationMoments:
    theta: float
    e_g2r: float
    e_gr_yk: Tuple[float, ...]
    var_yk: Tuple[float, ...]
    e_gm1_sq: float
    e_gr_gm1: float
    var_gr: float
    # E[C C^T] with C = (Y_1 - 1, ..., Y_K - 1)
    cc_matrix: Tuple[Tuple[float, ...], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta": self.theta,
            "e_g2r": self.e_g2r,
            "e_gr_yk": list(self.e_gr_yk),
            "var_yk": list(self.var_yk),
            "e_gm1_sq": self.e_gm1_sq,
            "e_gr_gm1": self.e_gr_gm1,
            "var_gr": self.var_gr,
            "cc_matrix": [list(row) for row in self.cc_matrix],
        }


class Enumeration:
    """Per-slate arrays over the logging support, in row-major order."""

    def __init__(self, model: RewardModel, logging: FactoredPolicy, target: FactoredPolicy, cap: int = ORACLE_CAP):
        if logging.is_contextual or target.is_contextual:
            raise ValidationError("the enumeration oracle is non-contextual")
        schema = model.schema
        if logging.schema != schema or target.schema != schema:
            raise ValidationError("model and policies use different schemas", field="schema")
        try:
            slates = schema.all_slates(cap)
        except CapacityError:
            raise CapacityError(f"slate space of {schema.num_slates} exceeds the oracle cap {cap}") from None
        check_coverage(logging, target)
        self.model = model
        mu = logging.slot_probabilities(slates)
        pi = target.slot_probabilities(slates)
        means = model.flat_means()
        self.all_slates = slates
        self.target_prob = np.prod(pi, axis=1)
        self.all_means = means
        prob = np.prod(mu, axis=1)
        support = prob > 0.0
        self.slates = slates[support]
        self.prob = prob[support]
        self.mu = mu[support]
        self.pi = pi[support]
        self.m1 = means[support]
        self.m2 = model.second_moments()[support]
        self._noise = np.maximum(self.m2 - self.m1 * self.m1, 0.0)
        self.ratios = est.Ratios(self.mu, self.pi, self.m1)

    @property
    def size(self) -> int:
        return int(self.prob.shape[0])

    def expect(self, x: np.ndarray) -> float:
        return _fsum_dot(self.prob, x)

    def theta(self) -> float:
        return self.expect(self.ratios.gr)

    def policy_value(self) -> float:
        return _fsum_dot(self.target_prob, self.all_means)

    def moments(self) -> PopulationMoments:
        r = self.ratios
        theta = self.theta()
        var_yk = []
        for k in range(r.K):
            ey = self.expect(r.y[:, k])
            var_yk.append(self.expect((r.y[:, k] - ey) ** 2))
        cc = tuple(
            tuple(self.expect(r.cv[:, j] * r.cv[:, k]) for k in range(r.K)) for j in range(r.K)
        )
        return PopulationMoments(
            theta=theta,
            e_g2r=self.expect(r.g * r.gr),
            e_gr_yk=tuple(self.expect(r.gr * r.cv[:, k]) for k in range(r.K)),
            var_yk=tuple(var_yk),
            e_gm1_sq=self.expect(r.gm1**2),
            e_gr_gm1=self.expect(r.gr * r.gm1),
            var_gr=self.expect(r.g * r.g * self.m2) - theta * theta,
            cc_matrix=cc,
        )

    def gamma_variance(self, w: Union[est.WeightVector, Sequence[float], float]) -> float:
        """Exact ``Var(Gamma_w)``, including reward noise."""
        r = self.ratios
        if isinstance(w, est.WeightVector):
            wv = w.slot_weights(r.K)
        else:
            wv = np.broadcast_to(np.asarray(w, dtype=float), (r.K,))
        cw = np.zeros(self.size)
        for k in range(r.K):
            cw = cw + wv[k] * r.cv[:, k]
        gamma = r.gr - cw
        mean = self.expect(gamma)
        # centered second moment plus the reward noise G^2 Var(R | a)
        return self.expect((gamma - mean) ** 2 + r.g * r.g * self._noise)

    def gamma_variance_grid(self, weights: np.ndarray, dtype: Any = np.float64) -> np.ndarray:
        """Vectorized ``Var(Gamma_w)`` for a batch of weight vectors, shape ``(m, K)``.

        ``dtype=np.longdouble`` evaluates in extended precision (where the
        platform has it), which resolves minimizers along slots whose ratio
        variance is tiny and the objective nearly flat.
        """
        r = self.ratios
        W = np.atleast_2d(np.asarray(weights, dtype=dtype))
        cw = r.cv.astype(dtype) @ W.T
        p = self.prob.astype(dtype)[:, None]
        gamma = r.gr.astype(dtype)[:, None] - cw
        mean = np.sum(p * gamma, axis=0)
        g = r.g.astype(dtype)
        noise = np.sum(self.prob.astype(dtype) * g * g * self._noise.astype(dtype))
        return np.sum(p * (gamma - mean) ** 2, axis=0) + noise


def enumerate_ground_truth(
    model: RewardModel, logging: FactoredPolicy, target: FactoredPolicy, cap: int = ORACLE_CAP
) -> GroundTruth:
    e = Enumeration(model, logging, target, cap)
    return GroundTruth(e.theta(), e.policy_value(), model.is_additive)


def enumerate_moments(
    model: RewardModel, logging: FactoredPolicy, target: FactoredPolicy, cap: int = ORACLE_CAP
) -> PopulationMoments:
    return Enumeration(model, logging, target, cap).moments()


def gamma_variance(model, logging, target, w) -> float:
    return Enumeration(model, logging, target).gamma_variance(w)


def w_star_matrix(moments: PopulationMoments) -> np.ndarray:
    """General solution ``E[CC^T]^{-1} E[GR C]`` (pseudo-inverse for singular slots)."""
    return np.linalg.pinv(np.array(moments.cc_matrix)) @ np.array(moments.e_gr_yk)


def slot_ratio_means(logging: FactoredPolicy, target: FactoredPolicy) -> Dict[Optional[str], List[float]]:
    """``E_mu[Y_k | x]`` per context and slot; 1 for every slot under coverage."""
    out: Dict[Optional[str], List[float]] = {}
    for ctx in logging.contexts() or [None]:
        mu = logging.distributions(ctx)
        pi = target.distributions(ctx) if target.is_contextual else target.distributions()
        means = []
        for m, p in zip(mu, pi):
            safe = m > 0
            means.append(math.fsum((m[safe] * (p[safe] / m[safe])).tolist()))
        out[ctx] = means
    return out


# --- exact finite-sample expectations ---

def _fold_assignments(n: int) -> List[Tuple[int, ...]]:
    sizes = est.fold_sizes(n)
    labels = [j for j, s in enumerate(sizes) for _ in range(s)]
    return sorted(set(itertools.permutations(labels)))


def _outcomes(e: Enumeration) -> Tuple[List[int], List[float], List[float]]:
    rows, rewards, probs = [], [], []
    for s in range(e.size):
        p = float(e.prob[s])
        m = float(e.m1[s])
        if e.model.kind == "deterministic_means":
            rows.append(s), rewards.append(m), probs.append(p)
            continue
        for r, q in ((1.0, m), (0.0, 1.0 - m)):
            if q > 0.0:
                rows.append(s), rewards.append(r), probs.append(p * q)
    return rows, rewards, probs


def exact_estimator_expectation(
    estimator: str,
    model: RewardModel,
    logging: FactoredPolicy,
    target: FactoredPolicy,
    n: int,
    *,
    weights: Union[est.WeightVector, Sequence[float], float, None] = None,
    allow_undefined: bool = False,
    cap: int = ORACLE_CAP,
) -> float:
    """Exact expectation of an estimator over every size-``n`` dataset.

    Bernoulli rewards are enumerated jointly with the slate.  For
    ``CrossFit`` the estimate of each dataset is averaged uniformly over every
    assignment of records to folds with the standard size profile.  If the
    estimator is undefined on a dataset of positive probability this raises
    :class:`UndefinedEstimateError`, unless ``allow_undefined`` is set, in
    which case those datasets are dropped and the result is conditional on
    the estimator being defined.
    """
    name = est.canonical_estimator_name(estimator)
    if n < 1:
        raise ValidationError("n must be >= 1", field="n")
    if name == "CrossFit" and n < 3:
        raise ValidationError("cross-fitting needs n >= 3", field="n")
    e = Enumeration(model, logging, target, cap)
    rows, rewards, probs = _outcomes(e)
    total = len(rows) ** n
    if total > cap:
        raise CapacityError(f"{total} datasets exceed the enumeration cap {cap}")
    if name == "FixedWeights":
        if weights is None:
            raise ValidationError("FixedWeights needs weights")
        wv = weights if isinstance(weights, est.WeightVector) else (
            est.WeightVector.single(float(weights)) if np.ndim(weights) == 0 else est.WeightVector.multi(weights)
        )
    assignments = _fold_assignments(n) if name == "CrossFit" else None

    mu_rows, pi_rows = e.mu[rows], e.pi[rows]
    reward_arr = np.array(rewards)
    terms, mass = [], []
    for combo in itertools.product(range(len(rows)), repeat=n):
        idx = np.array(combo)
        r = est.Ratios(mu_rows[idx], pi_rows[idx], reward_arr[idx])
        p = math.prod(probs[i] for i in combo)
        if name == "PI":
            value = est._pi(r).estimate
        elif name == "wPI":
            rep = est._wpi(r)
            if not rep.defined:
                if not allow_undefined:
                    raise UndefinedEstimateError(f"wPI undefined on a dataset with probability {p!r}")
                continue
            value = rep.estimate
        elif name == "PICVs":
            value = est._fixed(r, est._fit_beta(r)).estimate
        elif name == "PICVm":
            value = est._fixed(r, est._fit_w(r)).estimate
        elif name == "FixedWeights":
            value = est._fixed(r, wv).estimate
        else:
            vals = []
            for labels in assignments:
                lab = np.array(labels)
                folds = [np.nonzero(lab == j)[0] for j in range(3)]
                vals.append(est._crossfit(r, folds, None).estimate)
            value = math.fsum(vals) / len(vals)
        terms.append(p * value)
        mass.append(p)
    if not terms:
        raise UndefinedEstimateError(f"{name} is undefined on every dataset")
    expectation = math.fsum(terms)
    if allow_undefined:
        expectation /= math.fsum(mass)
    return expectation
