"""Synthetic non-contextual slate bandits.

Random streams
--------------
All randomness goes through ``numpy.random.Generator(PCG64(seed))``.  Seeds
for individual cells are derived with :func:`derive_seed`, which hashes a
tuple of nonnegative integers with ``numpy.random.SeedSequence`` and keeps
the first 64-bit word of its state.  A cell's stream therefore depends only
on its key, never on the order in which cells are generated.

Index convention
----------------
The geometric reward rate weights slot-1 action ``a_1`` (1-based) by
``0.5 ** (a_1 - 1)``.  With 0-based action ``i`` that weight is ``0.5 ** i``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, CoverageError, ValidationError
from .policy import ENUMERATION_CAP, FactoredPolicy, SlateDataset, SlateSchema, make_deterministic_policy, make_uniform_policy

KINDS = ("bernoulli_rates", "deterministic_means")
GEOMETRIC_SLOT1_DECAY = 0.5
GEOMETRIC_TAIL_WEIGHT = 0.01
GEOMETRIC_PART_VARIANCE = 0.01


def derive_seed(*keys: int) -> int:
    """64-bit seed mixed from a tuple of nonnegative integers."""
    if any(int(k) < 0 for k in keys):
        raise ValidationError("seed keys must be nonnegative")
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Mean reward of every slate, stored as an array shaped like the slate space.

    ``combination`` records how ``additive_parts`` build the table:
    ``"geometric"`` for the skewed first-slot rate, ``"sum"`` for a plain sum.
    """

    schema: SlateSchema
    kind: str
    table: np.ndarray
    additive_parts: Optional[Tuple[np.ndarray, ...]] = None
    combination: Optional[str] = None
    clamped_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown reward kind {self.kind!r}", field="kind")
        self.schema.check_enumerable()
        table = np.array(self.table, dtype=float).reshape(self.schema.cardinalities)
        if not np.all(np.isfinite(table)):
            raise ValidationError("reward table must be finite", field="table")
        if self.kind == "bernoulli_rates" and (np.any(table < 0) or np.any(table > 1)):
            raise ValidationError("Bernoulli rates must lie in [0, 1]", field="table")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        if self.additive_parts is not None:
            parts = tuple(np.array(p, dtype=float) for p in self.additive_parts)
            if len(parts) != self.schema.num_slots or any(
                p.shape != (d,) for p, d in zip(parts, self.schema.cardinalities)
            ):
                raise ValidationError("additive parts do not match the schema", field="additive_parts")
            for p in parts:
                p.setflags(write=False)
            object.__setattr__(self, "additive_parts", parts)
            if self.combination not in ("geometric", "sum"):
                raise ValidationError(f"unknown part combination {self.combination!r}", field="combination")
            expected = self.combined_parts()
            if self.kind == "bernoulli_rates":
                expected = np.clip(expected, 0.0, 1.0)
            if np.max(np.abs(expected - table)) > 1e-12:
                raise ValidationError("table disagrees with its additive parts", field="table")

    @property
    def is_additive(self) -> bool:
        """True when the table is exactly a sum of per-slot functions."""
        if self.additive_parts is None:
            return False
        return self.clamped_fraction == 0.0

    def combined_parts(self) -> np.ndarray:
        """The unclamped combination of ``additive_parts`` over the slate space."""
        if self.additive_parts is None:
            raise ValueError("model has no additive parts")
        return _combine(self.additive_parts, self.combination, self.schema.cardinalities)

    def mean(self, slates: np.ndarray) -> np.ndarray:
        slates = np.asarray(slates, dtype=np.int64)
        return self.table[tuple(slates.T)]

    def flat_means(self) -> np.ndarray:
        """Mean rewards in row-major slate order."""
        return self.table.reshape(-1)

    def second_moments(self) -> np.ndarray:
        """``E[R^2 | slate]`` in row-major slate order."""
        flat = self.flat_means()
        return flat.copy() if self.kind == "bernoulli_rates" else flat * flat

    def with_kind(self, kind: str) -> "RewardModel":
        return RewardModel(self.schema, kind, self.table, self.additive_parts, self.combination, self.clamped_fraction)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": self.schema.to_dict(),
            "kind": self.kind,
            "table": self.flat_means().tolist(),
            "additive_parts": None if self.additive_parts is None else [p.tolist() for p in self.additive_parts],
            "combination": self.combination,
            "clamped_fraction": self.clamped_fraction,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RewardModel":
        try:
            schema = SlateSchema.from_dict(data["schema"])
            return cls(
                schema,
                data["kind"],
                np.array(data["table"], dtype=float).reshape(schema.cardinalities),
                data.get("additive_parts"),
                data.get("combination"),
                float(data.get("clamped_fraction", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed reward model: {exc}", field="model") from None

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "RewardModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def sample_geometric_tensor(schema: SlateSchema, seed: int, kind: str = "bernoulli_rates") -> RewardModel:
    """Random first-slot-skewed reward rates.

    Each ``phi_k(a)`` is Gaussian with mean ``0.2 / K`` and variance 0.01;
    ``p(a) = 0.5**a_1 * phi_1(a_1) + 0.01 * sum_{k>=2} phi_k(a_k)`` (0-based
    ``a_1``), clamped into [0, 1] for Bernoulli rates.
    """
    schema.check_enumerable()
    K = schema.num_slots
    rng = make_rng(seed)
    sd = math.sqrt(GEOMETRIC_PART_VARIANCE)
    parts = tuple(rng.normal(0.2 / K, sd, size=d) for d in schema.cardinalities)
    return _from_parts(schema, parts, "geometric", kind)


def _combine(parts: Sequence[np.ndarray], combination: Optional[str], cards: Tuple[int, ...]) -> np.ndarray:
    K = len(cards)
    out = np.zeros(cards)
    for k, part in enumerate(parts):
        shape = [1] * K
        shape[k] = part.shape[0]
        if combination == "geometric":
            contrib = GEOMETRIC_SLOT1_DECAY ** np.arange(part.shape[0]) * part if k == 0 else GEOMETRIC_TAIL_WEIGHT * part
        else:
            contrib = part
        out = out + contrib.reshape(shape)
    return out


def _from_parts(schema: SlateSchema, parts: Sequence[np.ndarray], combination: str, kind: str) -> RewardModel:
    parts = tuple(np.asarray(p, dtype=float) for p in parts)
    if len(parts) != schema.num_slots or any(p.shape != (d,) for p, d in zip(parts, schema.cardinalities)):
        raise ValidationError("additive parts do not match the schema", field="additive_parts")
    raw = _combine(parts, combination, schema.cardinalities)
    if kind == "bernoulli_rates":
        clamped = (raw < 0.0) | (raw > 1.0)
        table = np.clip(raw, 0.0, 1.0)
        frac = float(np.mean(clamped))
    else:
        table, frac = raw, 0.0
    return RewardModel(schema, kind, table, parts, combination, frac)


PartSampler = Callable[[np.random.Generator, int, int], np.ndarray]


def _part_sampler(part_distribution: Union[str, PartSampler], K: int) -> PartSampler:
    if callable(part_distribution):
        return part_distribution
    if part_distribution == "uniform":
        return lambda rng, k, d: rng.uniform(0.0, 1.0 / K, size=d)
    if part_distribution == "gaussian":
        return lambda rng, k, d: rng.normal(0.2 / K, math.sqrt(GEOMETRIC_PART_VARIANCE), size=d)
    if part_distribution == "zero":
        return lambda rng, k, d: np.zeros(d)
    raise ValidationError(f"unknown part distribution {part_distribution!r}", field="part_distribution")


def sample_additive_model(
    schema: SlateSchema,
    seed: int,
    part_distribution: Union[str, PartSampler] = "uniform",
    kind: str = "deterministic_means",
) -> RewardModel:
    """Mean reward ``sum_k phi_k(a_k)`` with random per-slot parts.

    ``part_distribution`` is ``"uniform"`` (U[0, 1/K], so sums stay in
    [0, 1]), ``"gaussian"``, ``"zero"``, or a callable
    ``(rng, slot, cardinality) -> array``.
    """
    schema.check_enumerable()
    rng = make_rng(seed)
    sampler = _part_sampler(part_distribution, schema.num_slots)
    parts = tuple(np.asarray(sampler(rng, k, d), dtype=float) for k, d in enumerate(schema.cardinalities))
    return _from_parts(schema, parts, "sum", kind)


def additive_model_from_parts(
    schema: SlateSchema, parts: Sequence[Sequence[float]], kind: str = "deterministic_means"
) -> RewardModel:
    return _from_parts(schema, tuple(np.asarray(p, dtype=float) for p in parts), "sum", kind)


def tabular_model(schema: SlateSchema, table: Any, kind: str = "deterministic_means") -> RewardModel:
    """A reward model from an explicit (possibly non-additive) table."""
    return RewardModel(schema, kind, np.asarray(table, dtype=float).reshape(schema.cardinalities))


def check_coverage(logging: FactoredPolicy, target: FactoredPolicy) -> None:
    """Raise :class:`CoverageError` if the target puts mass where logging has none."""
    for ctx in logging.contexts() or [None]:
        mu = logging.distributions(ctx)
        pi = target.distributions(ctx) if target.is_contextual else target.distributions()
        for k, (m, p) in enumerate(zip(mu, pi)):
            bad = np.nonzero((m <= 0.0) & (p > 0.0))[0]
            if bad.size:
                raise CoverageError(f"slot {k} action {int(bad[0])}: target mass without logging support")


def _sample_slot(rng: np.random.Generator, p: np.ndarray, n: int) -> np.ndarray:
    # inverse CDF on one uniform per record; zero-probability actions are never drawn
    cdf = np.cumsum(p)
    cdf[int(np.nonzero(p > 0)[0][-1]) :] = 1.0
    u = rng.random(n)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def generate_logs(
    model: RewardModel,
    logging: FactoredPolicy,
    target: FactoredPolicy,
    n: int,
    seed: int,
) -> SlateDataset:
    """Draw ``n`` i.i.d. logged records.

    Draw order on the seeded stream: ``n`` uniforms per slot, slot by slot,
    for the slates, then (Bernoulli kind only) ``n`` uniforms for rewards,
    with ``R = 1`` iff ``u < p(slate)``.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}", field="n")
    if logging.is_contextual or target.is_contextual:
        raise ValidationError("synthetic generation is non-contextual")
    if logging.schema != model.schema or target.schema != model.schema:
        raise ValidationError("model and policies use different schemas", field="schema")
    check_coverage(logging, target)
    rng = make_rng(seed)
    K = model.schema.num_slots
    slates = np.empty((n, K), dtype=np.int64)
    for k, p in enumerate(logging.distributions()):
        slates[:, k] = _sample_slot(rng, p, n)
    means = model.mean(slates)
    if model.kind == "bernoulli_rates":
        rewards = (rng.random(n) < means).astype(float)
    else:
        rewards = means.astype(float)
    mu = logging.slot_probabilities(slates)
    pi = target.slot_probabilities(slates)
    return SlateDataset(model.schema, slates, mu, pi, rewards)


@dataclass(frozen=True)
class SimConfig:
    """Synthetic experiment configuration.  Defaults follow the 20-tensor, 300-dataset protocol."""

    cardinalities: Tuple[int, ...] = (10, 10)
    num_tensors: int = 20
    reps_per_tensor: int = 300
    sample_sizes: Tuple[int, ...] = (100, 1000, 10000)
    tensor_seed: int = 0
    data_seed: int = 1
    target: str = "deterministic"
    target_slate: Optional[Tuple[int, ...]] = None
    logging: Union[str, Tuple[Tuple[float, ...], ...]] = "uniform"
    reward_kind: str = "bernoulli_rates"
    model: str = "geometric"
    estimators: Tuple[str, ...] = ("PI", "wPI", "PICVs", "PICVm", "CrossFit")
    crossfit_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cardinalities", tuple(int(d) for d in self.cardinalities))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.target_slate is not None:
            object.__setattr__(self, "target_slate", tuple(int(a) for a in self.target_slate))
        if not isinstance(self.logging, str):
            object.__setattr__(self, "logging", tuple(tuple(float(x) for x in p) for p in self.logging))
        for name in ("num_tensors", "reps_per_tensor"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive", field=name)
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            raise ValidationError("sample sizes must be positive", field="sample_sizes")
        for name in ("tensor_seed", "data_seed", "crossfit_seed"):
            if not 0 <= getattr(self, name) < 2**64:
                raise ValidationError(f"{name} must be a 64-bit unsigned integer", field=name)
        if self.target not in ("deterministic", "logging"):
            raise ValidationError(f"unknown target {self.target!r}", field="target")
        if self.reward_kind not in KINDS:
            raise ValidationError(f"unknown reward kind {self.reward_kind!r}", field="reward_kind")
        if self.model not in ("geometric", "additive"):
            raise ValidationError(f"unknown model {self.model!r}", field="model")
        if isinstance(self.logging, str) and self.logging != "uniform":
            raise ValidationError(f"unknown logging policy {self.logging!r}", field="logging")
        self.logging_policy()
        self.target_policy()

    @property
    def schema(self) -> SlateSchema:
        return SlateSchema(self.cardinalities)

    def logging_policy(self) -> FactoredPolicy:
        if self.logging == "uniform":
            return make_uniform_policy(self.schema)
        return FactoredPolicy(self.schema, self.logging)

    def target_policy(self) -> FactoredPolicy:
        if self.target == "logging":
            return self.logging_policy()
        slate = self.target_slate if self.target_slate is not None else (0,) * len(self.cardinalities)
        return make_deterministic_policy(self.schema, slate)

    def tensor(self, t: int) -> RewardModel:
        seed = derive_seed(self.tensor_seed, t)
        if self.model == "geometric":
            return sample_geometric_tensor(self.schema, seed, self.reward_kind)
        return sample_additive_model(self.schema, seed, "uniform", self.reward_kind)

    def data_seed_for(self, t: int, rep: int, n: int) -> int:
        return derive_seed(self.data_seed, t, rep, n)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cardinalities": list(self.cardinalities),
            "num_tensors": self.num_tensors,
            "reps_per_tensor": self.reps_per_tensor,
            "sample_sizes": list(self.sample_sizes),
            "tensor_seed": self.tensor_seed,
            "data_seed": self.data_seed,
            "target": self.target,
            "target_slate": None if self.target_slate is None else list(self.target_slate),
            "logging": self.logging if isinstance(self.logging, str) else [list(p) for p in self.logging],
            "reward_kind": self.reward_kind,
            "model": self.model,
            "estimators": list(self.estimators),
            "crossfit_seed": self.crossfit_seed,
        }


SIM_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "cardinalities": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "num_tensors": {"type": "integer", "minimum": 1},
        "reps_per_tensor": {"type": "integer", "minimum": 1},
        "sample_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "tensor_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "data_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "target": {"enum": ["deterministic", "logging"]},
        "target_slate": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
        "logging": {
            "oneOf": [
                {"const": "uniform"},
                {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
            ]
        },
        "reward_kind": {"enum": list(KINDS)},
        "model": {"enum": ["geometric", "additive"]},
        "estimators": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "crossfit_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    },
}


def load_sim_config(source: Union[str, Mapping[str, Any]]) -> SimConfig:
    """Validate a JSON config (path or parsed mapping) and fill in defaults."""
    import jsonschema

    if isinstance(source, str):
        try:
            with open(source, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc.msg} (line {exc.lineno})", line=exc.lineno) from None
    else:
        data = dict(source)
    try:
        jsonschema.validate(data, SIM_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<config>"
        raise ValidationError(f"config field '{where}': {exc.message}", field=where) from None
    if "estimators" in data:
        from .estimators import canonical_estimator_name

        data["estimators"] = [canonical_estimator_name(e) for e in data["estimators"]]
    return SimConfig(**data)
