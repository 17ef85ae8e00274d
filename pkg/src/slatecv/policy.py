"""Slate schemas, factored policies and logged slate data.

Actions are 0-based indices everywhere in this package.  The only place a
1-based convention appears is the geometric reward tensor, and the
conversion is done inside :mod:`slatecv.simulator`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .errors import CapacityError, CoverageError, ValidationError

ENUMERATION_CAP = 10**9
PROBABILITY_ATOL = 1e-12

ContextId = Optional[str]


@dataclass(frozen=True)
class SlateSchema:
    """Slot count and per-slot action cardinalities."""

    cardinalities: Tuple[int, ...]

    def __post_init__(self) -> None:
        cards = tuple(self.cardinalities)
        if len(cards) < 1:
            raise ValidationError("a slate needs at least one slot", field="cardinalities")
        for k, d in enumerate(cards):
            if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 1:
                raise ValidationError(f"slot {k} cardinality must be a positive integer, got {d!r}", field="cardinalities")
        object.__setattr__(self, "cardinalities", tuple(int(d) for d in cards))

    @property
    def num_slots(self) -> int:
        return len(self.cardinalities)

    @property
    def num_slates(self) -> int:
        # python ints do not overflow; the cap is enforced by check_enumerable
        return math.prod(self.cardinalities)

    def check_enumerable(self, cap: int = ENUMERATION_CAP) -> int:
        total = self.num_slates
        if total > cap:
            raise CapacityError(f"slate space has {total} slates, above the enumeration cap {cap}")
        return total

    def all_slates(self, cap: int = ENUMERATION_CAP) -> np.ndarray:
        """Every slate in row-major order, shape ``(num_slates, K)``."""
        self.check_enumerable(cap)
        return np.indices(self.cardinalities).reshape(self.num_slots, -1).T.copy()

    def validate_slate(self, slate: Sequence[int]) -> Tuple[int, ...]:
        if len(slate) != self.num_slots:
            raise ValidationError(f"slate has {len(slate)} slots, schema has {self.num_slots}", field="slate")
        out = []
        for k, (a, d) in enumerate(zip(slate, self.cardinalities)):
            if isinstance(a, bool) or not isinstance(a, (int, np.integer)):
                raise ValidationError(f"slot {k} action must be an integer, got {a!r}", field="slate")
            if not 0 <= a < d:
                raise ValidationError(f"slot {k} action {a} out of range [0, {d})", field="slate")
            out.append(int(a))
        return tuple(out)

    def to_dict(self) -> Dict[str, Any]:
        return {"slots": self.num_slots, "cardinalities": list(self.cardinalities)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SlateSchema":
        if not isinstance(data, Mapping) or "cardinalities" not in data:
            raise ValidationError("schema needs 'cardinalities'", field="schema")
        cards = data["cardinalities"]
        if not isinstance(cards, list):
            raise ValidationError("'cardinalities' must be a list", field="schema.cardinalities")
        schema = cls(tuple(cards))
        if "slots" in data and data["slots"] != schema.num_slots:
            raise ValidationError(
                f"'slots'={data['slots']} disagrees with {schema.num_slots} cardinalities", field="schema.slots"
            )
        return schema


def _check_distribution(p: Any, d: int, where: str) -> np.ndarray:
    arr = np.array(p, dtype=float)
    if arr.shape != (d,):
        raise ValidationError(f"{where}: expected {d} probabilities, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError(f"{where}: probabilities must be finite and nonnegative")
    if abs(math.fsum(arr.tolist()) - 1.0) > PROBABILITY_ATOL:
        raise ValidationError(f"{where}: probabilities sum to {math.fsum(arr.tolist())!r}, not 1")
    arr.setflags(write=False)
    return arr


SlotDistributions = Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class FactoredPolicy:
    """A product-form slate policy.

    ``slot_distributions`` is either a sequence of K probability vectors
    (non-contextual) or a mapping from context id to such a sequence
    (tabular contextual).
    """

    schema: SlateSchema
    slot_distributions: Union[SlotDistributions, Mapping[str, SlotDistributions]]

    def __post_init__(self) -> None:
        def build(dists: Sequence[Any], where: str) -> SlotDistributions:
            if len(dists) != self.schema.num_slots:
                raise ValidationError(f"{where}: expected {self.schema.num_slots} slot distributions, got {len(dists)}")
            return tuple(
                _check_distribution(p, d, f"{where} slot {k}")
                for k, (p, d) in enumerate(zip(dists, self.schema.cardinalities))
            )

        if isinstance(self.slot_distributions, Mapping):
            table = {str(ctx): build(dists, f"context {ctx!r}") for ctx, dists in self.slot_distributions.items()}
            if not table:
                raise ValidationError("contextual policy has no contexts")
            object.__setattr__(self, "slot_distributions", table)
        else:
            object.__setattr__(self, "slot_distributions", build(self.slot_distributions, "policy"))

    @property
    def is_contextual(self) -> bool:
        return isinstance(self.slot_distributions, Mapping)

    def contexts(self) -> List[str]:
        return list(self.slot_distributions) if self.is_contextual else []

    def distributions(self, context_id: ContextId = None) -> SlotDistributions:
        if not self.is_contextual:
            return self.slot_distributions  # type: ignore[return-value]
        if context_id is None or context_id not in self.slot_distributions:
            raise ValidationError(f"policy is not defined on context {context_id!r}", field="context_id")
        return self.slot_distributions[context_id]  # type: ignore[index]

    def slot_probabilities(self, slates: np.ndarray, context_ids: Optional[Sequence[ContextId]] = None) -> np.ndarray:
        """Per-slot probabilities of the given slates, shape ``(n, K)``."""
        slates = np.asarray(slates, dtype=np.int64)
        n, K = slates.shape
        out = np.empty((n, K), dtype=float)
        if not self.is_contextual:
            for k, p in enumerate(self.slot_distributions):  # type: ignore[arg-type]
                out[:, k] = p[slates[:, k]]
            return out
        if context_ids is None:
            raise ValidationError("contextual policy needs context ids", field="context_id")
        for i, ctx in enumerate(context_ids):
            dists = self.distributions(ctx)
            for k in range(K):
                out[i, k] = dists[k][slates[i, k]]
        return out

    def slate_probability(self, slate: Sequence[int], context_id: ContextId = None) -> float:
        dists = self.distributions(context_id)
        return math.prod(float(dists[k][a]) for k, a in enumerate(slate))

    def to_list(self) -> Any:
        if self.is_contextual:
            return {ctx: [p.tolist() for p in d] for ctx, d in self.slot_distributions.items()}  # type: ignore[union-attr]
        return [p.tolist() for p in self.slot_distributions]  # type: ignore[union-attr]


def make_deterministic_policy(schema: SlateSchema, slate: Sequence[int]) -> FactoredPolicy:
    """One-hot slot distributions that always play ``slate``."""
    slate = schema.validate_slate(slate)
    dists = []
    for a, d in zip(slate, schema.cardinalities):
        p = np.zeros(d)
        p[a] = 1.0
        dists.append(p)
    return FactoredPolicy(schema, tuple(dists))


def make_uniform_policy(schema: SlateSchema) -> FactoredPolicy:
    return FactoredPolicy(schema, tuple(np.full(d, 1.0 / d) for d in schema.cardinalities))


@dataclass(frozen=True)
class LoggedRecord:
    slate: Tuple[int, ...]
    logging_propensities: Tuple[float, ...]
    target_marginals: Tuple[float, ...]
    reward: float
    context_id: ContextId = None

    def __post_init__(self) -> None:
        K = len(self.slate)
        if len(self.logging_propensities) != K or len(self.target_marginals) != K:
            raise ValidationError("slate, mu and pi must have the same length")
        for k, m in enumerate(self.logging_propensities):
            if not (math.isfinite(m) and 0.0 < m <= 1.0):
                raise ValidationError(f"logging propensity of slot {k} must lie in (0, 1], got {m!r}", field="mu")
        for k, p in enumerate(self.target_marginals):
            if not (math.isfinite(p) and 0.0 <= p <= 1.0):
                raise ValidationError(f"target marginal of slot {k} must lie in [0, 1], got {p!r}", field="pi")
        if not math.isfinite(self.reward):
            raise ValidationError(f"reward must be finite, got {self.reward!r}", field="reward")


@dataclass(frozen=True, eq=False)
class SlateDataset:
    """Logged slate data held column-wise.

    ``slates`` has shape ``(n, K)``; ``mu`` and ``pi`` hold the logging
    propensity and the target slot marginal of every taken action.
    """

    schema: SlateSchema
    slates: np.ndarray
    mu: np.ndarray
    pi: np.ndarray
    rewards: np.ndarray
    context_ids: Optional[Tuple[ContextId, ...]] = None

    def __post_init__(self) -> None:
        K = self.schema.num_slots
        slates = np.array(self.slates, dtype=np.int64).reshape(-1, K) if np.size(self.slates) else np.empty((0, K), np.int64)
        n = slates.shape[0]
        mu = np.array(self.mu, dtype=float).reshape(n, K)
        pi = np.array(self.pi, dtype=float).reshape(n, K)
        rewards = np.array(self.rewards, dtype=float).reshape(n)
        cards = np.array(self.schema.cardinalities)
        if np.any(slates < 0) or np.any(slates >= cards):
            i = int(np.nonzero(np.any((slates < 0) | (slates >= cards), axis=1))[0][0])
            raise ValidationError(f"record {i}: slate {slates[i].tolist()} outside schema", field="slate", index=i)
        bad = ~np.all(np.isfinite(mu) & (mu > 0) & (mu <= 1), axis=1)
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise ValidationError(f"record {i}: logging propensities must lie in (0, 1]", field="mu", index=i)
        bad = ~np.all(np.isfinite(pi) & (pi >= 0) & (pi <= 1), axis=1)
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise ValidationError(f"record {i}: target marginals must lie in [0, 1]", field="pi", index=i)
        bad = ~np.isfinite(rewards)
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise ValidationError(f"record {i}: reward must be finite", field="reward", index=i)
        ctx = self.context_ids
        if ctx is not None:
            ctx = tuple(None if c is None else str(c) for c in ctx)
            if len(ctx) != n:
                raise ValidationError("context_ids length does not match records", field="context_id")
        for arr in (slates, mu, pi, rewards):
            arr.setflags(write=False)
        object.__setattr__(self, "slates", slates)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "context_ids", ctx)

    def __len__(self) -> int:
        return int(self.slates.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    def record(self, i: int) -> LoggedRecord:
        return LoggedRecord(
            slate=tuple(int(a) for a in self.slates[i]),
            logging_propensities=tuple(float(m) for m in self.mu[i]),
            target_marginals=tuple(float(p) for p in self.pi[i]),
            reward=float(self.rewards[i]),
            context_id=None if self.context_ids is None else self.context_ids[i],
        )

    @property
    def records(self) -> List[LoggedRecord]:
        return [self.record(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[LoggedRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, indices: Sequence[int]) -> "SlateDataset":
        idx = np.asarray(indices, dtype=np.int64)
        ctx = None if self.context_ids is None else tuple(self.context_ids[i] for i in idx)
        return SlateDataset(self.schema, self.slates[idx], self.mu[idx], self.pi[idx], self.rewards[idx], ctx)

    @classmethod
    def from_records(cls, schema: SlateSchema, records: Iterable[LoggedRecord]) -> "SlateDataset":
        records = list(records)
        K = schema.num_slots
        for i, r in enumerate(records):
            if len(r.slate) != K:
                raise ValidationError(f"record {i}: slate has {len(r.slate)} slots, schema has {K}", field="slate", index=i)
        ctx = [r.context_id for r in records]
        return cls(
            schema,
            np.array([r.slate for r in records], dtype=np.int64).reshape(-1, K),
            np.array([r.logging_propensities for r in records], dtype=float).reshape(-1, K),
            np.array([r.target_marginals for r in records], dtype=float).reshape(-1, K),
            np.array([r.reward for r in records], dtype=float),
            None if all(c is None for c in ctx) else tuple(ctx),
        )


RawRecord = Union[Tuple[Sequence[int], float], Tuple[Sequence[int], float, ContextId]]


def annotate_records(
    raw: Union[SlateDataset, Iterable[RawRecord]],
    logging: FactoredPolicy,
    target: FactoredPolicy,
) -> SlateDataset:
    """Attach logging propensities and target marginals to logged slates.

    ``raw`` holds ``(slate, reward)`` or ``(slate, reward, context_id)``
    tuples, or an existing dataset (whose stored propensities are replaced).
    Raises :class:`CoverageError` naming the first record whose taken action
    has zero logging probability.
    """
    schema = logging.schema
    if target.schema != schema:
        raise ValidationError("logging and target policies use different schemas", field="schema")
    if isinstance(raw, SlateDataset):
        if raw.schema != schema:
            raise ValidationError("dataset schema differs from the policies' schema", field="schema")
        slates, rewards, ctx = raw.slates, raw.rewards, raw.context_ids
    else:
        rows = list(raw)
        slates_l, rewards_l, ctx_l = [], [], []
        for i, row in enumerate(rows):
            try:
                s = schema.validate_slate(row[0])
            except ValidationError as exc:
                raise ValidationError(f"record {i}: {exc.message}", field="slate", index=i) from None
            slates_l.append(s)
            rewards_l.append(float(row[1]))
            ctx_l.append(row[2] if len(row) > 2 else None)
        K = schema.num_slots
        slates = np.array(slates_l, dtype=np.int64).reshape(-1, K)
        rewards = np.array(rewards_l, dtype=float)
        ctx = None if all(c is None for c in ctx_l) else tuple(ctx_l)
    mu = logging.slot_probabilities(slates, ctx)
    pi = target.slot_probabilities(slates, ctx)
    zero = np.any(mu <= 0.0, axis=1)
    if zero.any():
        i = int(np.nonzero(zero)[0][0])
        k = int(np.nonzero(mu[i] <= 0.0)[0][0])
        raise CoverageError(f"record {i}: slot {k} action {int(slates[i, k])} has zero logging propensity", index=i)
    return SlateDataset(schema, slates, mu, pi, rewards, ctx)


# --- JSONL logged-data format ---

def _field_error(line: int, fld: str, msg: str) -> ValidationError:
    return ValidationError(f"line {line}: field '{fld}': {msg}", line=line, field=fld)


def _parse_record(obj: Any, schema: SlateSchema, line: int) -> Tuple[Any, ...]:
    if not isinstance(obj, dict):
        raise _field_error(line, "<record>", "expected a JSON object")
    for fld in ("slate", "mu", "pi", "reward"):
        if fld not in obj:
            raise _field_error(line, fld, "missing")
    K = schema.num_slots
    slate = obj["slate"]
    if not isinstance(slate, list) or len(slate) != K:
        raise _field_error(line, "slate", f"expected a list of {K} integers")
    for k, (a, d) in enumerate(zip(slate, schema.cardinalities)):
        if isinstance(a, bool) or not isinstance(a, int) or not 0 <= a < d:
            raise _field_error(line, "slate", f"slot {k} action {a!r} outside [0, {d})")
    vecs = {}
    for fld, lo_open in (("mu", True), ("pi", False)):
        v = obj[fld]
        if not isinstance(v, list) or len(v) != K:
            raise _field_error(line, fld, f"expected a list of {K} numbers")
        for k, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                raise _field_error(line, fld, f"slot {k} value {x!r} is not a finite number")
            if (x <= 0.0 if lo_open else x < 0.0) or x > 1.0:
                rng = "(0, 1]" if lo_open else "[0, 1]"
                raise _field_error(line, fld, f"slot {k} value {x!r} outside {rng}")
        vecs[fld] = [float(x) for x in v]
    r = obj["reward"]
    if isinstance(r, bool) or not isinstance(r, (int, float)) or not math.isfinite(r):
        raise _field_error(line, "reward", f"{r!r} is not a finite number")
    ctx = obj.get("context_id")
    if ctx is not None and not isinstance(ctx, str):
        raise _field_error(line, "context_id", "must be a string or null")
    return slate, vecs["mu"], vecs["pi"], float(r), ctx


def read_jsonl(source: Union[str, TextIO]) -> SlateDataset:
    """Parse a logged-data JSONL file (header line, then one record per line)."""
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            return read_jsonl(fh)
    schema: Optional[SlateSchema] = None
    slates, mus, pis, rewards, ctx = [], [], [], [], []
    for line_no, text in enumerate(source, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise _field_error(line_no, "<json>", f"malformed JSON ({exc.msg})") from None
        if schema is None:
            if not isinstance(obj, dict) or "schema" not in obj:
                raise _field_error(line_no, "schema", "first line must be a schema header")
            try:
                schema = SlateSchema.from_dict(obj["schema"])
            except ValidationError as exc:
                raise _field_error(line_no, exc.field or "schema", exc.message) from None
            continue
        s, m, p, r, c = _parse_record(obj, schema, line_no)
        slates.append(s)
        mus.append(m)
        pis.append(p)
        rewards.append(r)
        ctx.append(c)
    if schema is None:
        raise ValidationError("line 1: field 'schema': file is empty", line=1, field="schema")
    K = schema.num_slots
    return SlateDataset(
        schema,
        np.array(slates, dtype=np.int64).reshape(-1, K),
        np.array(mus, dtype=float).reshape(-1, K),
        np.array(pis, dtype=float).reshape(-1, K),
        np.array(rewards, dtype=float),
        None if all(c is None for c in ctx) else tuple(ctx),
    )


def write_jsonl(dataset: SlateDataset, sink: Union[str, TextIO]) -> None:
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            write_jsonl(dataset, fh)
        return
    sink.write(json.dumps({"schema": dataset.schema.to_dict()}) + "\n")
    for rec in dataset:
        sink.write(
            json.dumps(
                {
                    "context_id": rec.context_id,
                    "slate": list(rec.slate),
                    "mu": list(rec.logging_propensities),
                    "pi": list(rec.target_marginals),
                    "reward": rec.reward,
                }
            )
            + "\n"
        )
