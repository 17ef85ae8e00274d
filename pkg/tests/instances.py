"""Small random instances shared by the test modules."""
import numpy as np

from slatecv import FactoredPolicy, SlateSchema, make_deterministic_policy, make_uniform_policy
from slatecv.simulator import additive_model_from_parts, tabular_model


def two_action_instance():
    """K=1, d=[2], uniform logging, target always plays 0, r(0)=1, r(1)=0."""
    schema = SlateSchema((2,))
    return (
        tabular_model(schema, [1.0, 0.0]),
        make_uniform_policy(schema),
        make_deterministic_policy(schema, [0]),
    )


def random_policy(rng, schema, floor=0.05):
    dists = []
    for d in schema.cardinalities:
        p = rng.dirichlet(np.ones(d)) + floor
        dists.append(p / p.sum())
    # renormalize exactly enough for the 1e-12 check
    return FactoredPolicy(schema, tuple(dists))


def random_target(rng, schema):
    if rng.random() < 0.3:
        return make_deterministic_policy(schema, [int(rng.integers(d)) for d in schema.cardinalities])
    return FactoredPolicy(schema, tuple(rng.dirichlet(np.ones(d)) for d in schema.cardinalities))


def random_schema(rng, max_slots=3, max_card=4):
    K = int(rng.integers(1, max_slots + 1))
    return SlateSchema(tuple(int(rng.integers(2, max_card + 1)) for _ in range(K)))


def random_additive_instance(rng, max_slots=3, max_card=4):
    schema = random_schema(rng, max_slots, max_card)
    parts = [rng.normal(0.0, 1.0, size=d) for d in schema.cardinalities]
    return additive_model_from_parts(schema, parts), random_policy(rng, schema), random_target(rng, schema)


def random_tabular_instance(rng, schema, kind="deterministic_means"):
    if kind == "bernoulli_rates":
        table = rng.uniform(0.0, 1.0, size=schema.cardinalities)
    else:
        table = rng.normal(0.5, 1.0, size=schema.cardinalities)
    return tabular_model(schema, table, kind), random_policy(rng, schema), random_target(rng, schema)
