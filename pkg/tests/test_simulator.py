import json

import numpy as np
import pytest
from scipy import stats

from slatecv import (
    CoverageError,
    FactoredPolicy,
    RewardModel,
    SimConfig,
    SlateSchema,
    ValidationError,
    generate_logs,
    make_deterministic_policy,
    make_uniform_policy,
    sample_additive_model,
    sample_geometric_tensor,
)
from slatecv.simulator import (
    GEOMETRIC_TAIL_WEIGHT,
    additive_model_from_parts,
    derive_seed,
    load_sim_config,
    tabular_model,
)


def test_geometric_part_moments():
    schema = SlateSchema((10, 10))
    parts = np.concatenate(
        [np.concatenate(sample_geometric_tensor(schema, s).additive_parts) for s in range(200)]
    )
    # mean 0.2 / K = 0.1 and variance 0.01, over 4000 draws
    assert abs(parts.mean() - 0.1) < 4 * 0.1 / np.sqrt(parts.size)
    assert abs(parts.var() - 0.01) < 0.001


def additive_geometric(schema, parts):
    from slatecv.simulator import _from_parts

    return _from_parts(schema, [np.array(p) for p in parts], "geometric", "deterministic_means")


def test_geometric_geometric_first_slot():
    schema = SlateSchema((4, 3))
    model = additive_geometric(schema, [[1.0] * 4, [0.0] * 3]).table
    assert model[0, 0] == 1.0
    assert model[1, 2] == 0.5
    assert model[3, 1] == 0.125


def test_geometric_tail_depends_only_on_weighted_sum():
    schema = SlateSchema((3, 4, 5))
    model = sample_geometric_tensor(schema, 9, kind="deterministic_means")
    raw = model.combined_parts()
    p1, p2, p3 = model.additive_parts
    for a in np.ndindex(*schema.cardinalities):
        head = 0.5 ** a[0] * p1[a[0]]
        assert raw[a] == pytest.approx(head + GEOMETRIC_TAIL_WEIGHT * (p2[a[1]] + p3[a[2]]), abs=1e-15)
    np.testing.assert_array_equal(model.table, raw)


def test_geometric_clamping():
    schema = SlateSchema((10, 10))
    fracs = []
    for seed in range(20):
        model = sample_geometric_tensor(schema, seed)
        assert model.table.min() >= 0.0 and model.table.max() <= 1.0
        raw = model.combined_parts()
        np.testing.assert_array_equal(model.table, np.clip(raw, 0.0, 1.0))
        assert model.clamped_fraction == np.mean((raw < 0) | (raw > 1))
        fracs.append(model.clamped_fraction)
    assert max(fracs) > 0  # negative Gaussian parts do occur


def test_geometric_deterministic():
    schema = SlateSchema((10, 10))
    a, b = sample_geometric_tensor(schema, 42), sample_geometric_tensor(schema, 42)
    assert a.table.tobytes() == b.table.tobytes()
    assert sample_geometric_tensor(schema, 43).table.tobytes() != a.table.tobytes()


def test_additive_examples():
    schema = SlateSchema((2, 2))
    assert additive_model_from_parts(schema, [[0.2, 0.4], [0.1, 0.3]]).table[1, 1] == pytest.approx(0.7, abs=1e-15)
    zero = sample_additive_model(SlateSchema((3, 4)), 1, "zero")
    assert not zero.table.any()
    one = sample_additive_model(SlateSchema((5,)), 3)
    np.testing.assert_array_equal(one.table, one.additive_parts[0])
    assert one.is_additive


def test_additive_bernoulli_clamps():
    schema = SlateSchema((3, 3))
    model = additive_model_from_parts(schema, [[0.9, 0.8, -0.5], [0.5, 0.0, 0.0]], "bernoulli_rates")
    assert model.table[0, 0] == 1.0 and model.table[2, 1] == 0.0
    assert not model.is_additive
    assert model.clamped_fraction == pytest.approx(4 / 9)  # one in row 0, one in row 1, two in row 2


def test_additive_custom_sampler():
    model = sample_additive_model(SlateSchema((2, 3)), 0, lambda rng, k, d: np.full(d, k + 1.0))
    assert model.table.tolist() == [[3.0] * 3] * 2


def test_model_json_round_trip(tmp_path):
    model = sample_geometric_tensor(SlateSchema((3, 4)), 5)
    path = tmp_path / "m.json"
    model.save(str(path))
    again = RewardModel.load(str(path))
    assert again.table.tobytes() == model.table.tobytes()
    assert again.combination == "geometric" and again.kind == model.kind
    data = json.loads(path.read_text())
    assert data["table"] == model.table.reshape(-1).tolist()
    assert data["schema"] == {"slots": 2, "cardinalities": [3, 4]}


def test_model_validation():
    schema = SlateSchema((2,))
    with pytest.raises(ValidationError):
        tabular_model(schema, [0.5, 1.5], "bernoulli_rates")
    with pytest.raises(ValidationError, match="disagrees"):
        RewardModel(schema, "deterministic_means", [0.1, 0.2], ([0.1, 0.3],), "sum")
    with pytest.raises(ValidationError):
        RewardModel(schema, "poisson", [0.1, 0.2])


def test_generate_identity_pair():
    schema = SlateSchema((4, 3))
    mu = make_uniform_policy(schema)
    ds = generate_logs(sample_geometric_tensor(schema, 1), mu, mu, 200, 3)
    np.testing.assert_array_equal(ds.pi / ds.mu, 1.0)


def test_generate_binomial_concentration():
    schema = SlateSchema((2,))
    model = tabular_model(schema, [1.0, 0.0], "bernoulli_rates")
    n = 100_000
    ds = generate_logs(model, make_uniform_policy(schema), make_deterministic_policy(schema, [0]), n, 2024)
    freq = np.mean(ds.slates[:, 0] == 0)
    assert abs(freq - 0.5) <= 3 * np.sqrt(0.25 / n)
    # deterministic Bernoulli rates reproduce the slate exactly
    np.testing.assert_array_equal(ds.rewards, (ds.slates[:, 0] == 0).astype(float))


@pytest.mark.parametrize(
    "dists, seed",
    [
        (([0.1] * 10, [0.1] * 10), 101),
        (([0.5, 0.3, 0.2], [0.05, 0.15, 0.3, 0.5]), 202),
    ],
)
def test_generate_slot_frequencies_chi_square(dists, seed):
    schema = SlateSchema(tuple(len(p) for p in dists))
    mu = FactoredPolicy(schema, dists)
    model = tabular_model(schema, np.full(schema.cardinalities, 0.5), "bernoulli_rates")
    n = 100_000
    ds = generate_logs(model, mu, mu, n, seed)
    for k, p in enumerate(dists):
        counts = np.bincount(ds.slates[:, k], minlength=len(p))
        assert stats.chisquare(counts, n * np.asarray(p)).pvalue > 1e-6


def test_generate_never_draws_zero_probability_action():
    schema = SlateSchema((3,))
    mu = FactoredPolicy(schema, ([0.5, 0.5, 0.0],))
    target = FactoredPolicy(schema, ([1.0, 0.0, 0.0],))
    ds = generate_logs(tabular_model(schema, [0.1, 0.2, 0.3]), mu, target, 10_000, 1)
    assert ds.slates.max() == 1


def test_generate_coverage_violation():
    schema = SlateSchema((3,))
    mu = FactoredPolicy(schema, ([0.5, 0.5, 0.0],))
    with pytest.raises(CoverageError):
        generate_logs(tabular_model(schema, [0.1, 0.2, 0.3]), mu, make_deterministic_policy(schema, [2]), 10, 1)
    with pytest.raises(ValidationError):
        generate_logs(tabular_model(schema, [0.1, 0.2, 0.3]), mu, mu, 0, 1)


def test_generate_deterministic():
    schema = SlateSchema((10, 10))
    model = sample_geometric_tensor(schema, 7)
    mu, pi = make_uniform_policy(schema), make_deterministic_policy(schema, [0, 0])
    a, b = generate_logs(model, mu, pi, 500, 99), generate_logs(model, mu, pi, 500, 99)
    for name in ("slates", "mu", "pi", "rewards"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_generate_frozen_stream():
    # pins the documented PCG64 stream: any change to draw order breaks this
    schema = SlateSchema((3, 2))
    model = tabular_model(schema, [[0.1, 0.9], [0.5, 0.5], [0.8, 0.2]], "bernoulli_rates")
    mu = make_uniform_policy(schema)
    ds = generate_logs(model, mu, mu, 6, 20240101)
    assert ds.slates.tolist() == FROZEN_SLATES
    assert ds.rewards.tolist() == FROZEN_REWARDS


FROZEN_SLATES = [[1, 0], [0, 0], [0, 1], [0, 0], [1, 1], [1, 0]]
FROZEN_REWARDS = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0]


def test_derive_seed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(1, t, r, 100) for t in range(10) for r in range(10)}) == 100
    assert 0 <= derive_seed(0) < 2**64
    with pytest.raises(ValidationError):
        derive_seed(-1)


def test_sim_config_defaults():
    cfg = SimConfig()
    assert cfg.num_tensors == 20 and cfg.reps_per_tensor == 300
    assert cfg.logging == "uniform" and cfg.target == "deterministic"
    assert cfg.target_policy().slot_distributions[0].tolist()[0] == 1.0
    assert cfg.to_dict()["target_slate"] is None


def test_sim_config_loading(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"cardinalities": [3, 3], "num_tensors": 2, "estimators": ["pi", "PICVm"]}))
    cfg = load_sim_config(str(path))
    assert cfg.cardinalities == (3, 3) and cfg.num_tensors == 2
    assert cfg.estimators == ("PI", "PICVm")
    assert cfg.reps_per_tensor == 300
    with pytest.raises(ValidationError, match="num_tensors"):
        load_sim_config({"num_tensors": 0})
    with pytest.raises(ValidationError, match="bogus"):
        load_sim_config({"bogus": 1})
    with pytest.raises(ValidationError):
        load_sim_config({"estimators": ["nope"]})
    with pytest.raises(ValidationError):
        load_sim_config({"cardinalities": [2, 2], "target_slate": [0, 5]})


def test_sim_config_tensors_are_independent_of_order():
    cfg = SimConfig(cardinalities=(4, 4))
    later = cfg.tensor(3).table.tobytes()
    for t in range(3):
        cfg.tensor(t)
    assert cfg.tensor(3).table.tobytes() == later
