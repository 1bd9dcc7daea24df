"""Tests for point sampling, noise injection, and the benchmark registry."""

import dataclasses
import math

import numpy as np
import pytest

import formula_distill.datasets as ds
import formula_distill.expressions as ex
from formula_distill.errors import DomainViolation, SpecError, UnknownBenchmark


class _StubRng:
    """Deterministic stand-in for a numpy Generator in noise tests."""

    def __init__(self, draws):
        self._draws = np.asarray(draws, dtype=float)

    def standard_normal(self, n):
        assert n == self._draws.size
        return self._draws.copy()


# ---------------------------------------------------------------------------
# sampling


def test_grid_one_var_three_points():
    spec = ds.SamplingSpec("grid", 0.0, 1.0, 3, dims=1)
    X = ds.sample_points(spec)
    assert X.shape == (3, 1)
    assert np.array_equal(X[:, 0], np.array([0.0, 0.5, 1.0]))


def test_grid_diagonal_shares_axis_across_variables():
    spec = ds.SamplingSpec("grid", -2.0, 2.0, 5, dims=3)
    X = ds.sample_points(spec)
    assert X.shape == (5, 3)
    axis = np.linspace(-2.0, 2.0, 5)
    for j in range(3):
        assert np.array_equal(X[:, j], axis)


def test_grid_cartesian_two_vars():
    spec = ds.SamplingSpec("grid", 0.0, 1.0, 3, dims=2)
    X = ds.sample_points(spec, cartesian=True)
    assert X.shape == (9, 2)
    rows = {tuple(row) for row in X}
    axis = [0.0, 0.5, 1.0]
    assert rows == {(a, b) for a in axis for b in axis}


def test_grid_cartesian_rejects_three_vars():
    spec = ds.SamplingSpec("grid", 0.0, 1.0, 3, dims=3)
    with pytest.raises(SpecError):
        ds.sample_points(spec, cartesian=True)


def test_uniform_is_seed_deterministic():
    spec = ds.SamplingSpec("uniform", -1.0, 1.0, 20, dims=2, seed=11)
    X1 = ds.sample_points(spec)
    X2 = ds.sample_points(spec)
    assert np.array_equal(X1, X2)
    other = dataclasses.replace(spec, seed=12)
    assert not np.array_equal(X1, ds.sample_points(other))


def test_uniform_respects_bounds():
    spec = ds.SamplingSpec("uniform", -3.0, 5.0, 500, dims=3, seed=0)
    X = ds.sample_points(spec)
    assert X.shape == (500, 3)
    assert np.all(X >= -3.0) and np.all(X <= 5.0)


def test_spec_validation():
    with pytest.raises(SpecError):
        ds.SamplingSpec("uniform", 1.0, 1.0, 20)
    with pytest.raises(SpecError):
        ds.SamplingSpec("uniform", 0.0, 1.0, 0)
    with pytest.raises(SpecError):
        ds.SamplingSpec("triangular", 0.0, 1.0, 20)


# ---------------------------------------------------------------------------
# noise


def test_noise_levels_grid():
    assert len(ds.NOISE_LEVELS) == 11
    assert ds.NOISE_LEVELS[0] == 0.0
    assert ds.NOISE_LEVELS[-1] == 0.10
    steps = np.diff(np.array(ds.NOISE_LEVELS))
    assert np.allclose(steps, 0.01)


def test_add_noise_worked_example():
    y = np.array([0.0, 1.0])
    out = ds.add_noise(y, 0.1, _StubRng([1.0, -1.0]))
    assert np.allclose(out, [0.1, 0.9])


def test_add_noise_zero_level_is_bit_exact():
    y = np.array([0.3, -1.7, 2.2])
    rng = np.random.default_rng(0)
    out = ds.add_noise(y, 0.0, rng)
    assert out.tobytes() == y.tobytes()
    # the generator must not be consumed at L=0
    assert rng.uniform() == np.random.default_rng(0).uniform()


def test_add_noise_amplitude_bound_and_change():
    rng = np.random.default_rng(5)
    y = rng.normal(size=200)
    span = np.max(y) - np.min(y)
    for level in ds.NOISE_LEVELS[1:]:
        noisy = ds.add_noise(y, level, np.random.default_rng(7))
        delta = np.abs(noisy - y)
        assert np.all(delta <= level * span + 1e-12)
        assert np.any(delta > 0)
        # the max-magnitude draw is rescaled to exactly 1, so the bound is tight
        assert np.isclose(np.max(delta), level * span)


def test_add_noise_strict_grid_membership():
    y = np.array([0.0, 1.0])
    with pytest.raises(SpecError):
        ds.add_noise(y, 0.035, np.random.default_rng(0))
    out = ds.add_noise(y, 0.035, np.random.default_rng(0), strict=False)
    assert out.shape == (2,)
    with pytest.raises(SpecError):
        ds.add_noise(y, -0.01, np.random.default_rng(0), strict=False)
    with pytest.raises(SpecError):
        ds.add_noise(y, 0.2, np.random.default_rng(0), strict=False)


# ---------------------------------------------------------------------------
# versatility intervals


def test_versatility_intervals():
    intervals = ds.versatility_intervals()
    assert len(intervals) == 10
    assert intervals[0] == (-2.0, 2.0)
    assert intervals[-1] == (-20.0, 20.0)
    for i, (a, b) in enumerate(intervals, start=1):
        assert (a, b) == (-2.0 * i, 2.0 * i)


def test_training_interval_default():
    assert ds.TRAIN_INTERVAL == (-10.0, 10.0)


# ---------------------------------------------------------------------------
# infix-to-preorder conversion


def test_preorder_simple_sum():
    tokens, consts = ds.infix_to_preorder("x1 + x2")
    assert tokens == ["+", "x1", "x2"]
    assert consts == []


def test_preorder_scaled_variable():
    tokens, consts = ds.infix_to_preorder("2*x1")
    assert tokens == ["*", "C", "x1"]
    assert consts == [2.0]


def test_preorder_trig_product_with_offset():
    tokens, consts = ds.infix_to_preorder("sin(x1**2)*cos(x1) - 1")
    assert tokens == ["-", "*", "sin", "*", "x1", "x1", "cos", "x1", "C"]
    assert consts == [1.0]


def test_preorder_negative_power_becomes_reciprocal_chain():
    tokens, consts = ds.infix_to_preorder("x1**-4")
    assert tokens == ["/", "C", "*", "*", "*", "x1", "x1", "x1", "x1"]
    assert consts == [1.0]


def test_preorder_half_power_becomes_sqrt():
    tokens, consts = ds.infix_to_preorder("x1**0.5")
    assert tokens == ["sqrt", "x1"]
    assert consts == []


def test_preorder_inexpressible_forms():
    assert ds.infix_to_preorder("x1**x2") is None
    assert ds.infix_to_preorder("abs(x1)") is None
    assert ds.infix_to_preorder("tanh(x1)") is None
    assert ds.infix_to_preorder("x1**(1/3)") is None
    assert ds.infix_to_preorder("x10 + x1") is None


def test_preorder_constants_follow_emission_order():
    tokens, consts = ds.infix_to_preorder("3.5*x1 + sin(2.25*x1)")
    assert tokens == ["+", "*", "C", "x1", "sin", "*", "C", "x1"]
    assert consts == [3.5, 2.25]


def test_preorder_pi_becomes_constant():
    # purely numeric subtrees fold into a single fitted constant
    tokens, consts = ds.infix_to_preorder("sin(2*pi*x1)")
    assert tokens == ["sin", "*", "C", "x1"]
    assert consts == [2.0 * math.pi]


# ---------------------------------------------------------------------------
# registry


def test_registry_group_counts():
    expected = {
        "nguyen": 21,
        "korns": 15,
        "jin": 6,
        "neat": 9,
        "keijzer": 15,
        "livermore": 22,
        "vladislavleva": 8,
        "others": 9,
        "constant": 8,
        "r": 3,
        "feynman": 100,
    }
    for group, count in expected.items():
        assert len(ds.registry_group(group)) == count, group
    assert len(ds.load_registry()) == sum(expected.values())


def test_registry_lookup_nguyen5():
    entry = ds.registry_lookup("Nguyen-5")
    assert entry.spec.kind == "uniform"
    assert (entry.spec.a, entry.spec.b, entry.spec.c) == (-1.0, 1.0, 20)
    assert entry.spec.dims == 1
    X = np.array([[0.5]])
    want = math.sin(0.25) * math.cos(0.5) - 1.0
    assert np.isclose(entry.closure(X)[0], want)


def test_registry_lookup_keijzer14():
    entry = ds.registry_lookup("Keijzer-14")
    X = np.array([[1.0, 1.0]])
    assert np.isclose(entry.closure(X)[0], 2.0)
    assert entry.spec.dims == 2


def test_registry_lookup_unknown():
    with pytest.raises(UnknownBenchmark):
        ds.registry_lookup("Nguyen-99")


def test_registry_is_cached():
    assert ds.load_registry() is ds.load_registry()


def test_registry_suspect_flags():
    assert ds.registry_lookup("Korns-3").suspect
    assert not ds.registry_lookup("Nguyen-1").suspect


def test_registry_closure_and_preorder_agree():
    skipped = 0
    for entry in ds.load_registry().values():
        if entry.preorder_tokens is None:
            skipped += 1
            continue
        spec = dataclasses.replace(entry.spec, c=min(entry.spec.c, 32), seed=7)
        X = ds.sample_points(spec)
        tree = ex.parse_preorder(list(entry.preorder_tokens))
        with np.errstate(all="ignore"):
            want = entry.closure(X)
        for i in range(X.shape[0]):
            row = X[i : i + 1]
            if not np.isfinite(want[i]):
                continue
            try:
                got = ex.evaluate(tree, row, entry.preorder_constants)
            except DomainViolation:
                continue
            assert abs(got[0] - want[i]) < 1e-9, entry.name
    # a sizable majority of rows are expressible with the operator set
    assert skipped < 40


def test_feynman_rows_present():
    entry = ds.registry_lookup("Feynman-I.6.20a")
    X = np.array([[1.0]])
    want = math.exp(-0.5) / math.sqrt(2 * math.pi)
    assert np.isclose(entry.closure(X)[0], want)
    assert ds.registry_lookup("Feynman-III.21.20").spec.dims == 4


# ---------------------------------------------------------------------------
# point sets


def test_make_pointset_rejects_invalid_rows():
    entry = ds.registry_lookup("Livermore-4")  # log(x1) restricts x1 > 0
    ps = ds.make_pointset(entry, seed=3)
    assert ps.X.shape == (100, 1)
    assert np.all(ps.X > 0)
    assert np.all(np.isfinite(ps.y))
    again = ds.make_pointset(entry, seed=3)
    assert ps.X.tobytes() == again.X.tobytes()
    assert ps.y.tobytes() == again.y.tobytes()
    other = ds.make_pointset(entry, seed=4)
    assert ps.X.tobytes() != other.X.tobytes()


def test_make_pointset_applies_noise():
    entry = ds.registry_lookup("Nguyen-1")
    clean = ds.make_pointset(entry, seed=5)
    noisy = ds.make_pointset(entry, seed=5, noise_level=0.10)
    assert clean.X.tobytes() == noisy.X.tobytes()
    span = np.max(clean.y) - np.min(clean.y)
    delta = np.abs(noisy.y - clean.y)
    assert np.any(delta > 0)
    assert np.all(delta <= 0.10 * span + 1e-12)
    assert noisy.noise_level == 0.10


def test_pointset_invariants():
    with pytest.raises(SpecError):
        ds.PointSet(
            X=np.array([[1.0], [np.nan]]),
            y=np.array([1.0, 2.0]),
            spec=ds.SamplingSpec("uniform", -1.0, 1.0, 2),
        )
    with pytest.raises(SpecError):
        ds.PointSet(
            X=np.ones((3, 1)),
            y=np.ones(2),
            spec=ds.SamplingSpec("uniform", -1.0, 1.0, 3),
        )


def test_pointset_save_load_round_trip(tmp_path):
    entry = ds.registry_lookup("Jin-2")
    ps = ds.make_pointset(entry, seed=9, noise_level=0.02)
    path = tmp_path / "jin2.csv"
    ds.save_pointset(ps, path)
    loaded = ds.load_pointset(path)
    assert loaded.X.tobytes() == ps.X.tobytes()
    assert loaded.y.tobytes() == ps.y.tobytes()
    assert loaded.spec == ps.spec
    assert loaded.noise_level == ps.noise_level
    # identical inputs serialize to identical bytes
    second = tmp_path / "again.csv"
    ds.save_pointset(ps, second)
    assert path.read_bytes() == second.read_bytes()


def test_data_dir_override(tmp_path, monkeypatch):
    import csv

    src = ds.data_dir() / "benchmarks.csv"
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    with open(tmp_path / "benchmarks.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows[:2])
    with open(tmp_path / "feynman.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows[:1])
    monkeypatch.setenv("FORMULA_DISTILL_DATA_DIR", str(tmp_path))
    ds.load_registry.cache_clear()
    try:
        assert len(ds.load_registry()) == 1
    finally:
        monkeypatch.delenv("FORMULA_DISTILL_DATA_DIR")
        ds.load_registry.cache_clear()
