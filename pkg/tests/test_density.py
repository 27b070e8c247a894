import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missarf import Dataset, ForestParams, extract_leaves, fit_forest, fit_leaf_densities, log_density
from missarf import sample_unconditional
from missarf.density import SIGMA_ABS_FLOOR, draw_features, log_density_rows
from missarf.tabular import categorical, numeric

import oracles
from conftest import mixed_data, small_model


def exact_single_leaf(data, rows=None):
    """A one-tree, one-leaf forest whose leaf holds exactly ``rows``."""
    f = fit_forest(data, data, ForestParams(1, 10**6), rng=0)
    assert f.n_leaves == 1
    rows = np.arange(data.n) if rows is None else np.asarray(rows)
    rows = rows.astype(f.leaf_rows.dtype)
    return dataclasses.replace(
        f,
        leaf_rows=rows,
        leaf_rows_ptr=np.array([0, rows.size], dtype=f.leaf_rows_ptr.dtype),
        leaf_n_real=np.array([rows.size], dtype=f.leaf_n_real.dtype),
        n_t=np.array([rows.size], dtype=f.n_t.dtype),
    )


def test_two_point_moments():
    data = Dataset.from_array([[1.0], [3.0]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    assert m.mu[0, 0] == 2.0
    assert m.sigma[0, 0] == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert m.lo[0, 0] == -np.inf and m.hi[0, 0] == np.inf


def test_single_value_leaf_uses_floor():
    data = Dataset.from_array([[5.0], [5.0], [1.0], [9.0]])
    col_sd = np.std([5.0, 5.0, 1.0, 9.0], ddof=1)
    f = exact_single_leaf(data, rows=[0, 1])
    m = fit_leaf_densities(f, None, data, sigma_floor=1e-3)
    assert m.mu[0, 0] == 5.0
    assert m.sigma[0, 0] == pytest.approx(1e-3 * col_sd)
    m = fit_leaf_densities(f, None, data)
    assert m.sigma[0, 0] == pytest.approx(0.1 * col_sd)


def test_constant_column_uses_absolute_floor():
    data = Dataset.from_array([[2.0]] * 5)
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    assert m.sigma[0, 0] == SIGMA_ABS_FLOOR
    s = sample_unconditional(m, 1000, 0).values[:, 0]
    assert np.all(np.abs(s - 2.0) <= 4 * SIGMA_ABS_FLOOR)


def test_categorical_frequencies():
    schema = [categorical("c", ["x", "y", "z"])]
    data = Dataset.from_rows(schema, [["x"], ["x"], ["x"], ["y"]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    assert m.cat_prob[0, 0, :3].tolist() == [0.75, 0.25, 0.0]
    m = fit_leaf_densities(exact_single_leaf(data), None, data, smoothing=1.0)
    assert m.cat_prob[0, 0, :3] == pytest.approx([4 / 7, 2 / 7, 1 / 7])


def test_missing_values_are_excluded():
    data = Dataset.from_array([[1.0], [np.nan], [3.0]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    assert m.mu[0, 0] == 2.0


def test_never_observed_feature_falls_back_to_column():
    data = Dataset.from_array([[0.0, np.nan], [1.0, np.nan], [2.0, 4.0], [3.0, 6.0]])
    f = exact_single_leaf(data, rows=[0, 1])
    m = fit_leaf_densities(f, None, data)
    assert m.mu[0, 1] == 5.0
    assert m.sigma[0, 1] == pytest.approx(math.sqrt(2.0))


def test_negative_parameters_rejected():
    data = Dataset.from_array([[1.0], [3.0]])
    f = exact_single_leaf(data)
    with pytest.raises(ValueError):
        fit_leaf_densities(f, None, data, smoothing=-1)
    with pytest.raises(ValueError):
        fit_leaf_densities(f, None, data, sigma_floor=-1)


def test_standard_gaussian_leaf_log_density():
    m = fit_leaf_densities(exact_single_leaf(Dataset.from_array([[-1.0], [1.0]])), None,
                           Dataset.from_array([[-1.0], [1.0]]))
    # moments are (0, sqrt 2); rescale to a standard normal
    m = dataclasses.replace(m, sigma=np.ones_like(m.sigma), log_norm=np.full_like(m.log_norm, 0.5 * math.log(2 * math.pi)))
    assert log_density(m, [0.0]) == pytest.approx(-0.9189385332046727, rel=1e-14)


def test_disjoint_leaves_only_one_contributes():
    real = Dataset.from_array(np.column_stack([np.r_[np.full(10, -1.0), np.full(10, -2.0)], np.zeros(20)]))
    synth = Dataset.from_array(np.column_stack([np.full(20, 1.0), np.zeros(20)]))
    f = fit_forest(real, synth, ForestParams(1, 1), rng=0)
    leaves = extract_leaves(f)
    m = fit_leaf_densities(f, leaves, real)
    x = np.array([-1.5, 0.0])
    inside = [d for d in range(m.n_leaves) if m.lo[d, 0] < x[0] <= m.hi[d, 0]]
    assert len(inside) == 1
    d = inside[0]
    expect = math.log(m.weight[d]) + sum(oracles.leaf_feature_logpdf(m, d, j, x[j]) for j in range(2))
    assert log_density(m, x) == pytest.approx(expect, rel=1e-12)


def test_outside_every_leaf_is_minus_infinity():
    schema = [categorical("c", ["x", "y"])]
    data = Dataset.from_rows(schema, [["x"], ["x"]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    assert log_density(m, [1.0]) == -np.inf


def test_log_density_rejects_missing():
    data = Dataset.from_array([[1.0], [3.0]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    with pytest.raises(ValueError):
        log_density(m, [np.nan])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_mixture_matches_leaf_enumeration(seed):
    model, _ = small_model(seed)
    m = model.density
    assert m.n_leaves <= 50
    probe = mixed_data(8, seed + 1, missing=0.0).values
    got = log_density_rows(m, probe)
    for x, g in zip(probe, got):
        ref = oracles.mixture_density(m, x)
        if ref == 0:
            assert g == -np.inf
        else:
            assert g == pytest.approx(math.log(ref), rel=1e-10)
        # per-leaf factorization: the joint leaf density is the product of the parts
        for d in range(m.n_leaves):
            parts = sum(oracles.leaf_feature_logpdf(m, d, j, x[j]) for j in range(m.p))
            joint = m.leaf_log_density(d, x)
            assert joint == parts or joint == pytest.approx(parts, rel=1e-12)


def test_probabilities_are_distributions():
    model, _ = small_model(3, n=60, trees=4)
    m = model.density
    assert np.all(m.sigma > 0)
    assert m.cat_prob.min() >= 0
    assert np.allclose(m.cat_prob.sum(axis=2), 1.0, atol=1e-12)
    assert abs(m.weight.sum() - 1) <= 1e-12
    leaves = extract_leaves(model.forest)
    assert np.array_equal(m.lo, leaves.lo[m.leaf_id])
    assert np.array_equal(m.hi, leaves.hi[m.leaf_id])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 50))
def test_smoothing_keeps_a_distribution(seed, alpha):
    model, data = small_model(seed)
    m = fit_leaf_densities(model.forest, None, data, smoothing=alpha)
    assert m.cat_prob.min() >= 0
    assert np.allclose(m.cat_prob.sum(axis=2), 1.0, atol=1e-12)


def test_draws_respect_leaf_bounds():
    model, _ = small_model(5, n=80, trees=3, min_node=5)
    m = model.density
    rng = np.random.default_rng(0)
    k = 5000
    leaves = rng.integers(0, m.n_leaves, k)
    cols = rng.integers(0, m.p, k)
    vals = draw_features(m, leaves, cols, rng.random(k))
    for d, j, v in zip(leaves, cols, vals):
        if m.is_categorical[j]:
            assert m.cat_prob[d, m.cat_slot[j], int(v)] > 0
        else:
            assert m.lo[d, j] <= v <= m.hi[d, j]
    # unconditional samples are fully observed and lie in some leaf's support
    s = sample_unconditional(m, 500, 1)
    assert not np.isnan(s.values).any()
    assert np.all(np.isfinite(log_density_rows(m, s.values)))


def test_sample_mean_clt():
    x = np.random.default_rng(0).normal(3.0, 2.0, size=200)
    data = Dataset.from_array(x[:, None])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    s = sample_unconditional(m, 100_000, 1).values[:, 0]
    assert abs(s.mean() - m.mu[0, 0]) <= 3 * m.sigma[0, 0] / math.sqrt(100_000)


def test_two_cluster_samples_stay_in_quadrants(cluster_model):
    model, _ = cluster_model
    s = sample_unconditional(model.density, 4000, 2).values
    assert np.mean(np.sign(s[:, 0]) == -np.sign(s[:, 1])) >= 0.95


def test_sample_count_must_be_positive():
    data = Dataset.from_array([[1.0], [3.0]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    with pytest.raises(ValueError):
        sample_unconditional(m, 0)


def test_mixed_schema_sampling_respects_labels():
    schema = [numeric("v"), categorical("c", ["a", "b", "c"])]
    data = Dataset.from_rows(schema, [[0.0, "a"], [1.0, "b"], [2.0, "a"]])
    m = fit_leaf_densities(exact_single_leaf(data), None, data)
    s = sample_unconditional(m, 300, 0).values
    assert set(np.unique(s[:, 1]).tolist()) <= {0.0, 1.0}
