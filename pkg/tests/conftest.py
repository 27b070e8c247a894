import numpy as np
import pytest

from missarf import ColumnSchema, Dataset, ForestParams, fit_arf


def two_clusters(n, seed, noise=0.2):
    """Half the rows near (-1, 1), half near (1, -1)."""
    rng = np.random.default_rng(seed)
    c = rng.integers(0, 2, n)
    x1 = np.where(c == 0, -1.0, 1.0) + noise * rng.standard_normal(n)
    x2 = np.where(c == 0, 1.0, -1.0) + noise * rng.standard_normal(n)
    return Dataset.from_array(np.column_stack([x1, x2]))


def mixed_data(n, seed, missing=0.2, n_cat_labels=3):
    """Two numeric columns and one categorical column, with MCAR holes."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = a + 0.5 * rng.standard_normal(n)
    c = np.clip(np.floor((a + 2) / 4 * n_cat_labels), 0, n_cat_labels - 1)
    X = np.column_stack([a, b, c])
    X[rng.random(X.shape) < missing] = np.nan
    schema = [
        ColumnSchema("a", "numeric"),
        ColumnSchema("b", "numeric"),
        ColumnSchema("c", "categorical", tuple(f"L{k}" for k in range(n_cat_labels))),
    ]
    return Dataset(schema, X)


def small_model(seed, n=30, trees=2, min_node=6, smoothing=0.0):
    """A model with a handful of leaves, small enough for enumeration."""
    data = mixed_data(n, seed)
    return fit_arf(data, ForestParams(trees, min_node), max_iters=1, rng=seed,
                   threads=1, smoothing=smoothing), data


@pytest.fixture(scope="session")
def cluster_model():
    data = two_clusters(400, 0)
    return fit_arf(data, ForestParams(), rng=0), data


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criteria verdicts, one line each."""
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
