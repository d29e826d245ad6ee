import numpy as np
import pytest
from scipy.stats import chisquare

from hteforest.data import CONTINUOUS, CenteredDesign, Dataset
from hteforest.errors import ValidationError
from hteforest.families import LinearGaussian
from hteforest.tree import (
    TreeConfig,
    grow_tree,
    iter_nodes,
    select_cutpoint,
    select_split_variable,
    tree_from_dict,
    tree_to_dict,
)


def _step_data(rng, n=400, p=5, noise=0.0, threshold=0.5):
    x = rng.uniform(size=(n, p))
    w = rng.integers(0, 2, n).astype(float)
    y = (x[:, 0] > threshold) * w + noise * rng.normal(size=n)
    return Dataset(x, w, CONTINUOUS, y=y), CenteredDesign.naive(w)


def test_single_candidate_returned(rng):
    scores = rng.normal(size=(100, 2))
    x = rng.normal(size=(100, 3))
    out = select_split_variable(scores, x, [1])
    assert out is not None
    var, p = out
    assert var == 1 and 0.0 <= p <= 1.0


def test_noise_selection_uniform_over_candidates(rng):
    """Under independence the selected index is uniform (chi-squared GoF)."""
    n_vars, counts = 5, np.zeros(5)
    for _ in range(500):
        scores = rng.normal(size=(200, 2))
        x = rng.normal(size=(200, n_vars))
        var, _ = select_split_variable(scores, x, range(n_vars))
        counts[var] += 1
    assert chisquare(counts).pvalue > 0.01


def test_signal_variable_selected(rng):
    hits = 0
    for _ in range(100):
        n = 400
        x = rng.normal(size=(n, 5))
        w = rng.integers(0, 2, n).astype(float)
        y = (x[:, 0] > 0) * w + 0.5 * rng.normal(size=n)
        data = Dataset(x, w, CONTINUOUS, y=y)
        design = CenteredDesign.naive(w)
        params = LinearGaussian().fit(data, design, np.ones(n))
        scores = LinearGaussian().score(params, data, design)
        var, _ = select_split_variable(scores, x, range(5))
        hits += var == 0
    assert hits >= 95


def test_constant_covariates_skipped(rng):
    scores = rng.normal(size=(50, 2))
    x = np.column_stack([np.ones(50), rng.normal(size=50)])
    var, _ = select_split_variable(scores, x, [0, 1])
    assert var == 1
    assert select_split_variable(scores, x[:, :1], [0]) is None


def test_alpha_stopping(rng):
    scores = rng.normal(size=(100, 2))
    x = rng.normal(size=(100, 3))
    assert select_split_variable(scores, x, range(3), alpha=1e-12) is None


def test_cutpoint_noiseless_step(rng):
    """A clean score jump at 0.5 puts the cut at the largest value below it."""
    for _ in range(20):
        n = 120
        xj = rng.uniform(size=n)
        w = rng.integers(0, 2, n).astype(float)
        step = (xj > 0.5).astype(float)
        step -= step.mean()
        scores = np.column_stack([step, step * (w - 0.5)])
        cut = select_cutpoint(scores, xj, min_node_size=14)
        below = xj[xj <= 0.5].max()
        assert below <= cut <= 0.5


def test_cutpoint_admissibility():
    rng = np.random.default_rng(0)
    min_node = 14
    n = 2 * min_node - 1
    scores = rng.normal(size=(n, 2))
    assert select_cutpoint(scores, rng.uniform(size=n), min_node) is None


def test_cutpoint_linear_signal_near_median(rng):
    """Linear tau(x_j) puts the best cut near the median on average."""
    centers = []
    for _ in range(50):
        n = 500
        xj = rng.uniform(size=n)
        w = rng.integers(0, 2, n).astype(float)
        s_tau = (w - 0.5) * (xj - 0.5) + 0.05 * rng.normal(size=n)
        scores = np.column_stack([np.zeros(n), s_tau])
        cut = select_cutpoint(scores, xj, min_node_size=14)
        centers.append(np.mean(xj <= cut))
    assert 0.35 <= np.mean(centers) <= 0.65


def test_grow_single_leaf_when_small(rng):
    data, design = _step_data(rng, n=20)
    cfg = TreeConfig(min_node_size=20, rng_seed=0)
    tree = grow_tree(data, LinearGaussian(), design, cfg, np.arange(20))
    assert tree.is_leaf
    np.testing.assert_array_equal(tree.members, np.arange(20))


def test_grow_noiseless_step_depth_one(rng):
    data, design = _step_data(rng, n=400)
    cfg = TreeConfig(min_node_size=14, rng_seed=5)
    tree = grow_tree(data, LinearGaussian(), design, cfg, np.arange(400))
    assert not tree.is_leaf
    assert tree.var_index == 0
    assert tree.left.is_leaf and tree.right.is_leaf
    assert abs(tree.left.params.tau - 0.0) < 1e-6
    assert abs(tree.right.params.tau - 1.0) < 1e-6


def test_grow_deterministic(rng):
    data, design = _step_data(rng, n=300, noise=1.0)
    cfg = TreeConfig(min_node_size=14, mtry=3, rng_seed=123)
    t1 = grow_tree(data, LinearGaussian(), design, cfg, np.arange(300))
    t2 = grow_tree(data, LinearGaussian(), design, cfg, np.arange(300))
    assert tree_to_dict(t1) == tree_to_dict(t2)


def test_partition_property(rng):
    data, design = _step_data(rng, n=350, noise=0.8)
    sub = np.sort(np.random.default_rng(4).choice(350, size=200, replace=False))
    tree = grow_tree(data, LinearGaussian(), design,
                     TreeConfig(min_node_size=14, rng_seed=9), sub)
    leaves = [nd for nd in iter_nodes(tree) if nd.is_leaf]
    all_members = np.concatenate([leaf.members for leaf in leaves])
    np.testing.assert_array_equal(np.sort(all_members), sub)
    assert len(all_members) == len(set(all_members.tolist()))
    for nd in iter_nodes(tree):
        if not nd.is_leaf:
            for leaf in iter_nodes(nd.left):
                if leaf.is_leaf:
                    assert (data.x[leaf.members, nd.var_index] <= nd.cutpoint).all()
            for leaf in iter_nodes(nd.right):
                if leaf.is_leaf:
                    assert (data.x[leaf.members, nd.var_index] > nd.cutpoint).all()


def test_monotone_transform_invariance(rng):
    """Monotone covariate transforms keep variable choice and cut rank."""
    data, design = _step_data(rng, n=300, noise=0.6)
    cfg = TreeConfig(min_node_size=14, rng_seed=77)
    t1 = grow_tree(data, LinearGaussian(), design, cfg, np.arange(300))
    x2 = data.x.copy()
    x2[:, 0] = np.exp(2.0 * x2[:, 0])  # strictly increasing
    data2 = Dataset(x2, data.w, CONTINUOUS, y=data.y)
    t2 = grow_tree(data2, LinearGaussian(), design, cfg, np.arange(300))
    assert t1.var_index == t2.var_index == 0
    rank1 = (data.x[:, 0] <= t1.cutpoint).sum()
    rank2 = (data2.x[:, 0] <= t2.cutpoint).sum()
    assert rank1 == rank2
    left1 = {leaf.members.tobytes() for leaf in iter_nodes(t1) if leaf.is_leaf}
    left2 = {leaf.members.tobytes() for leaf in iter_nodes(t2) if leaf.is_leaf}
    assert left1 == left2


def test_min_node_size_validates_free_params(rng):
    data, design = _step_data(rng, n=50)
    with pytest.raises(ValidationError, match="free parameters"):
        grow_tree(data, LinearGaussian(), design,
                  TreeConfig(min_node_size=4, rng_seed=0), np.arange(50))


def test_tree_json_round_trip(rng):
    data, design = _step_data(rng, n=200, noise=0.5)
    tree = grow_tree(data, LinearGaussian(), design,
                     TreeConfig(min_node_size=14, rng_seed=3), np.arange(200))
    d = tree_to_dict(tree)
    back = tree_from_dict(d)
    assert tree_to_dict(back) == d


def test_p_values_uniform_under_null(rng):
    pvals = []
    for _ in range(1000):
        scores = rng.normal(size=(150, 2))
        x = rng.normal(size=(150, 1))
        _, p = select_split_variable(scores, x, [0])
        pvals.append(p)
    from scipy.stats import kstest
    assert kstest(pvals, "uniform").pvalue > 0.05
