"""Single model-based tree: score-based split selection and recursion.

Split variables are chosen by conditional-inference linear statistics of the
node's score matrix against midrank-transformed covariates (asymptotic
chi-squared p-values from the permutation moments); cut points maximize the
standardized two-sample score statistic over admissible boundaries. Split
rule is x[var] <= cutpoint with the cutpoint at an observed value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import chdtrc

from .data import CenteredDesign, Dataset
from .errors import FitError, ValidationError
from .families import Family, ModelParams


def _midranks(x: np.ndarray) -> np.ndarray:
    """Midranks (average ranks for ties), 1-based."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    new_group = np.r_[True, xs[1:] != xs[:-1]]
    grp = np.cumsum(new_group) - 1
    counts = np.bincount(grp)
    starts = np.cumsum(counts) - counts
    mid = starts + (counts + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = mid[grp]
    return ranks


@dataclass
class TreeConfig:
    min_node_size: int = 14
    mtry: int | None = None  # None means all covariates
    alpha: float = 1.0  # 1.0 disables significance stopping
    max_depth: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_node_size < 2:
            raise ValidationError("min_node_size must be at least 2")
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError("alpha must lie in (0, 1]")


@dataclass
class TreeNode:
    id: int
    params: ModelParams
    depth: int = 0
    var_index: int | None = None
    cutpoint: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    members: np.ndarray | None = None  # training indices, leaves only
    p_value: float | None = None
    fit_fallback: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.var_index is None


def _score_moments(scores: np.ndarray):
    """Mean, pseudo-inverse covariance, and rank of the node score rows."""
    mean = scores.mean(axis=0)
    centered = scores - mean
    cov = centered.T @ centered / scores.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    tol = max(cov.shape[0] * np.finfo(float).eps * max(eigval.max(), 0.0), 1e-300)
    keep = eigval > tol
    rank = int(keep.sum())
    if rank == 0:
        return mean, None, 0
    pinv = (eigvec[:, keep] / eigval[keep]) @ eigvec[:, keep].T
    return mean, pinv, rank


def select_split_variable(scores: np.ndarray, covariates: np.ndarray,
                          candidate_vars, alpha: float = 1.0):
    """Pick the candidate with the smallest chi-squared p-value.

    Returns (var_index, bonferroni_adjusted_p) or None when every candidate
    is constant, the score covariance is degenerate, or the adjusted p-value
    exceeds alpha.
    """
    scores = np.asarray(scores, dtype=float)
    m = scores.shape[0]
    if m < 2:
        return None
    mean, pinv, rank = _score_moments(scores)
    if rank == 0:
        return None
    # all candidates share the chi-squared df, so the largest statistic is
    # also the smallest p-value; a single tail evaluation suffices
    best_var, best_stat = None, -np.inf
    n_tested = 0
    for j in candidate_vars:
        xj = covariates[:, j]
        if xj.min() == xj.max():
            continue
        g = _midranks(xj)
        ssg = float(((g - g.mean()) ** 2).sum())
        if ssg <= 0.0:
            continue
        n_tested += 1
        t_lin = scores.T @ g
        d = t_lin - g.sum() * mean
        stat = float(d @ pinv @ d) * (m - 1) / (m * ssg)
        if stat > best_stat:
            best_var, best_stat = int(j), stat
    if best_var is None:
        return None
    p_adj = min(1.0, float(chdtrc(rank, best_stat)) * n_tested)
    if p_adj > alpha:
        return None
    return best_var, p_adj


def select_cutpoint(scores: np.ndarray, x_j: np.ndarray, min_node_size: int):
    """Maximize the standardized cumulative-score statistic over boundaries.

    Admissible boundaries leave at least min_node_size observations on each
    side; ties go to the smaller cutpoint. Returns the observed covariate
    value that closes the left child, or None.
    """
    scores = np.asarray(scores, dtype=float)
    m = scores.shape[0]
    if m < 2 * min_node_size:
        return None
    mean, pinv, rank = _score_moments(scores)
    if rank == 0:
        return None
    order = np.argsort(x_j, kind="stable")
    xs = x_j[order]
    cs = np.cumsum(scores[order], axis=0)
    n_left = np.arange(1, m)  # boundary after sorted position i has i+1 lefts
    distinct = xs[:-1] < xs[1:]
    admissible = distinct & (n_left >= min_node_size) & (m - n_left >= min_node_size)
    if not admissible.any():
        return None
    idx = np.flatnonzero(admissible)
    d = cs[idx] - np.outer(n_left[idx], mean)
    quad = np.einsum("ij,jk,ik->i", d, pinv, d)
    scale = (m - 1) / (n_left[idx] * (m - n_left[idx]))
    stats = quad * scale
    best = idx[int(np.argmax(stats))]
    return float(xs[best])


def grow_tree(data: Dataset, family: Family, design: CenteredDesign,
              cfg: TreeConfig, subsample_indices) -> TreeNode:
    """Grow one tree on the given subsample; deterministic given cfg.rng_seed."""
    subsample_indices = np.asarray(subsample_indices, dtype=np.int64)
    if subsample_indices.size == 0:
        raise ValidationError("empty subsample")
    n_free = family.n_free_params(data)
    if cfg.min_node_size < 2 * n_free:
        raise ValidationError(
            f"min_node_size={cfg.min_node_size} below 2 x {n_free} free parameters"
        )
    rng = np.random.default_rng(cfg.rng_seed)
    p = data.p
    mtry = p if cfg.mtry is None else min(cfg.mtry, p)
    counter = iter(range(1 << 62))

    def build(indices: np.ndarray, depth: int, parent: ModelParams | None) -> TreeNode:
        node_id = next(counter)
        sub = data.take(indices)
        des = design.take(indices)
        try:
            params = family.fit(sub, des, np.ones(indices.size), init=parent)
        except FitError:
            if parent is None:
                raise
            return TreeNode(node_id, parent.copy(), depth, members=indices,
                            fit_fallback=True)
        leaf = TreeNode(node_id, params, depth, members=indices)
        if indices.size < 2 * cfg.min_node_size:
            return leaf
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            return leaf
        candidates = np.arange(p) if mtry >= p else rng.choice(p, size=mtry, replace=False)
        scores = family.score(params, sub, des)
        chosen = select_split_variable(scores, sub.x, candidates, cfg.alpha)
        if chosen is None:
            return leaf
        var, p_value = chosen
        cut = select_cutpoint(scores, sub.x[:, var], cfg.min_node_size)
        if cut is None:
            return leaf
        mask = sub.x[:, var] <= cut
        left = build(indices[mask], depth + 1, params)
        right = build(indices[~mask], depth + 1, params)
        return TreeNode(node_id, params, depth, var_index=var, cutpoint=cut,
                        left=left, right=right, p_value=p_value)

    return build(np.sort(subsample_indices), 0, None)


def assign_leaves(node: TreeNode, x: np.ndarray) -> list[tuple[TreeNode, np.ndarray]]:
    """Route query rows down the tree; returns (leaf, query-index array) pairs."""
    x = np.atleast_2d(x)
    out: list[tuple[TreeNode, np.ndarray]] = []

    def rec(nd: TreeNode, idx: np.ndarray):
        if nd.is_leaf:
            out.append((nd, idx))
            return
        mask = x[idx, nd.var_index] <= nd.cutpoint
        if mask.any():
            rec(nd.left, idx[mask])
        if not mask.all():
            rec(nd.right, idx[~mask])

    rec(node, np.arange(x.shape[0]))
    return out


def iter_nodes(node: TreeNode):
    yield node
    if not node.is_leaf:
        yield from iter_nodes(node.left)
        yield from iter_nodes(node.right)


def _params_to_dict(params: ModelParams) -> dict:
    return {
        "mu": params.mu,
        "tau": params.tau,
        "phi": params.phi,
        "thresholds": None if params.thresholds is None else list(map(float, params.thresholds)),
        "nu1": params.nu1,
        "nu2": params.nu2,
        "converged": params.converged,
        "capped": params.capped,
    }


def _params_from_dict(d: dict) -> ModelParams:
    thr = d.get("thresholds")
    return ModelParams(
        mu=d["mu"], tau=d["tau"], phi=d.get("phi"),
        thresholds=None if thr is None else np.asarray(thr, dtype=float),
        nu1=d.get("nu1"), nu2=d.get("nu2"),
        converged=d.get("converged", True), capped=d.get("capped", False),
    )


def tree_to_dict(node: TreeNode) -> dict:
    d = {
        "id": node.id,
        "params": _params_to_dict(node.params),
        "depth": node.depth,
        "fit_fallback": node.fit_fallback,
    }
    if node.is_leaf:
        d["members"] = node.members.tolist()
    else:
        d.update(
            var_index=node.var_index,
            cutpoint=node.cutpoint,
            p_value=node.p_value,
            left=tree_to_dict(node.left),
            right=tree_to_dict(node.right),
        )
    return d


def tree_from_dict(d: dict) -> TreeNode:
    params = _params_from_dict(d["params"])
    if "members" in d:
        return TreeNode(d["id"], params, d.get("depth", 0),
                        members=np.asarray(d["members"], dtype=np.int64),
                        fit_fallback=d.get("fit_fallback", False))
    return TreeNode(
        d["id"], params, d.get("depth", 0),
        var_index=d["var_index"], cutpoint=d["cutpoint"], p_value=d.get("p_value"),
        left=tree_from_dict(d["left"]), right=tree_from_dict(d["right"]),
    )
