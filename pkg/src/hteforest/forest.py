"""Forest of model-based trees: kernel weights and local ML estimation.

Kernel weights follow the leaf-normalized nearest-neighbor convention: each
tree contributes 1/|leaf| to every training sample sharing the query's leaf
(restricted to that tree's subsample), averaged over trees and renormalized
to sum to one. Effects are then estimated by refitting the node family
under those weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CenteredDesign, Dataset
from .errors import FitError, ValidationError
from .families import Family, ModelParams, family_for
from .tree import (
    TreeConfig,
    assign_leaves,
    grow_tree,
    iter_nodes,
    tree_from_dict,
    tree_to_dict,
    _params_from_dict,
    _params_to_dict,
)

FOREST_FORMAT_VERSION = 1


@dataclass
class ForestConfig:
    n_trees: int = 500
    subsample_fraction: float = 0.5
    tree: TreeConfig = field(default_factory=TreeConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be at least 1")
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise ValidationError("subsample_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ForestWeights:
    weights: np.ndarray

    def __post_init__(self):
        if self.weights.size and self.weights.sum() > 0:
            total = float(self.weights.sum())
            if abs(total - 1.0) > 1e-12:
                raise ValidationError("forest weights must sum to one")


@dataclass
class Forest:
    trees: list
    subsamples: list
    family: Family
    design: CenteredDesign
    data: Dataset
    cfg: ForestConfig
    root_params: ModelParams

    @property
    def n_capped(self) -> int:
        return sum(
            1 for t in self.trees for nd in iter_nodes(t) if nd.params.capped
        )

    @property
    def n_fallback_leaves(self) -> int:
        return sum(
            1 for t in self.trees for nd in iter_nodes(t) if nd.fit_fallback
        )


def fit_forest(data: Dataset, family: Family, design: CenteredDesign,
               cfg: ForestConfig) -> Forest:
    """Grow cfg.n_trees trees on independent without-replacement subsamples.

    Per-tree randomness is derived from cfg.rng_seed through a spawned seed
    sequence, so results do not depend on execution order.
    """
    if data.n < 1:
        raise ValidationError("cannot fit a forest on an empty dataset")
    if len(design) != data.n:
        raise ValidationError("design and data lengths differ")
    root_params = family.fit(data, design, np.ones(data.n))
    m = int(np.ceil(cfg.subsample_fraction * data.n))
    children = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_trees)
    trees, subsamples = [], []
    for t, child in enumerate(children):
        ss_sub, ss_tree = child.spawn(2)
        rng = np.random.default_rng(ss_sub)
        sub = np.sort(rng.choice(data.n, size=m, replace=False))
        tree_cfg = replace(cfg.tree, rng_seed=int(ss_tree.generate_state(1, np.uint64)[0]))
        try:
            trees.append(grow_tree(data, family, design, tree_cfg, sub))
        except FitError as exc:
            raise FitError(f"tree {t} failed to fit: {exc}", getattr(exc, "grad_norm", float("nan")))
        subsamples.append(sub)
    return Forest(trees, subsamples, family, design, data, cfg, root_params)


def weight_matrix(forest: Forest, x: np.ndarray,
                  exclude_train_index=None) -> np.ndarray:
    """(n_queries, n_train) kernel weight matrix; rows sum to one.

    exclude_train_index, when given, is one training-row index per query to
    zero out before renormalizing (out-of-bag style predictions on the
    training data).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != forest.data.p:
        raise ValidationError(f"query has {x.shape[1]} covariates, expected {forest.data.p}")
    a = np.zeros((x.shape[0], forest.data.n))
    for tree in forest.trees:
        for leaf, qidx in assign_leaves(tree, x):
            a[np.ix_(qidx, leaf.members)] += 1.0 / leaf.members.size
    a /= len(forest.trees)
    if exclude_train_index is not None:
        exclude_train_index = np.asarray(exclude_train_index)
        a[np.arange(x.shape[0]), exclude_train_index] = 0.0
    totals = a.sum(axis=1, keepdims=True)
    np.divide(a, totals, out=a, where=totals > 0)
    return a


def query_weights(forest: Forest, x: np.ndarray,
                  exclude_train_index: int | None = None) -> ForestWeights:
    excl = None if exclude_train_index is None else [exclude_train_index]
    return ForestWeights(weight_matrix(forest, x, excl)[0])


def _predict_gaussian(forest: Forest, a: np.ndarray):
    y = forest.data.y - forest.design.offset
    r = forest.design.regressor
    s0 = a.sum(axis=1)
    s1 = a @ r
    s2 = a @ (r * r)
    sy = a @ y
    sry = a @ (r * y)
    det = s0 * s2 - s1 * s1
    ok = det > 1e-12
    tau = np.where(ok, (s0 * sry - s1 * sy) / np.where(ok, det, 1.0), forest.root_params.tau)
    mu = np.where(ok, (sy - tau * s1) / np.where(s0 > 0, s0, 1.0), forest.root_params.mu)
    return mu, tau, int((~ok).sum())


def predict_effects(forest: Forest, x: np.ndarray,
                    exclude_train_index=None):
    """Local maximum-likelihood estimates (mu_hat, tau_hat) per query row.

    Queries whose weighted fit fails fall back to the unsplit root fit;
    the count of fallbacks is returned alongside the estimates.
    """
    a = weight_matrix(forest, x, exclude_train_index)
    if forest.family.kind == "linear_gaussian":
        return _predict_gaussian(forest, a)
    mu = np.empty(a.shape[0])
    tau = np.empty(a.shape[0])
    n_fallback = 0
    for i in range(a.shape[0]):
        try:
            params = forest.family.fit(
                forest.data, forest.design, a[i], init=forest.root_params
            )
            mu[i], tau[i] = params.mu, params.tau
        except FitError:
            mu[i], tau[i] = forest.root_params.mu, forest.root_params.tau
            n_fallback += 1
    return mu, tau, n_fallback


def predict_effect(forest: Forest, x: np.ndarray,
                   exclude_train_index: int | None = None) -> tuple[float, float]:
    excl = None if exclude_train_index is None else [exclude_train_index]
    mu, tau, _ = predict_effects(forest, np.atleast_2d(x), excl)
    return float(mu[0]), float(tau[0])


def forest_to_dict(forest: Forest) -> dict:
    fam = {"kind": forest.family.kind}
    if forest.family.kind == "proportional_odds":
        fam["n_levels"] = forest.family.k
    return {
        "format_version": FOREST_FORMAT_VERSION,
        "family": fam,
        "variant": forest.design.variant,
        "rng_seed": forest.cfg.rng_seed,
        "n_trees": forest.cfg.n_trees,
        "subsample_fraction": forest.cfg.subsample_fraction,
        "tree_config": {
            "min_node_size": forest.cfg.tree.min_node_size,
            "mtry": forest.cfg.tree.mtry,
            "alpha": forest.cfg.tree.alpha,
            "max_depth": forest.cfg.tree.max_depth,
        },
        "root_params": _params_to_dict(forest.root_params),
        "subsamples": [s.tolist() for s in forest.subsamples],
        "trees": [tree_to_dict(t) for t in forest.trees],
    }


def save_forest(forest: Forest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh)


def forest_from_dict(d: dict, data: Dataset, design: CenteredDesign) -> Forest:
    """Rebuild a forest from its artifact plus the original training data."""
    if d.get("format_version") != FOREST_FORMAT_VERSION:
        raise ValidationError(f"unsupported forest format {d.get('format_version')!r}")
    family = family_for(d["family"]["kind"], d["family"].get("n_levels"))
    tc = d["tree_config"]
    cfg = ForestConfig(
        n_trees=d["n_trees"],
        subsample_fraction=d["subsample_fraction"],
        tree=TreeConfig(
            min_node_size=tc["min_node_size"], mtry=tc["mtry"],
            alpha=tc["alpha"], max_depth=tc["max_depth"],
        ),
        rng_seed=d["rng_seed"],
    )
    trees = [tree_from_dict(t) for t in d["trees"]]
    subsamples = [np.asarray(s, dtype=np.int64) for s in d["subsamples"]]
    return Forest(trees, subsamples, family, design, data, cfg,
                  _params_from_dict(d["root_params"]))


def load_forest(path, data: Dataset, design: CenteredDesign) -> Forest:
    with open(path, encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh), data, design)
