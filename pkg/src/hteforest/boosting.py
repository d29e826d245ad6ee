"""Gradient boosting with shallow regression trees and family-matched losses.

One machine covers every outcome type used for nuisance estimation:
squared error, binomial deviance, proportional-odds likelihood with fixed
thresholds, and the Cox partial likelihood (hazard proportional to
exp(-f), matching the node-model parameterization). Updates are plain
leaf-mean gradient steps with a backtracking guard so the training loss is
non-increasing round by round.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .numerics import clipped_exp, softplus
from .families import _logistic_interval_terms

_MIN_LEAF = 10
_LOGIT_CLIP = 15.0


class SquaredErrorLoss:
    name = "squared_error"

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)

    def init_value(self):
        return float(self.y.mean())

    def negative_gradient(self, f):
        return self.y - f

    def value(self, f):
        return 0.5 * float(((self.y - f) ** 2).sum())


class BinomialDevianceLoss:
    name = "binomial_deviance"

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)

    def init_value(self):
        rate = np.clip(self.y.mean(), 1e-6, 1 - 1e-6)
        return float(np.clip(np.log(rate / (1 - rate)), -_LOGIT_CLIP, _LOGIT_CLIP))

    def negative_gradient(self, f):
        return self.y - expit(f)

    def value(self, f):
        return float((softplus(f) - self.y * f).sum())


class ProportionalOddsLoss:
    """Shift-only proportional odds loss; thresholds are fixed up front."""

    name = "proportional_odds"

    def __init__(self, level, thresholds):
        self.level = np.asarray(level, dtype=np.int64)
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.k = self.thresholds.size + 1

    def _bounds(self, f):
        padded = np.concatenate(([-np.inf], self.thresholds, [np.inf]))
        return padded[self.level] - f, padded[self.level - 1] - f

    def init_value(self):
        return 0.0

    def negative_gradient(self, f):
        _, rb, rc, _, _ = _logistic_interval_terms(*self._bounds(f))
        return rc - rb

    def value(self, f):
        logp, *_ = _logistic_interval_terms(*self._bounds(f))
        return float(-logp.sum())


class CoxLoss:
    """Negative log partial likelihood (Breslow) with hazard exp(-f)."""

    name = "cox_partial"

    def __init__(self, time, event):
        time = np.asarray(time, dtype=float)
        self.event = np.asarray(event, dtype=bool)
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        self.group_start = np.searchsorted(ts, ts, side="left")
        self.ev_sorted = self.event[self.order].astype(float)
        uniq, self.group_inv = np.unique(self.group_start, return_inverse=True)
        self.n_groups = uniq.size
        self.n = time.size

    def _suffix(self, vals_sorted):
        sfx = np.cumsum(vals_sorted[::-1])[::-1]
        return sfx[self.group_start]

    def init_value(self):
        return 0.0

    def negative_gradient(self, f):
        xi = -np.asarray(f, dtype=float)[self.order]
        e = clipped_exp(xi)
        s0 = self._suffix(e)
        dl = self.ev_sorted / s0
        per_group = np.zeros(self.n_groups)
        np.add.at(per_group, self.group_inv, dl)
        lam = np.cumsum(per_group)[self.group_inv]
        u_sorted = e * lam - self.ev_sorted
        out = np.empty(self.n)
        out[self.order] = u_sorted
        return out

    def value(self, f):
        xi = -np.asarray(f, dtype=float)[self.order]
        s0 = self._suffix(clipped_exp(xi))
        return float(-np.sum(self.ev_sorted * (xi - np.log(s0))))


def _fit_stump(x, target, idx, min_leaf):
    """Best squared-error split of target over rows idx, or None."""
    best = None
    t = target[idx]
    m = t.size
    if m < 2 * min_leaf:
        return None
    tot = t.sum()
    base = tot * tot / m
    for j in range(x.shape[1]):
        xv = x[idx, j]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        cum = np.cumsum(t[order][:-1])
        n_left = np.arange(1, m)
        ok = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
        if not ok.any():
            continue
        k = np.flatnonzero(ok)
        gain = cum[k] ** 2 / n_left[k] + (tot - cum[k]) ** 2 / (m - n_left[k]) - base
        b = int(np.argmax(gain))
        if best is None or gain[b] > best[0]:
            best = (float(gain[b]), j, float(xs[k[b]]))
    if best is None or best[0] <= 0:
        return None
    return best[1], best[2]


def _grow_reg_tree(x, target, idx, depth, min_leaf):
    split = _fit_stump(x, target, idx, min_leaf) if depth > 0 else None
    if split is None:
        return {"value": float(target[idx].mean())}
    var, cut = split
    mask = x[idx, var] <= cut
    return {
        "var": var,
        "cut": cut,
        "left": _grow_reg_tree(x, target, idx[mask], depth - 1, min_leaf),
        "right": _grow_reg_tree(x, target, idx[~mask], depth - 1, min_leaf),
    }


def _predict_reg_tree(node, x, idx, out):
    if "value" in node:
        out[idx] = node["value"]
        return
    mask = x[idx, node["var"]] <= node["cut"]
    _predict_reg_tree(node["left"], x, idx[mask], out)
    _predict_reg_tree(node["right"], x, idx[~mask], out)


class GradientBooster:
    def __init__(self, loss, n_rounds=100, learning_rate=0.1, max_tree_depth=2,
                 min_leaf=_MIN_LEAF):
        self.loss = loss
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_tree_depth = max_tree_depth
        self.min_leaf = min_leaf
        self.init_ = 0.0
        self.stages_ = []
        self.train_loss_path_ = []

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        self.init_ = self.loss.init_value()
        f = np.full(n, self.init_)
        cur = self.loss.value(f)
        self.train_loss_path_ = [cur]
        all_idx = np.arange(n)
        for _ in range(self.n_rounds):
            ng = self.loss.negative_gradient(f)
            tree = _grow_reg_tree(x, ng, all_idx, self.max_tree_depth, self.min_leaf)
            upd = np.empty(n)
            _predict_reg_tree(tree, x, all_idx, upd)
            step = self.learning_rate
            accepted = False
            for _ in range(8):
                cand = f + step * upd
                cand_val = self.loss.value(cand)
                if np.isfinite(cand_val) and cand_val <= cur + 1e-12:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                f = cand
                cur = cand_val
                self.stages_.append((tree, step))
            self.train_loss_path_.append(cur)
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        f = np.full(x.shape[0], self.init_)
        idx = np.arange(x.shape[0])
        buf = np.empty(x.shape[0])
        for tree, step in self.stages_:
            _predict_reg_tree(tree, x, idx, buf)
            f += step * buf
        return f
