"""First-stage estimation: propensities, arm predictors, offsets, and the
variance-weighted centering quantities, assembled into centered designs.

Propensities come from an out-of-bag regression forest on the treatment
indicator; arm-wise natural parameters and censoring probabilities come
from gradient boosting machines with family-matched losses. Nuisance fits
deliberately reuse the training data (no cross-fitting).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.ensemble import RandomForestRegressor

from .boosting import (
    BinomialDevianceLoss,
    CoxLoss,
    GradientBooster,
    ProportionalOddsLoss,
    SquaredErrorLoss,
)
from .data import (
    CONTINUOUS,
    GAO,
    GAO_W,
    NAIVE,
    ROBINSON,
    ROBINSON_W,
    SURVIVAL,
    CenteredDesign,
    Dataset,
)
from .errors import UnsupportedVariantError, ValidationError
from .families import Family

log = logging.getLogger(__name__)

PROPENSITY_CLIP = 0.01
MIN_ARM_SIZE = 20


@dataclass
class BoostConfig:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_tree_depth: int = 2
    loss: str | None = None  # family-matched when None

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValidationError("n_rounds must be at least 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValidationError("learning_rate must lie in (0, 1]")


@dataclass
class NuisanceProfile:
    pi: np.ndarray
    eta0: np.ndarray
    eta1: np.ndarray
    m: np.ndarray
    a: np.ndarray | None = None
    nu: np.ndarray | None = None
    uncensored_prob: tuple | None = None  # (P(C>=Y|x,W=0), P(C>=Y|x,W=1))


def estimate_propensity(data: Dataset, n_trees: int = 125, min_node_size: int = 5,
                        subsample_fraction: float = 0.5, seed: int = 0) -> np.ndarray:
    """Out-of-bag regression-forest propensities, clipped to [0.01, 0.99]."""
    if len(np.unique(data.w)) < 2:
        raise ValidationError("both treatment arms must be present")
    rf = RandomForestRegressor(
        n_estimators=n_trees,
        min_samples_leaf=min_node_size,
        max_samples=subsample_fraction,
        bootstrap=True,
        oob_score=True,
        random_state=int(seed) % (2**32),
        n_jobs=1,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # benign "some inputs lack OOB scores"
        rf.fit(data.x, data.w)
        pi = np.array(rf.oob_prediction_, dtype=float)
        missing = ~np.isfinite(pi)
        if missing.any():
            pi[missing] = rf.predict(data.x[missing])
    return np.clip(pi, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)


def _loss_for(family: Family, data: Dataset, idx: np.ndarray,
              po_thresholds: np.ndarray | None):
    if family.kind == "linear_gaussian":
        return SquaredErrorLoss(data.y[idx])
    if family.kind == "binomial_logit":
        return BinomialDevianceLoss(data.y[idx])
    if family.kind == "proportional_odds":
        return ProportionalOddsLoss(data.level[idx], po_thresholds)
    if family.kind in ("weibull_ph", "cox_partial"):
        return CoxLoss(data.time[idx], data.event[idx])
    raise ValidationError(f"no boosting loss for family {family.kind!r}")


def pooled_po_thresholds(level: np.ndarray, n_levels: int) -> np.ndarray:
    """Thresholds from the pooled marginal distribution (logits of cum freqs)."""
    n = level.size
    cum = np.array([(level <= k).sum() / n for k in range(1, n_levels)])
    cum = np.clip(cum, 1e-4, 1 - 1e-4)
    theta = np.log(cum / (1 - cum))
    for j in range(1, theta.size):
        if theta[j] <= theta[j - 1]:
            theta[j] = theta[j - 1] + 1e-6
    return theta


def _fit_arm_booster(data: Dataset, family: Family, idx: np.ndarray,
                     cfg: BoostConfig, po_thresholds) -> GradientBooster:
    n_rounds = cfg.n_rounds
    if idx.size < MIN_ARM_SIZE:
        n_rounds = max(1, round(cfg.n_rounds * idx.size / MIN_ARM_SIZE))
        log.warning(
            "arm with %d observations below %d; shrinking boosting rounds to %d",
            idx.size, MIN_ARM_SIZE, n_rounds,
        )
    loss = _loss_for(family, data, idx, po_thresholds)
    booster = GradientBooster(
        loss, n_rounds=n_rounds, learning_rate=cfg.learning_rate,
        max_tree_depth=cfg.max_tree_depth,
    )
    booster.fit(data.x[idx])
    return booster


def estimate_arm_predictors(data: Dataset, family: Family,
                            cfg: BoostConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Arm-wise natural-parameter surfaces eta0(x), eta1(x) for all rows."""
    cfg = cfg or BoostConfig()
    idx0 = np.flatnonzero(data.w == 0)
    idx1 = np.flatnonzero(data.w == 1)
    if idx0.size == 0 or idx1.size == 0:
        raise ValidationError("both treatment arms must be present")
    po_thresholds = None
    if family.kind == "proportional_odds":
        po_thresholds = pooled_po_thresholds(data.level, data.n_levels)
    b0 = _fit_arm_booster(data, family, idx0, cfg, po_thresholds)
    b1 = _fit_arm_booster(data, family, idx1, cfg, po_thresholds)
    return b0.predict(data.x), b1.predict(data.x)


def compute_offsets(pi: np.ndarray, eta0: np.ndarray, eta1: np.ndarray) -> np.ndarray:
    """Mixture offset m(x) = pi*eta1 + (1-pi)*eta0 (arm-composed for every
    family; the Gaussian direct-regression shortcut is a separate toggle)."""
    return pi * eta1 + (1.0 - pi) * eta0


def estimate_gaussian_direct_m(data: Dataset, cfg: BoostConfig | None = None) -> np.ndarray:
    """Pooled E(Y|x) regression; valid as the offset for Gaussian models only."""
    if data.kind != CONTINUOUS:
        raise ValidationError("direct m(x) regression applies to continuous outcomes")
    cfg = cfg or BoostConfig()
    booster = GradientBooster(
        SquaredErrorLoss(data.y), n_rounds=cfg.n_rounds,
        learning_rate=cfg.learning_rate, max_tree_depth=cfg.max_tree_depth,
    )
    booster.fit(data.x)
    return booster.predict(data.x)


def estimate_uncensored_prob(data: Dataset, cfg: BoostConfig | None = None
                             ) -> tuple[np.ndarray, np.ndarray]:
    """P(C >= Y | x, W=w) per arm via deviance boosting on the event flag."""
    if data.kind != SURVIVAL:
        raise ValidationError("censoring probabilities require survival outcomes")
    cfg = cfg or BoostConfig()
    out = []
    for arm in (0, 1):
        idx = np.flatnonzero(data.w == arm)
        if idx.size == 0:
            raise ValidationError("both treatment arms must be present")
        events = data.event[idx].astype(float)
        if events.sum() == 0:
            log.warning("treatment arm %d is fully censored; clipping at 0.01", arm)
            out.append(np.full(data.n, PROPENSITY_CLIP))
            continue
        booster = GradientBooster(
            BinomialDevianceLoss(events), n_rounds=cfg.n_rounds,
            learning_rate=cfg.learning_rate, max_tree_depth=cfg.max_tree_depth,
        )
        booster.fit(data.x[idx])
        out.append(np.clip(expit(booster.predict(data.x)), PROPENSITY_CLIP, 1.0))
    return out[0], out[1]


def compute_gao_weights(pi: np.ndarray, eta0: np.ndarray, eta1: np.ndarray,
                        family: Family, uncensored_prob=None) -> np.ndarray:
    """Variance-weighted centering a(x); defined for Gaussian, binomial
    logit, and Cox families only."""
    if family.kind == "linear_gaussian":
        return np.asarray(pi, dtype=float).copy()
    if family.kind == "binomial_logit":
        p0 = expit(eta0)
        p1 = expit(eta1)
        ratio = (p0 * (1.0 - p0)) / (p1 * (1.0 - p1))
        a = pi / (pi + (1.0 - pi) * ratio)
    elif family.kind == "cox_partial":
        if uncensored_prob is None:
            raise ValidationError("Cox centering needs censoring probabilities")
        p_c0, p_c1 = uncensored_prob
        a = pi * p_c1 / (pi * p_c1 + (1.0 - pi) * p_c0)
    else:
        raise UnsupportedVariantError(
            f"variance-weighted centering is not defined for {family.kind}"
        )
    return np.clip(a, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)


def build_design(variant: str, profile: NuisanceProfile | None, data: Dataset) -> CenteredDesign:
    """Assemble the treatment regressor and offset for a centering variant."""
    w = data.w
    if variant == NAIVE:
        return CenteredDesign.naive(w)
    if profile is None:
        raise ValidationError(f"variant {variant!r} requires a nuisance profile")
    if variant == ROBINSON_W:
        return CenteredDesign(w - profile.pi, np.zeros_like(w), variant)
    if variant == ROBINSON:
        return CenteredDesign(w - profile.pi, profile.m, variant)
    if variant in (GAO_W, GAO):
        if profile.a is None:
            raise UnsupportedVariantError(
                "profile lacks variance-weighted centering terms"
            )
        if variant == GAO_W:
            return CenteredDesign(w - profile.a, np.zeros_like(w), variant)
        return CenteredDesign(w - profile.a, profile.nu, variant)
    raise ValidationError(f"unknown variant {variant!r}")


def estimate_profile(data: Dataset, family: Family, *,
                     need_offsets: bool = True, need_gao: bool = False,
                     propensity_kwargs: dict | None = None,
                     boost_cfg: BoostConfig | None = None,
                     gaussian_direct_m: bool = False,
                     seed: int = 0) -> NuisanceProfile:
    """Estimate every first-stage quantity required by the requested variants."""
    ss = np.random.SeedSequence(seed)
    prop_seed = int(ss.generate_state(1, np.uint64)[0])
    pk = dict(propensity_kwargs or {})
    pk.setdefault("seed", prop_seed)
    pi = estimate_propensity(data, **pk)
    eta0, eta1 = estimate_arm_predictors(data, family, boost_cfg)
    if gaussian_direct_m and family.kind == "linear_gaussian":
        m = estimate_gaussian_direct_m(data, boost_cfg)
    else:
        m = compute_offsets(pi, eta0, eta1)
    profile = NuisanceProfile(pi=pi, eta0=eta0, eta1=eta1, m=m)
    if need_gao:
        unc = None
        if family.kind == "cox_partial":
            unc = estimate_uncensored_prob(data, boost_cfg)
            profile.uncensored_prob = unc
        profile.a = compute_gao_weights(pi, eta0, eta1, family, unc)
        profile.nu = profile.a * eta1 + (1.0 - profile.a) * eta0
    return profile


def profile_to_rows(profile: NuisanceProfile) -> list[dict]:
    """Per-sample audit rows (pi, eta0, eta1, m, a, nu)."""
    n = profile.pi.shape[0]
    rows = []
    for i in range(n):
        rows.append(
            {
                "pi": profile.pi[i],
                "eta0": profile.eta0[i],
                "eta1": profile.eta1[i],
                "m": profile.m[i],
                "a": None if profile.a is None else profile.a[i],
                "nu": None if profile.nu is None else profile.nu[i],
            }
        )
    return rows


def write_profile_csv(profile: NuisanceProfile, path) -> None:
    """Audit dump, one row per training sample."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["pi", "eta0", "eta1", "m", "a", "nu"])
        writer.writeheader()
        for row in profile_to_rows(profile):
            writer.writerow({
                k: ("" if v is None else format(v, ".17g")) for k, v in row.items()
            })
