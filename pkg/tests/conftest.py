import numpy as np
import pytest

from hteforest.data import (
    BINARY,
    CONTINUOUS,
    ORDINAL,
    SURVIVAL,
    CenteredDesign,
    Dataset,
)
from hteforest.families import (
    BinomialLogit,
    CoxPartial,
    LinearGaussian,
    ModelParams,
    ProportionalOdds,
    WeibullPH,
    neg_log_lik,
)


def make_design(regressor, offset=None, variant="robinson"):
    """Design with arbitrary regressor/offset, bypassing variant checks."""
    regressor = np.asarray(regressor, dtype=float)
    offset = np.zeros_like(regressor) if offset is None else np.asarray(offset, dtype=float)
    d = object.__new__(CenteredDesign)
    object.__setattr__(d, "regressor", regressor)
    object.__setattr__(d, "offset", offset)
    object.__setattr__(d, "variant", variant)
    return d


def fd_score(family, params, data, design, eps=1e-6):
    """Independent finite-difference oracle for the score matrix.

    Perturbs each observation's linear predictor through its offset, so the
    oracle covers the Cox partial likelihood (where only per-observation
    perturbations are well defined) with the same code as the iid families.
    """
    n = data.n
    out = np.empty((n, 2))
    ones = np.ones(n)
    for i in range(n):
        for col, scale in ((0, 1.0), (1, float(design.regressor[i]))):
            if scale == 0.0:
                out[i, col] = 0.0
                continue
            plus = design.offset.copy()
            minus = design.offset.copy()
            plus[i] += eps * scale
            minus[i] -= eps * scale
            f_plus = neg_log_lik(family, params, data, ones, make_design(design.regressor, plus))
            f_minus = neg_log_lik(family, params, data, ones, make_design(design.regressor, minus))
            out[i, col] = -(f_plus - f_minus) / (2.0 * eps)
    return out


def random_instance(family, rng, n=None):
    """Random (params, data, design) triple satisfying the type invariants."""
    n = n or int(rng.integers(8, 21))
    x = rng.normal(size=(n, 3))
    w = rng.integers(0, 2, n).astype(float)
    while len(np.unique(w)) < 2:
        w = rng.integers(0, 2, n).astype(float)
    regressor = w - rng.uniform(0.2, 0.8, size=n)
    offset = rng.normal(scale=0.5, size=n)
    design = make_design(regressor, offset)
    if isinstance(family, LinearGaussian):
        data = Dataset(x, w, CONTINUOUS, y=rng.normal(size=n))
        params = ModelParams(mu=rng.normal(), tau=rng.normal(),
                             phi=float(rng.uniform(0.5, 2.0)))
    elif isinstance(family, BinomialLogit):
        data = Dataset(x, w, BINARY, y=rng.integers(0, 2, n).astype(float))
        params = ModelParams(mu=rng.normal(), tau=rng.normal())
    elif isinstance(family, ProportionalOdds):
        data = Dataset(x, w, ORDINAL, level=rng.integers(1, family.k + 1, n),
                       n_levels=family.k)
        thr = np.sort(rng.normal(scale=1.2, size=family.k - 1))
        thr += 0.1 * np.arange(family.k - 1)  # enforce strict spacing
        params = ModelParams(mu=0.0, tau=rng.normal(), thresholds=thr)
    elif isinstance(family, WeibullPH):
        data = Dataset(x, w, SURVIVAL, time=rng.exponential(size=n) + 0.05,
                       event=rng.random(n) < 0.7)
        params = ModelParams(mu=0.0, tau=rng.normal(), nu1=rng.normal(scale=0.5),
                             nu2=float(rng.uniform(0.5, 2.0)))
    elif isinstance(family, CoxPartial):
        data = Dataset(x, w, SURVIVAL, time=rng.exponential(size=n) + 0.05,
                       event=rng.random(n) < 0.7)
        params = ModelParams(mu=0.0, tau=rng.normal())
    else:
        raise AssertionError(family)
    return params, data, design


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
