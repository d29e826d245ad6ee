import numpy as np
import pytest

from hteforest.data import ORDINAL, SURVIVAL
from hteforest.dgp import (
    BINOMIAL,
    MULTINOMIAL4,
    NORMAL,
    PO_THRESHOLDS,
    WEIBULL,
    DgpSpec,
    censoring_rate,
    covariate_law,
    default_treatment_coding,
    draw_outcomes,
    mu_fn,
    propensity,
    sample,
    tau_fn,
)
from hteforest.errors import ValidationError


def test_propensity_hand_points():
    z = np.zeros((1, 10))
    assert propensity("C", z)[0] == 0.5
    assert propensity("D", z)[0] == pytest.approx(1.0 / 3.0)
    assert propensity("A", z)[0] == 0.1  # sin(0) clamped at the floor
    ones = np.ones((1, 10))
    assert propensity("A", 0.5 * ones)[0] == pytest.approx(
        np.sin(np.pi * 0.25)
    )


def test_tau_mu_hand_points():
    ones = np.ones((1, 10))
    z = np.zeros((1, 10))
    assert tau_fn("A", ones)[0] == pytest.approx(1.0)
    assert tau_fn("B", z)[0] == pytest.approx(np.log(2))
    assert (tau_fn("C", np.random.randn(7, 10)) == 1.0).all()
    assert mu_fn("D", z)[0] == 0.0
    assert mu_fn("C", z)[0] == pytest.approx(2 * np.log(2))


def test_wa_scenarios_structure():
    rngx = np.random.default_rng(0).uniform(size=(200, 10))
    # row 1 has zero treatment effect; row 2 is randomized with no prognosis
    assert (tau_fn("WA-A1", rngx) == 0.0).all()
    assert (mu_fn("WA-A2", rngx) == 0.0).all()
    assert (propensity("WA-A2", rngx) == 0.5).all()
    # beta(2,4)-based propensities stay inside (0, 1)
    pi = propensity("WA-A7", rngx)
    assert (pi > 0.2).all() and (pi < 0.8).all()
    assert pi.max() > 0.5  # the density peak at x=1/4 lifts propensities
    tau = tau_fn("WA-B3", rngx)
    assert (tau > 1.0).all() and (tau < 4.0).all()
    assert default_treatment_coding("WA-A3") == "raw"
    assert default_treatment_coding("WA-B3") == "centered"
    assert default_treatment_coding("C") == "centered"
    assert covariate_law("WA-B3") == "uniform"
    assert covariate_law("D") == "normal"


def test_propensity_tracked_by_treatment(rng):
    for setup in ("A", "C", "D"):
        spec = DgpSpec(setup, NORMAL, n=20000, p=10, seed=4)
        data, truth = sample(spec)
        bins = np.quantile(truth.pi, np.linspace(0, 1, 21))
        for lo, hi in zip(bins[:-1], bins[1:]):
            mask = (truth.pi >= lo) & (truth.pi <= hi)
            if mask.sum() < 100:
                continue
            p_hat = data.w[mask].mean()
            p_bar = truth.pi[mask].mean()
            band = 4 * np.sqrt(p_bar * (1 - p_bar) / mask.sum())
            assert abs(p_hat - p_bar) < band


def test_setup_invariants():
    spec = DgpSpec("B", NORMAL, n=500, p=10, seed=1)
    _, truth = sample(spec)
    assert (truth.pi == 0.5).all()
    spec = DgpSpec("C", NORMAL, n=500, p=10, seed=1)
    _, truth = sample(spec)
    assert (truth.tau == 1.0).all()


@pytest.mark.parametrize("setup", ["A", "B", "C", "D"])
def test_weibull_censoring_calibrated(setup):
    spec = DgpSpec(setup, WEIBULL, n=5000, p=10, seed=11)
    data, _ = sample(spec)
    frac = 1.0 - data.event.mean()
    assert 0.45 <= frac <= 0.55


def test_censoring_rate_cached_and_deterministic():
    r1 = censoring_rate("B", 10, "centered")
    r2 = censoring_rate("B", 10, "centered")
    assert r1 == r2 and r1 > 0


def test_deterministic_regeneration():
    spec = DgpSpec("C", WEIBULL, n=200, p=10, seed=33)
    d1, t1 = sample(spec)
    d2, t2 = sample(DgpSpec("C", WEIBULL, n=200, p=10, seed=33))
    assert d1.x.tobytes() == d2.x.tobytes()
    assert d1.time.tobytes() == d2.time.tobytes()
    assert d1.event.tobytes() == d2.event.tobytes()
    np.testing.assert_array_equal(t1.tau, t2.tau)
    d3, _ = sample(DgpSpec("C", WEIBULL, n=200, p=10, seed=34))
    assert d1.x.tobytes() != d3.x.tobytes()


def test_multinomial_null_frequencies(rng):
    n = 20000
    cols = draw_outcomes(MULTINOMIAL4, np.zeros(n), rng)
    freq = np.bincount(cols["level"], minlength=5)[1:] / n
    tol = 3.0 / np.sqrt(n)
    np.testing.assert_allclose(freq, 0.25, atol=tol)
    assert PO_THRESHOLDS[1] == 0.0  # logit(2/4)


def test_weibull_null_median(rng):
    n = 200000
    cols = draw_outcomes(WEIBULL, np.zeros(n), rng)
    med = np.median(cols["y_latent"])
    assert abs(med - np.sqrt(np.log(2))) < 0.01


def test_binomial_outcomes_follow_expit(rng):
    n = 50000
    eta = np.full(n, 0.7)
    cols = draw_outcomes(BINOMIAL, eta, rng)
    from scipy.special import expit
    assert abs(cols["y"].mean() - expit(0.7)) < 3 / np.sqrt(n)


def test_randomization_balance():
    spec = DgpSpec("B", NORMAL, n=2500, p=10, seed=8)
    data, _ = sample(spec)
    assert abs(data.w.mean() - 0.5) < 3.0 / np.sqrt(data.n)


def test_spec_validation():
    with pytest.raises(ValidationError):
        DgpSpec("Z", NORMAL, n=100)
    with pytest.raises(ValidationError):
        DgpSpec("A", "poisson", n=100)
    with pytest.raises(ValidationError):
        DgpSpec("A", NORMAL, n=100, fit_family_override="cox")
    spec = DgpSpec("A", WEIBULL, n=100, fit_family_override="cox")
    assert spec.fit_family_override == "cox"


def test_outcome_kinds():
    d, _ = sample(DgpSpec("C", MULTINOMIAL4, n=50, p=10, seed=0))
    assert d.kind == ORDINAL and d.n_levels == 4
    d, _ = sample(DgpSpec("C", WEIBULL, n=50, p=10, seed=0))
    assert d.kind == SURVIVAL
    assert (d.time > 0).all()
