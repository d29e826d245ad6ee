"""Likelihood families with analytic scores and weighted Newton fitting.

Every family models a linear predictor eta = offset + mu + tau * regressor.
For the transformation families (proportional odds, Weibull, Cox) the
predictor is subtracted inside F(h(y) - eta) and mu is constrained to 0
(the transformation carries the intercept), so the mu column of the score
matrix is the gradient a free intercept would have at mu = 0.

Score convention: `score` returns the per-observation gradient of the
log-likelihood with respect to (mu, tau), i.e. minus the gradient of the
negative log-likelihood, matching the classical residual-times-design form
(y - mu - tau*w)(1, w) in the Gaussian case.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, log_expit

from .data import (
    BINARY,
    CONTINUOUS,
    INTERVAL,
    ORDINAL,
    SURVIVAL,
    CenteredDesign,
    Dataset,
)
from .errors import FitError, SingularFitError, ValidationError
from .numerics import clipped_exp, logistic_logpdf, mev_logpdf, softplus

GRAD_TOL = 1e-8
# fallback tolerance when no descent step exists at float precision (the
# gradient of near-degenerate interval terms carries ~1e-8 cancellation noise)
STALL_TOL = 1e-5
MAX_ITER = 100
# Monotone-likelihood guard: location-type parameters are capped here and the
# fit is flagged instead of erroring (small leaves routinely separate).
PARAM_CAP = 15.0
PHI_FLOOR = 1e-8


@dataclass
class ModelParams:
    """Fitted node parameters; unused fields stay None for a given family."""

    mu: float = 0.0
    tau: float = 0.0
    phi: float | None = None
    thresholds: np.ndarray | None = None
    nu1: float | None = None
    nu2: float | None = None
    converged: bool = True
    capped: bool = False
    n_iter: int = 0
    grad_norm: float = 0.0

    def copy(self) -> "ModelParams":
        thr = None if self.thresholds is None else self.thresholds.copy()
        return replace(self, thresholds=thr)


def _as_design(design, n: int) -> CenteredDesign:
    if design is None:
        raise ValidationError("a CenteredDesign is required")
    if len(design) != n:
        raise ValidationError("design and data lengths differ")
    return design


def _check_weights(weights, n: int) -> np.ndarray:
    weights = np.ascontiguousarray(weights, dtype=float)
    if weights.shape != (n,):
        raise ValidationError("weights length must match the data")
    if np.any(weights < 0):
        raise ValidationError("weights must be non-negative")
    if weights.sum() <= 0:
        raise ValidationError("weights must not all be zero")
    return weights


def _weighted_regressor_variance(r: np.ndarray, weights: np.ndarray) -> float:
    sw = weights.sum()
    mean = weights @ r / sw
    return float(weights @ (r - mean) ** 2 / sw)


def _damped_newton(nll, grad, hess, beta0, lo, hi, tol=GRAD_TOL, max_iter=MAX_ITER):
    """Minimize nll with Newton steps, step halving, and box caps.

    Coordinates pressed against a cap by the gradient are frozen; convergence
    is judged on the remaining free coordinates. Returns
    (beta, converged, capped, n_iter, grad_norm).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    beta = np.clip(np.asarray(beta0, dtype=float), lo, hi)
    val = nll(beta)
    if not np.isfinite(val):
        raise FitError("non-finite objective at the starting point")
    gnorm = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        g = grad(beta)
        frozen = ((beta <= lo + 1e-9) & (g > 0)) | ((beta >= hi - 1e-9) & (g < 0))
        free = ~frozen
        gnorm = float(np.max(np.abs(g[free]))) if free.any() else 0.0
        if gnorm < tol:
            converged = True
            break
        h = hess(beta)
        gf = g[free]
        hf = h[np.ix_(free, free)]
        try:
            step_dir = -np.linalg.solve(hf, gf)
        except np.linalg.LinAlgError:
            step_dir = None
        if step_dir is None or step_dir @ gf >= 0 or not np.all(np.isfinite(step_dir)):
            scale = max(1.0, float(np.max(np.abs(gf))))
            step_dir = -gf / scale
        step = 1.0
        accepted = False
        for _ in range(40):
            cand = beta.copy()
            cand[free] += step * step_dir
            np.clip(cand, lo, hi, out=cand)
            cand_val = nll(cand)
            if np.isfinite(cand_val) and cand_val <= val + 1e-12:
                improvement = val - cand_val
                beta, val = cand, cand_val
                accepted = True
                break
            step *= 0.5
        if not accepted or (
            improvement <= 1e-12 * (1.0 + abs(val)) and gnorm < STALL_TOL
        ):
            # objective cannot be improved at float precision: converged
            # when the remaining gradient is within evaluation noise
            converged = gnorm < STALL_TOL
            break
    capped = bool(np.any(beta <= lo + 1e-9) | np.any(beta >= hi - 1e-9))
    return beta, converged, capped, it, gnorm


class Family:
    """Shared base: subclasses implement fit/nll/eta_score on arrays."""

    kind: str
    outcome_kinds: tuple
    mu_free: bool
    natural_scale: str

    def n_free_params(self, data: Dataset) -> int:
        raise NotImplementedError

    def check_data(self, data: Dataset):
        if data.kind not in self.outcome_kinds:
            raise ValidationError(
                f"{self.kind} expects outcome kind in {self.outcome_kinds}, got {data.kind!r}"
            )

    def fit(self, data, design, weights, init=None) -> ModelParams:
        raise NotImplementedError

    def nll(self, params, data, design, weights) -> float:
        raise NotImplementedError

    def eta_score(self, params, data, design) -> np.ndarray:
        """Per-observation d log-lik / d eta_i at the given parameters."""
        raise NotImplementedError

    def score(self, params, data, design) -> np.ndarray:
        """n x 2 per-observation log-likelihood gradient wrt (mu, tau)."""
        u = self.eta_score(params, data, design)
        return np.column_stack((u, u * design.regressor))

    def eta(self, params, design) -> np.ndarray:
        return design.offset + params.mu + params.tau * design.regressor


class LinearGaussian(Family):
    kind = "linear_gaussian"
    outcome_kinds = (CONTINUOUS,)
    mu_free = True
    natural_scale = "difference in means"

    def n_free_params(self, data):
        return 3

    def fit(self, data, design, weights, init=None):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        r = design.regressor
        if _weighted_regressor_variance(r, weights) <= 1e-12:
            raise SingularFitError("no variation in the treatment regressor")
        yc = data.y - design.offset
        sw = weights.sum()
        swr = weights @ r
        swrr = weights @ (r * r)
        swy = weights @ yc
        swry = weights @ (r * yc)
        det = sw * swrr - swr * swr
        tau = (sw * swry - swr * swy) / det
        mu = (swy - tau * swr) / sw
        resid = yc - mu - tau * r
        phi = float(np.sqrt(max(weights @ resid**2 / sw, PHI_FLOOR**2)))
        return ModelParams(mu=float(mu), tau=float(tau), phi=phi, n_iter=1)

    def nll(self, params, data, design, weights):
        weights = _check_weights(weights, data.n)
        resid = data.y - self.eta(params, design)
        phi2 = params.phi**2
        terms = 0.5 * (np.log(2.0 * np.pi * phi2) + resid**2 / phi2)
        return float(weights @ terms)

    def eta_score(self, params, data, design):
        return (data.y - self.eta(params, design)) / params.phi**2


class BinomialLogit(Family):
    kind = "binomial_logit"
    outcome_kinds = (BINARY,)
    mu_free = True
    natural_scale = "log-odds ratio"

    def n_free_params(self, data):
        return 2

    def fit(self, data, design, weights, init=None):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        r, o, y = design.regressor, design.offset, data.y
        if _weighted_regressor_variance(r, weights) <= 1e-12:
            raise SingularFitError("no variation in the treatment regressor")
        if init is not None:
            beta0 = np.array([init.mu, init.tau])
        else:
            pbar = np.clip(weights @ y / weights.sum(), 1e-6, 1 - 1e-6)
            beta0 = np.array([np.log(pbar / (1 - pbar)) - weights @ o / weights.sum(), 0.0])

        def nll(b):
            e = o + b[0] + b[1] * r
            return float(weights @ (softplus(e) - y * e))

        def grad(b):
            p = expit(o + b[0] + b[1] * r)
            d = weights * (p - y)
            return np.array([d.sum(), d @ r])

        def hess(b):
            p = expit(o + b[0] + b[1] * r)
            v = weights * p * (1 - p)
            return np.array([[v.sum(), v @ r], [v @ r, v @ (r * r)]])

        beta, conv, capped, it, gn = _damped_newton(
            nll, grad, hess, beta0, [-PARAM_CAP] * 2, [PARAM_CAP] * 2
        )
        if not conv and not capped:
            raise FitError("binomial fit did not converge", gn)
        return ModelParams(
            mu=float(beta[0]), tau=float(beta[1]),
            converged=conv, capped=capped, n_iter=it, grad_norm=gn,
        )

    def nll(self, params, data, design, weights):
        weights = _check_weights(weights, data.n)
        e = self.eta(params, design)
        return float(weights @ (softplus(e) - data.y * e))

    def eta_score(self, params, data, design):
        return data.y - expit(self.eta(params, design))


def _logistic_interval_terms(b, c):
    """log P(c < Z <= b) for logistic Z, plus stable pdf/Pr ratios.

    Returns (logp, rb, rc, db, dc) with rb = f(b)/P, rc = f(c)/P,
    db = f'(b)/P, dc = f'(c)/P; infinite bounds contribute zeros.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    fin_b = np.isfinite(b)
    fin_c = np.isfinite(c)
    logp = np.empty_like(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        both = fin_b & fin_c
        if both.any():
            bb, cc = b[both], c[both]
            # F(b)-F(c) = e^c (e^{b-c}-1) / ((1+e^b)(1+e^c)), evaluated in logs
            logp[both] = (
                cc + np.log(np.expm1(np.minimum(bb - cc, 500.0)))
                - softplus(bb) - softplus(cc)
            )
        only_b = fin_b & ~fin_c
        logp[only_b] = log_expit(b[only_b])
        only_c = ~fin_b & fin_c
        logp[only_c] = log_expit(-c[only_c])
        logp[~fin_b & ~fin_c] = 0.0

        rb = np.zeros_like(b)
        rc = np.zeros_like(b)
        db = np.zeros_like(b)
        dc = np.zeros_like(b)
        rb[fin_b] = np.exp(logistic_logpdf(b[fin_b]) - logp[fin_b])
        rc[fin_c] = np.exp(logistic_logpdf(c[fin_c]) - logp[fin_c])
        db[fin_b] = (1.0 - 2.0 * expit(b[fin_b])) * rb[fin_b]
        dc[fin_c] = (1.0 - 2.0 * expit(c[fin_c])) * rc[fin_c]
    return logp, rb, rc, db, dc


class ProportionalOdds(Family):
    """Proportional odds model: P(Y <= k) = expit(theta_k - eta), mu == 0."""

    outcome_kinds = (ORDINAL,)
    mu_free = False
    natural_scale = "log-odds shift"
    kind = "proportional_odds"

    def __init__(self, n_levels: int):
        if n_levels < 2:
            raise ValidationError("proportional odds needs at least 2 levels")
        self.k = n_levels

    def n_free_params(self, data):
        return self.k

    def check_data(self, data):
        super().check_data(data)
        if data.n_levels != self.k:
            raise ValidationError(
                f"family has {self.k} levels but data declares {data.n_levels}"
            )

    def _bounds(self, beta, level, r, o, tau_shift=0.0):
        # beta = (theta_1..theta_{K-1}, tau); returns interval args (b, c)
        theta = beta[:-1]
        eta = o + (beta[-1] + 0.0) * r + tau_shift
        padded = np.concatenate(([-np.inf], theta, [np.inf]))
        return padded[level] - eta, padded[level - 1] - eta

    def _start(self, data, design, weights):
        cum = np.array(
            [np.sum(weights[data.level <= k]) for k in range(1, self.k)]
        ) / weights.sum()
        cum = np.clip(cum, 1e-4, 1 - 1e-4)
        theta = np.log(cum / (1 - cum))
        theta = np.maximum.accumulate(theta + 1e-9 * np.arange(self.k - 1))
        for j in range(1, theta.size):
            if theta[j] <= theta[j - 1]:
                theta[j] = theta[j - 1] + 1e-6
        return np.concatenate((theta, [0.0]))

    def fit(self, data, design, weights, init=None):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        r, o, level = design.regressor, design.offset, data.level
        if _weighted_regressor_variance(r, weights) <= 1e-12:
            raise SingularFitError("no variation in the treatment regressor")
        if init is not None and init.thresholds is not None:
            beta0 = np.concatenate((init.thresholds, [init.tau]))
        else:
            beta0 = self._start(data, design, weights)

        kk = self.k

        def nll(beta):
            theta = beta[:-1]
            if np.any(np.diff(theta) <= 1e-10):
                return np.inf
            b, c = self._bounds(beta, level, r, o)
            logp, *_ = _logistic_interval_terms(b, c)
            if not np.all(np.isfinite(logp)):
                return np.inf
            return float(-(weights @ logp))

        def grad_hess(beta):
            b, c = self._bounds(beta, level, r, o)
            _, rb, rc, db, dc = _logistic_interval_terms(b, c)
            # d log P: rb wrt b, -rc wrt c; second derivatives via db, dc
            d2bb = db - rb * rb
            d2cc = -dc - rc * rc
            d2bc = rb * rc
            g = np.zeros(kk)
            h = np.zeros((kk, kk))
            ib = level - 1          # theta index entering b (valid when level < K)
            ic = level - 2          # theta index entering c (valid when level > 1)
            mb = level < kk
            mc = level > 1
            wrb = weights * rb
            wrc = weights * rc
            np.add.at(g, ib[mb], wrb[mb])
            np.add.at(g, ic[mc], -wrc[mc])
            g[-1] = -(weights * (rb - rc)) @ r
            wbb = weights * d2bb
            wcc = weights * d2cc
            wbc = weights * d2bc
            np.add.at(h, (ib[mb], ib[mb]), wbb[mb])
            np.add.at(h, (ic[mc], ic[mc]), wcc[mc])
            both = mb & mc
            np.add.at(h, (ib[both], ic[both]), wbc[both])
            np.add.at(h, (ic[both], ib[both]), wbc[both])
            tb = -(wbb + wbc) * r
            tc = -(wcc + wbc) * r
            np.add.at(h[:, -1], ib[mb], tb[mb])
            np.add.at(h[:, -1], ic[mc], tc[mc])
            h[-1, :-1] = h[:-1, -1]
            h[-1, -1] = ((wbb + wcc + 2.0 * wbc) * r) @ r
            return -g, -h  # gradient/Hessian of the *negative* log-likelihood

        memo: dict = {}

        def _gh(beta):
            key = beta.tobytes()
            if memo.get("key") != key:
                memo["key"] = key
                memo["val"] = grad_hess(beta)
            return memo["val"]

        lo = np.array([-PARAM_CAP] * (kk - 1) + [-PARAM_CAP])
        hi = np.array([PARAM_CAP] * (kk - 1) + [PARAM_CAP])
        beta, conv, capped, it, gn = _damped_newton(
            nll, lambda b: _gh(b)[0], lambda b: _gh(b)[1], beta0, lo, hi
        )
        if not conv and not capped:
            raise FitError("proportional-odds fit did not converge", gn)
        return ModelParams(
            mu=0.0, tau=float(beta[-1]), thresholds=beta[:-1].copy(),
            converged=conv, capped=capped, n_iter=it, grad_norm=gn,
        )

    def nll(self, params, data, design, weights):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        beta = np.concatenate((params.thresholds, [params.tau]))
        b, c = self._bounds(beta, data.level, design.regressor, design.offset,
                            tau_shift=params.mu)
        logp, *_ = _logistic_interval_terms(b, c)
        if not np.all(np.isfinite(logp)):
            raise ValidationError("non-positive interval probability in likelihood")
        return float(-(weights @ logp))

    def eta_score(self, params, data, design):
        beta = np.concatenate((params.thresholds, [params.tau]))
        b, c = self._bounds(beta, data.level, design.regressor, design.offset,
                            tau_shift=params.mu)
        _, rb, rc, _, _ = _logistic_interval_terms(b, c)
        return rc - rb

    def category_probabilities(self, params, eta: np.ndarray) -> np.ndarray:
        """Per-row category probabilities at the given linear predictor."""
        padded = np.concatenate(([-np.inf], params.thresholds, [np.inf]))
        cdf = expit(padded[None, :] - np.asarray(eta, dtype=float)[:, None])
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        return np.diff(cdf, axis=1)


def _mev_interval_logp(b, c):
    """log(F(b) - F(c)) for the minimum extreme value CDF, stable in logs."""
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ea = clipped_exp(c)   # exp(c); c = -inf -> 0
        eb = clipped_exp(b)
        logp = np.where(
            np.isfinite(b),
            -ea + np.log(-np.expm1(-np.maximum(eb - ea, 1e-300))),
            -ea,
        )
    return logp


class WeibullPH(Family):
    """Weibull proportional hazards: survivor exp(-exp(nu1 + nu2*log t - eta)).

    Handles right-censored survival data (density terms for events) and
    generic interval-censored outcomes; mu == 0.
    """

    kind = "weibull_ph"
    outcome_kinds = (SURVIVAL, INTERVAL)
    mu_free = False
    natural_scale = "log-hazard shift"

    NU2_MIN = 1e-4
    NU2_MAX = 100.0
    NU1_CAP = 50.0

    def n_free_params(self, data):
        return 3

    def _start(self, data, design, weights):
        if data.kind == SURVIVAL:
            ev = weights @ data.event.astype(float)
            tot = weights @ data.time
            nu1 = np.log(max(ev, 1e-3) / max(tot, 1e-12))
        else:
            nu1 = 0.0
        return np.array([np.clip(nu1, -self.NU1_CAP, self.NU1_CAP), 1.0, 0.0])

    def _survival_pieces(self, beta, data, design, mu=0.0):
        nu1, nu2, tau = beta
        lt = np.log(data.time)
        z = nu1 + nu2 * lt - (design.offset + mu + tau * design.regressor)
        return z, lt

    def fit(self, data, design, weights, init=None):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        r = design.regressor
        if _weighted_regressor_variance(r, weights) <= 1e-12:
            raise SingularFitError("no variation in the treatment regressor")
        if init is not None and init.nu1 is not None:
            beta0 = np.array([init.nu1, init.nu2, init.tau])
        else:
            beta0 = self._start(data, design, weights)

        if data.kind == SURVIVAL:
            delta = data.event.astype(float)
            memo: dict = {}

            def _pieces(beta):
                key = beta.tobytes()
                if memo.get("key") != key:
                    z, lt = self._survival_pieces(beta, data, design)
                    memo["key"] = key
                    memo["val"] = (z, lt, clipped_exp(z))
                return memo["val"]

            def nll(beta):
                if beta[1] <= 0:
                    return np.inf
                z, lt, ez = _pieces(beta)
                terms = ez - delta * (z + np.log(beta[1]) - lt)
                return float(weights @ terms)

            def grad(beta):
                z, lt, ez = _pieces(beta)
                a = weights * (ez - delta)
                g = np.array([a.sum(), a @ lt, -(a @ r)])
                g[1] -= weights @ delta / beta[1]
                return g

            def hess(beta):
                z, lt, ez = _pieces(beta)
                e = weights * ez
                s_l = e @ lt
                s_r = e @ r
                s_ll = e @ (lt * lt)
                s_lr = e @ (lt * r)
                s_rr = e @ (r * r)
                h = np.array(
                    [
                        [e.sum(), s_l, -s_r],
                        [s_l, s_ll, -s_lr],
                        [-s_r, -s_lr, s_rr],
                    ]
                )
                h[1, 1] += weights @ delta / beta[1] ** 2
                return h

        else:
            log_up = np.where(np.isfinite(data.upper), np.log(np.maximum(data.upper, 1e-300)), np.inf)
            log_lo = np.where(data.lower > 0, np.log(np.maximum(data.lower, 1e-300)), -np.inf)

            def _bounds(beta):
                nu1, nu2, tau = beta
                eta = design.offset + tau * r
                return nu1 + nu2 * log_up - eta, nu1 + nu2 * log_lo - eta

            def nll(beta):
                if beta[1] <= 0:
                    return np.inf
                logp = _mev_interval_logp(*_bounds(beta))
                if not np.all(np.isfinite(logp)):
                    return np.inf
                return float(-(weights @ logp))

            def _ratios(beta):
                b, c = _bounds(beta)
                logp = _mev_interval_logp(b, c)
                fin_b = np.isfinite(b)
                fin_c = np.isfinite(c)
                rb = np.zeros_like(b)
                rc = np.zeros_like(b)
                db = np.zeros_like(b)
                dc = np.zeros_like(b)
                rb[fin_b] = np.exp(mev_logpdf(b[fin_b]) - logp[fin_b])
                rc[fin_c] = np.exp(mev_logpdf(c[fin_c]) - logp[fin_c])
                db[fin_b] = (1.0 - clipped_exp(b[fin_b])) * rb[fin_b]
                dc[fin_c] = (1.0 - clipped_exp(c[fin_c])) * rc[fin_c]
                jb = np.where(fin_b, log_up, 0.0)
                jc = np.where(fin_c, log_lo, 0.0)
                return rb, rc, db, dc, jb, jc

            def grad(beta):
                rb, rc, _, _, jb, jc = _ratios(beta)
                gb = weights * rb
                gc = weights * rc
                dnu1 = gb.sum() - gc.sum()
                dnu2 = gb @ jb - gc @ jc
                dtau = -((gb - gc) @ r)
                return -np.array([dnu1, dnu2, dtau])

            def hess(beta):
                rb, rc, db, dc, jb, jc = _ratios(beta)
                d2bb = weights * (db - rb * rb)
                d2cc = weights * (-dc - rc * rc)
                d2bc = weights * (rb * rc)
                h = np.zeros((3, 3))
                jac_b = (np.ones_like(jb), jb, -r)
                jac_c = (np.ones_like(jc), jc, -r)
                for a in range(3):
                    for b_ in range(a, 3):
                        val = (
                            d2bb @ (jac_b[a] * jac_b[b_])
                            + d2cc @ (jac_c[a] * jac_c[b_])
                            + d2bc @ (jac_b[a] * jac_c[b_] + jac_c[a] * jac_b[b_])
                        )
                        h[a, b_] = val
                        h[b_, a] = val
                return -h

        lo = np.array([-self.NU1_CAP, self.NU2_MIN, -PARAM_CAP])
        hi = np.array([self.NU1_CAP, self.NU2_MAX, PARAM_CAP])
        beta, conv, capped, it, gn = _damped_newton(nll, grad, hess, beta0, lo, hi)
        if not conv and not capped:
            raise FitError("Weibull fit did not converge", gn)
        return ModelParams(
            mu=0.0, tau=float(beta[2]), nu1=float(beta[0]), nu2=float(beta[1]),
            converged=conv, capped=capped, n_iter=it, grad_norm=gn,
        )

    def nll(self, params, data, design, weights):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        beta = np.array([params.nu1, params.nu2, params.tau])
        if data.kind == SURVIVAL:
            z, lt = self._survival_pieces(beta, data, design, mu=params.mu)
            delta = data.event.astype(float)
            terms = clipped_exp(z) - delta * (z + np.log(params.nu2) - lt)
            return float(weights @ terms)
        eta = design.offset + params.mu + params.tau * design.regressor
        b = params.nu1 + params.nu2 * np.where(
            np.isfinite(data.upper), np.log(np.maximum(data.upper, 1e-300)), np.inf
        ) - eta
        c = params.nu1 + params.nu2 * np.where(
            data.lower > 0, np.log(np.maximum(data.lower, 1e-300)), -np.inf
        ) - eta
        logp = _mev_interval_logp(b, c)
        if not np.all(np.isfinite(logp)):
            raise ValidationError("non-positive interval probability in likelihood")
        return float(-(weights @ logp))

    def eta_score(self, params, data, design):
        if data.kind == SURVIVAL:
            beta = np.array([params.nu1, params.nu2, params.tau])
            z, _ = self._survival_pieces(beta, data, design, mu=params.mu)
            return clipped_exp(z) - data.event.astype(float)
        eta = design.offset + params.mu + params.tau * design.regressor
        b = params.nu1 + params.nu2 * np.where(
            np.isfinite(data.upper), np.log(np.maximum(data.upper, 1e-300)), np.inf
        ) - eta
        c = params.nu1 + params.nu2 * np.where(
            data.lower > 0, np.log(np.maximum(data.lower, 1e-300)), -np.inf
        ) - eta
        logp = _mev_interval_logp(b, c)
        fin_b = np.isfinite(b)
        fin_c = np.isfinite(c)
        rb = np.zeros_like(b)
        rc = np.zeros_like(b)
        rb[fin_b] = np.exp(mev_logpdf(b[fin_b]) - logp[fin_b])
        rc[fin_c] = np.exp(mev_logpdf(c[fin_c]) - logp[fin_c])
        return rc - rb


class _CoxWork:
    """Sorted-time scaffolding reused across Cox likelihood evaluations."""

    def __init__(self, time, event, weights):
        self.order = np.argsort(time, kind="stable")
        ts = time[self.order]
        self.event_sorted = event[self.order]
        self.w_sorted = weights[self.order]
        # first index of each tie group in sorted order
        self.group_start = np.searchsorted(ts, ts, side="left")
        self.n = time.shape[0]

    def risk_suffix(self, vals_sorted):
        """suffix[k] = sum_{j >= k} vals_sorted[j], aligned to tie groups."""
        sfx = np.cumsum(vals_sorted[::-1])[::-1]
        return sfx[self.group_start]


class CoxPartial(Family):
    """Cox partial likelihood with Breslow ties; hazard proportional to
    exp(-eta) so the fitted tau targets the same shift as the Weibull
    family (mu == 0, absorbed by the baseline)."""

    kind = "cox_partial"
    outcome_kinds = (SURVIVAL,)
    mu_free = False
    natural_scale = "log-hazard shift"

    def n_free_params(self, data):
        return 1

    def fit(self, data, design, weights, init=None):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        r, o = design.regressor, design.offset
        if _weighted_regressor_variance(r, weights) <= 1e-12:
            raise SingularFitError("no variation in the treatment regressor")
        pos = weights > 0
        work = _CoxWork(data.time[pos], data.event[pos], weights[pos])
        rp, op, wp = r[pos], o[pos], weights[pos]
        r_s = rp[work.order]
        o_s = op[work.order]
        ev = work.event_sorted
        w_ev = work.w_sorted * ev

        def parts(tau):
            xi = -(o_s + tau * r_s)
            e = work.w_sorted * clipped_exp(xi)
            s0 = work.risk_suffix(e)
            return xi, e, s0

        def nll(beta):
            xi, _, s0 = parts(beta[0])
            if np.any(s0 <= 0):
                return np.inf
            return float(-np.sum(w_ev * (xi - np.log(s0))))

        def grad(beta):
            xi, e, s0 = parts(beta[0])
            s1 = work.risk_suffix(e * r_s)
            return np.array([np.sum(w_ev * (r_s - s1 / s0))])

        def hess(beta):
            xi, e, s0 = parts(beta[0])
            s1 = work.risk_suffix(e * r_s)
            s2 = work.risk_suffix(e * r_s * r_s)
            return np.array([[np.sum(w_ev * (s2 / s0 - (s1 / s0) ** 2))]])

        beta0 = np.array([0.0 if init is None else init.tau])
        beta, conv, capped, it, gn = _damped_newton(
            nll, grad, hess, beta0, [-PARAM_CAP], [PARAM_CAP]
        )
        if not conv and not capped:
            raise FitError("Cox fit did not converge", gn)
        return ModelParams(
            mu=0.0, tau=float(beta[0]),
            converged=conv, capped=capped, n_iter=it, grad_norm=gn,
        )

    def nll(self, params, data, design, weights):
        self.check_data(data)
        weights = _check_weights(weights, data.n)
        work = _CoxWork(data.time, data.event, weights)
        xi = -(design.offset + params.mu + params.tau * design.regressor)
        xi_s = xi[work.order]
        e = work.w_sorted * clipped_exp(xi_s)
        s0 = work.risk_suffix(e)
        w_ev = work.w_sorted * work.event_sorted
        if np.any(s0[w_ev > 0] <= 0):
            raise ValidationError("empty risk set in Cox likelihood")
        return float(-np.sum(w_ev * (xi_s - np.log(s0))))

    def eta_score(self, params, data, design):
        """Martingale-residual based scores (unit weights): exp(xi)*Lambda - delta."""
        n = data.n
        weights = np.ones(n)
        work = _CoxWork(data.time, data.event, weights)
        xi = -(design.offset + params.mu + params.tau * design.regressor)
        xi_s = xi[work.order]
        e = clipped_exp(xi_s)
        s0 = work.risk_suffix(e)
        ev = work.event_sorted.astype(float)
        # Breslow hazard increments per tie group, cumulated over event times <= t_i
        dl = ev / s0
        uniq_starts, inv = np.unique(work.group_start, return_inverse=True)
        sums_per_group = np.zeros(uniq_starts.size)
        np.add.at(sums_per_group, inv, dl)
        cum_groups = np.cumsum(sums_per_group)
        lam = cum_groups[inv]
        u_sorted = e * lam - ev
        u = np.empty(n)
        u[work.order] = u_sorted
        return u


def linear_gaussian() -> LinearGaussian:
    return LinearGaussian()


def binomial_logit() -> BinomialLogit:
    return BinomialLogit()


def proportional_odds(n_levels: int) -> ProportionalOdds:
    return ProportionalOdds(n_levels)


def weibull_ph() -> WeibullPH:
    return WeibullPH()


def cox_partial() -> CoxPartial:
    return CoxPartial()


def family_for(name: str, n_levels: int | None = None) -> Family:
    name = name.lower()
    if name in ("linear_gaussian", "normal", "gaussian"):
        return LinearGaussian()
    if name in ("binomial_logit", "binomial", "logit"):
        return BinomialLogit()
    if name in ("proportional_odds", "multinomial4", "ordinal"):
        return ProportionalOdds(n_levels or 4)
    if name in ("weibull_ph", "weibull"):
        return WeibullPH()
    if name in ("cox_partial", "cox"):
        return CoxPartial()
    raise ValidationError(f"unknown model family {name!r}")


def fit_node(family: Family, data: Dataset, weights, design: CenteredDesign,
             init: ModelParams | None = None) -> ModelParams:
    """Weighted maximum-likelihood fit of the family on the given data."""
    design = _as_design(design, data.n)
    return family.fit(data, design, weights, init=init)


def neg_log_lik(family: Family, params: ModelParams, data: Dataset, weights,
                design: CenteredDesign) -> float:
    design = _as_design(design, data.n)
    return family.nll(params, data, design, weights)


def score(family: Family, params: ModelParams, data: Dataset,
          design: CenteredDesign) -> np.ndarray:
    design = _as_design(design, data.n)
    return family.score(params, data, design)


def dina(eta0: float, eta1: float) -> float:
    """Difference in natural parameters, the effect scale for non-identity links."""
    return eta1 - eta0
