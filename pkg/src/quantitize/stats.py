"""Regression engine for quantified annotations.

Fixed-effects binary logistic regression fit by iteratively reweighted
least squares, and a random-intercept extension whose marginal likelihood
is integrated per group with adaptive Gauss-Hermite quadrature. Inference
is Wald: standard errors from the inverse observed information, two-sided
normal p-values.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp
from scipy.stats import norm

from .errors import DataError

MAX_ABS_BETA = 15.0  # separation guard on the logit scale
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100


@dataclass(frozen=True)
class Observation:
    """One analysis row: binary response, named real covariates, optional
    grouping id for the random intercept."""

    response: int
    covariates: dict[str, float] = field(default_factory=dict)
    group: Optional[str] = None

    def __post_init__(self):
        if self.response not in (0, 1):
            raise DataError(f"response must be 0/1, got {self.response!r}")


@dataclass(frozen=True)
class Coefficient:
    estimate: float
    std_error: float
    z: float
    p_value: float


@dataclass(frozen=True)
class FitResult:
    coefficients: dict[str, Coefficient]
    log_likelihood: float
    converged: bool
    n_iter: int
    n_obs: int
    sigma_u: Optional[float] = None  # random-intercept SD, mixed fits only
    n_quad: Optional[int] = None

    def coef(self, name: str) -> Coefficient:
        return self.coefficients[name]

    def to_dict(self) -> dict:
        d = {
            "coefficients": {
                k: {
                    "estimate": c.estimate,
                    "std_error": c.std_error,
                    "z": c.z,
                    "p_value": c.p_value,
                }
                for k, c in self.coefficients.items()
            },
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_obs": self.n_obs,
        }
        if self.sigma_u is not None:
            d["sigma_u"] = self.sigma_u
            d["n_quad"] = self.n_quad
        return d

    def to_json(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def odds_ratio(beta: float) -> float:
    """Multiplicative change in the odds per unit of the covariate."""
    if not math.isfinite(beta):
        raise DataError("odds_ratio needs a finite coefficient")
    return math.exp(beta)


def yearly_proportions(
    labels: Sequence[str], years: Sequence[int]
) -> dict[int, dict[str, float]]:
    """Per-year label fractions; each year's fractions sum to 1."""
    if len(labels) != len(years):
        raise DataError("labels and years must align")
    by_year: dict[int, dict[str, int]] = {}
    for label, year in zip(labels, years):
        year = int(year)
        by_year.setdefault(year, {})
        by_year[year][label] = by_year[year].get(label, 0) + 1
    out: dict[int, dict[str, float]] = {}
    for year in sorted(by_year):
        total = sum(by_year[year].values())
        out[year] = {l: c / total for l, c in sorted(by_year[year].items())}
    return out


# --- design matrix ---------------------------------------------------------


def _design(observations: Sequence[Observation]):
    if len(observations) < 2:
        raise DataError("need at least 2 observations")
    names = sorted({k for o in observations for k in o.covariates})
    for o in observations:
        if set(o.covariates) != set(names):
            raise DataError("covariate names are inconsistent across observations")
    y = np.array([o.response for o in observations], dtype=float)
    X = np.column_stack(
        [np.ones(len(observations))]
        + [np.array([o.covariates[n] for o in observations], dtype=float) for n in names]
    )
    return X, y, ["(Intercept)"] + names


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    _, r = np.linalg.qr(X)
    small = np.abs(np.diag(r)) < 1e-10 * max(1.0, np.abs(np.diag(r)).max())
    if small.any():
        bad = [names[i] for i in np.where(small)[0]]
        raise DataError(f"design matrix is rank deficient; collinear columns: {bad}")


def _loglik(X, y, beta):
    eta = X @ beta
    # log(1 + e^eta) computed stably
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _wald(names, beta, cov):
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    out = {}
    for i, name in enumerate(names):
        z = beta[i] / se[i] if se[i] > 0 else math.inf * np.sign(beta[i])
        p = float(2 * norm.sf(abs(z))) if math.isfinite(z) else 0.0
        out[name] = Coefficient(float(beta[i]), float(se[i]), float(z), p)
    return out


def fit_logistic(observations: Sequence[Observation]) -> FitResult:
    """Binary logistic regression via IRLS; intercept always included."""
    X, y, names = _design(observations)
    _check_rank(X, names)
    beta = np.zeros(X.shape[1])
    ll = _loglik(X, y, beta)
    converged = False
    for it in range(1, IRLS_MAX_ITER + 1):
        mu = expit(X @ beta)
        w = mu * (1 - mu)
        info = X.T @ (X * w[:, None])
        score = X.T @ (y - mu)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise DataError("singular information matrix during IRLS")
        # step-halving: full Newton steps can overshoot near separation
        factor = 1.0
        for _ in range(20):
            candidate = beta + factor * step
            if _loglik(X, y, candidate) >= ll - 1e-12:
                break
            factor /= 2
        beta = candidate
        big = np.abs(beta) > MAX_ABS_BETA
        if big.any():
            bad = [names[i] for i in np.where(big)[0]]
            raise DataError(
                f"logistic fit did not converge (quasi-separation): {bad}"
            )
        ll_new = _loglik(X, y, beta)
        if abs(ll_new - ll) < IRLS_TOL * (abs(ll) + IRLS_TOL):
            ll = ll_new
            converged = True
            break
        ll = ll_new
    if not converged:
        raise DataError(f"IRLS did not converge in {IRLS_MAX_ITER} iterations")
    mu = expit(X @ beta)
    info = X.T @ (X * (mu * (1 - mu))[:, None])
    cov = np.linalg.inv(info)
    return FitResult(
        coefficients=_wald(names, beta, cov),
        log_likelihood=ll,
        converged=True,
        n_iter=it,
        n_obs=len(y),
    )


def logistic_score(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Gradient of the logistic log-likelihood; exposed for numeric checks."""
    return X.T @ (y - expit(X @ beta))


def logistic_loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    return _loglik(X, y, beta)


# --- random-intercept model ------------------------------------------------


def _group_mode(eta_fixed, y, sigma2, n_newton=30):
    """Posterior mode and curvature of the random intercept for one group."""
    u = 0.0
    for _ in range(n_newton):
        mu = expit(eta_fixed + u)
        g = float(np.sum(y - mu)) - u / sigma2
        h = -float(np.sum(mu * (1 - mu))) - 1.0 / sigma2
        step = g / h
        u -= step
        if abs(step) < 1e-10:
            break
    mu = expit(eta_fixed + u)
    curv = float(np.sum(mu * (1 - mu))) + 1.0 / sigma2
    return u, curv


def _marginal_nll(theta, group_X, group_y, nodes, weights):
    p = group_X[0].shape[1]
    beta = theta[:p]
    sigma = math.exp(theta[p])
    sigma2 = sigma * sigma
    total = 0.0
    log_w = np.log(weights)
    for X, y in zip(group_X, group_y):
        eta = X @ beta
        u_hat, curv = _group_mode(eta, y, sigma2)
        tau = 1.0 / math.sqrt(curv)
        u = u_hat + math.sqrt(2.0) * tau * nodes
        # conditional log-likelihood at each node, all observations of group
        eta_u = eta[:, None] + u[None, :]
        cond = np.sum(y[:, None] * eta_u - np.logaddexp(0.0, eta_u), axis=0)
        prior = -0.5 * (u * u) / sigma2 - 0.5 * math.log(2 * math.pi * sigma2)
        terms = log_w + nodes * nodes + 0.5 * math.log(2.0) + math.log(tau) + prior + cond
        total += float(logsumexp(terms))
    return -total


def fit_logistic_random_intercept(
    observations: Sequence[Observation],
    n_quad: int = 15,
    max_iter: int = 200,
) -> FitResult:
    """Mixed logistic regression with one normal random intercept per group.

    The marginal likelihood integrates the intercept out with adaptive
    Gauss-Hermite quadrature (nodes recentred at each group's posterior
    mode); the outer optimization is quasi-Newton over the fixed effects
    and the log of the intercept SD.
    """
    groups = [o.group for o in observations]
    if any(g is None for g in groups):
        raise DataError("every observation needs a group id for a mixed fit")
    if len(set(groups)) < 2:
        raise DataError("random-intercept variance needs at least 2 groups")
    X, y, names = _design(observations)
    _check_rank(X, names)

    group_ids = sorted(set(groups))
    gindex = {g: i for i, g in enumerate(group_ids)}
    group_rows = [[] for _ in group_ids]
    for i, g in enumerate(groups):
        group_rows[gindex[g]].append(i)
    group_X = [X[rows] for rows in group_rows]
    group_y = [y[rows] for rows in group_rows]

    nodes, weights = np.polynomial.hermite.hermgauss(n_quad)

    # warm start from the fixed-effects fit; fall back to zeros on separation
    try:
        fixed = fit_logistic(observations)
        beta0 = np.array([fixed.coefficients[n].estimate for n in names])
    except DataError:
        beta0 = np.zeros(X.shape[1])
    theta0 = np.append(beta0, math.log(0.5))

    bounds = [(None, None)] * X.shape[1] + [(-6.0, 4.0)]
    res = minimize(
        _marginal_nll,
        theta0,
        args=(group_X, group_y, nodes, weights),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-8},
    )
    if not res.success and "ABNORMAL" in str(res.message).upper():
        raise DataError(f"mixed fit did not converge: {res.message}")
    theta = res.x
    p = X.shape[1]
    sigma_u = math.exp(theta[p])

    hess = _numeric_hessian(
        lambda t: _marginal_nll(t, group_X, group_y, nodes, weights), theta
    )
    cov = _safe_inverse(hess)
    coefficients = _wald(names, theta[:p], cov[:p, :p])
    return FitResult(
        coefficients=coefficients,
        log_likelihood=-float(res.fun),
        converged=True,
        n_iter=int(res.nit),
        n_obs=len(y),
        sigma_u=float(sigma_u),
        n_quad=n_quad,
    )


def _numeric_hessian(f, x, h=1e-4):
    n = len(x)
    hess = np.zeros((n, n))
    f0 = f(x)
    steps = h * np.maximum(1.0, np.abs(x))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = steps[i]
            ej[j] = steps[j]
            fpp = f(x + ei + ej)
            fpm = f(x + ei - ej)
            fmp = f(x - ei + ej)
            fmm = f(x - ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * steps[i] * steps[j])
    return hess


def _safe_inverse(mat):
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(mat)


# --- formula parsing -------------------------------------------------------


@dataclass(frozen=True)
class Formula:
    response: str
    covariates: tuple[str, ...]
    group: Optional[str] = None

    @property
    def mixed(self) -> bool:
        return self.group is not None


_RANDOM_TERM = re.compile(r"^\(\s*1\s*\|\s*([A-Za-z_][\w.]*)\s*\)$")


def parse_formula(text: str) -> Formula:
    """Parse "response ~ cov1 + cov2 + (1|group)".

    Accepts exactly: a response name, '+'-separated covariate names, and at
    most one random-intercept term.
    """
    if "~" not in text:
        raise DataError(f"formula {text!r} has no '~'")
    lhs, rhs = text.split("~", 1)
    response = lhs.strip()
    if not response or not re.match(r"^[A-Za-z_][\w.]*$", response):
        raise DataError(f"bad response name {lhs.strip()!r}")
    covariates = []
    group = None
    for term in [t.strip() for t in rhs.split("+")]:
        if not term:
            raise DataError(f"empty term in formula {text!r}")
        m = _RANDOM_TERM.match(term)
        if m:
            if group is not None:
                raise DataError("at most one (1|group) term is allowed")
            group = m.group(1)
        elif re.match(r"^[A-Za-z_][\w.]*$", term):
            covariates.append(term)
        else:
            raise DataError(f"unsupported formula term {term!r}")
    return Formula(response, tuple(covariates), group)
