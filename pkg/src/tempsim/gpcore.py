"""Univariate Gaussian-process machinery shared across the pipeline.

Isotropic Matern correlation, exact Gaussian log-likelihood, bounded
maximum-likelihood fitting with a profiled mean, and simple kriging.
The Matern is parameterized by an *inverse* range ``a`` (km^-1): the
Bessel argument is ``a * h``.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.spatial.distance
import scipy.special
from scipy.spatial.distance import cdist

from .errors import FactorizationError, FitError

NU_MIN = 0.05
NU_MAX = 10.0

# Targets closer than this (km) to a data site are treated as coincident,
# which puts the nugget into the kriging covariance vector (micro-scale
# reading: interpolation is exact at data sites).
COINCIDENT_TOL_KM = 1e-9

_LOG_TINY = math.log(1e-300)


@dataclasses.dataclass
class GpHyperParams:
    """Mean and Matern-plus-nugget covariance hyperparameters."""

    mu: float
    sigma2: float
    a: float
    nu: float
    tau2: float

    def __post_init__(self):
        if self.sigma2 < 0 or self.tau2 < 0:
            raise ValueError("sigma2 and tau2 must be nonnegative")
        if self.a <= 0 or self.nu <= 0:
            raise ValueError("a and nu must be positive")

    @property
    def sill(self) -> float:
        return self.sigma2 + self.tau2

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma2": self.sigma2, "a": self.a,
                "nu": self.nu, "tau2": self.tau2}

    @classmethod
    def from_dict(cls, d: dict) -> "GpHyperParams":
        return cls(mu=float(d["mu"]), sigma2=float(d["sigma2"]), a=float(d["a"]),
                   nu=float(d["nu"]), tau2=float(d["tau2"]))


@dataclasses.dataclass(frozen=True)
class KrigeResult:
    mean: float
    variance: float


def matern_correlation(h, a: float, nu: float):
    """Matern correlation at distance(s) ``h`` for inverse range ``a``.

    Evaluates (1 / (2^(nu-1) Gamma(nu))) (a h)^nu K_nu(a h) through the
    exponentially scaled Bessel function in log space, so large arguments
    underflow cleanly to 0 instead of overflowing; values below 1e-300
    are returned as 0.
    """
    if a <= 0 or nu <= 0:
        raise ValueError("a and nu must be positive")
    h = np.asarray(h, dtype=float)
    scalar = h.ndim == 0
    x = np.atleast_1d(a * h)
    if np.any(x < 0):
        raise ValueError("distances must be nonnegative")
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        log_c = (1.0 - nu) * math.log(2.0) - math.lgamma(nu)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
            log_val = log_c + nu * np.log(xp) + np.log(scipy.special.kve(nu, xp)) - xp
            val = np.where(log_val < _LOG_TINY, 0.0, np.exp(log_val))
        bad = ~np.isfinite(val)
        if np.any(bad):
            # kve itself overflows only for tiny arguments with nu < 1;
            # use the small-argument expansion 1 - c * (x/2)^(2 nu) there.
            xb = xp[bad]
            c = math.gamma(1.0 - nu) / math.gamma(1.0 + nu) if nu < 1.0 else 0.0
            val[bad] = np.clip(1.0 - c * (xb / 2.0) ** (2.0 * nu), 0.0, 1.0)
        out[pos] = val
    return float(out[0]) if scalar else out


def chol_with_jitter(mat: np.ndarray, max_rel_jitter: float = 1e-4):
    """Lower Cholesky factor, escalating diagonal jitter on failure.

    Starts at 1e-10 times the mean diagonal and multiplies by 10 up to
    ``max_rel_jitter`` times the mean diagonal; raises
    :class:`FactorizationError` (reporting the minimum eigenvalue) if every
    attempt fails.  Returns ``(L, jitter_used)``.
    """
    scale = float(np.mean(np.diag(mat)))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    jitter = 0.0
    while True:
        try:
            L = scipy.linalg.cholesky(
                mat if jitter == 0.0 else mat + jitter * np.eye(mat.shape[0]),
                lower=True, check_finite=False)
            return L, jitter
        except scipy.linalg.LinAlgError:
            jitter = 1e-10 * scale if jitter == 0.0 else jitter * 10.0
            if jitter > max_rel_jitter * scale:
                min_eig = float(np.linalg.eigvalsh(mat)[0])
                raise FactorizationError(
                    f"Cholesky failed at jitter cap {max_rel_jitter:g} x mean diagonal "
                    f"(min eigenvalue {min_eig:.3e})"
                )


def _covariance(params: GpHyperParams, xy: np.ndarray) -> np.ndarray:
    h = cdist(xy, xy)
    cov = params.sigma2 * matern_correlation(h, params.a, params.nu)
    cov[np.diag_indices_from(cov)] += params.tau2
    return cov


def gp_loglik(params: GpHyperParams, xy, values) -> float:
    """Exact Gaussian log density of ``values`` under the GP model.

    Returns a very large negative surrogate (-1e300) if the covariance
    cannot be factorized even after jitter escalation.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    values = np.asarray(values, dtype=float)
    if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(values))):
        raise ValueError("gp_loglik requires finite coordinates and values")
    n = values.shape[0]
    if n < 1:
        raise ValueError("need at least one value")
    cov = _covariance(params, xy)
    try:
        L, _ = chol_with_jitter(cov)
    except FactorizationError:
        return -1e300
    resid = values - params.mu
    alpha = scipy.linalg.solve_triangular(L, resid, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (n * math.log(2.0 * math.pi) + logdet + float(alpha @ alpha))


def _profiled_mu(L: np.ndarray, values: np.ndarray) -> float:
    ones = np.ones_like(values)
    s1 = scipy.linalg.solve_triangular(L, ones, lower=True, check_finite=False)
    sz = scipy.linalg.solve_triangular(L, values, lower=True, check_finite=False)
    return float(s1 @ sz) / float(s1 @ s1)


def _nu_from_raw(raw: float) -> float:
    return NU_MIN + (NU_MAX - NU_MIN) * scipy.special.expit(raw)


def _raw_from_nu(nu: float) -> float:
    frac = (nu - NU_MIN) / (NU_MAX - NU_MIN)
    frac = min(max(frac, 1e-9), 1.0 - 1e-9)
    return float(scipy.special.logit(frac))


def gp_fit_mle(xy, values, nu_bounds=(NU_MIN, NU_MAX)) -> GpHyperParams:
    """Maximum-likelihood Matern-plus-nugget fit with profiled mean.

    Optimizes log(sigma2), log(a), log(tau2) and a logit-bounded nu with
    L-BFGS-B from five deterministic, data-derived starts; mu is profiled
    in closed form (generalized least squares) at every evaluation.  The
    result is deterministic given the inputs; ties across starts resolve
    to the lowest start index.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 5:
        raise FitError(f"gp_fit_mle needs at least 5 values, got {n}")
    if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(values))):
        raise FitError("gp_fit_mle requires finite coordinates and values")

    # Condensed pairwise distances: the Bessel evaluation dominates each
    # likelihood evaluation, so only the upper triangle is computed.
    dists = scipy.spatial.distance.pdist(xy)
    iu = np.triu_indices(n, k=1)
    pos = dists[dists > 0]
    d_med = float(np.median(pos)) if pos.size else 1.0
    d_max = float(pos.max()) if pos.size else 1.0
    d_min = float(pos.min()) if pos.size else 1.0

    v = float(np.var(values))
    v = max(v, 1e-10)

    nu_lo, nu_hi = nu_bounds
    starts = [
        (0.9 * v, 1.0 / d_med, 0.5, 0.1 * v),
        (0.9 * v, 1.0 / d_med, 1.5, 0.1 * v),
        (0.5 * v, 3.0 / d_med, 0.5, 0.5 * v),
        (0.9 * v, 1.0 / (3.0 * d_med), 1.0, 0.1 * v),
        (0.1 * v, 1.0 / d_med, 0.5, 0.9 * v),
    ]
    bounds = [
        (math.log(1e-6 * v), math.log(1e4 * v)),
        (math.log(1e-3 / d_max), math.log(1e3 / d_min)),
        (math.log(1e-6 * v), math.log(1e4 * v)),
        (-12.0, 12.0),
    ]
    ones = np.ones(n)

    def build_cov(sigma2, a, nu, tau2):
        cov = np.zeros((n, n))
        off = sigma2 * matern_correlation(dists, a, nu)
        cov[iu] = off
        cov[(iu[1], iu[0])] = off
        cov[np.diag_indices(n)] = sigma2 + tau2
        return cov

    def neg_loglik(theta):
        sigma2, a, tau2 = math.exp(theta[0]), math.exp(theta[1]), math.exp(theta[2])
        nu = nu_lo + (nu_hi - nu_lo) * scipy.special.expit(theta[3])
        cov = build_cov(sigma2, a, nu, tau2)
        try:
            L, _ = chol_with_jitter(cov)
        except FactorizationError:
            return 1e10
        mu = _profiled_mu(L, values)
        resid = values - mu * ones
        alpha = scipy.linalg.solve_triangular(L, resid, lower=True, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        return 0.5 * (n * math.log(2.0 * math.pi) + logdet + float(alpha @ alpha))

    best = None
    for idx, (s2, a0, nu0, t2) in enumerate(starts):
        theta0 = np.array([
            min(max(math.log(s2), bounds[0][0]), bounds[0][1]),
            min(max(math.log(a0), bounds[1][0]), bounds[1][1]),
            min(max(math.log(t2), bounds[2][0]), bounds[2][1]),
            _raw_from_nu(min(max(nu0, nu_lo + 1e-6), nu_hi - 1e-6)),
        ])
        res = scipy.optimize.minimize(
            neg_loglik, theta0, method="L-BFGS-B", bounds=bounds,
            options={"ftol": 1e-9, "maxiter": 300})
        if res.fun >= 1e10:
            continue
        if best is None or res.fun < best[0]:
            best = (float(res.fun), idx, res.x)
    if best is None:
        raise FitError("all multistart fits failed covariance factorization")

    theta = best[2]
    sigma2, a, tau2 = math.exp(theta[0]), math.exp(theta[1]), math.exp(theta[2])
    nu = nu_lo + (nu_hi - nu_lo) * scipy.special.expit(theta[3])
    L, _ = chol_with_jitter(build_cov(sigma2, a, nu, tau2))
    mu = _profiled_mu(L, values)
    return GpHyperParams(mu=mu, sigma2=sigma2, a=a, nu=nu, tau2=tau2)


def krige(params: GpHyperParams, xy, values, targets) -> list[KrigeResult]:
    """Simple kriging with known-mean predictor and variance.

    The covariance vector to a target gets the nugget only at coincident
    data sites, so prediction there reproduces the observation exactly
    with zero variance; far from all data the prediction collapses to
    ``mu`` with variance ``sigma2 + tau2``.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    values = np.asarray(values, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    cov = _covariance(params, xy)
    L, _ = chol_with_jitter(cov)

    hd = cdist(targets, xy)
    c = params.sigma2 * matern_correlation(hd, params.a, params.nu)
    c[hd < COINCIDENT_TOL_KM] += params.tau2

    w = scipy.linalg.cho_solve((L, True), values - params.mu, check_finite=False)
    means = params.mu + c @ w
    sol = scipy.linalg.cho_solve((L, True), c.T, check_finite=False)
    variances = params.sill - np.einsum("ij,ji->i", c, sol)
    variances = np.maximum(variances, 0.0)
    return [KrigeResult(mean=float(m), variance=float(v))
            for m, v in zip(means, variances)]
