"""Stationary bivariate Matern comparison model.

A single isotropic Matern-plus-nugget structure per variable with one
cross-correlation parameter; the cross structure uses the averaged
smoothness and the smaller inverse range.  Fitted by maximum likelihood
treating each day's bivariate residual field as an independent draw,
with per-day marginalization over the missing pattern.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.special
from scipy.spatial.distance import cdist

from .errors import FitError
from .geodata import TMIN, TMAX, variable_index
from .gpcore import chol_with_jitter, matern_correlation

# JJA: day-of-year 152..243.
DEFAULT_SEASON = (152, 243)

MIN_STATIONS = 10
MIN_DAYS = 100

_RHO_SHRINK = 0.9
_PD_REL_TOL = -1e-8


@dataclasses.dataclass
class BivariateMaternParams:
    """Marginal Matern-plus-nugget parameters and cross-correlation.

    The cross smoothness and inverse range are derived, never stored:
    nu_cross is the average smoothness and a_cross the smaller of the two
    inverse ranges.
    """

    sigma2: tuple[float, float]
    a: tuple[float, float]
    nu: tuple[float, float]
    tau2: tuple[float, float]
    rho: float

    def __post_init__(self):
        if any(s < 0 for s in self.sigma2) or any(t < 0 for t in self.tau2):
            raise ValueError("variances must be nonnegative")
        if any(x <= 0 for x in self.a) or any(x <= 0 for x in self.nu):
            raise ValueError("ranges and smoothnesses must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    @property
    def nu_cross(self) -> float:
        return 0.5 * (self.nu[0] + self.nu[1])

    @property
    def a_cross(self) -> float:
        return min(self.a[0], self.a[1])

    def to_dict(self) -> dict:
        return {"sigma2": list(self.sigma2), "a": list(self.a),
                "nu": list(self.nu), "tau2": list(self.tau2), "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateMaternParams":
        return cls(sigma2=tuple(d["sigma2"]), a=tuple(d["a"]),
                   nu=tuple(d["nu"]), tau2=tuple(d["tau2"]), rho=float(d["rho"]))


def bivariate_matern_cov(params: BivariateMaternParams, i, j, x, y) -> float:
    """Covariance between variable i at x and variable j at y.

    Direct terms add the nugget at coincident locations; the cross term
    carries no nugget.
    """
    vi, vj = variable_index(i), variable_index(j)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = float(np.linalg.norm(x - y))
    if vi == vj:
        val = params.sigma2[vi] * matern_correlation(h, params.a[vi], params.nu[vi])
        if h == 0.0:
            val += params.tau2[vi]
        return float(val)
    cross_sigma = params.rho * math.sqrt(params.sigma2[0] * params.sigma2[1])
    return float(cross_sigma * matern_correlation(h, params.a_cross, params.nu_cross))


def assemble_cov(params: BivariateMaternParams, xy: np.ndarray) -> np.ndarray:
    """Interleaved (2n x 2n) model covariance over a location set."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    h = cdist(xy, xy)
    corr = [matern_correlation(h, params.a[v], params.nu[v]) for v in (TMIN, TMAX)]
    corr_x = matern_correlation(h, params.a_cross, params.nu_cross)
    cross_sigma = params.rho * math.sqrt(params.sigma2[0] * params.sigma2[1])

    cov = np.empty((2 * n, 2 * n))
    for v in (TMIN, TMAX):
        block = params.sigma2[v] * corr[v]
        block[np.diag_indices(n)] += params.tau2[v]
        cov[v::2, v::2] = block
    cov[0::2, 1::2] = cross_sigma * corr_x
    cov[1::2, 0::2] = cross_sigma * corr_x.T
    return cov


def min_relative_eigenvalue(cov: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(cov)
    top = max(float(eig[-1]), 1e-300)
    return float(eig[0]) / top


def season_mask(day_of_year: np.ndarray, season: tuple[int, int]) -> np.ndarray:
    """Boolean mask of days inside an inclusive day-of-year range.

    A range with start > end wraps around the year end.
    """
    doy = np.asarray(day_of_year)
    lo, hi = season
    if lo <= hi:
        return (doy >= lo) & (doy <= hi)
    return (doy >= lo) | (doy <= hi)


def _pattern_groups(obs_interleaved: np.ndarray):
    """Group day columns by identical missing pattern."""
    groups: dict[bytes, list[int]] = {}
    for t in range(obs_interleaved.shape[1]):
        groups.setdefault(obs_interleaved[:, t].tobytes(), []).append(t)
    out = []
    for key, ts in groups.items():
        pattern = np.frombuffer(key, dtype=bool)
        if pattern.any():
            out.append((np.flatnonzero(pattern), np.asarray(ts)))
    return out


def _interleave_residuals(w: np.ndarray) -> np.ndarray:
    two, n, T = w.shape
    out = np.empty((2 * n, T))
    out[0::2] = w[TMIN]
    out[1::2] = w[TMAX]
    return out


def _params_from_theta(theta) -> BivariateMaternParams:
    e = np.exp(theta[:8].reshape(4, 2))
    return BivariateMaternParams(
        sigma2=(e[0, 0], e[0, 1]),
        a=(e[1, 0], e[1, 1]),
        nu=(min(e[2, 0], 10.0), min(e[2, 1], 10.0)),
        tau2=(e[3, 0], e[3, 1]),
        rho=float(np.tanh(theta[8])),
    )


def fit_baseline(residuals, xy, day_of_year, season: tuple[int, int] = DEFAULT_SEASON,
                 n_starts: int = 3) -> BivariateMaternParams:
    """Maximum-likelihood bivariate Matern fit on a seasonal residual subset.

    The likelihood is the product over retained days of the density of the
    observed subvector of the interleaved bivariate field.  Optimization is
    over 9 free parameters (log variances, log inverse ranges, log capped
    smoothnesses, log nuggets, atanh cross-correlation) from deterministic
    starts.  The fitted model is checked for nonnegative definiteness on
    the fitting network and the cross-correlation shrunk toward zero if
    numerically indefinite.
    """
    w = np.asarray(residuals, dtype=float)
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    if n < MIN_STATIONS:
        raise FitError(f"baseline fit needs >= {MIN_STATIONS} stations, got {n}")
    keep = season_mask(day_of_year, season)
    w = w[:, :, keep]
    n_days = w.shape[2]
    if n_days < MIN_DAYS:
        raise FitError(f"baseline fit needs >= {MIN_DAYS} seasonal days, got {n_days}")
    for v in (TMIN, TMAX):
        if not np.isfinite(w[v]).any():
            raise FitError("baseline fit requires observations of both variables")

    wi = _interleave_residuals(w)
    obs = np.isfinite(wi)
    wi0 = np.where(obs, wi, 0.0)
    groups = _pattern_groups(obs)
    h = cdist(xy, xy)

    def neg_loglik(theta):
        try:
            params = _params_from_theta(theta)
        except (OverflowError, ValueError):
            return 1e10
        corr0 = matern_correlation(h, params.a[0], params.nu[0])
        corr1 = matern_correlation(h, params.a[1], params.nu[1])
        corr_x = matern_correlation(h, params.a_cross, params.nu_cross)
        cross_sigma = params.rho * math.sqrt(params.sigma2[0] * params.sigma2[1])
        cov = np.empty((2 * n, 2 * n))
        cov[0::2, 0::2] = params.sigma2[0] * corr0
        cov[1::2, 1::2] = params.sigma2[1] * corr1
        cov[0::2, 1::2] = cross_sigma * corr_x
        cov[1::2, 0::2] = cross_sigma * corr_x.T
        d = np.diag_indices(n)
        cov[0::2, 0::2][d] += params.tau2[0]
        cov[1::2, 1::2][d] += params.tau2[1]

        total = 0.0
        for rows, ts in groups:
            sub = cov[np.ix_(rows, rows)]
            try:
                L, _ = chol_with_jitter(sub)
            except Exception:
                return 1e10
            vals = wi0[np.ix_(rows, ts)]
            alpha = scipy.linalg.solve_triangular(L, vals, lower=True, check_finite=False)
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
            m = rows.shape[0]
            total += -0.5 * (ts.shape[0] * (m * math.log(2.0 * math.pi) + logdet)
                             + float(np.sum(alpha * alpha)))
        return -total

    var0 = [float(np.nanvar(w[v])) if np.isfinite(w[v]).any() else 1.0 for v in (TMIN, TMAX)]
    var0 = [max(x, 1e-8) for x in var0]
    pos = h[np.triu_indices(n, k=1)]
    pos = pos[pos > 0]
    d_med = float(np.median(pos)) if pos.size else 1.0

    start_specs = [
        (0.8, 1.0 / d_med, 0.5, 0.2, 0.1),
        (0.8, 3.0 / d_med, 1.0, 0.2, 0.3),
        (0.5, 1.0 / (3.0 * d_med), 1.5, 0.5, 0.0),
        (0.9, 1.0 / d_med, 0.8, 0.1, -0.1),
    ][:n_starts]

    best = None
    for idx, (f_sig, a0, nu0, f_tau, rho0) in enumerate(start_specs):
        theta0 = np.array([
            math.log(f_sig * var0[0]), math.log(f_sig * var0[1]),
            math.log(a0), math.log(a0),
            math.log(nu0), math.log(nu0),
            math.log(f_tau * var0[0]), math.log(f_tau * var0[1]),
            math.atanh(max(min(rho0, 0.99), -0.99)),
        ])
        res = scipy.optimize.minimize(neg_loglik, theta0, method="L-BFGS-B",
                                      options={"ftol": 1e-9, "maxiter": 400})
        if res.fun >= 1e10:
            continue
        if best is None or res.fun < best[0]:
            best = (float(res.fun), idx, res.x)
    if best is None:
        raise FitError("baseline optimizer failed from every start")

    params = _params_from_theta(best[2])
    while (abs(params.rho) > 1e-12
           and min_relative_eigenvalue(assemble_cov(params, xy)) < _PD_REL_TOL):
        params = dataclasses.replace(params, rho=params.rho * _RHO_SHRINK)
    return params


def simulate_residuals(params: BivariateMaternParams, xy, n_days: int, seed: int) -> np.ndarray:
    """Independent daily draws of the bivariate field: shape (2, n, n_days)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    cov = assemble_cov(params, xy)
    L, _ = chol_with_jitter(cov)
    rng = np.random.default_rng(seed)
    draws = L @ rng.standard_normal((2 * n, n_days))
    out = np.empty((2, n, n_days))
    out[TMIN] = draws[0::2]
    out[TMAX] = draws[1::2]
    return out
