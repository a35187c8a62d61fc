"""Synthetic data generators used by the test suite and the bundled demo.

Everything here is seeded and deterministic.  The generators produce data
with known ground truth: stationary bivariate Matern weather, two-regime
nonstationary weather with a sharp correlation boundary, Gaussian-process
coefficient fields, and full observation files for the ingestion path.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.distance import cdist

from . import baseline, simulator
from .geodata import (TMIN, TMAX, StationNetwork, network_from_arrays,
                      unproject_coordinates)
from .gpcore import GpHyperParams, chol_with_jitter, matern_correlation

DEFAULT_CENTROID = (-105.5, 39.0)


def uniform_stations(n: int, extent: tuple[float, float], seed: int,
                     centroid=DEFAULT_CENTROID):
    """n station positions uniform on [0, extent] km, centered at origin.

    Returns (xy, lon, lat, elev); the geographic coordinates invert the
    package projection about ``centroid`` so the same geometry survives a
    round trip through an observation file.
    """
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, 1.0, size=(n, 2)) * np.asarray(extent, dtype=float)
    xy -= xy.mean(axis=0)
    lon, lat = unproject_coordinates(xy, centroid)
    elev = rng.uniform(1000.0, 3000.0, size=n)
    return xy, lon, lat, elev


DEFAULT_WEATHER = baseline.BivariateMaternParams(
    sigma2=(6.0, 8.0), a=(1.0 / 80.0, 1.0 / 60.0), nu=(0.6, 0.8),
    tau2=(0.4, 0.6), rho=0.5)

# Intercept / harmonic / lagged-other / lagged-self / drift coefficients of
# realistic magnitude, stable (AR spectral radius < 1), with a wide
# min-to-max temperature gap.
DEFAULT_BETA = np.array([
    [-3.0, -4.0, -1.0, 0.25, 0.45, 0.3],
    [7.0, -4.0, -1.2, 0.10, 0.60, 0.2],
])


def true_residual_correlations(params: baseline.BivariateMaternParams,
                               xy: np.ndarray):
    """Generator-truth pairwise residual correlations.

    Returns (corr_min, corr_max, cross_same_site): full (n, n) matrices for
    the direct correlations of each variable (the nugget counts toward the
    marginal variance) and the length-n vector of same-site cross
    correlations.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    cov = baseline.assemble_cov(params, xy)
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    return (corr[0::2, 0::2].copy(), corr[1::2, 1::2].copy(),
            np.array([corr[2 * k, 2 * k + 1] for k in range(n)]))


def steady_state_means(beta: np.ndarray) -> np.ndarray:
    """Long-run (tmin, tmax) means of the recursion with harmonics off."""
    A = np.array([[beta[TMIN, 4], beta[TMIN, 3]],
                  [beta[TMAX, 3], beta[TMAX, 4]]])
    b = np.array([beta[TMIN, 0], beta[TMAX, 0]])
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        return np.zeros(2)
    return np.linalg.solve(np.eye(2) - A, b)


def generate_observations(n_stations: int, n_years: int, seed: int,
                          extent=(300.0, 200.0),
                          weather_params: baseline.BivariateMaternParams = DEFAULT_WEATHER,
                          beta: np.ndarray = DEFAULT_BETA,
                          missing_prob: float = 0.0,
                          start_date: str = "1980-01-01") -> StationNetwork:
    """Bivariate series from known climate coefficients and weather model.

    The climate coefficients are spatially constant (``beta``), the weather
    is a stationary bivariate Matern field drawn independently per day, and
    an optional per-entry missing mask is applied afterwards.
    """
    xy, lon, lat, elev = uniform_stations(n_stations, extent, seed)
    T = 365 * n_years
    w = baseline.simulate_residuals(weather_params, xy, T, seed + 1)
    beta_grid = np.repeat(beta[:, None, :], n_stations, axis=1)
    init = steady_state_means(beta)
    z = simulator.ar_recursion(beta_grid, w, np.arange(1, T + 1), T, init)
    if missing_prob > 0.0:
        rng = np.random.default_rng(seed + 2)
        z = z.copy()
        z[rng.uniform(size=z.shape) < missing_prob] = np.nan
    ids = [f"SYN{k:04d}" for k in range(n_stations)]
    return network_from_arrays(ids, lon, lat, elev, z, start_date)


# -- nonstationary two-regime generator --------------------------------------

def varying_scale_correlation(xy_a, xy_b, scale_a, scale_b) -> np.ndarray:
    """Exponential-type correlation with spatially varying length scale.

    Uses the kernel-convolution construction: with per-point scales l(x),
    corr(x, y) = [2 l(x) l(y) / (l(x)^2 + l(y)^2)]^(d/2)
                 * exp(-sqrt(2 ||x-y||^2 / (l(x)^2 + l(y)^2))),
    which is a valid (nonnegative definite) correlation for any positive
    scale field.
    """
    xy_a = np.atleast_2d(np.asarray(xy_a, dtype=float))
    xy_b = np.atleast_2d(np.asarray(xy_b, dtype=float))
    la = np.asarray(scale_a, dtype=float)[:, None]
    lb = np.asarray(scale_b, dtype=float)[None, :]
    h = cdist(xy_a, xy_b)
    mix = 0.5 * (la ** 2 + lb ** 2)
    pref = (la * lb / mix)  # d = 2: exponent d/2 = 1
    return pref * np.exp(-np.sqrt(h ** 2 / mix))


@dataclasses.dataclass(frozen=True)
class TwoRegimeSpec:
    """Sharp west/east split of the correlation length scale at x=boundary."""

    boundary_x: float = 0.0
    scale_left: float = 100.0
    scale_right: float = 20.0
    sigma: tuple[float, float] = (2.2, 2.8)
    cross_loading: float = 0.6
    nugget: tuple[float, float] = (0.0, 0.0)

    def scales(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return np.where(xy[:, 0] < self.boundary_x, self.scale_left, self.scale_right)

    def correlation(self, xy_a, xy_b) -> np.ndarray:
        return varying_scale_correlation(xy_a, xy_b, self.scales(xy_a), self.scales(xy_b))

    def true_cross_correlation(self, xy_a, xy_b) -> np.ndarray:
        # Shared-field construction: cross corr = loading^2 * base correlation.
        return self.cross_loading ** 2 * self.correlation(xy_a, xy_b)


def two_regime_weather(spec: TwoRegimeSpec, xy, T: int, seed: int) -> np.ndarray:
    """Bivariate residual draws with a two-regime nonstationary structure.

    Each variable is loading * shared_field + sqrt(1 - loading^2) * own
    field, all three fields carrying the same two-regime correlation; an
    optional iid nugget is added per variable.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    R = spec.correlation(xy, xy)
    L, _ = chol_with_jitter(R + 1e-10 * np.eye(n))
    rng = np.random.default_rng(seed)
    shared = L @ rng.standard_normal((n, T))
    alpha = spec.cross_loading
    out = np.empty((2, n, T))
    for v in (TMIN, TMAX):
        own = L @ rng.standard_normal((n, T))
        field = alpha * shared + np.sqrt(1.0 - alpha ** 2) * own
        field = spec.sigma[v] * field
        if spec.nugget[v] > 0:
            field = field + spec.nugget[v] * rng.standard_normal((n, T))
        out[v] = field
    return out


# -- GP fields and smooth-variance generators ---------------------------------

def gp_field(xy, gp: GpHyperParams, seed: int) -> np.ndarray:
    """One draw of a Matern-plus-nugget Gaussian process at ``xy``."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    cov = gp.sigma2 * matern_correlation(cdist(xy, xy), gp.a, gp.nu)
    cov[np.diag_indices(n)] += gp.tau2
    L, _ = chol_with_jitter(cov + 1e-12 * np.eye(n))
    rng = np.random.default_rng(seed)
    return gp.mu + L @ rng.standard_normal(n)


def smooth_plus_nugget_weather(xy, T: int, seed: int, smooth_sigma2: float = 3.0,
                               efold_km: float = 180.0, nu: float = 1.5,
                               tau: float = 1.0,
                               sigma2_gradient: float = 0.0) -> np.ndarray:
    """Bivariate residuals = smooth Matern field + iid noise of SD ``tau``.

    ``sigma2_gradient`` adds an east-west trend to the smooth variance
    (used to exercise nugget truncation under oversmoothing).
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = xy.shape[0]
    corr = matern_correlation(cdist(xy, xy), 1.0 / efold_km, nu)
    x_rel = xy[:, 0] - xy[:, 0].min()
    sig2 = smooth_sigma2 + sigma2_gradient * x_rel
    scale = np.sqrt(sig2)
    cov = corr * np.outer(scale, scale)
    L, _ = chol_with_jitter(cov + 1e-10 * np.eye(n))
    rng = np.random.default_rng(seed)
    out = np.empty((2, n, T))
    for v in (TMIN, TMAX):
        out[v] = L @ rng.standard_normal((n, T)) + tau * rng.standard_normal((n, T))
    return out


# -- bundled demo dataset ------------------------------------------------------

def write_demo_observations(path, n_stations: int = 10, n_years: int = 3,
                            seed: int = 20260101) -> StationNetwork:
    """Write the bundled demo observation CSV and return its network.

    Includes a sprinkle of missing values so the masked code paths run.
    """
    from .geodata import write_observations

    network = generate_observations(
        n_stations=n_stations, n_years=n_years, seed=seed,
        extent=(250.0, 150.0), missing_prob=0.02, start_date="2000-01-01")
    # Temperatures recorded to tenths of a degree, like real extracts.
    network.z = np.round(network.z, 1)
    write_observations(network, path)
    return network
