"""Nonparametric, seasonally varying matrix-valued covariance estimation.

The weather residual field is treated as a zero-mean bivariate Gaussian
process indexed by calendar day.  Its covariance between any two
locations is estimated by exponential-kernel smoothing of residual
products over space, then kernel averaging over the day-of-year circle.
Missing observations contribute zero weight.

The estimator factorizes: the spatially smoothed empirical covariance on
day t between x and y equals q_i(x, t) * q_j(y, t), where q_i(., t) is
the kernel-smoothed residual field of variable i over the stations that
observed it.  All fast paths below exploit that factorization; they are
algebraically identical to the literal double-sum estimator and are
unit-tested against it.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.distance import cdist

from .errors import FitError
from .geodata import TMIN, TMAX, StationNetwork, intersite_distance_quantile, variable_index

DAYS_PER_YEAR = 365

# Exponential kernel weight falls to 5% of its peak at 3 bandwidths.
EFFECTIVE_RANGE_FACTOR = 3.0

DEFAULT_TEMPORAL_CANDIDATES = (2.0, 4.0, 6.0, 8.0, 10.0, 14.0, 20.0, 30.0, 45.0, 60.0)


@dataclasses.dataclass(frozen=True)
class KernelSpec:
    """Spatial (km) and temporal (days) bandwidths of the exponential kernel."""

    spatial_lambda: float
    temporal_lambda: float

    def __post_init__(self):
        if self.spatial_lambda <= 0 or self.temporal_lambda <= 0:
            raise ValueError("kernel bandwidths must be positive")


def day_distance(d1, d2):
    """Circular distance on the 365-day calendar, in 0..182."""
    d1 = np.asarray(d1)
    d2 = np.asarray(d2)
    if np.any(d1 < 1) or np.any(d1 > DAYS_PER_YEAR) or np.any(d2 < 1) or np.any(d2 > DAYS_PER_YEAR):
        raise ValueError("calendar days must lie in 1..365")
    diff = np.abs(d1 - d2)
    out = np.where(diff <= 182, diff, DAYS_PER_YEAR - diff)
    return int(out) if out.ndim == 0 else out


def kernel_weight(h, lam: float):
    """Exponential kernel (1/lambda) exp(-h/lambda)."""
    if lam <= 0:
        raise ValueError("bandwidth must be positive")
    h = np.asarray(h, dtype=float)
    out = np.exp(-h / lam) / lam
    return float(out) if out.ndim == 0 else out


@dataclasses.dataclass(frozen=True)
class BandwidthSelection:
    spatial_lambda: float
    distance_quantile: float


def select_spatial_bandwidth(network: StationNetwork, quantile: float = 0.05) -> BandwidthSelection:
    """Spatial bandwidth whose 5%-weight range matches an intersite quantile.

    lambda = q / 3 so that exp(-q/lambda) = exp(-3) ~ 5%: the estimator at a
    location effectively uses its nearest ~5% of the network.  Returns the
    bandwidth together with the quantile it was derived from.
    """
    q = intersite_distance_quantile(network, quantile)
    return BandwidthSelection(spatial_lambda=q / EFFECTIVE_RANGE_FACTOR, distance_quantile=q)


def local_variance_profiles(residuals: np.ndarray, day_of_year: np.ndarray) -> np.ndarray:
    """Mean squared residual per calendar day: (2, n, 365), NaN if no data."""
    w = np.asarray(residuals, dtype=float)
    doy = np.asarray(day_of_year)
    obs = np.isfinite(w)
    w2 = np.where(obs, w, 0.0) ** 2
    sums = np.zeros(w.shape[:2] + (DAYS_PER_YEAR,))
    counts = np.zeros_like(sums)
    for e in range(DAYS_PER_YEAR):
        sel = doy == e + 1
        if sel.any():
            sums[:, :, e] = w2[:, :, sel].sum(axis=2)
            counts[:, :, e] = obs[:, :, sel].sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        prof = sums / counts
    prof[counts == 0] = np.nan
    return prof


def select_temporal_bandwidth(model: "SeasonalCovModel", candidate_lambdas) -> float:
    """Temporal bandwidth by leave-one-day-out prediction of local variances.

    For each candidate, every station/variable/day variance is predicted by
    the kernel average over the other calendar days (circular distance); the
    candidate minimizing the total squared prediction error wins, with ties
    resolved to the smaller bandwidth.
    """
    candidates = sorted(float(c) for c in np.atleast_1d(candidate_lambdas))
    if not candidates:
        raise ValueError("candidate bandwidth set is empty")
    prof = local_variance_profiles(model.residuals, model.day_of_year)
    avail = np.isfinite(prof)
    v0 = np.where(avail, prof, 0.0)
    days = np.arange(1, DAYS_PER_YEAR + 1)
    dmat = day_distance(days[:, None], days[None, :]).astype(float)

    best_lam, best_err = None, np.inf
    for lam in candidates:
        K = kernel_weight(dmat, lam)
        np.fill_diagonal(K, 0.0)
        num = np.tensordot(v0 * avail, K, axes=([2], [1]))
        den = np.tensordot(avail.astype(float), K, axes=([2], [1]))
        ok = avail & (den > 0)
        pred = np.zeros_like(num)
        pred[ok] = num[ok] / den[ok]
        err = float(np.sum((pred[ok] - prof[ok]) ** 2))
        if err < best_err:
            best_lam, best_err = lam, err
    return best_lam


class SeasonalCovModel:
    """Fitted state of the nonparametric seasonal covariance estimator.

    Holds the residual arrays, the kernel bandwidths, and lazily built
    caches: smoothed residual ratios at the stations, and the per-calendar-
    day station-level covariance matrices.  Instances are immutable in use;
    evaluation methods are pure.

    Days on which either variable has no observation anywhere in the
    network are excluded from covariance estimation for *both* variables,
    which keeps the temporal weights common across the 2x2 blocks and
    hence the assembled matrices nonnegative definite.
    """

    def __init__(self, xy, day_of_year, residuals, kernel: KernelSpec, station_ids=None):
        self.xy = np.atleast_2d(np.asarray(xy, dtype=float))
        self.day_of_year = np.asarray(day_of_year)
        self.residuals = np.asarray(residuals, dtype=float)
        self.kernel = kernel
        self.station_ids = list(station_ids) if station_ids is not None else None

        if self.residuals.ndim != 3 or self.residuals.shape[0] != 2:
            raise ValueError("residuals must have shape (2, n, T)")
        n, T = self.residuals.shape[1], self.residuals.shape[2]
        if self.xy.shape != (n, 2):
            raise ValueError("xy must have shape (n, 2)")
        if self.day_of_year.shape != (T,):
            raise ValueError("day_of_year must have shape (T,)")

        self.obs = np.isfinite(self.residuals)
        covered = self.obs.any(axis=1)    # (2, T)
        self.retained = covered[TMIN] & covered[TMAX]
        if not self.retained.any():
            raise FitError("no day has observations for both variables")
        self.t_retained = np.flatnonzero(self.retained)
        self.doy_retained = self.day_of_year[self.t_retained].astype(int)

        self._station_ratios = None
        self._day_weights = None
        self._station_cache = None

    @classmethod
    def from_network(cls, network: StationNetwork, residuals, kernel: KernelSpec):
        return cls(network.xy, network.day_of_year, residuals, kernel,
                   station_ids=[s.id for s in network.stations])

    # -- basic properties -------------------------------------------------

    @property
    def n(self) -> int:
        return self.residuals.shape[1]

    @property
    def T(self) -> int:
        return self.residuals.shape[2]

    def with_kernel(self, kernel: KernelSpec) -> "SeasonalCovModel":
        """Copy of the model with new bandwidths (caches rebuilt lazily)."""
        return SeasonalCovModel(self.xy, self.day_of_year, self.residuals,
                                kernel, station_ids=self.station_ids)

    def drop_station(self, k: int) -> "SeasonalCovModel":
        """Model refitted without station k (for hold-out validation)."""
        keep = [i for i in range(self.n) if i != k]
        ids = [self.station_ids[i] for i in keep] if self.station_ids else None
        return SeasonalCovModel(self.xy[keep], self.day_of_year,
                                self.residuals[:, keep, :], self.kernel,
                                station_ids=ids)

    # -- smoothed residual ratios -----------------------------------------

    def ratios_at(self, locations, t_subset=None) -> np.ndarray:
        """Kernel-smoothed residual fields q_i(x, t): shape (2, G, len(t)).

        ``t_subset`` is an array of 0-based time indices; defaults to the
        retained days.  Raises if a spatial denominator underflows to zero
        (bandwidth vastly smaller than the station spacing).
        """
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        ts = self.t_retained if t_subset is None else np.asarray(t_subset)
        K = kernel_weight(cdist(locations, self.xy), self.kernel.spatial_lambda)
        u = np.where(self.obs[:, :, ts], self.residuals[:, :, ts], 0.0)
        o = self.obs[:, :, ts].astype(float)
        q = np.empty((2, locations.shape[0], ts.shape[0]))
        for v in (TMIN, TMAX):
            num = K @ u[v]
            den = K @ o[v]
            if np.any(den <= 0.0):
                raise FitError(
                    "spatial kernel weights underflowed to zero; the spatial "
                    "bandwidth is far too small for the station geometry")
            q[v] = num / den
        return q

    def station_ratios(self) -> np.ndarray:
        if self._station_ratios is None:
            self._station_ratios = self.ratios_at(self.xy)
        return self._station_ratios

    # -- temporal weights ---------------------------------------------------

    def day_weight_matrix(self) -> np.ndarray:
        """(365, 365) temporal kernel weights between calendar days."""
        if self._day_weights is None:
            days = np.arange(1, DAYS_PER_YEAR + 1)
            dmat = day_distance(days[:, None], days[None, :]).astype(float)
            self._day_weights = kernel_weight(dmat, self.kernel.temporal_lambda)
        return self._day_weights

    def day_weights(self, d0: int) -> np.ndarray:
        """Temporal kernel weight of every retained day relative to d0."""
        if not 1 <= d0 <= DAYS_PER_YEAR:
            raise ValueError("calendar day must lie in 1..365")
        return self.day_weight_matrix()[d0 - 1][self.doy_retained - 1]

    # -- station-level per-day cache ----------------------------------------

    def station_day_cache(self) -> np.ndarray:
        """Per-calendar-day station covariance matrices: (365, 2n, 2n).

        Entry [d-1, 2k+i, 2l+j] is C_ij(s_k, s_l, d) with the (tmin, tmax)
        pair interleaved per station.  Built once by grouping retained days
        by calendar day, then mixing with the temporal kernel; this equals
        the direct estimator up to floating-point roundoff.
        """
        if self._station_cache is None:
            q = self.station_ratios()
            V = self._interleave(q)
            S = np.zeros((DAYS_PER_YEAR, V.shape[0], V.shape[0]))
            m = np.zeros(DAYS_PER_YEAR)
            for e in range(DAYS_PER_YEAR):
                sel = self.doy_retained == e + 1
                if sel.any():
                    Ve = V[:, sel]
                    S[e] = Ve @ Ve.T
                    m[e] = sel.sum()
            Wd = self.day_weight_matrix()
            num = np.tensordot(Wd, S, axes=([1], [0]))
            den = Wd @ m
            cache = num / den[:, None, None]
            self._station_cache = 0.5 * (cache + np.transpose(cache, (0, 2, 1)))
        return self._station_cache

    def station_day_variances(self) -> np.ndarray:
        """C_ii(s_k, s_k, d) for all stations and days: (2, n, 365)."""
        cache = self.station_day_cache()
        out = np.empty((2, self.n, DAYS_PER_YEAR))
        for v in (TMIN, TMAX):
            idx = 2 * np.arange(self.n) + v
            out[v] = cache[:, idx, idx].T
        return out

    @staticmethod
    def _interleave(q: np.ndarray) -> np.ndarray:
        """(2, G, T) ratios to interleaved (2G, T): row 2g+v is (g, v)."""
        two, G, T = q.shape
        V = np.empty((2 * G, T))
        V[0::2] = q[TMIN]
        V[1::2] = q[TMAX]
        return V


def smoothed_cov_single_day(model: SeasonalCovModel, i, j, x, y, t: int) -> float:
    """Spatially smoothed empirical covariance on a single day t (1-based).

    Ratio of kernel-weighted residual-product sums over station pairs with
    per-variable observed indicators.  Returns NaN when no observed pair
    exists (the missing marker).
    """
    if not 1 <= t <= model.T:
        raise ValueError(f"t={t} outside 1..{model.T}")
    vi, vj = variable_index(i), variable_index(j)
    ts = np.array([t - 1])
    x = np.asarray(x, dtype=float).reshape(1, 2)
    y = np.asarray(y, dtype=float).reshape(1, 2)
    Kx = kernel_weight(cdist(x, model.xy), model.kernel.spatial_lambda)[0]
    Ky = kernel_weight(cdist(y, model.xy), model.kernel.spatial_lambda)[0]
    u = np.where(model.obs[:, :, ts[0]], model.residuals[:, :, ts[0]], 0.0)
    o = model.obs[:, :, ts[0]].astype(float)
    den_x = float(Kx @ o[vi])
    den_y = float(Ky @ o[vj])
    if den_x <= 0.0 or den_y <= 0.0:
        return float("nan")
    return (float(Kx @ u[vi]) / den_x) * (float(Ky @ u[vj]) / den_y)


def seasonal_cov(model: SeasonalCovModel, i, j, x, y, d0: int) -> float:
    """Seasonal covariance C_ij(x, y, d0): temporal kernel average of the
    single-day smoothed covariances over the usable days."""
    vi, vj = variable_index(i), variable_index(j)
    kappa = model.day_weights(d0)
    total = float(kappa.sum())
    if total <= 0.0:
        raise FitError("no usable day for seasonal covariance")
    qx = model.ratios_at(np.asarray(x, dtype=float).reshape(1, 2))[vi, 0]
    qy = model.ratios_at(np.asarray(y, dtype=float).reshape(1, 2))[vj, 0]
    return float(np.sum(kappa * qx * qy)) / total


class DayCovEvaluator:
    """Per-day block covariance matrices over a fixed location set.

    Precomputes the smoothed ratios once; ``matrix(d)`` then assembles the
    interleaved (2G x 2G) covariance for any calendar day.  When memory
    permits (<= mem_budget bytes), per-calendar-day outer-product sums are
    cached so each call is a 365-term mixture; otherwise each call is one
    weighted matrix product over the retained days.
    """

    def __init__(self, model: SeasonalCovModel, locations, mem_budget: float = 1e9):
        self.model = model
        self.locations = np.atleast_2d(np.asarray(locations, dtype=float))
        self.G = self.locations.shape[0]
        self.V = SeasonalCovModel._interleave(model.ratios_at(self.locations))
        self._S = None
        self._m = None
        if DAYS_PER_YEAR * (2 * self.G) ** 2 * 8 <= mem_budget:
            S = np.zeros((DAYS_PER_YEAR, 2 * self.G, 2 * self.G))
            m = np.zeros(DAYS_PER_YEAR)
            for e in range(DAYS_PER_YEAR):
                sel = model.doy_retained == e + 1
                if sel.any():
                    Ve = self.V[:, sel]
                    S[e] = Ve @ Ve.T
                    m[e] = sel.sum()
            self._S = S
            self._m = m

    def matrix(self, d0: int) -> np.ndarray:
        if not 1 <= d0 <= DAYS_PER_YEAR:
            raise ValueError("calendar day must lie in 1..365")
        if self._S is not None:
            wd = self.model.day_weight_matrix()[d0 - 1]
            num = np.tensordot(wd, self._S, axes=([0], [0]))
            den = float(wd @ self._m)
        else:
            kappa = self.model.day_weights(d0)
            num = (self.V * kappa) @ self.V.T
            den = float(kappa.sum())
        if den <= 0.0:
            raise FitError("no usable day for seasonal covariance")
        C = num / den
        return 0.5 * (C + C.T)


def assemble_block_matrix(model: SeasonalCovModel, locations, d0: int) -> np.ndarray:
    """Interleaved (2G x 2G) seasonal covariance matrix over ``locations``.

    Row/column 2g+v corresponds to (location g, variable v) with v=0 tmin,
    v=1 tmax.  Symmetric by construction and nonnegative definite up to
    floating-point slack.
    """
    return DayCovEvaluator(model, locations).matrix(d0)
