"""Local climate component: per-station regression and coefficient fields.

Each variable (tmin, tmax) is regressed at each station on an intercept,
annual harmonics, both lagged variables and a linear drift; the resulting
coefficient surfaces are modeled as independent Gaussian processes and
kriged to arbitrary locations.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import gpcore
from .errors import FitError
from .geodata import TMIN, TMAX, VARIABLES, BivariateSeries, StationNetwork, variable_index

N_COEFFS = 6
COEFF_NAMES = ("intercept", "cos_annual", "sin_annual", "ar_other", "ar_self", "drift")

MIN_ROWS_PER_FIT = 7
MIN_STATIONS_FOR_FIELDS = 5


@dataclasses.dataclass(frozen=True)
class CovariateRow:
    intercept: float
    cos_term: float
    sin_term: float
    ar_other: float
    ar_self: float
    drift: float
    usable: bool

    def as_array(self) -> np.ndarray:
        return np.array([self.intercept, self.cos_term, self.sin_term,
                         self.ar_other, self.ar_self, self.drift])


@dataclasses.dataclass
class StationCoefficients:
    """OLS estimates and residuals for one station (both variables)."""

    station_index: int
    beta: np.ndarray        # (2, 6)
    residuals: np.ndarray   # (2, T), NaN where unusable
    n_used: tuple[int, int]


@dataclasses.dataclass
class CoefficientField:
    """Spatial field of one regression coefficient for one variable."""

    variable: str
    k: int
    station_values: np.ndarray
    station_xy: np.ndarray
    gp: gpcore.GpHyperParams

    def __post_init__(self):
        if not np.all(np.isfinite(self.station_values)):
            raise ValueError(f"coefficient field ({self.variable}, {self.k}) "
                             "has non-finite station values")


def harmonic_terms(t) -> tuple[np.ndarray, np.ndarray]:
    """Annual harmonic pair cos(2 pi t / 365), sin(2 pi t / 365)."""
    t = np.asarray(t, dtype=float)
    angle = 2.0 * np.pi * t / 365.0
    return np.cos(angle), np.sin(angle)


def drift_value(t, T_fit: int) -> np.ndarray:
    """Linear drift scaled to [-1, 1] over the fitting window.

    r_1 = -1 and r_T = +1; indices past T extrapolate with the same slope.
    A single-day window gets r = 0.
    """
    t = np.asarray(t, dtype=float)
    if T_fit < 2:
        return np.zeros_like(t)
    return -1.0 + 2.0 * (t - 1.0) / (T_fit - 1.0)


def build_covariates(series: BivariateSeries, t: int) -> tuple[CovariateRow, CovariateRow]:
    """Covariate rows for both regression equations at 1-based time t.

    The tmin row lags (other=tmax, self=tmin); the tmax row reverses the
    roles.  A row is unusable when either lag is missing (t=1 rows are
    always unusable: no lag exists).
    """
    T = series.T
    if not 1 <= t <= T:
        raise ValueError(f"t={t} outside series 1..{T}")
    cos_t, sin_t = harmonic_terms(t)
    r = float(drift_value(t, T))
    if t < 2:
        lag_min = lag_max = np.nan
    else:
        lag_min = series.z_min[t - 2]
        lag_max = series.z_max[t - 2]
    usable = bool(np.isfinite(lag_min) and np.isfinite(lag_max))
    row_min = CovariateRow(1.0, float(cos_t), float(sin_t),
                           float(lag_max), float(lag_min), r, usable)
    row_max = CovariateRow(1.0, float(cos_t), float(sin_t),
                           float(lag_min), float(lag_max), r, usable)
    return row_min, row_max


def _design_matrix(series: BivariateSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full-length design matrices for both variables plus lag-usable mask.

    Returns (X, lag_ok) with X of shape (2, T, 6); rows at t=1 or with a
    missing lag hold NaN in the lag columns and are excluded by lag_ok.
    """
    T = series.T
    t_idx = np.arange(1, T + 1, dtype=float)
    cos_t, sin_t = harmonic_terms(t_idx)
    r = drift_value(t_idx, T)

    lag_min = np.concatenate([[np.nan], series.z_min[:-1]])
    lag_max = np.concatenate([[np.nan], series.z_max[:-1]])
    lag_ok = np.isfinite(lag_min) & np.isfinite(lag_max)

    ones = np.ones(T)
    X = np.empty((2, T, N_COEFFS))
    X[TMIN] = np.column_stack([ones, cos_t, sin_t, lag_max, lag_min, r])
    X[TMAX] = np.column_stack([ones, cos_t, sin_t, lag_min, lag_max, r])
    return X, lag_ok


def ols_fit_station(series: BivariateSeries, station_id: str | None = None) -> StationCoefficients:
    """Ordinary least squares fit of both regression equations at a station.

    Uses only rows where the response and both lags are observed; the
    solution comes from an orthogonal factorization (lstsq).  Residuals are
    stored on the full time grid with NaN at unusable rows.
    """
    name = station_id if station_id is not None else f"#{series.station_index}"
    X, lag_ok = _design_matrix(series)
    beta = np.empty((2, N_COEFFS))
    residuals = np.full((2, series.T), np.nan)
    n_used = []
    for v in (TMIN, TMAX):
        y = series.values(v)
        rows = lag_ok & np.isfinite(y)
        m = int(rows.sum())
        if m < MIN_ROWS_PER_FIT:
            raise FitError(
                f"station {name}: {m} usable rows for {VARIABLES[v]} "
                f"(need >= {MIN_ROWS_PER_FIT})")
        sol, _, rank, _ = np.linalg.lstsq(X[v][rows], y[rows], rcond=None)
        if rank < N_COEFFS:
            raise FitError(
                f"station {name}: rank-deficient design for {VARIABLES[v]} "
                f"(rank {rank} < {N_COEFFS})")
        beta[v] = sol
        residuals[v, rows] = y[rows] - X[v][rows] @ sol
        n_used.append(m)
    return StationCoefficients(
        station_index=series.station_index, beta=beta,
        residuals=residuals, n_used=(n_used[0], n_used[1]))


def fit_all_stations(network: StationNetwork) -> list[StationCoefficients]:
    return [ols_fit_station(network.series(k), network.stations[k].id)
            for k in range(network.n)]


def stack_residuals(coefs: list[StationCoefficients], T: int) -> np.ndarray:
    """Residual array (2, n, T) in station order, NaN where unusable."""
    w = np.full((2, len(coefs), T), np.nan)
    for i, c in enumerate(coefs):
        w[:, i, :] = c.residuals
    return w


def fit_coefficient_fields(network: StationNetwork,
                           coefs: list[StationCoefficients]) -> list[CoefficientField]:
    """Fit one independent GP per (variable, coefficient): 12 fields.

    Fields are mutually independent by construction; failures carry the
    (variable, k) context.
    """
    if len(coefs) < MIN_STATIONS_FOR_FIELDS:
        raise FitError(f"need >= {MIN_STATIONS_FOR_FIELDS} fitted stations, "
                       f"got {len(coefs)}")
    xy = network.xy
    fields = []
    for v in (TMIN, TMAX):
        for k in range(N_COEFFS):
            values = np.array([c.beta[v, k] for c in coefs])
            try:
                gp = gpcore.gp_fit_mle(xy, values)
            except FitError as exc:
                raise FitError(
                    f"coefficient field ({VARIABLES[v]}, {COEFF_NAMES[k]}): {exc}"
                ) from exc
            fields.append(CoefficientField(
                variable=VARIABLES[v], k=k, station_values=values,
                station_xy=xy, gp=gp))
    return fields


@dataclasses.dataclass
class InterpolatedCoefficients:
    """Kriged coefficients and predictive standard deviations at targets."""

    targets: np.ndarray
    beta: np.ndarray  # (2, G, 6)
    sd: np.ndarray    # (2, G, 6)


def interpolate_coefficients(fields: list[CoefficientField], targets) -> InterpolatedCoefficients:
    """Simple kriging of every coefficient field to the target locations.

    At network stations this returns the local OLS estimates exactly
    (kriging is an exact interpolator).
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    G = targets.shape[0]
    beta = np.empty((2, G, N_COEFFS))
    sd = np.empty((2, G, N_COEFFS))
    for f in fields:
        v = variable_index(f.variable)
        results = gpcore.krige(f.gp, f.station_xy, f.station_values, targets)
        beta[v, :, f.k] = [r.mean for r in results]
        sd[v, :, f.k] = [np.sqrt(r.variance) for r in results]
    return InterpolatedCoefficients(targets=targets, beta=beta, sd=sd)


def fields_to_dict(fields: list[CoefficientField]) -> dict:
    return {
        "coefficient_names": list(COEFF_NAMES),
        "fields": [
            {
                "variable": f.variable,
                "k": f.k,
                "station_values": f.station_values.tolist(),
                "gp": f.gp.to_dict(),
            }
            for f in fields
        ],
    }


def fields_from_dict(payload: dict, station_xy: np.ndarray) -> list[CoefficientField]:
    return [
        CoefficientField(
            variable=item["variable"], k=int(item["k"]),
            station_values=np.asarray(item["station_values"], dtype=float),
            station_xy=station_xy,
            gp=gpcore.GpHyperParams.from_dict(item["gp"]))
        for item in payload["fields"]
    ]
