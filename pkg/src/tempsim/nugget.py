"""Spatially varying nugget estimation and interpolation.

The nugget at a station is the part of the local residual variance not
explained by the smoothed covariance at zero lag, averaged over the
calendar year and truncated at zero.  Station nuggets are then modeled
as a Gaussian process (on the standard-deviation scale) and kriged to
arbitrary locations, clipping negatives to zero.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import gpcore
from .errors import FitError
from .geodata import TMIN, TMAX, VARIABLES, variable_index
from .weathercov import DAYS_PER_YEAR, SeasonalCovModel, local_variance_profiles

MIN_DAYS_FOR_NUGGET = 300


@dataclasses.dataclass
class NuggetField:
    """Per-station nugget standard deviations and their spatial GP."""

    variable: str
    station_tau: np.ndarray
    station_xy: np.ndarray
    gp: gpcore.GpHyperParams

    def __post_init__(self):
        if np.any(self.station_tau < 0):
            raise ValueError("station nuggets must be nonnegative")

    def to_dict(self) -> dict:
        return {"variable": self.variable,
                "station_tau": self.station_tau.tolist(),
                "gp": self.gp.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, station_xy: np.ndarray) -> "NuggetField":
        return cls(variable=d["variable"],
                   station_tau=np.asarray(d["station_tau"], dtype=float),
                   station_xy=station_xy,
                   gp=gpcore.GpHyperParams.from_dict(d["gp"]))


def local_empirical_variance(series_residuals, day_of_year, d: int) -> float:
    """Mean squared residual over observations falling on calendar day d.

    Returns NaN (the missing marker) when no residual is observed on d.
    """
    if not 1 <= d <= DAYS_PER_YEAR:
        raise ValueError("calendar day must lie in 1..365")
    w = np.asarray(series_residuals, dtype=float)
    sel = (np.asarray(day_of_year) == d) & np.isfinite(w)
    if not sel.any():
        return float("nan")
    return float(np.mean(w[sel] ** 2))


def estimate_station_nugget(model: SeasonalCovModel, variances, station_index: int,
                            variable, min_days: int = MIN_DAYS_FOR_NUGGET) -> float:
    """Nugget standard deviation at one station from the variance gap.

    Averages (local empirical variance - smoothed variance) over the
    calendar days where the local variance exists, truncates a negative
    average to zero, and returns the square root.
    """
    v = variable_index(variable)
    variances = np.asarray(variances, dtype=float)
    if variances.shape != (DAYS_PER_YEAR,):
        raise ValueError("variances must be a length-365 profile")
    smoothed = model.station_day_variances()[v, station_index]
    avail = np.isfinite(variances) & np.isfinite(smoothed)
    n_avail = int(avail.sum())
    if n_avail < min_days:
        raise FitError(
            f"station {station_index} ({VARIABLES[v]}): local variances on "
            f"{n_avail} days, need >= {min_days}")
    tau2 = float(np.mean(variances[avail] - smoothed[avail]))
    return float(np.sqrt(max(tau2, 0.0)))


def fit_nugget_fields(model: SeasonalCovModel,
                      min_days: int = MIN_DAYS_FOR_NUGGET) -> list[NuggetField]:
    """Estimate every station nugget and fit one GP per variable."""
    profiles = local_variance_profiles(model.residuals, model.day_of_year)
    fields = []
    for v in (TMIN, TMAX):
        tau = np.array([
            estimate_station_nugget(model, profiles[v, k], k, v, min_days=min_days)
            for k in range(model.n)
        ])
        try:
            gp = gpcore.gp_fit_mle(model.xy, tau)
        except FitError as exc:
            raise FitError(f"nugget field ({VARIABLES[v]}): {exc}") from exc
        fields.append(NuggetField(variable=VARIABLES[v], station_tau=tau,
                                  station_xy=model.xy, gp=gp))
    return fields


def interpolate_nugget(field: NuggetField, targets) -> np.ndarray:
    """Simple kriging of the nugget SD to targets, clipped below at zero."""
    results = gpcore.krige(field.gp, field.station_xy, field.station_tau, targets)
    return np.maximum(np.array([r.mean for r in results]), 0.0)
