"""Validation statistics emitted as tidy tables.

Every function here is a pure function of its inputs and returns a pandas
DataFrame (or small arrays) ready to be written to CSV; plotting is left
to external tools.  Quantiles use the linear-interpolation (type 7)
convention throughout.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from . import climate, gpcore
from .errors import FitError
from .geodata import TMIN, TMAX, VARIABLES, StationNetwork, variable_index
from .weathercov import DAYS_PER_YEAR, SeasonalCovModel
from .baseline import season_mask

FULL_YEAR = (1, 365)


def residual_acf(residuals, station: int, variable, max_lag: int):
    """Pairwise-complete sample autocorrelation of one residual series.

    Lag-h correlation is the Pearson correlation of (w_t, w_{t+h}) over the
    days where both are observed.  Requires >= 100 observed residuals.
    """
    v = variable_index(variable)
    w = np.asarray(residuals, dtype=float)[v, station]
    obs = np.isfinite(w)
    if obs.sum() < 100:
        raise FitError(f"need >= 100 observed residuals, have {int(obs.sum())}")
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for lag in range(1, max_lag + 1):
        a, b = w[:-lag], w[lag:]
        ok = np.isfinite(a) & np.isfinite(b)
        if ok.sum() < 3:
            acf[lag] = np.nan
            continue
        aa, bb = a[ok] - a[ok].mean(), b[ok] - b[ok].mean()
        denom = np.sqrt((aa ** 2).sum() * (bb ** 2).sum())
        acf[lag] = (aa * bb).sum() / denom if denom > 0 else np.nan
    return acf


def acf_table(residuals, station_ids, max_lag: int = 30) -> pd.DataFrame:
    rows = []
    w = np.asarray(residuals, dtype=float)
    for k, sid in enumerate(station_ids):
        for v in (TMIN, TMAX):
            if np.isfinite(w[v, k]).sum() < 100:
                continue
            acf = residual_acf(w, k, v, max_lag)
            for lag in range(max_lag + 1):
                rows.append({"station": sid, "variable": VARIABLES[v],
                             "lag": lag, "acf": acf[lag]})
    return pd.DataFrame(rows)


def _pairwise_corr(a: np.ndarray, b: np.ndarray) -> float:
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < 3:
        return np.nan
    aa, bb = a[ok] - a[ok].mean(), b[ok] - b[ok].mean()
    denom = np.sqrt((aa ** 2).sum() * (bb ** 2).sum())
    return float((aa * bb).sum() / denom) if denom > 0 else np.nan


def pairwise_correlation_compare(observed, simulated, day_of_year,
                                 season=FULL_YEAR, cross_site: bool = False) -> pd.DataFrame:
    """Empirical vs simulated pairwise residual correlations.

    Direct panels (kinds 'NN' and 'XX') cover every station pair; the cross
    panel ('NX') is same-station tmin-vs-tmax by default, or all cross-site
    pairs with ``cross_site=True``.  Both inputs must share station count
    and missing mask.
    """
    obs_w = np.asarray(observed, dtype=float)
    sim_w = np.asarray(simulated, dtype=float)
    if obs_w.shape != sim_w.shape:
        raise ValueError("observed and simulated residual shapes differ")
    if not np.array_equal(np.isfinite(obs_w), np.isfinite(sim_w)):
        raise ValueError("observed and simulated missing masks differ")
    keep = season_mask(day_of_year, season)
    obs_w = obs_w[:, :, keep]
    sim_w = sim_w[:, :, keep]
    n = obs_w.shape[1]
    rows = []
    for v, kind in ((TMIN, "NN"), (TMAX, "XX")):
        for a in range(n):
            for b in range(a + 1, n):
                rows.append({
                    "kind": kind, "station_a": a, "station_b": b,
                    "empirical_corr": _pairwise_corr(obs_w[v, a], obs_w[v, b]),
                    "simulated_corr": _pairwise_corr(sim_w[v, a], sim_w[v, b]),
                })
    cross_pairs = ([(a, b) for a in range(n) for b in range(n)] if cross_site
                   else [(a, a) for a in range(n)])
    for a, b in cross_pairs:
        rows.append({
            "kind": "NX", "station_a": a, "station_b": b,
            "empirical_corr": _pairwise_corr(obs_w[TMIN, a], obs_w[TMAX, b]),
            "simulated_corr": _pairwise_corr(sim_w[TMIN, a], sim_w[TMAX, b]),
        })
    return pd.DataFrame(rows)


def spatial_correlation_map(model: SeasonalCovModel, anchor, grid, d: int) -> pd.DataFrame:
    """Model correlations between an anchor point and every grid point.

    Columns corr_nn, corr_xx, corr_nx are C_ij(anchor, g, d) normalized by
    the local variances; raises if any variance is nonpositive.
    """
    anchor = np.asarray(anchor, dtype=float).reshape(1, 2)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    from .weathercov import DayCovEvaluator

    pts = np.vstack([anchor, grid])
    cov = DayCovEvaluator(model, pts).matrix(d)
    var = np.diag(cov)
    if np.any(var <= 0):
        raise FitError("zero variance at an evaluation point")
    G = grid.shape[0]
    idx = np.arange(1, G + 1)
    sd = np.sqrt(var)
    rows = {
        "x": grid[:, 0], "y": grid[:, 1],
        "corr_nn": cov[0, 2 * idx] / (sd[0] * sd[2 * idx]),
        "corr_xx": cov[1, 2 * idx + 1] / (sd[1] * sd[2 * idx + 1]),
        "corr_nx": cov[0, 2 * idx + 1] / (sd[0] * sd[2 * idx + 1]),
    }
    return pd.DataFrame(rows)


EXTREMA_KINDS = ("min_of_min", "max_of_max", "max_of_min", "min_of_max")


def _daily_extrema(z: np.ndarray) -> dict[str, np.ndarray]:
    with np.errstate(all="ignore"):
        mn = {
            "min_of_min": np.nanmin(z[TMIN], axis=0),
            "max_of_max": np.nanmax(z[TMAX], axis=0),
            "max_of_min": np.nanmax(z[TMIN], axis=0),
            "min_of_max": np.nanmin(z[TMAX], axis=0),
        }
    return {k: v[np.isfinite(v)] for k, v in mn.items()}


def extrema_qq(observed, simulated) -> pd.DataFrame:
    """Matched percentiles (1..99) of daily domain extrema, observed vs simulated."""
    obs_z = np.asarray(observed, dtype=float)
    sim_z = np.asarray(simulated, dtype=float)
    if not np.array_equal(np.isfinite(obs_z), np.isfinite(sim_z)):
        raise ValueError("observed and simulated missing masks differ")
    p = np.arange(1, 100) / 100.0
    rows = []
    obs_e = _daily_extrema(obs_z)
    sim_e = _daily_extrema(sim_z)
    for kind in EXTREMA_KINDS:
        oq = np.quantile(obs_e[kind], p)
        sq = np.quantile(sim_e[kind], p)
        for pi, o, s in zip(p, oq, sq):
            rows.append({"kind": kind, "p": pi, "observed_q": o, "simulated_q": s})
    return pd.DataFrame(rows)


def _exceedance_counts(w: np.ndarray, hot: bool) -> np.ndarray:
    """Per-day count of stations beyond their own residual quantile."""
    v = TMAX if hot else TMIN
    field = w[v]
    counts = np.zeros(field.shape[1], dtype=int)
    for k in range(field.shape[0]):
        series = field[k]
        obs = np.isfinite(series)
        if not obs.any():
            continue
        q = np.quantile(series[obs], 0.9 if hot else 0.1)
        hits = (series > q) if hot else (series < q)
        counts += np.where(obs, hits, False).astype(int)
    return counts


def exceedance_log_frequency(observed_residuals, simulated_residuals) -> pd.DataFrame:
    """Log day-counts of simultaneous local hot/cold residual events.

    Hot events are tmax residuals above the station's own 90% quantile;
    cold events are tmin residuals below the 10% quantile.  Each side's
    quantiles come from its own data.  Rows with zero days are omitted.
    """
    rows = []
    for label, w in (("observed", np.asarray(observed_residuals, dtype=float)),
                     ("simulated", np.asarray(simulated_residuals, dtype=float))):
        for event, hot in (("hot", True), ("cold", False)):
            counts = _exceedance_counts(w, hot)
            values, freq = np.unique(counts, return_counts=True)
            for c, f in zip(values, freq):
                rows.append({"event": event, "source": label,
                             "station_count": int(c), "days": int(f),
                             "log_days": float(np.log(f))})
    return pd.DataFrame(rows)


def cv_local_sd(heldout_model: SeasonalCovModel, full_model: SeasonalCovModel,
                station: int, d_range=None) -> pd.DataFrame:
    """Predicted vs locally estimated daily residual SD at a held-out station.

    The prediction evaluates the held-out model's smoothed variance at the
    station's coordinates; the local estimate is the full model's smoothed
    variance there.
    """
    if d_range is None:
        d_range = range(1, DAYS_PER_YEAR + 1)
    loc = full_model.xy[station].reshape(1, 2)
    from .weathercov import DayCovEvaluator

    ev_held = DayCovEvaluator(heldout_model, loc)
    local = full_model.station_day_variances()[:, station, :]
    rows = []
    for d in d_range:
        pred = ev_held.matrix(int(d))
        for v in (TMIN, TMAX):
            rows.append({
                "variable": VARIABLES[v], "d": int(d),
                "predicted_sd": float(np.sqrt(max(pred[v, v], 0.0))),
                "local_sd": float(np.sqrt(max(local[v, d - 1], 0.0))),
            })
    return pd.DataFrame(rows)


def coefficient_cv_table(network: StationNetwork,
                         fields: list[climate.CoefficientField]) -> pd.DataFrame:
    """Leave-one-station-out kriging validation of each coefficient field.

    GP hyperparameters are reused from the full fit; each row records the
    kriged value, its predictive SD, the local estimate, and whether the
    95% interval covered it.
    """
    rows = []
    for f in fields:
        xy = f.station_xy
        values = f.station_values
        n = xy.shape[0]
        for k in range(n):
            keep = np.arange(n) != k
            res = gpcore.krige(f.gp, xy[keep], values[keep], xy[k].reshape(1, 2))[0]
            sd = float(np.sqrt(res.variance))
            covered = bool(abs(values[k] - res.mean) <= 1.96 * sd)
            rows.append({
                "station": network.stations[k].id, "variable": f.variable,
                "k": f.k, "coefficient": climate.COEFF_NAMES[f.k],
                "kriged": res.mean, "sd": sd, "local": float(values[k]),
                "covered_95": covered,
            })
    return pd.DataFrame(rows)


def coverage_summary(cv_table: pd.DataFrame) -> pd.DataFrame:
    """Coverage fraction per (variable, coefficient)."""
    g = cv_table.groupby(["variable", "k"], as_index=False)["covered_95"].mean()
    return g.rename(columns={"covered_95": "coverage"})
