"""Gridded stochastic simulation of the bivariate temperature process.

Weather fields are drawn day by day from the fitted seasonal covariance
plus the interpolated nugget, with one counter-seeded RNG stream per
simulated day (so scheduling cannot change results), and fed through the
autoregressive climate recursion.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import climate, nugget as nugget_mod
from .errors import FactorizationError, FitError
from .geodata import TMIN, TMAX, StationNetwork, variable_index
from .gpcore import chol_with_jitter
from .weathercov import DayCovEvaluator, SeasonalCovModel

DEFAULT_MAX_GRID_POINTS = 2500


@dataclasses.dataclass
class SimulationGrid:
    """Target locations with interpolated coefficients and nuggets."""

    locations: np.ndarray  # (G, 2) km
    beta: np.ndarray       # (2, G, 6)
    tau: np.ndarray        # (2, G) nugget SDs

    def __post_init__(self):
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.tau))):
            raise ValueError("grid coefficients and nuggets must be finite")
        if np.any(self.tau < 0):
            raise ValueError("grid nuggets must be nonnegative")

    @property
    def G(self) -> int:
        return self.locations.shape[0]


@dataclasses.dataclass
class SimulationOutput:
    """Simulated daily fields; NaN marks masked entries."""

    locations: np.ndarray
    t_start: int
    t_end: int
    z: np.ndarray  # (2, G, T_sim)
    seed: int
    masked: bool = False

    @property
    def T(self) -> int:
        return self.z.shape[2]


def prepare_grid(fields, nugget_fields, locations,
                 max_grid_points: int = DEFAULT_MAX_GRID_POINTS) -> SimulationGrid:
    """Interpolate climate coefficients and nuggets to the target locations."""
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    if locations.shape[0] > max_grid_points:
        raise ValueError(
            f"{locations.shape[0]} grid points exceed the cap of {max_grid_points}; "
            "raise max_grid_points explicitly if the memory cost is acceptable")
    interp = climate.interpolate_coefficients(fields, locations)
    tau = np.empty((2, locations.shape[0]))
    for f in nugget_fields:
        tau[variable_index(f.variable)] = nugget_mod.interpolate_nugget(f, locations)
    return SimulationGrid(locations=locations, beta=interp.beta, tau=tau)


def build_day_factorization(model: SeasonalCovModel, grid: SimulationGrid, d: int,
                            evaluator: DayCovEvaluator | None = None) -> np.ndarray:
    """Lower Cholesky factor of the day-d weather covariance over the grid.

    The smoothed covariance gets the squared interpolated nugget added on
    the diagonal.  Failures report the calendar day and minimum eigenvalue.
    """
    ev = evaluator if evaluator is not None else DayCovEvaluator(model, grid.locations)
    cov = ev.matrix(d)
    diag = np.empty(2 * grid.G)
    diag[0::2] = grid.tau[TMIN] ** 2
    diag[1::2] = grid.tau[TMAX] ** 2
    cov[np.diag_indices_from(cov)] += diag
    try:
        L, _ = chol_with_jitter(cov)
    except FactorizationError as exc:
        raise FactorizationError(f"calendar day {d}: {exc}") from exc
    return L


def draw_weather(factor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One zero-mean draw with covariance L L': shape (2, G)."""
    vec = factor @ rng.standard_normal(factor.shape[0])
    out = np.empty((2, factor.shape[0] // 2))
    out[TMIN] = vec[0::2]
    out[TMAX] = vec[1::2]
    return out


def ar_recursion(beta: np.ndarray, weather: np.ndarray, t_values: np.ndarray,
                 T_fit: int, init_lags: np.ndarray) -> np.ndarray:
    """Run the bivariate autoregressive climate recursion.

    ``beta`` is (2, G, 6) with columns (intercept, cos, sin, ar_other,
    ar_self, drift); ``weather`` is (2, G, T_sim); ``t_values`` are the
    absolute 1-based time indices (drift extrapolates past ``T_fit`` with
    the fitting-window slope); ``init_lags`` is (2,) or (2, G) giving the
    lag values for the first step.
    """
    t_values = np.asarray(t_values, dtype=float)
    cos_t, sin_t = climate.harmonic_terms(t_values)
    r = climate.drift_value(t_values, T_fit)
    G = beta.shape[1]
    T_sim = t_values.shape[0]
    z = np.empty((2, G, T_sim))
    prev = np.broadcast_to(np.asarray(init_lags, dtype=float).reshape(2, -1), (2, G)).copy()
    for s in range(T_sim):
        det_min = (beta[TMIN, :, 0] + beta[TMIN, :, 1] * cos_t[s]
                   + beta[TMIN, :, 2] * sin_t[s]
                   + beta[TMIN, :, 3] * prev[TMAX] + beta[TMIN, :, 4] * prev[TMIN]
                   + beta[TMIN, :, 5] * r[s])
        det_max = (beta[TMAX, :, 0] + beta[TMAX, :, 1] * cos_t[s]
                   + beta[TMAX, :, 2] * sin_t[s]
                   + beta[TMAX, :, 3] * prev[TMIN] + beta[TMAX, :, 4] * prev[TMAX]
                   + beta[TMAX, :, 5] * r[s])
        z[TMIN, :, s] = det_min + weather[TMIN, :, s]
        z[TMAX, :, s] = det_max + weather[TMAX, :, s]
        prev = z[:, :, s]
    return z


def climatological_init(network: StationNetwork, doy_prev: int) -> np.ndarray:
    """Domain-average observed (tmin, tmax) on a calendar day.

    Falls back to the overall per-variable training mean when the calendar
    day has no observation.
    """
    init = np.empty(2)
    sel = network.day_of_year == doy_prev
    for v in (TMIN, TMAX):
        vals = network.z[v][:, sel]
        if np.isfinite(vals).any():
            init[v] = np.nanmean(vals)
        elif np.isfinite(network.z[v]).any():
            init[v] = np.nanmean(network.z[v])
        else:
            raise FitError("network has no observations to initialize the recursion")
    return init


def simulate_trajectory(grid: SimulationGrid, cov_model: SeasonalCovModel,
                        network: StationNetwork, seed: int,
                        t_range: tuple[int, int] | None = None,
                        mask: bool = False,
                        max_grid_points: int = DEFAULT_MAX_GRID_POINTS,
                        mem_budget: float = 1e9) -> SimulationOutput:
    """Simulate the bivariate process over the grid.

    Deterministic given (fitted artifacts, grid, seed): each simulated day
    draws from its own seeded stream keyed by (seed, absolute day index).
    The first day's lags come from the training climatological domain
    average on the preceding calendar day.
    """
    if grid.G > max_grid_points:
        raise ValueError(f"{grid.G} grid points exceed the cap of {max_grid_points}")
    if t_range is None:
        t_range = (1, network.T)
    t0, t1 = int(t_range[0]), int(t_range[1])
    if t0 < 1 or t1 < t0:
        raise ValueError(f"invalid time range ({t0}, {t1})")
    t_values = np.arange(t0, t1 + 1)
    doy_sim = np.array([network.extended_day_of_year(t) for t in t_values])

    evaluator = DayCovEvaluator(cov_model, grid.locations, mem_budget=mem_budget)
    weather = np.empty((2, grid.G, t_values.shape[0]))
    for d in np.unique(doy_sim):
        factor = build_day_factorization(cov_model, grid, int(d), evaluator=evaluator)
        for s in np.flatnonzero(doy_sim == d):
            rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(t_values[s]))))
            weather[:, :, s] = draw_weather(factor, rng)

    doy_first = int(doy_sim[0])
    doy_prev = doy_first - 1 if doy_first > 1 else 365
    init = climatological_init(network, doy_prev)
    z = ar_recursion(grid.beta, weather, t_values, network.T, init)
    out = SimulationOutput(locations=grid.locations, t_start=t0, t_end=t1,
                           z=z, seed=int(seed))
    if mask:
        out = apply_missing_mask(out, network)
    return out


def simulation_as_network(output: SimulationOutput, network: StationNetwork) -> StationNetwork:
    """Wrap a station-aligned simulation as a network for refitting.

    Keeps the original station metadata and calendar so residual
    diagnostics of the simulation are directly comparable to the
    observations.
    """
    from .geodata import date_for_index, network_from_arrays

    if output.locations.shape[0] != network.n or not np.allclose(
            output.locations, network.xy, atol=1e-9):
        raise ValueError("simulation is not aligned with the network stations")
    start = date_for_index(network, output.t_start)
    return network_from_arrays(
        ids=[s.id for s in network.stations],
        lon=[s.lon for s in network.stations],
        lat=[s.lat for s in network.stations],
        elev=[s.elev for s in network.stations],
        z=output.z, start_date=start.isoformat())


def apply_missing_mask(output: SimulationOutput, network: StationNetwork) -> SimulationOutput:
    """Blank simulated entries wherever the observations are missing.

    The grid must coincide with the network stations (same order) and the
    simulated window must lie inside the observation window.
    """
    if output.locations.shape[0] != network.n:
        raise ValueError(
            f"grid has {output.locations.shape[0]} locations but the network "
            f"has {network.n} stations")
    if not np.allclose(output.locations, network.xy, atol=1e-9):
        raise ValueError("grid locations do not coincide with the network stations")
    if output.t_end > network.T:
        raise ValueError("simulated window extends past the observation window; "
                         "the missing pattern is undefined there")
    sel = slice(output.t_start - 1, output.t_end)
    z = output.z.copy()
    z[~network.observed[:, :, sel]] = np.nan
    return dataclasses.replace(output, z=z, masked=True)
