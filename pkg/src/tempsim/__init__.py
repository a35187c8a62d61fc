"""Bivariate daily min/max temperature simulation over complex terrain.

Two-component model: a local climate regression with spatially varying
coefficients, plus a spatially correlated weather residual field with a
nonparametric, seasonally varying, nonstationary matrix-valued covariance.
"""

__version__ = "0.1.0"

from .errors import (ArtifactError, ConfigError, EmptyNetworkError,
                     FactorizationError, FitError, ObservationParseError,
                     TempsimError)
from .geodata import (BivariateSeries, Station, StationNetwork,
                      intersite_distance_quantile, network_from_arrays,
                      parse_observations, project_coordinates)
from .gpcore import GpHyperParams, KrigeResult, gp_fit_mle, gp_loglik, krige, matern_correlation
from .climate import (CoefficientField, StationCoefficients, build_covariates,
                      fit_all_stations, fit_coefficient_fields,
                      interpolate_coefficients, ols_fit_station)
from .weathercov import (KernelSpec, SeasonalCovModel, assemble_block_matrix,
                         day_distance, kernel_weight, seasonal_cov,
                         select_spatial_bandwidth, select_temporal_bandwidth,
                         smoothed_cov_single_day)
from .nugget import (NuggetField, estimate_station_nugget, fit_nugget_fields,
                     interpolate_nugget, local_empirical_variance)
from .baseline import BivariateMaternParams, bivariate_matern_cov, fit_baseline
from .simulator import (SimulationGrid, SimulationOutput, apply_missing_mask,
                        build_day_factorization, draw_weather, prepare_grid,
                        simulate_trajectory)

__all__ = [name for name in dir() if not name.startswith("_")]
