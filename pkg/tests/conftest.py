import numpy as np
import pytest

from tempsim import climate, weathercov
from tempsim.geodata import network_from_arrays
from tempsim.synthetic import uniform_stations


def make_network(z, seed=0, extent=(200.0, 150.0), start_date="1990-01-01"):
    """Network around uniform random stations carrying the given (2,n,T) values."""
    n = z.shape[1]
    xy, lon, lat, elev = uniform_stations(n, extent, seed)
    ids = [f"ST{k:03d}" for k in range(n)]
    return network_from_arrays(ids, lon, lat, elev, z, start_date)


def make_cov_model(residuals, spatial_lambda=15.0, temporal_lambda=10.0, seed=0,
                   extent=(200.0, 150.0)):
    """SeasonalCovModel over a random station layout with given residuals."""
    net = make_network(residuals, seed=seed, extent=extent)
    kernel = weathercov.KernelSpec(spatial_lambda, temporal_lambda)
    return weathercov.SeasonalCovModel.from_network(net, residuals, kernel), net


def random_masked_residuals(rng, n, T, missing_prob=0.15, keep_coverage=True):
    """Gaussian residuals with a random per-entry mask.

    With ``keep_coverage`` every (variable, day) retains at least one
    observed station, the regime the seasonal estimator is defined on.
    """
    w = rng.standard_normal((2, n, T))
    mask = rng.uniform(size=w.shape) < missing_prob
    if keep_coverage:
        all_gone = mask.all(axis=1)
        for v, t in zip(*np.nonzero(all_gone)):
            mask[v, rng.integers(n), t] = False
    w = w.copy()
    w[mask] = np.nan
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
