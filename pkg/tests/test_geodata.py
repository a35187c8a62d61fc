import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tempsim import geodata
from tempsim.errors import EmptyNetworkError, ObservationParseError
from tempsim.geodata import (intersite_distance_quantile, network_from_arrays,
                             parse_observations, project_coordinates,
                             write_observations)
from tempsim.synthetic import generate_observations

HEADER = "station_id,lon,lat,elev,date,tmin,tmax,qflag_tmin,qflag_tmax\n"


def haversine_km(lon1, lat1, lon2, lat2):
    r = 6371.0088
    p1, p2 = np.deg2rad(lat1), np.deg2rad(lat2)
    dl = np.deg2rad(lon2 - lon1)
    dp = p2 - p1
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * r * np.arcsin(np.sqrt(a))


def test_quality_flag_masks_only_that_variable():
    csv = HEADER + "A,-105.0,39.0,1500,2001-06-01,-5.0,10.0,X,\n"
    net = parse_observations(csv, "2001-06-01", "2001-06-01")
    assert np.isnan(net.z[geodata.TMIN, 0, 0])
    assert net.z[geodata.TMAX, 0, 0] == 10.0


def test_leap_day_rows_dropped():
    csv = HEADER + "".join(
        f"A,-105.0,39.0,1500,2000-02-{d},1.0,9.0,,\n" for d in ("28", "29")
    ) + "A,-105.0,39.0,1500,2000-03-01,2.0,8.0,,\n"
    net = parse_observations(csv, "2000-02-28", "2000-03-01")
    assert net.T == 2
    assert_allclose(net.z[:, 0, :], [[1.0, 2.0], [9.0, 8.0]])
    assert list(net.day_of_year) == [59, 60]


def test_single_clean_day():
    csv = HEADER + "A,-105.0,39.0,1500,2001-06-01,-5,10,,\n"
    net = parse_observations(csv, "2001-06-01", "2001-06-01")
    assert net.n == 1 and net.T == 1
    assert net.z[geodata.TMIN, 0, 0] == -5.0
    assert net.z[geodata.TMAX, 0, 0] == 10.0


def test_malformed_row_reports_line_number():
    csv = (HEADER
           + "A,-105.0,39.0,1500,2001-06-01,-5,10,,\n"
           + "A,-105.0,39.0,1500,2001-06-02,oops,10,,\n")
    with pytest.raises(ObservationParseError, match="line 3"):
        parse_observations(csv, "2001-06-01", "2001-06-02")


def test_bad_date_and_bad_coords():
    with pytest.raises(ObservationParseError, match="date"):
        parse_observations(HEADER + "A,-105,39,1500,01/02/2001,1,2,,\n",
                           "2001-01-01", "2001-01-05")
    with pytest.raises(ObservationParseError, match="out of range"):
        parse_observations(HEADER + "A,-200,39,1500,2001-01-02,1,2,,\n",
                           "2001-01-01", "2001-01-05")


def test_duplicate_observation_rejected():
    csv = (HEADER
           + "A,-105.0,39.0,1500,2001-06-01,-5,10,,\n"
           + "A,-105.0,39.0,1500,2001-06-01,-4,11,,\n")
    with pytest.raises(ObservationParseError, match="duplicate"):
        parse_observations(csv, "2001-06-01", "2001-06-02")


def test_empty_network_is_an_error():
    csv = HEADER + "A,-105.0,39.0,1500,2001-06-01,,,,\n"
    with pytest.raises(EmptyNetworkError):
        parse_observations(csv, "2001-06-01", "2001-06-01")


def test_station_with_no_observations_dropped():
    csv = (HEADER
           + "A,-105.0,39.0,1500,2001-06-01,-5,10,,\n"
           + "B,-106.0,39.5,2000,2001-06-01,,,,\n")
    net = parse_observations(csv, "2001-06-01", "2001-06-01")
    assert [s.id for s in net.stations] == ["A"]


def test_roundtrip_is_idempotent(tmp_path):
    net = generate_observations(6, 1, seed=11, missing_prob=0.1)
    path = tmp_path / "obs.csv"
    write_observations(net, path)
    again = parse_observations(path, net.window[0], net.window[1])
    assert [s.id for s in again.stations] == [s.id for s in net.stations]
    assert_allclose(again.xy, net.xy, atol=1e-9)
    assert np.array_equal(np.isnan(again.z), np.isnan(net.z))
    assert_allclose(again.z[net.observed], net.z[net.observed])
    path2 = tmp_path / "obs2.csv"
    write_observations(again, path2)
    assert path.read_text() == path2.read_text()


def test_whole_years_have_365_days_each():
    for years in (1, 2, 4):  # 4 spans a leap year
        net = generate_observations(2, years, seed=1)
        assert net.T == 365 * years
        counts = np.bincount(net.day_of_year, minlength=366)[1:]
        assert (counts == years).all()


def test_projection_centroid_and_north():
    c = (-105.0, 39.0)
    assert_allclose(project_coordinates(-105.0, 39.0, c), [0.0, 0.0], atol=1e-12)
    assert_allclose(project_coordinates(-105.0, 40.0, c), [0.0, 110.57], atol=1e-12)


def test_projection_matches_great_circle_for_real_towns():
    # Kit Carson and Delta, Colorado: roughly 5 degrees of longitude apart.
    lon = np.array([-102.7933, -108.0689])
    lat = np.array([38.7625, 38.7422])
    centroid = (lon.mean(), lat.mean())
    xy = project_coordinates(lon, lat, centroid)
    planar = np.linalg.norm(xy[0] - xy[1])
    truth = haversine_km(lon[0], lat[0], lon[1], lat[1])
    assert abs(planar - truth) / truth < 0.02


def test_projection_distance_error_bounded_on_state_scale_domains(rng):
    # Up to 10 degrees across in longitude; the fixed-centroid scaling keeps
    # the 2% bound only when the latitude span stays compact (~2 degrees).
    for trial in range(5):
        lon0, lat0 = rng.uniform(-120, -70), rng.uniform(25, 40)
        lon = lon0 + rng.uniform(0, 10, size=15)
        lat = lat0 + rng.uniform(0, 2, size=15)
        centroid = (lon.mean(), lat.mean())
        xy = project_coordinates(lon, lat, centroid)
        for i in range(15):
            for j in range(i + 1, 15):
                truth = haversine_km(lon[i], lat[i], lon[j], lat[j])
                if truth < 1.0:
                    continue
                planar = np.linalg.norm(xy[i] - xy[j])
                assert abs(planar - truth) / truth < 0.02


def _network_at(xy_list):
    xy = np.asarray(xy_list, dtype=float)
    lon = -105.0 + xy[:, 0] / (geodata.KM_PER_DEG_LON_EQUATOR * np.cos(np.deg2rad(39.0)))
    lat = 39.0 + xy[:, 1] / geodata.KM_PER_DEG_LAT
    z = np.zeros((2, len(xy_list), 1))
    return network_from_arrays([f"S{i}" for i in range(len(xy_list))],
                               lon, lat, np.zeros(len(xy_list)), z, "2001-01-01")


def test_distance_quantile_two_stations():
    net = _network_at([[0.0, 0.0], [10.0, 0.0]])
    assert intersite_distance_quantile(net, 0.05) == pytest.approx(10.0)


def test_distance_quantile_collinear():
    net = _network_at([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    # distances {1, 2, 3}; lower interpolation at q=0.5 picks 2
    assert intersite_distance_quantile(net, 0.5) == pytest.approx(2.0)


def test_distance_quantile_matches_sort_oracle(rng):
    net = _network_at(rng.uniform(0, 100, size=(100, 2)))
    pts = net.xy
    dists = sorted(
        float(np.linalg.norm(pts[i] - pts[j]))
        for i in range(100) for j in range(i + 1, 100))
    for q in (0.05, 0.25, 0.5, 0.9):
        idx = int(np.floor(q * (len(dists) - 1)))
        assert intersite_distance_quantile(net, q) == pytest.approx(dists[idx], rel=1e-12)


def test_distance_quantile_preconditions():
    net = _network_at([[0.0, 0.0]])
    with pytest.raises(ValueError):
        intersite_distance_quantile(net, 0.05)
    net2 = _network_at([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        intersite_distance_quantile(net2, 1.5)


def test_extended_day_of_year_continues_cycle():
    net = generate_observations(2, 1, seed=5, start_date="1990-07-01")
    assert net.extended_day_of_year(1) == net.day_of_year[0]
    assert net.extended_day_of_year(net.T) == net.day_of_year[-1]
    nxt = net.extended_day_of_year(net.T + 1)
    assert nxt == net.day_of_year[-1] % 365 + 1
    assert net.extended_day_of_year(net.T + 365) == net.day_of_year[-1]
