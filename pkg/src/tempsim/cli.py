"""Pipeline command-line interface.

Subcommands run the pipeline stages in order, reading and writing
artifacts in a single directory with provenance manifests:

    ingest -> fit-climate -> fit-cov -> fit-nugget -> fit-baseline
           -> simulate -> diagnose        (or `all` for the whole chain)

Configuration is a flat key = value text file; see FILE_FORMATS.md for
the key reference and artifact layouts.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts as art
from . import baseline as baseline_mod
from . import climate, diagnostics, nugget, simulator, weathercov
from .errors import ArtifactError, ConfigError, TempsimError
from .geodata import TMIN, TMAX, parse_observations

COMMANDS = ("ingest", "fit-climate", "fit-cov", "fit-nugget", "fit-baseline",
            "simulate", "diagnose", "all")

DEFAULTS = {
    "artifacts": "artifacts",
    "spatial_bandwidth_km": "auto",
    "temporal_bandwidth_days": "auto",
    "temporal_cv_candidates": "2,4,6,8,10,14,20,30,45,60",
    "season_start_doy": "152",
    "season_end_doy": "243",
    "grid_mode": "stations",
    "grid_nx": "8",
    "grid_ny": "8",
    "grid_margin_km": "10",
    "sim_t_start": "auto",
    "sim_t_end": "auto",
    "apply_mask": "auto",
    "max_grid_points": "2500",
    "nugget_min_days": "300",
    "cv_holdout_count": "2",
    "map_days": "152,1",
    "acf_max_lag": "20",
    "csv_max_cells": "200000",
    "baseline_compare": "true",
}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = dict(DEFAULTS)
    for i, line in enumerate(path.read_text().splitlines()):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path} line {i + 1}: expected key = value")
        key, value = body.split("=", 1)
        cfg[key.strip()] = value.strip()
    cfg["_config_dir"] = str(path.parent.resolve())
    return cfg


def _resolve(cfg, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg["_config_dir"]) / p


def _get_float(cfg, key) -> float:
    try:
        return float(cfg[key])
    except (KeyError, ValueError):
        raise ConfigError(f"config key {key} must be a number (got {cfg.get(key)!r})")


def _get_int(cfg, key) -> int:
    try:
        return int(cfg[key])
    except (KeyError, ValueError):
        raise ConfigError(f"config key {key} must be an integer (got {cfg.get(key)!r})")


def _get_bool(cfg, key) -> bool:
    val = cfg.get(key, "").lower()
    if val in ("true", "yes", "1"):
        return True
    if val in ("false", "no", "0"):
        return False
    raise ConfigError(f"config key {key} must be true/false (got {cfg.get(key)!r})")


def _require(cfg, key) -> str:
    if key not in cfg or not cfg[key]:
        raise ConfigError(f"config key {key} is required")
    return cfg[key]


def _config_hash(cfg) -> str:
    body = "\n".join(f"{k}={v}" for k, v in sorted(cfg.items()) if not k.startswith("_"))
    return art.sha256_text(body)


def _season(cfg) -> tuple[int, int]:
    return (_get_int(cfg, "season_start_doy"), _get_int(cfg, "season_end_doy"))


# -- commands -------------------------------------------------------------------

def cmd_ingest(cfg, store):
    obs_path = _resolve(cfg, _require(cfg, "observations"))
    if not obs_path.exists():
        raise ArtifactError(f"observation file {obs_path} does not exist")
    network = parse_observations(obs_path, _require(cfg, "start_date"),
                                 _require(cfg, "end_date"))
    outputs = art.save_network(store, network)
    store.record("ingest", [obs_path], outputs)
    print(f"ingest: {network.n} stations x {network.T} days "
          f"-> {store.path(art.NETWORK_NPZ)}")


def cmd_fit_climate(cfg, store):
    network = art.load_network(store)
    coefs = climate.fit_all_stations(network)
    fields = climate.fit_coefficient_fields(network, coefs)
    outputs = art.save_climate(store, fields, coefs, network.T)
    store.record("fit-climate", [store.path(art.NETWORK_NPZ)], outputs)
    print(f"fit-climate: 12 coefficient fields over {network.n} stations")


def _load_model(cfg, store, network=None):
    network = network if network is not None else art.load_network(store)
    _, residuals, beta = art.load_climate(store, network)
    model, meta = art.load_cov_model(store, network, residuals)
    return network, residuals, beta, model, meta


def cmd_fit_cov(cfg, store):
    network = art.load_network(store)
    _, residuals, _ = art.load_climate(store, network)

    q05 = None
    if cfg["spatial_bandwidth_km"] == "auto":
        sel = weathercov.select_spatial_bandwidth(network)
        lam_s, q05 = sel.spatial_lambda, sel.distance_quantile
    else:
        lam_s = _get_float(cfg, "spatial_bandwidth_km")

    if cfg["temporal_bandwidth_days"] == "auto":
        candidates = [float(c) for c in cfg["temporal_cv_candidates"].split(",") if c.strip()]
        probe = weathercov.SeasonalCovModel.from_network(
            network, residuals, weathercov.KernelSpec(lam_s, 1.0))
        lam_t = weathercov.select_temporal_bandwidth(probe, candidates)
    else:
        lam_t = _get_float(cfg, "temporal_bandwidth_days")

    model = weathercov.SeasonalCovModel.from_network(
        network, residuals, weathercov.KernelSpec(lam_s, lam_t))
    outputs = art.save_cov_model(store, model, distance_quantile=q05)
    store.record("fit-cov", [store.path(art.NETWORK_NPZ),
                             store.path(art.RESIDUALS_NPZ)], outputs)
    q_text = f", intersite q05 = {q05:.1f} km" if q05 is not None else ""
    print(f"fit-cov: spatial bandwidth {lam_s:.2f} km, "
          f"temporal bandwidth {lam_t:.1f} days{q_text}")


def cmd_fit_nugget(cfg, store):
    network, residuals, _, model, _ = _load_model(cfg, store)
    fields = nugget.fit_nugget_fields(model, min_days=_get_int(cfg, "nugget_min_days"))
    outputs = art.save_nugget(store, fields)
    store.record("fit-nugget", [store.path(art.COV_BIN),
                                store.path(art.RESIDUALS_NPZ)], outputs)
    taus = ", ".join(f"{f.variable}: median {np.median(f.station_tau):.2f} C"
                     for f in fields)
    print(f"fit-nugget: {taus}")


def cmd_fit_baseline(cfg, store):
    network = art.load_network(store)
    _, residuals, _ = art.load_climate(store, network)
    params = baseline_mod.fit_baseline(residuals, network.xy, network.day_of_year,
                                       season=_season(cfg))
    outputs = art.save_baseline(store, params, _season(cfg))
    store.record("fit-baseline", [store.path(art.RESIDUALS_NPZ)], outputs)
    print(f"fit-baseline: rho = {params.rho:.3f}, "
          f"sills = ({params.sigma2[0] + params.tau2[0]:.2f}, "
          f"{params.sigma2[1] + params.tau2[1]:.2f})")


def _build_grid(cfg, network) -> np.ndarray:
    mode = cfg["grid_mode"]
    if mode == "stations":
        return network.xy
    if mode == "bbox":
        xy = network.xy
        margin = _get_float(cfg, "grid_margin_km")
        nx, ny = _get_int(cfg, "grid_nx"), _get_int(cfg, "grid_ny")
        gx = np.linspace(xy[:, 0].min() - margin, xy[:, 0].max() + margin, nx)
        gy = np.linspace(xy[:, 1].min() - margin, xy[:, 1].max() + margin, ny)
        mx, my = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([mx.ravel(), my.ravel()])
    raise ConfigError(f"grid_mode must be 'stations' or 'bbox', got {mode!r}")


def cmd_simulate(cfg, store, seed: int):
    network, residuals, beta, model, _ = _load_model(cfg, store)
    fields, _, _ = art.load_climate(store, network)
    nugget_fields = art.load_nugget(store, network)

    locations = _build_grid(cfg, network)
    max_points = _get_int(cfg, "max_grid_points")
    grid = simulator.prepare_grid(fields, nugget_fields, locations,
                                  max_grid_points=max_points)

    t0 = 1 if cfg["sim_t_start"] == "auto" else _get_int(cfg, "sim_t_start")
    t1 = network.T if cfg["sim_t_end"] == "auto" else _get_int(cfg, "sim_t_end")
    if cfg["apply_mask"] == "auto":
        mask = cfg["grid_mode"] == "stations" and t1 <= network.T
    else:
        mask = _get_bool(cfg, "apply_mask")

    output = simulator.simulate_trajectory(
        grid, model, network, seed=seed, t_range=(t0, t1), mask=mask,
        max_grid_points=max_points)
    input_hashes = {name: art.sha256_file(store.path(name))
                    for name in (art.CLIMATE_JSON, art.COV_BIN, art.NUGGET_JSON)}
    outputs = art.save_simulation(store, output, input_hashes,
                                  csv_max_cells=_get_int(cfg, "csv_max_cells"))
    store.record("simulate", [store.path(n) for n in
                              (art.CLIMATE_JSON, art.COV_BIN, art.NUGGET_JSON)],
                 outputs, seed=seed)
    print(f"simulate: {grid.G} locations x {output.T} days, seed {seed}, "
          f"masked={output.masked}")


def _write_csv(df, path, description):
    with open(path, "w") as f:
        f.write(f"# {description}\n")
        df.to_csv(f, index=False)
    return path


def _holdout_indices(network, count: int) -> list[int]:
    order = np.argsort(network.xy[:, 0])
    if count >= network.n:
        return list(range(network.n))
    picks = np.linspace(0, network.n - 1, count).round().astype(int)
    return [int(order[p]) for p in picks]


def cmd_diagnose(cfg, store):
    network, residuals, beta, model, _ = _load_model(cfg, store)
    fields, _, _ = art.load_climate(store, network)
    sim_output, sim_meta = art.load_simulation(store)
    season = _season(cfg)
    outputs = []

    sim_net = simulator.simulation_as_network(sim_output, network)
    sim_coefs = climate.fit_all_stations(sim_net)
    sim_w = climate.stack_residuals(sim_coefs, sim_net.T)
    obs_w = residuals[:, :, sim_output.t_start - 1:sim_output.t_end]

    ids = [s.id for s in network.stations]
    max_lag = _get_int(cfg, "acf_max_lag")
    acf_obs = diagnostics.acf_table(obs_w, ids, max_lag)
    acf_obs["source"] = "observed"
    acf_sim = diagnostics.acf_table(sim_w, ids, max_lag)
    acf_sim["source"] = "simulated"
    import pandas as pd

    outputs.append(_write_csv(
        pd.concat([acf_obs, acf_sim], ignore_index=True),
        store.path("fig2_acf.csv"),
        "fig2_acf: residual autocorrelation by station, variable, lag"))

    pair = diagnostics.pairwise_correlation_compare(obs_w, sim_w,
                                                    sim_net.day_of_year, season)
    pair["model"] = "nonparametric"
    frames = [pair]
    if _get_bool(cfg, "baseline_compare") and store.path(art.BASELINE_JSON).exists():
        params, fit_season = art.load_baseline(store)
        base_w = baseline_mod.simulate_residuals(
            params, network.xy, obs_w.shape[2], seed=sim_meta["seed"] + 1)
        base_w[np.isnan(obs_w)] = np.nan
        pair_b = diagnostics.pairwise_correlation_compare(
            obs_w, base_w, sim_net.day_of_year, season)
        pair_b["model"] = "stationary"
        frames.append(pair_b)
    outputs.append(_write_csv(
        pd.concat(frames, ignore_index=True), store.path("fig3_pairwise.csv"),
        "fig3_pairwise: empirical vs simulated pairwise residual correlations "
        f"(season days {season[0]}..{season[1]})"))

    map_days = [int(d) for d in cfg["map_days"].split(",") if d.strip()]
    grid = _build_grid({**cfg, "grid_mode": "bbox"}, network)
    anchor_ids = _holdout_indices(network, 2)
    for fig_name, d in zip(("fig4_spatial_corr_summer.csv",
                            "fig5_spatial_corr_winter.csv"), map_days):
        maps = []
        for a in anchor_ids:
            m = diagnostics.spatial_correlation_map(model, network.xy[a], grid, d)
            m.insert(0, "anchor", ids[a])
            m.insert(1, "d", d)
            maps.append(m)
        outputs.append(_write_csv(
            pd.concat(maps, ignore_index=True), store.path(fig_name),
            f"{fig_name.removesuffix('.csv')}: model spatial correlation from "
            f"anchor stations on calendar day {d}"))

    obs_z = network.z[:, :, sim_output.t_start - 1:sim_output.t_end]
    outputs.append(_write_csv(
        diagnostics.extrema_qq(obs_z, sim_output.z), store.path("fig6_extrema_qq.csv"),
        "fig6_extrema_qq: matched percentiles of daily domain extrema"))

    outputs.append(_write_csv(
        diagnostics.exceedance_log_frequency(obs_w, sim_w),
        store.path("fig7_exceedance.csv"),
        "fig7_exceedance: log day-counts of simultaneous local hot/cold events"))

    holdouts = _holdout_indices(network, _get_int(cfg, "cv_holdout_count"))
    sd_frames = []
    for k in holdouts:
        frame = diagnostics.cv_local_sd(model.drop_station(k), model, k)
        frame.insert(0, "station", ids[k])
        sd_frames.append(frame)
    outputs.append(_write_csv(
        pd.concat(sd_frames, ignore_index=True), store.path("fig8_cv_local_sd.csv"),
        "fig8_cv_local_sd: held-out vs local daily residual SD"))

    cv = diagnostics.coefficient_cv_table(network, fields)
    outputs.append(_write_csv(
        cv, store.path("table1_coeff_cv.csv"),
        "table1_coeff_cv: leave-one-out kriging of coefficient fields"))
    outputs.append(_write_csv(
        diagnostics.coverage_summary(cv), store.path("table1_coverage.csv"),
        "table1_coverage: 95% interval coverage per coefficient"))

    store.record("diagnose", [store.path(art.RESIDUALS_NPZ),
                              store.path(art.COV_BIN), store.path(art.SIM_JSON)],
                 outputs)
    print(f"diagnose: wrote {len(outputs)} tables to {store.root}")


def run_command(command: str, cfg: dict, store: art.ArtifactStore, seed=None):
    if command == "ingest":
        cmd_ingest(cfg, store)
    elif command == "fit-climate":
        cmd_fit_climate(cfg, store)
    elif command == "fit-cov":
        cmd_fit_cov(cfg, store)
    elif command == "fit-nugget":
        cmd_fit_nugget(cfg, store)
    elif command == "fit-baseline":
        cmd_fit_baseline(cfg, store)
    elif command == "simulate":
        cmd_simulate(cfg, store, seed)
    elif command == "diagnose":
        cmd_diagnose(cfg, store)
    elif command == "all":
        for step in ("ingest", "fit-climate", "fit-cov", "fit-nugget",
                     "fit-baseline", "simulate", "diagnose"):
            run_command(step, cfg, store, seed)
    else:
        raise ConfigError(f"unknown command {command!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempsim",
        description="Bivariate daily temperature fitting, simulation, and diagnostics.")
    parser.add_argument("-c", "--config", required=True, help="flat key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key")
    parser.add_argument("--strict", action="store_true",
                        help="refuse artifacts whose input hashes changed")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name in ("simulate", "all"):
            sp.add_argument("--seed", type=int, required=True,
                            help="simulation seed (required)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            cfg[key.strip()] = value.strip()
        store = art.ArtifactStore(_resolve(cfg, cfg["artifacts"]),
                                  _config_hash(cfg), strict=args.strict)
        run_command(args.command, cfg, store, seed=getattr(args, "seed", None))
        return 0
    except TempsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
