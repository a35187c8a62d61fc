"""Artifact persistence: JSON, npz, binary column files, and manifests.

Every pipeline command records a manifest naming its inputs and outputs
with content hashes, the config hash, and the package version, so a run
can be audited and stale chains refused under --strict.  Nothing written
here embeds timestamps: reruns with identical inputs are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__, climate
from .errors import ArtifactError
from .geodata import Station, StationNetwork
from .gpcore import GpHyperParams
from .nugget import NuggetField
from .baseline import BivariateMaternParams
from .weathercov import KernelSpec, SeasonalCovModel

NETWORK_NPZ = "network.npz"
NETWORK_JSON = "network.json"
CLIMATE_JSON = "climate_fields.json"
RESIDUALS_NPZ = "climate_residuals.npz"
COV_BIN = "covmodel.bin"
NUGGET_JSON = "nugget.json"
BASELINE_JSON = "baseline.json"
SIM_JSON = "simulation.json"
SIM_TMIN = "sim_tmin.bin"
SIM_TMAX = "sim_tmax.bin"
SIM_CSV = "simulation.csv"

PRODUCERS = {
    NETWORK_NPZ: "ingest", NETWORK_JSON: "ingest",
    CLIMATE_JSON: "fit-climate", RESIDUALS_NPZ: "fit-climate",
    COV_BIN: "fit-cov",
    NUGGET_JSON: "fit-nugget",
    BASELINE_JSON: "fit-baseline",
    SIM_JSON: "simulate", SIM_TMIN: "simulate", SIM_TMAX: "simulate",
}

_MAGIC = b"TSCOV001"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


# -- binary column container ---------------------------------------------------

def write_binary_columns(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Binary column file: magic, length-prefixed JSON header, raw C-order payload."""
    meta = dict(header)
    meta["format_version"] = 1
    meta["arrays"] = [
        {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        for name, arr in arrays.items()
    ]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for arr in arrays.values():
            f.write(np.ascontiguousarray(arr).tobytes())


def read_binary_columns(path):
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ArtifactError(f"{path}: not a binary column file (bad magic)")
        (length,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(length).decode("utf-8"))
        arrays = {}
        for spec in meta["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.fromfile(f, dtype=np.dtype(spec["dtype"]), count=count)
            if data.size != count:
                raise ArtifactError(f"{path}: truncated payload for {spec['name']}")
            arrays[spec["name"]] = data.reshape(shape)
    return meta, arrays


# -- manifests -----------------------------------------------------------------

class ArtifactStore:
    """Directory of pipeline artifacts with manifest bookkeeping."""

    def __init__(self, root, config_hash: str, strict: bool = False):
        self.root = Path(root)
        self.config_hash = config_hash
        self.strict = strict
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            producer = PRODUCERS.get(name)
            hint = f"; run `tempsim {producer}` first" if producer else ""
            raise ArtifactError(f"missing artifact {name}{hint}")
        if self.strict:
            self._check_chain(name)
        return p

    def record(self, command: str, inputs, outputs, seed=None) -> None:
        manifest = {
            "command": command,
            "config_hash": self.config_hash,
            "version": __version__,
            "inputs": {str(Path(p).name if Path(p).parent == self.root else p):
                       sha256_file(p) for p in inputs},
            "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        }
        if seed is not None:
            manifest["seed"] = int(seed)
        write_json(self.root / f"manifest_{command}.json", manifest)

    def _find_producer(self, name: str) -> dict | None:
        for mpath in sorted(self.root.glob("manifest_*.json")):
            manifest = read_json(mpath)
            if name in manifest.get("outputs", {}):
                return manifest
        return None

    def _check_chain(self, name: str) -> None:
        manifest = self._find_producer(name)
        if manifest is None:
            raise ArtifactError(f"strict mode: no manifest records producing {name}")
        recorded = manifest["outputs"][name]
        current = sha256_file(self.path(name))
        if current != recorded:
            raise ArtifactError(
                f"strict mode: {name} hash {current[:12]} does not match the "
                f"{manifest['command']} manifest ({recorded[:12]})")
        for in_name, in_hash in manifest.get("inputs", {}).items():
            p = self.root / in_name if (self.root / in_name).exists() else Path(in_name)
            if not p.exists():
                raise ArtifactError(f"strict mode: input {in_name} of {name} is gone")
            if sha256_file(p) != in_hash:
                raise ArtifactError(
                    f"strict mode: input {in_name} changed since {name} was "
                    f"produced (stale chain)")


# -- network -------------------------------------------------------------------

def save_network(store: ArtifactStore, network: StationNetwork) -> list[Path]:
    npz = store.path(NETWORK_NPZ)
    meta = network.meta()
    np.savez(
        npz,
        z=network.z,
        day_of_year=network.day_of_year,
        lon=np.array([s.lon for s in network.stations]),
        lat=np.array([s.lat for s in network.stations]),
        elev=np.array([s.elev for s in network.stations]),
        xy=network.xy,
        ids=np.array([s.id for s in network.stations]),
    )
    sidecar = store.path(NETWORK_JSON)
    write_json(sidecar, meta)
    return [npz, sidecar]


def load_network(store: ArtifactStore) -> StationNetwork:
    npz = store.require(NETWORK_NPZ)
    meta = read_json(store.require(NETWORK_JSON))
    data = np.load(npz, allow_pickle=False)
    stations = [
        Station(id=str(data["ids"][k]), lon=float(data["lon"][k]),
                lat=float(data["lat"][k]), elev=float(data["elev"][k]),
                xy=(float(data["xy"][k, 0]), float(data["xy"][k, 1])))
        for k in range(data["ids"].shape[0])
    ]
    return StationNetwork(
        stations=stations, z=data["z"], day_of_year=data["day_of_year"],
        centroid=(meta["centroid_lon"], meta["centroid_lat"]),
        window=(meta["window_start"], meta["window_end"]))


# -- climate -------------------------------------------------------------------

def save_climate(store: ArtifactStore, fields, coefs, T: int) -> list[Path]:
    fj = store.path(CLIMATE_JSON)
    write_json(fj, climate.fields_to_dict(fields))
    rz = store.path(RESIDUALS_NPZ)
    residuals = climate.stack_residuals(coefs, T)
    beta = np.stack([c.beta for c in coefs], axis=1)  # (2, n, 6)
    np.savez(rz, residuals=residuals, beta=beta)
    return [fj, rz]


def load_climate(store: ArtifactStore, network: StationNetwork):
    payload = read_json(store.require(CLIMATE_JSON))
    fields = climate.fields_from_dict(payload, network.xy)
    data = np.load(store.require(RESIDUALS_NPZ), allow_pickle=False)
    return fields, data["residuals"], data["beta"]


# -- seasonal covariance model ---------------------------------------------------

def save_cov_model(store: ArtifactStore, model: SeasonalCovModel,
                   distance_quantile: float | None = None) -> list[Path]:
    """Bandwidths plus the per-day station-level cache, as a binary column file."""
    header = {
        "kind": "seasonal_covariance_model",
        "spatial_lambda_km": model.kernel.spatial_lambda,
        "temporal_lambda_days": model.kernel.temporal_lambda,
        "distance_quantile_km": distance_quantile,
        "n_stations": model.n,
        "n_days": model.T,
        "station_ids": model.station_ids,
        "layout": "station_day_cache[d, 2k+v, 2l+w] = C_vw(s_k, s_l, d+1); "
                  "v,w: 0=tmin, 1=tmax",
    }
    arrays = {
        "station_day_cache": model.station_day_cache(),
        "retained": model.retained.astype(np.uint8),
    }
    path = store.path(COV_BIN)
    write_binary_columns(path, header, arrays)
    return [path]


def load_cov_model(store: ArtifactStore, network: StationNetwork,
                   residuals: np.ndarray) -> tuple[SeasonalCovModel, dict]:
    meta, arrays = read_binary_columns(store.require(COV_BIN))
    if meta["n_stations"] != network.n or meta["n_days"] != network.T:
        raise ArtifactError(
            f"covariance artifact was fitted on {meta['n_stations']} stations x "
            f"{meta['n_days']} days; the network has {network.n} x {network.T}")
    kernel = KernelSpec(meta["spatial_lambda_km"], meta["temporal_lambda_days"])
    model = SeasonalCovModel.from_network(network, residuals, kernel)
    if not np.array_equal(model.retained.astype(np.uint8), arrays["retained"]):
        raise ArtifactError("covariance artifact does not match the residuals")
    model._station_cache = arrays["station_day_cache"]
    return model, meta


# -- nugget and baseline ---------------------------------------------------------

def save_nugget(store: ArtifactStore, fields: list[NuggetField]) -> list[Path]:
    path = store.path(NUGGET_JSON)
    write_json(path, {"fields": [f.to_dict() for f in fields]})
    return [path]


def load_nugget(store: ArtifactStore, network: StationNetwork) -> list[NuggetField]:
    payload = read_json(store.require(NUGGET_JSON))
    return [NuggetField.from_dict(d, network.xy) for d in payload["fields"]]


def save_baseline(store: ArtifactStore, params: BivariateMaternParams,
                  season: tuple[int, int]) -> list[Path]:
    path = store.path(BASELINE_JSON)
    write_json(path, {"params": params.to_dict(),
                      "season": [int(season[0]), int(season[1])]})
    return [path]


def load_baseline(store: ArtifactStore):
    payload = read_json(store.require(BASELINE_JSON))
    return BivariateMaternParams.from_dict(payload["params"]), tuple(payload["season"])


# -- simulation -------------------------------------------------------------------

def save_simulation(store: ArtifactStore, output, input_hashes: dict,
                    csv_max_cells: int = 200_000) -> list[Path]:
    """Raw float32 files (location-major, day-minor) plus a JSON manifest.

    Masked entries are stored as NaN.  A long-format CSV is emitted when the
    output is small enough.
    """
    paths = []
    for name, v in ((SIM_TMIN, 0), (SIM_TMAX, 1)):
        p = store.path(name)
        np.ascontiguousarray(output.z[v], dtype=np.float32).tofile(p)
        paths.append(p)
    manifest = {
        "kind": "simulation",
        "layout": "float32 C-order, shape (n_locations, n_days), NaN = masked",
        "n_locations": int(output.locations.shape[0]),
        "n_days": int(output.T),
        "t_start": output.t_start,
        "t_end": output.t_end,
        "seed": output.seed,
        "masked": output.masked,
        "locations_km": [[float(a), float(b)] for a, b in output.locations],
        "inputs": input_hashes,
    }
    mpath = store.path(SIM_JSON)
    write_json(mpath, manifest)
    paths.append(mpath)
    if output.z[0].size <= csv_max_cells:
        import pandas as pd

        t_values = np.arange(output.t_start, output.t_end + 1)
        frame = pd.DataFrame({
            "location": np.repeat(np.arange(output.locations.shape[0]), output.T),
            "x_km": np.repeat(output.locations[:, 0], output.T),
            "y_km": np.repeat(output.locations[:, 1], output.T),
            "t": np.tile(t_values, output.locations.shape[0]),
            "tmin": output.z[0].reshape(-1),
            "tmax": output.z[1].reshape(-1),
        })
        cpath = store.path(SIM_CSV)
        frame.to_csv(cpath, index=False, float_format="%.4f")
        paths.append(cpath)
    return paths


def load_simulation(store: ArtifactStore):
    from .simulator import SimulationOutput

    meta = read_json(store.require(SIM_JSON))
    G, T = meta["n_locations"], meta["n_days"]
    z = np.empty((2, G, T))
    for name, v in ((SIM_TMIN, 0), (SIM_TMAX, 1)):
        raw = np.fromfile(store.require(name), dtype=np.float32)
        if raw.size != G * T:
            raise ArtifactError(f"{name}: expected {G * T} values, found {raw.size}")
        z[v] = raw.reshape(G, T)
    return SimulationOutput(
        locations=np.asarray(meta["locations_km"], dtype=float),
        t_start=meta["t_start"], t_end=meta["t_end"], z=z,
        seed=meta["seed"], masked=meta["masked"]), meta
