"""Synthetic data, profile CSV input/output and fitted-model files."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import EARTH_RADIUS_KM, MAX_PRESSURE_DB, GeoPoint, Observation, ProfileDataset
from .empirical import KernelBandwidths
from .errors import (ConfigError, IngestionError, InvalidArgumentError, ModelFileError,
                     NotPositiveDefiniteError)
from .fit import FitResult, plugin_surface
from .linalg import Assembler, cholesky_with_jitter
from .models import CovarianceModel, ParamVector, get_model
from .splines import SplineSpec

log = logging.getLogger(__name__)

PROFILE_HEADER = ["float_id", "lat", "lon", "pres", "temp", "psal"]
FIT_FORMAT = "argocov-fit"
FIT_FORMAT_VERSION = "1.0"
DEFAULT_SIZE_CAP = 4000
UNPARSABLE_LIMIT = 0.01

# 30 levels: dense in the mixed layer, coarser through the pycnocline and below
DEFAULT_DEPTHS = tuple(float(x) for x in np.concatenate([
    np.linspace(5.0, 95.0, 7), np.linspace(150.0, 950.0, 11), np.linspace(1050.0, 1950.0, 12)]))


def _rng_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Independent counter-based generators split from one seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    n_floats: int = 11
    depths: tuple[float, ...] = DEFAULT_DEPTHS
    lat_range: tuple[float, float] = (38.0, 42.0)
    lon_range: tuple[float, float] = (-177.0, -173.0)
    ref: tuple[float, float] = (40.0, -175.0)
    model: str = "B4"
    theta: dict = field(default_factory=dict)
    knots: tuple[float, ...] = (0.0, 100.0, 1000.0, 2000.0)
    degree: int = 3
    depth_jitter: float = 0.0
    seed: int = 0
    size_cap: int = DEFAULT_SIZE_CAP

    def __post_init__(self):
        if self.n_floats < 1:
            raise ConfigError("n_floats must be at least 1")
        d = np.asarray(self.depths, dtype=float)
        if d.size == 0 or np.any(np.diff(d) <= 0) or d[0] < 0 or d[-1] > MAX_PRESSURE_DB:
            raise ConfigError("depths must be strictly increasing within [0, 2000]")
        if not (self.lat_range[0] <= self.lat_range[1] and self.lon_range[0] <= self.lon_range[1]):
            raise ConfigError("empty region")
        if not (-90 <= self.lat_range[0] and self.lat_range[1] <= 90
                and -180 < self.lon_range[0] and self.lon_range[1] <= 180):
            raise ConfigError("region must lie within latitude [-90, 90] and longitude (-180, 180]")
        if self.depth_jitter < 0:
            raise ConfigError("depth_jitter must be non-negative")
        try:
            get_model(self.model)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def ref_point(self) -> GeoPoint:
        return GeoPoint(self.ref[0], self.ref[1], 0.0)

    def covariance_model(self) -> CovarianceModel:
        sp = SplineSpec(tuple(self.knots), self.degree)
        return CovarianceModel.of(self.model, splines=(sp, sp))

    def theta_true(self) -> ParamVector:
        model = self.covariance_model()
        try:
            return model.theta(**self.theta)
        except InvalidArgumentError as exc:
            raise ConfigError(f"theta for {self.model}: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("depths", "lat_range", "lon_range", "ref", "knots"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown simulation settings {sorted(unknown)}")
        d = dict(d)
        for k in ("depths", "lat_range", "lon_range", "ref", "knots"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        return cls(**d)


def float_layout(cfg: SyntheticConfig, rng: np.random.Generator, jitter_rng: np.random.Generator):
    """Uniform float positions, one profile per float on the depth grid."""
    lat = rng.uniform(*cfg.lat_range, cfg.n_floats)
    lon = rng.uniform(*cfg.lon_range, cfg.n_floats)
    depths = np.asarray(cfg.depths, dtype=float)
    ids, L, l, p = [], [], [], []
    for k in range(cfg.n_floats):
        d = depths
        if cfg.depth_jitter > 0:
            d = np.sort(np.clip(depths + jitter_rng.uniform(-cfg.depth_jitter, cfg.depth_jitter, depths.size),
                                0.0, MAX_PRESSURE_DB))
        ids += [f"{k + 1:04d}"] * d.size
        L.append(np.full(d.size, lat[k]))
        l.append(np.full(d.size, lon[k]))
        p.append(d)
    return ids, np.concatenate(L), np.concatenate(l), np.concatenate(p)


def simulate(cfg: SyntheticConfig) -> ProfileDataset:
    """Draw residual profiles from the configured model."""
    pos_rng, jit_rng, noise_rng = _rng_streams(cfg.seed, 3)
    ids, lat, lon, pres = float_layout(cfg, pos_rng, jit_rng)
    n = len(ids)
    if 2 * n > cfg.size_cap:
        raise ConfigError(f"{2 * n} simulated values exceed the cap of {cfg.size_cap}")
    model = cfg.covariance_model()
    if model.spec.family == "plugin":
        raise ConfigError("semi-parametric models cannot generate data")
    theta = cfg.theta_true()
    S = Assembler(model, (lat, lon, pres)).matrix(theta)
    if not np.any(S):
        return ProfileDataset.from_arrays(ids, lat, lon, pres, np.zeros(n), np.zeros(n))
    try:
        L, _ = cholesky_with_jitter(S, 0.0)
    except NotPositiveDefiniteError as exc:
        raise ConfigError(f"covariance at the true parameters is not positive definite: {exc}") from None
    z = L @ noise_rng.standard_normal(2 * n)
    return ProfileDataset.from_arrays(ids, lat, lon, pres, z[:n], z[n:])


# --------------------------------------------------------------------------
# profile CSV

@dataclass
class IngestReport:
    n_rows: int = 0
    dropped: list[tuple[int, str]] = field(default_factory=list)
    unparsable: list[tuple[int, str]] = field(default_factory=list)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(data: ProfileDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(data))


def dataset_bytes(data: ProfileDataset) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = PROFILE_HEADER + (["time"] if data.has_time else [])
    w.writerow(header)
    for o in data.observations:
        row = [o.float_id, _fmt(o.point.lat), _fmt(o.point.lon), _fmt(o.point.pres), _fmt(o.temp), _fmt(o.psal)]
        if data.has_time:
            row.append(_fmt(o.time))
        w.writerow(row)
    return buf.getvalue().encode("utf-8")


def data_hash(data: ProfileDataset) -> str:
    return hashlib.sha256(dataset_bytes(data)).hexdigest()


def ingest_csv(path) -> tuple[ProfileDataset, IngestReport]:
    """Read a profile CSV; out-of-range rows are dropped and reported by line number."""
    rep = IngestReport()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in PROFILE_HEADER if c not in cols]
        if missing:
            raise IngestionError(f"{path}: missing columns {missing}")
        has_time = "time" in cols
        obs = []
        for row in reader:
            rep.n_rows += 1
            line = reader.line_num
            try:
                vals = {k: float(row[k]) for k in PROFILE_HEADER[1:]}
                t = float(row["time"]) if has_time else None
                fid = row["float_id"].strip()
                if not fid:
                    raise ValueError("empty float_id")
            except (TypeError, ValueError) as exc:
                rep.unparsable.append((line, str(exc)))
                continue
            if not all(math.isfinite(v) for v in vals.values()) or (t is not None and not math.isfinite(t)):
                rep.dropped.append((line, "non-finite value"))
                continue
            lon = vals["lon"]
            if lon == -180.0:
                lon = 180.0
            if not (-90 <= vals["lat"] <= 90 and -180 < lon <= 180 and 0 <= vals["pres"] <= MAX_PRESSURE_DB):
                rep.dropped.append((line, "coordinate out of range"))
                continue
            obs.append(Observation(fid, GeoPoint(vals["lat"], lon, vals["pres"]), vals["temp"], vals["psal"], t))
    if rep.n_rows and len(rep.unparsable) > UNPARSABLE_LIMIT * rep.n_rows:
        first = rep.unparsable[0]
        raise IngestionError(f"{path}: {len(rep.unparsable)} of {rep.n_rows} rows unparsable "
                             f"(first at line {first[0]}: {first[1]})")
    if rep.n_rows == 0:
        log.warning("%s: no data rows", path)
    for line, why in rep.dropped:
        log.info("%s line %d dropped: %s", path, line, why)
    try:
        return ProfileDataset(obs), rep
    except InvalidArgumentError as exc:
        raise IngestionError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# fitted-model files

def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def fit_payload(fit: FitResult, data: ProfileDataset | None = None, seed: int | None = None) -> dict:
    m = fit.model
    prov = dict(fit.metadata.get("provenance", {}))
    if data is not None:
        prov["data_hash"] = data_hash(data)
    if seed is not None:
        prov["seed"] = seed
    prov["software_version"] = __version__
    meta = {k: v for k, v in fit.metadata.items() if k != "provenance"}
    return {
        "format": FIT_FORMAT,
        "version": FIT_FORMAT_VERSION,
        "model": m.id,
        "nu_matern": m.nu_matern,
        "nu_diffop": m.nu_diffop,
        "dim_d": m.dim_d,
        "nugget": list(m.nugget),
        "splines": [{"knots": list(s.knots), "degree": s.degree} for s in m.splines],
        "bandwidths": (dataclasses.asdict(m.plugin.bandwidths) if m.plugin is not None else None),
        "lattice": bool(m.plugin is not None and m.plugin.lattice is not None),
        "theta": {k: v for k, v in zip(fit.theta_hat.names, fit.theta_hat.values)},
        "loglik": fit.loglik,
        "aic": fit.aic,
        "wls_objective": fit.wls_objective,
        "jitter_used": fit.jitter_used,
        "knots_used": [list(k) for k in fit.knots_used],
        "n_evals": fit.n_evals,
        "trace": list(fit.trace),
        "metadata": meta,
        "provenance": prov,
    }


def save_fit(path, fit: FitResult, data: ProfileDataset | None = None, seed: int | None = None) -> None:
    payload = fit_payload(fit, data, seed)
    doc = {"sha256": hashlib.sha256(_canonical(payload)).hexdigest(), "payload": payload}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_fit(path, data: ProfileDataset | None = None) -> FitResult:
    """Read a fitted-model file; semi-parametric models need their training ``data``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: corrupt file at line {exc.lineno}, column {exc.colno} "
                             f"(offset {exc.pos}): {exc.msg}") from None
    if not isinstance(doc, dict) or "payload" not in doc or "sha256" not in doc:
        raise ModelFileError(f"{path}: not a fitted-model file")
    payload = doc["payload"]
    if hashlib.sha256(_canonical(payload)).hexdigest() != doc["sha256"]:
        raise ModelFileError(f"{path}: checksum mismatch")
    if payload.get("format") != FIT_FORMAT:
        raise ModelFileError(f"{path}: unknown format {payload.get('format')!r}")
    major = str(payload.get("version", "")).split(".")[0]
    if major != FIT_FORMAT_VERSION.split(".")[0]:
        raise ModelFileError(f"{path}: incompatible file version {payload.get('version')}")
    try:
        splines = tuple(SplineSpec(tuple(s["knots"]), int(s["degree"])) for s in payload["splines"])
        plugin = None
        if get_model(payload["model"]).family == "plugin":
            if data is None:
                raise ModelFileError(f"{path}: {payload['model']} needs its training data to rebuild "
                                     "the smoothed surfaces")
            plugin = plugin_surface(data, KernelBandwidths(**payload["bandwidths"]), payload["lattice"])
        model = CovarianceModel.of(payload["model"], splines=splines, nu_matern=payload["nu_matern"],
                                   nu_diffop=payload["nu_diffop"], dim_d=payload["dim_d"],
                                   nugget=tuple(payload["nugget"]), plugin=plugin)
        theta = model.theta(**payload["theta"])
        meta = dict(payload["metadata"])
        meta["provenance"] = payload["provenance"]
        return FitResult(model, theta, payload["loglik"], payload["aic"], payload["wls_objective"],
                         list(payload["trace"]), tuple(tuple(k) for k in payload["knots_used"]),
                         payload["jitter_used"], payload["n_evals"], meta)
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise ModelFileError(f"{path}: malformed content ({exc})") from None


def load_json_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def default_b4_theta(knots: Sequence[float] = (0.0, 100.0, 1000.0, 2000.0), degree: int = 3,
                     beta12: float = 0.8, a_h: float = 1 / 300.0, a_v: float = 1 / 150.0) -> dict:
    """A B4 truth whose colocated correlation is weak near the surface and at
    depth and peaks in the pycnocline.

    Both depth coefficients share a bump around 350 dbar while the horizontal
    operators are nearly orthogonal. Amplitudes are set in dimensionless units
    (coefficient times ``R * a_h`` or ``a_v``) and converted here.
    """
    sp = SplineSpec(tuple(knots), degree)
    grid = np.linspace(knots[0], knots[-1], sp.M)
    bump = np.exp(-((grid - 350.0) / 400.0) ** 2)
    hu = EARTH_RADIUS_KM * a_h
    th = dict(a_h=a_h, a_v=a_v, a_T=0.5 / hu, b_T=0.1 / hu, a_S=0.1 / hu, b_S=0.5 / hu, beta12=beta12)
    for m in range(sp.M):
        th[f"c_T_{m}"] = float(0.2 + 2.0 * bump[m]) / a_v
        th[f"c_S_{m}"] = float(0.2 + 1.6 * bump[m]) / a_v
    return th
