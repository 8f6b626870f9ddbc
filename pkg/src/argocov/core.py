"""Geometry on the sphere and the profile dataset model.

Locations are (latitude, longitude, pressure) triples in degrees and dbar.
Pressure is used as depth throughout (1 dbar ~ 1 m). Angles are converted to
radians internally; every public interface takes and returns degrees.

Longitude wrap-around needs no special handling: the chordal distance only
sees ``sin((l1 - l2) / 2) ** 2`` which is periodic in 360 degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError

EARTH_RADIUS_KM = 6371.0
MAX_PRESSURE_DB = 2000.0

# cylinder used for local empirical moments: 900 km radius, 10 m tall
DEFAULT_CYLINDER_RADIUS_KM = 900.0
DEFAULT_CYLINDER_HALF_HEIGHT_DB = 5.0

VARIABLES = ("temp", "psal")


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    pres: float

    def __post_init__(self):
        for name in ("lat", "lon", "pres"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise InvalidArgumentError(f"GeoPoint.{name} must be a finite number, got {v!r}")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidArgumentError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise InvalidArgumentError(f"longitude {self.lon} outside (-180, 180]")
        if not 0.0 <= self.pres <= MAX_PRESSURE_DB:
            raise InvalidArgumentError(f"pressure {self.pres} outside [0, {MAX_PRESSURE_DB}]")


@dataclass(frozen=True)
class Observation:
    float_id: str
    point: GeoPoint
    temp: float
    psal: float
    time: float | None = None  # yearday, only used by the local trend harmonics

    def __post_init__(self):
        if not (math.isfinite(self.temp) and math.isfinite(self.psal)):
            raise InvalidArgumentError(f"non-finite residual in float {self.float_id!r}")

    def value(self, var: int) -> float:
        return self.temp if var == 0 else self.psal


def _sort_key(o: Observation):
    return (o.float_id, o.point.pres, o.point.lat, o.point.lon)


@dataclass(frozen=True)
class ProfileDataset:
    """Float-indexed bivariate residual observations.

    Observations are held sorted by ``(float_id, pres)``; ``float_index`` maps
    each float id to its ``(start, stop)`` slice.
    """

    observations: tuple[Observation, ...]
    float_index: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        obs = tuple(sorted(self.observations, key=_sort_key))
        seen = set()
        index: dict[str, tuple[int, int]] = {}
        for k, o in enumerate(obs):
            key = (o.float_id, o.point)
            if key in seen:
                raise InvalidArgumentError(f"duplicate observation {o.float_id!r} at {o.point}")
            seen.add(key)
            start, _ = index.get(o.float_id, (k, k))
            index[o.float_id] = (start, k + 1)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "float_index", index)

    @classmethod
    def from_arrays(cls, float_id, lat, lon, pres, temp, psal, time=None) -> "ProfileDataset":
        n = len(lat)
        tt = [None] * n if time is None else [float(t) for t in time]
        return cls(tuple(
            Observation(str(float_id[k]), GeoPoint(float(lat[k]), float(lon[k]), float(pres[k])),
                        float(temp[k]), float(psal[k]), tt[k])
            for k in range(n)
        ))

    def __len__(self):
        return len(self.observations)

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    @property
    def float_ids(self) -> list[str]:
        return sorted(self.float_index)

    @cached_property
    def lat(self) -> np.ndarray:
        return np.array([o.point.lat for o in self.observations], dtype=float)

    @cached_property
    def lon(self) -> np.ndarray:
        return np.array([o.point.lon for o in self.observations], dtype=float)

    @cached_property
    def pres(self) -> np.ndarray:
        return np.array([o.point.pres for o in self.observations], dtype=float)

    @cached_property
    def temp(self) -> np.ndarray:
        return np.array([o.temp for o in self.observations], dtype=float)

    @cached_property
    def psal(self) -> np.ndarray:
        return np.array([o.psal for o in self.observations], dtype=float)

    @cached_property
    def points(self) -> list[GeoPoint]:
        return [o.point for o in self.observations]

    @property
    def has_time(self) -> bool:
        return bool(self.observations) and all(o.time is not None for o in self.observations)

    def values(self, var: int) -> np.ndarray:
        return self.temp if var == 0 else self.psal

    def z(self) -> np.ndarray:
        """Observation vector in variable-major order: all T, then all S."""
        return np.concatenate([self.temp, self.psal])

    def float_slice(self, float_id: str) -> "ProfileDataset":
        a, b = self.float_index[float_id]
        return ProfileDataset(self.observations[a:b])

    def without_float(self, float_id: str) -> "ProfileDataset":
        a, b = self.float_index[float_id]
        return ProfileDataset(self.observations[:a] + self.observations[b:])

    def with_values(self, temp: Sequence[float], psal: Sequence[float]) -> "ProfileDataset":
        return ProfileDataset(tuple(
            Observation(o.float_id, o.point, float(t), float(s), o.time)
            for o, t, s in zip(self.observations, temp, psal)
        ))

    def shallowest_point(self, float_id: str) -> GeoPoint:
        a, _ = self.float_index[float_id]
        return self.observations[a].point


def _check_radius(radius_km):
    if not (math.isfinite(radius_km) and radius_km > 0):
        raise InvalidArgumentError(f"radius must be positive, got {radius_km}")


def chordal_distance(p1: GeoPoint, p2: GeoPoint, radius_km: float = EARTH_RADIUS_KM) -> float:
    """Straight-line distance in km through the sphere between the surface projections."""
    _check_radius(radius_km)
    return float(chordal_distance_arrays(p1.lat, p1.lon, p2.lat, p2.lon, radius_km))


def chordal_distance_arrays(lat1, lon1, lat2, lon2, radius_km: float = EARTH_RADIUS_KM):
    """Vectorized chordal distance; arguments broadcast, degrees in, km out."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    if not all(np.all(np.isfinite(x)) for x in (lat1, lon1, lat2, lon2)):
        raise InvalidArgumentError("non-finite coordinate")
    g = np.sin((lat1 - lat2) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon1 - lon2) / 2) ** 2
    return 2.0 * radius_km * np.sqrt(np.clip(g, 0.0, 1.0))


def squared_distance_h(p1: GeoPoint, p2: GeoPoint, a_h: float, a_v: float,
                       radius_km: float = EARTH_RADIUS_KM) -> float:
    """Scaled squared separation ``a_h^2 ch^2 + a_v^2 dp^2`` (dimensionless).

    The Matérn functions are evaluated at the square root of this quantity.
    """
    if not (a_h > 0 and a_v > 0):
        raise InvalidArgumentError(f"scale parameters must be positive, got a_h={a_h}, a_v={a_v}")
    ch = chordal_distance(p1, p2, radius_km)
    return a_h**2 * ch**2 + a_v**2 * (p1.pres - p2.pres) ** 2


def cylinder_neighborhood(center: GeoPoint, data: ProfileDataset,
                          radius_km: float = DEFAULT_CYLINDER_RADIUS_KM,
                          half_height_db: float = DEFAULT_CYLINDER_HALF_HEIGHT_DB) -> list[Observation]:
    """Observations inside a vertical cylinder around ``center``.

    Boundary points (distance exactly ``radius_km`` or ``|dp|`` exactly
    ``half_height_db``) are included. Output is ordered by float id, then pressure.
    """
    _check_radius(radius_km)
    if not half_height_db >= 0:
        raise InvalidArgumentError(f"half height must be non-negative, got {half_height_db}")
    if len(data) == 0:
        return []
    d = chordal_distance_arrays(center.lat, center.lon, data.lat, data.lon)
    mask = (d <= radius_km) & (np.abs(data.pres - center.pres) <= half_height_db)
    return [data.observations[k] for k in np.flatnonzero(mask)]


def as_coordinate_arrays(points):
    """``(lat, lon, pres)`` arrays from either GeoPoints or an existing array triple."""
    if isinstance(points, tuple) and len(points) == 3 and not any(isinstance(p, GeoPoint) for p in points):
        return tuple(np.asarray(a, dtype=float) for a in points)
    return points_to_arrays(points)


def points_to_arrays(points: Iterable[GeoPoint]):
    pts = list(points)
    return (np.array([p.lat for p in pts], dtype=float),
            np.array([p.lon for p in pts], dtype=float),
            np.array([p.pres for p in pts], dtype=float))
