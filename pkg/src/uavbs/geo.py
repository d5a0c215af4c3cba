"""Geodesic helpers: spherical great-circle distance and a local planar frame."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
# metres per degree of latitude used by the local equirectangular frame
M_PER_DEG = 111_320.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres between two points on a spherical Earth."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine; arguments broadcast like numpy arrays (degrees)."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def as_array(points: Iterable[GeoPoint]) -> np.ndarray:
    """Stack points into an (k, 2) array of (lat, lon)."""
    arr = np.array([(p.lat, p.lon) for p in points], dtype=float)
    return arr.reshape(-1, 2)


class LocalFrame:
    """Equirectangular projection about a reference point, in metres.

    ``x`` runs east and ``y`` north. Adequate at city scale, where the
    distortion against the sphere is far below GPS noise.
    """

    def __init__(self, lat0: float, lon0: float):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self.kx = M_PER_DEG * math.cos(math.radians(self.lat0))
        self.ky = M_PER_DEG

    @classmethod
    def about(cls, latlon: np.ndarray) -> "LocalFrame":
        latlon = np.asarray(latlon, dtype=float).reshape(-1, 2)
        return cls(latlon[:, 0].mean(), latlon[:, 1].mean())

    def forward(self, latlon: np.ndarray) -> np.ndarray:
        latlon = np.asarray(latlon, dtype=float)
        x = (latlon[..., 1] - self.lon0) * self.kx
        y = (latlon[..., 0] - self.lat0) * self.ky
        return np.stack([x, y], axis=-1)

    def inverse(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        lat = xy[..., 1] / self.ky + self.lat0
        lon = xy[..., 0] / self.kx + self.lon0
        return np.stack([lat, lon], axis=-1)


def to_points(latlon: Sequence[Sequence[float]]) -> list[GeoPoint]:
    return [GeoPoint(float(la), float(lo)) for la, lo in latlon]
