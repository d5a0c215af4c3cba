"""Per-cluster UAV-BS positioning by grid-search coverage maximisation.

Each cluster gets one UAV-BS. Candidates lie on a square grid (pitch
``grid_step`` metres) spanning the members' bounding box grown by the
coverage radius. The winner covers the most members; ties go to the
smaller summed distance to the covered members, then to the smaller
(lat, lon).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

from .clustering import ClusterResult
from .errors import EmptyCluster
from .geo import M_PER_DEG, GeoPoint, as_array, haversine_array

_CHUNK = 4096


@dataclass(frozen=True)
class PlacementConfig:
    coverage_radius: float = 500.0
    grid_step: float = 25.0
    capacity: Optional[int] = None

    def __post_init__(self) -> None:
        if self.coverage_radius <= 0 or self.grid_step <= 0:
            raise ValueError("coverage_radius and grid_step must be positive")
        if self.grid_step > self.coverage_radius:
            raise ValueError("grid_step must not exceed coverage_radius")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be >= 1 when given")


@dataclass(frozen=True)
class UavPosition:
    pos: GeoPoint
    covered: int
    cluster_id: int

    def to_json(self) -> dict:
        return {"cluster_id": self.cluster_id, "lat": self.pos.lat, "lon": self.pos.lon, "covered": self.covered}


def candidate_grid(members: np.ndarray, cfg: PlacementConfig) -> np.ndarray:
    """Grid of (lat, lon) candidates over the padded bounding box of ``members``."""
    lat0 = float(members[:, 0].mean())
    dlat = cfg.grid_step / M_PER_DEG
    dlon = cfg.grid_step / (M_PER_DEG * math.cos(math.radians(lat0)))
    steps = cfg.coverage_radius / cfg.grid_step
    lo = members.min(axis=0)
    hi = members.max(axis=0)
    lat_start = lo[0] - steps * dlat
    lon_start = lo[1] - steps * dlon
    n_lat = int(math.floor((hi[0] - lo[0]) / dlat + 2 * steps + 1e-9)) + 1
    n_lon = int(math.floor((hi[1] - lo[1]) / dlon + 2 * steps + 1e-9)) + 1
    lats = lat_start + dlat * np.arange(n_lat)
    lons = lon_start + dlon * np.arange(n_lon)
    glat, glon = np.meshgrid(lats, lons, indexing="ij")
    return np.column_stack([glat.ravel(), glon.ravel()])


def coverage_scores(cands: np.ndarray, members: np.ndarray, cfg: PlacementConfig) -> tuple[np.ndarray, np.ndarray]:
    """Covered count and summed distance to covered members for every candidate.

    With a capacity the closest ``capacity`` in-range members are the ones served.
    """
    covered = np.empty(len(cands), dtype=int)
    dist_sum = np.empty(len(cands))
    for s in range(0, len(cands), _CHUNK):
        c = cands[s : s + _CHUNK]
        d = haversine_array(c[:, None, 0], c[:, None, 1], members[None, :, 0], members[None, :, 1])
        inside = d <= cfg.coverage_radius
        if cfg.capacity is None or cfg.capacity >= members.shape[0]:
            covered[s : s + len(c)] = inside.sum(axis=1)
            dist_sum[s : s + len(c)] = np.where(inside, d, 0.0).sum(axis=1)
        else:
            dd = np.sort(np.where(inside, d, np.inf), axis=1)[:, : cfg.capacity]
            ok = np.isfinite(dd)
            covered[s : s + len(c)] = ok.sum(axis=1)
            dist_sum[s : s + len(c)] = np.where(ok, dd, 0.0).sum(axis=1)
    return covered, dist_sum


def place_cluster(members: Sequence[GeoPoint], cfg: PlacementConfig, cluster_id: int = 0) -> UavPosition:
    """Best grid position for one cluster."""
    if len(members) == 0:
        raise EmptyCluster(f"cluster {cluster_id} has no members")
    ll = as_array(members)
    cands = candidate_grid(ll, cfg)
    covered, dist_sum = coverage_scores(cands, ll, cfg)
    order = np.lexsort((cands[:, 1], cands[:, 0], dist_sum, -covered))
    best = order[0]
    return UavPosition(GeoPoint(float(cands[best, 0]), float(cands[best, 1])), int(covered[best]), cluster_id)


def place_all(clusters: ClusterResult, points: Sequence[GeoPoint], cfg: PlacementConfig) -> list[UavPosition]:
    """One position per cluster, in cluster-index order."""
    if len(clusters.assignment) != len(points):
        raise ValueError(f"{len(clusters.assignment)} labels for {len(points)} points")
    out = []
    for k in range(clusters.n):
        idx = clusters.members(k)
        out.append(place_cluster([points[i] for i in idx], cfg, k))
    return out


def write_positions_csv(positions: Sequence[UavPosition], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["cluster_id", "lat", "lon", "covered"])
    for p in positions:
        w.writerow([p.cluster_id, repr(p.pos.lat), repr(p.pos.lon), p.covered])


def read_positions_csv(src: TextIO) -> list[GeoPoint]:
    """Read any CSV with ``lat`` and ``lon`` columns, in row order."""
    return [GeoPoint(float(r["lat"]), float(r["lon"])) for r in csv.DictReader(src)]
