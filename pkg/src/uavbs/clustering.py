"""K-means grouping of users into one cluster per UAV-BS."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .errors import TooFewPoints
from .geo import GeoPoint, LocalFrame, as_array


@dataclass
class ClusterResult:
    """Cluster labels, centroids and inertia (m^2, in the local planar frame).

    ``empty`` flags clusters left without members; ``history`` records the
    inertia after every Lloyd iteration.
    """

    assignment: np.ndarray
    centroids: list[GeoPoint]
    inertia: float
    empty: np.ndarray
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return len(self.centroids)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


def _sq_dists(xy: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp(xy: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((n, 2))
    centers[0] = xy[rng.integers(len(xy))]
    d2 = np.sum((xy - centers[0]) ** 2, axis=1)
    for k in range(1, n):
        total = d2.sum()
        if total <= 0:
            # every point already coincides with a centre
            idx = int(rng.integers(len(xy)))
        else:
            idx = int(rng.choice(len(xy), p=d2 / total))
        centers[k] = xy[idx]
        d2 = np.minimum(d2, np.sum((xy - centers[k]) ** 2, axis=1))
    return centers


def _lloyd(xy, centers, max_iter, tol):
    history = []
    prev = np.inf
    for _ in range(max_iter):
        d2 = _sq_dists(xy, centers)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(xy)), labels].sum())
        history.append(inertia)
        if prev - inertia < tol:
            break
        prev = inertia
        new = centers.copy()
        for k in range(len(centers)):
            mask = labels == k
            if mask.any():
                new[k] = xy[mask].mean(axis=0)
            else:
                # reseed at the point worst served by its current centre
                far = int(np.argmax(d2[np.arange(len(xy)), labels]))
                new[k] = xy[far]
                d2[far, labels[far]] = 0.0
        centers = new
    d2 = _sq_dists(xy, centers)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(xy)), labels].sum())
    if not history or inertia != history[-1]:
        history.append(inertia)
    return labels, centers, inertia, history


def kmeans(
    points: Sequence[GeoPoint],
    n: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> ClusterResult:
    """Lloyd's algorithm from k-means++ seeding in a local metric frame.

    Points are projected equirectangularly about their mean, so distances
    and inertia are in metres. Seeding runs over the points in sorted
    (lat, lon) order, which makes the result independent of input order.
    Stops once an iteration improves inertia by less than ``tol`` m^2.
    """
    latlon = as_array(points)
    if n < 1 or len(latlon) < n:
        raise TooFewPoints(f"{len(latlon)} points cannot form {n} clusters")
    frame = LocalFrame.about(latlon)
    order = np.lexsort((latlon[:, 1], latlon[:, 0]))
    xy = frame.forward(latlon[order])
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(xy, n, rng)
    labels_sorted, centers, inertia, history = _lloyd(xy, centers, max_iter, tol)
    labels = np.empty(len(latlon), dtype=int)
    labels[order] = labels_sorted
    counts = np.bincount(labels, minlength=n)
    cent_ll = frame.inverse(centers)
    return ClusterResult(
        assignment=labels,
        centroids=[GeoPoint(float(a), float(b)) for a, b in cent_ll],
        inertia=inertia,
        empty=counts == 0,
        history=history,
    )


def write_assignment_csv(result: ClusterResult, user_ids: Sequence[str], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["user_id", "cluster_id"])
    for uid, k in zip(user_ids, result.assignment):
        w.writerow([uid, int(k)])


def write_centroids_csv(result: ClusterResult, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["cluster_id", "lat", "lon"])
    for k, c in enumerate(result.centroids):
        w.writerow([k, repr(c.lat), repr(c.lon)])


def read_assignment_csv(src: TextIO) -> dict[str, int]:
    return {row["user_id"]: int(row["cluster_id"]) for row in csv.DictReader(src)}
