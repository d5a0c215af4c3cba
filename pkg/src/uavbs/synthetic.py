"""Synthetic user tracks for tests, demos and the acceptance harness."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .geo import GeoPoint, LocalFrame
from .trajectory import Track

BEIJING = GeoPoint(39.984536, 116.316354)


def add_snr_noise(xy: np.ndarray, snr_db: Optional[float], rng: np.random.Generator) -> np.ndarray:
    """Add isotropic Gaussian noise at the given signal-to-noise ratio.

    Signal power is the mean squared distance of the positions from their
    centroid, so the noise scales with how far the user actually moves.
    """
    if snr_db is None:
        return xy
    centred = xy - xy.mean(axis=0)
    signal = float(np.mean(np.sum(centred**2, axis=1)))
    sigma = math.sqrt(signal / 10 ** (snr_db / 10) / xy.shape[1])
    return xy + rng.normal(0.0, sigma, size=xy.shape)


def straight_walker(
    user_id: str,
    start: GeoPoint = BEIJING,
    speed_mps: float = 1.2,
    heading_deg: float = 0.0,
    duration_s: float = 1200.0,
    dt: float = 3.0,
    snr_db: Optional[float] = 40.0,
    seed: int = 0,
) -> Track:
    """Constant-velocity straight walk sampled every ``dt`` seconds.

    ``heading_deg`` is measured clockwise from north.
    """
    rng = np.random.default_rng(seed)
    t = dt * np.arange(int(math.floor(duration_s / dt + 1e-9)) + 1)
    h = math.radians(heading_deg)
    xy = np.column_stack([speed_mps * t * math.sin(h), speed_mps * t * math.cos(h)])
    xy = add_snr_noise(xy, snr_db, rng)
    frame = LocalFrame(start.lat, start.lon)
    return Track.from_arrays(user_id, t, frame.inverse(xy), dt)


def walker_crowd(
    n_users: int,
    n_groups: int = 3,
    center: GeoPoint = BEIJING,
    group_spacing_m: float = 1500.0,
    group_spread_m: float = 150.0,
    duration_s: float = 1500.0,
    dt: float = 3.0,
    speed_range: tuple[float, float] = (0.8, 1.6),
    snr_db: Optional[float] = 40.0,
    seed: int = 0,
) -> list[Track]:
    """Straight-line walkers starting around ``n_groups`` well-separated hotspots."""
    rng = np.random.default_rng(seed)
    frame = LocalFrame(center.lat, center.lon)
    angles = 2 * math.pi * np.arange(n_groups) / n_groups
    hubs = group_spacing_m * np.column_stack([np.cos(angles), np.sin(angles)])
    tracks = []
    for k in range(n_users):
        hub = hubs[k % n_groups] + rng.normal(0.0, group_spread_m, 2)
        lat, lon = frame.inverse(hub)
        tracks.append(
            straight_walker(
                f"ue{k:03d}",
                GeoPoint(float(lat), float(lon)),
                speed_mps=float(rng.uniform(*speed_range)),
                heading_deg=float(rng.uniform(0.0, 360.0)),
                duration_s=duration_s,
                dt=dt,
                snr_db=snr_db,
                seed=int(rng.integers(2**31)),
            )
        )
    return tracks


def stationary(user_id: str, pos: GeoPoint, duration_s: float = 1200.0, dt: float = 3.0) -> Track:
    t = dt * np.arange(int(math.floor(duration_s / dt + 1e-9)) + 1)
    return Track.from_arrays(user_id, t, np.tile((pos.lat, pos.lon), (len(t), 1)), dt)


def plt_text(track: Track, base_day: float = 39744.0) -> str:
    """Render a track in GeoLife PLT layout (timestamps from 2008-10-23 00:00:00)."""
    from datetime import datetime, timedelta

    epoch = datetime(2008, 10, 23)
    lines = [
        "Geolife trajectory",
        "WGS 84",
        "Altitude is in Feet",
        "Reserved 3",
        "0,2,255,My Track,0,0,2,8421376",
        "0",
    ]
    for p in track.points:
        stamp = epoch + timedelta(seconds=p.t)
        serial = base_day + p.t / 86400.0
        lines.append(
            f"{p.pos.lat!r},{p.pos.lon!r},0,492,{serial:.10f},{stamp:%Y-%m-%d},{stamp:%H:%M:%S}"
        )
    return "\n".join(lines) + "\n"
