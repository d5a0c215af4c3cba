"""GeoLife PLT ingestion, fixed-interval resampling and train/test splitting."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional, TextIO, Union

import numpy as np

from .errors import MalformedRecord, TooShort
from .geo import GeoPoint

log = logging.getLogger(__name__)

PLT_HEADER_LINES = 6
PLT_FIELDS = 7
DEFAULT_DT = 3.0


@dataclass(frozen=True)
class TrackPoint:
    t: float
    pos: GeoPoint


@dataclass
class Track:
    """One user's trajectory.

    ``dt`` is set once the track sits on a fixed time grid; ``dropped``
    counts records discarded at parse time for non-increasing timestamps.
    """

    user_id: str
    points: list[TrackPoint]
    dt: Optional[float] = None
    dropped: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.points)

    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points], dtype=float)

    def latlon(self) -> np.ndarray:
        return np.array([(p.pos.lat, p.pos.lon) for p in self.points], dtype=float).reshape(-1, 2)

    def slice(self, start: int, stop: int) -> "Track":
        return Track(self.user_id, self.points[start:stop], self.dt)

    @classmethod
    def from_arrays(cls, user_id: str, t, latlon, dt: Optional[float] = None) -> "Track":
        latlon = np.asarray(latlon, dtype=float).reshape(-1, 2)
        pts = [TrackPoint(float(tk), GeoPoint(float(a), float(b))) for tk, (a, b) in zip(t, latlon)]
        return cls(user_id, pts, dt)


def _parse_time(date: str, clock: str) -> datetime:
    return datetime.strptime(f"{date.strip()} {clock.strip()}", "%Y-%m-%d %H:%M:%S")


def parse_plt(raw: Union[bytes, BinaryIO, TextIO, str], user_id: str = "") -> Track:
    """Parse a GeoLife ``.plt`` file.

    Args:
        raw: file contents as bytes/str, or an open binary/text stream.
        user_id: identifier stored on the returned track.

    Returns:
        Track with timestamps in seconds relative to the first record.
        Records whose timestamp does not increase are dropped and counted
        in ``Track.dropped``.

    Raises:
        MalformedRecord: truncated header, wrong field count or a
            non-numeric coordinate.
    """
    if isinstance(raw, bytes):
        text = raw.decode("utf-8", errors="replace")
    elif isinstance(raw, str):
        text = raw
    else:
        data = raw.read()
        text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    lines = text.splitlines()
    if len(lines) < PLT_HEADER_LINES:
        raise MalformedRecord(f"expected {PLT_HEADER_LINES} header lines, got {len(lines)}")

    points: list[TrackPoint] = []
    dropped = 0
    t0: Optional[datetime] = None
    last_t = -math.inf
    for lineno, line in enumerate(lines[PLT_HEADER_LINES:], start=PLT_HEADER_LINES + 1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != PLT_FIELDS:
            raise MalformedRecord(f"line {lineno}: expected {PLT_FIELDS} fields, got {len(fields)}")
        try:
            lat = float(fields[0])
            lon = float(fields[1])
            stamp = _parse_time(fields[5], fields[6])
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        try:
            pos = GeoPoint(lat, lon)
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        if t0 is None:
            t0 = stamp
        t = (stamp - t0).total_seconds()
        if t <= last_t:
            dropped += 1
            continue
        last_t = t
        points.append(TrackPoint(t, pos))
    if dropped:
        log.warning("%s: dropped %d records with non-increasing timestamps", user_id or "<plt>", dropped)
    return Track(user_id, points, None, dropped)


def resample(track: Track, dt: float = DEFAULT_DT) -> Track:
    """Linearly interpolate a track onto the grid t0, t0+dt, ... <= t_last.

    Interpolation is componentwise in degrees; no point is extrapolated past
    the final original timestamp.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(track.points) < 2:
        raise TooShort(f"track {track.user_id!r} has {len(track.points)} point(s); need 2")
    t = track.times()
    ll = track.latlon()
    span = t[-1] - t[0]
    # the epsilon absorbs float error when span is an exact multiple of dt
    count = int(math.floor(span / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(count)
    lat = np.interp(grid, t, ll[:, 0])
    lon = np.interp(grid, t, ll[:, 1])
    return Track.from_arrays(track.user_id, grid, np.column_stack([lat, lon]), dt)


def split(track: Track, train_fraction: float = 0.75) -> tuple[Track, Track]:
    """Chronological split; the first part holds ceil(fraction * count) points."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    k = math.ceil(train_fraction * len(track.points))
    return track.slice(0, k), track.slice(k, len(track.points))


def iter_geolife(root: Union[str, Path]) -> Iterator[tuple[str, Path]]:
    """Yield ``(user_id, plt_path)`` pairs under ``<root>/<user>/Trajectory/``."""
    root = Path(root)
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        traj = user_dir / "Trajectory"
        if not traj.is_dir():
            continue
        for plt in sorted(traj.glob("*.plt")):
            yield user_dir.name, plt


def write_tracks_csv(tracks: Iterable[Track], out: TextIO) -> int:
    """Write ``user_id,t_s,lat,lon`` rows at full precision; returns row count."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["user_id", "t_s", "lat", "lon"])
    rows = 0
    for tr in tracks:
        for p in tr.points:
            writer.writerow([tr.user_id, repr(p.t), repr(p.pos.lat), repr(p.pos.lon)])
            rows += 1
    return rows


def read_tracks_csv(src: Union[str, Path, TextIO]) -> list[Track]:
    """Read tracks written by :func:`write_tracks_csv`, preserving first-seen order."""
    if isinstance(src, (str, Path)):
        with open(src, newline="") as fh:
            return read_tracks_csv(fh)
    by_user: dict[str, list[TrackPoint]] = {}
    for row in csv.DictReader(src):
        pt = TrackPoint(float(row["t_s"]), GeoPoint(float(row["lat"]), float(row["lon"])))
        by_user.setdefault(row["user_id"], []).append(pt)
    tracks = []
    for uid, pts in by_user.items():
        t = np.array([p.t for p in pts])
        steps = np.diff(t)
        dt = float(steps[0]) if len(steps) and np.allclose(steps, steps[0], rtol=0, atol=1e-9) else None
        tracks.append(Track(uid, pts, dt))
    return tracks


def tracks_to_csv_string(tracks: Iterable[Track]) -> str:
    buf = io.StringIO()
    write_tracks_csv(tracks, buf)
    return buf.getvalue()
