"""Predict-then-reposition simulation loop.

Initial users are clustered and one UAV-BS is placed per cluster. Each
epoch then collects ``tau_s`` seconds of history per user, forecasts
``T_s`` seconds ahead with a per-user ESN, re-clusters the forecast end
points, places the next-slot UAV-BSs and matches current to next positions
at least total flight distance. The data cursor then advances by ``T_s``.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from .clustering import kmeans
from .errors import LengthMismatch, TooShort, TrackExhausted
from .esn import EsnModel, EsnParams, Normalizer, WeightedSeries, fit_and_forecast, turn_weights, weighted_rmse
from .geo import GeoPoint, haversine_array
from .matching import MatchingScheme, build_cost_matrix, solve_min_matching
from .placement import PlacementConfig, UavPosition, place_all
from .trajectory import Track

log = logging.getLogger(__name__)


def _steps(duration: float, interval: float, what: str) -> int:
    k = duration / interval
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(f"{what}={duration} is not a positive multiple of lambda_s={interval}")
    return int(round(k))


@dataclass(frozen=True)
class SimulationConfig:
    N: int
    n: int
    lambda_s: float = 3.0
    tau_s: float = 900.0
    T_s: float = 300.0
    esn: EsnParams = field(default_factory=EsnParams)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    kmeans_seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.n <= self.N:
            raise ValueError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")
        if self.lambda_s <= 0 or self.T_s <= 0:
            raise ValueError("lambda_s and T_s must be positive")
        _steps(self.tau_s, self.lambda_s, "tau_s")
        _steps(self.T_s, self.lambda_s, "T_s")

    @property
    def history_steps(self) -> int:
        """Samples per user in one collection window (both ends included)."""
        return _steps(self.tau_s, self.lambda_s, "tau_s") + 1

    @property
    def horizon_steps(self) -> int:
        return _steps(self.T_s, self.lambda_s, "T_s")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        d["esn"] = EsnParams(**d.get("esn", {}))
        d["placement"] = PlacementConfig(**d.get("placement", {}))
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimulationConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class UeScore:
    rmse: float
    mean_error_m: float


@dataclass
class EpochRecord:
    epoch_index: int
    current_positions: list[UavPosition]
    predicted_positions: list[UavPosition]
    matching: MatchingScheme
    per_ue_rmse: list[float]
    mean_error_m: list[float]
    user_ids: list[str]
    forecasts: list[np.ndarray] = field(repr=False)
    normalizers: list[Normalizer] = field(repr=False)
    cost_matrix: np.ndarray = field(repr=False)
    wall_time: float = field(default=0.0, compare=False)

    def next_positions(self) -> list[UavPosition]:
        """UAV-BS positions after the reposition: UAV i lands on ``P[perm[i]]``."""
        return [self.predicted_positions[j] for j in self.matching.perm]

    def to_dict(self, include_forecasts: bool = True, include_timing: bool = False) -> dict:
        d = {
            "epoch_index": self.epoch_index,
            "current_positions": [u.to_json() for u in self.current_positions],
            "predicted_positions": [u.to_json() for u in self.predicted_positions],
            "matching": self.matching.to_json(),
            "cost_matrix_m": self.cost_matrix.tolist(),
            "user_ids": self.user_ids,
            "per_ue_rmse": self.per_ue_rmse,
            "mean_error_m": self.mean_error_m,
        }
        if include_forecasts:
            d["forecasts"] = [f.tolist() for f in self.forecasts]
            d["normalizers"] = [nz.to_dict() for nz in self.normalizers]
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True)


def score_forecast(forecast_latlon, truth: Track, normalizer: Normalizer, **weight_kw) -> UeScore:
    """Turn-weighted RMSE in normalised units plus mean geodesic error in metres."""
    forecast_latlon = np.asarray(forecast_latlon, dtype=float)
    truth_ll = truth.latlon()
    if len(forecast_latlon) != len(truth_ll):
        raise LengthMismatch(f"{len(forecast_latlon)} forecast points vs {len(truth_ll)} actual")
    w = turn_weights(truth_ll, **weight_kw)
    series = WeightedSeries(normalizer.transform(truth_ll), normalizer.transform(forecast_latlon), w)
    err_m = haversine_array(forecast_latlon[:, 0], forecast_latlon[:, 1], truth_ll[:, 0], truth_ll[:, 1])
    return UeScore(weighted_rmse(series), float(err_m.mean()))


def evaluate_epoch(record: EpochRecord, truth: Sequence[Track]) -> list[UeScore]:
    """Score every user's forecast in ``record`` against the actual horizon tracks."""
    if len(truth) != len(record.forecasts):
        raise LengthMismatch(f"{len(truth)} truth tracks for {len(record.forecasts)} forecasts")
    return [score_forecast(f, tr, nz) for f, tr, nz in zip(record.forecasts, truth, record.normalizers)]


def _check_tracks(config: SimulationConfig, tracks: Sequence[Track]) -> None:
    if len(tracks) != config.N:
        raise LengthMismatch(f"config expects N={config.N} tracks, got {len(tracks)}")
    for tr in tracks:
        if not tr.points:
            raise TooShort(f"track {tr.user_id!r} is empty")
        steps = np.diff(tr.times())
        if len(steps) and not np.allclose(steps, config.lambda_s, rtol=0, atol=1e-6):
            raise ValueError(f"track {tr.user_id!r} is not sampled every {config.lambda_s} s")


def _initial_positions(config: SimulationConfig, tracks: Sequence[Track]) -> list[UavPosition]:
    pts = [tr.points[0].pos for tr in tracks]
    clusters = kmeans(pts, config.n, seed=config.kmeans_seed)
    return place_all(clusters, pts, config.placement)


def run(
    config: SimulationConfig,
    tracks: Sequence[Track],
    workers: int = 1,
    max_epochs: Optional[int] = None,
) -> list[EpochRecord]:
    """Simulate reposition epochs until any track runs out of data.

    Each user owns one ESN (seed ``esn.seed + k``), retrained on its rolling
    history every epoch. ``workers > 1`` forecasts users on a thread pool;
    results are identical to the sequential run.

    Returns an empty list, after logging why, when the tracks cannot cover
    one full epoch.
    """
    _check_tracks(config, tracks)
    H, K = config.history_steps, config.horizon_steps
    shortest = min(len(tr.points) for tr in tracks)
    if shortest < H + K:
        log.warning(
            "tracks cover %d samples; one epoch needs %d (history %d + horizon %d)",
            shortest, H + K, H, K,
        )
        return []

    L = _initial_positions(config, tracks)
    models = [EsnModel.create(config.esn.replace(seed=config.esn.seed + k)) for k in range(config.N)]
    latlon = [tr.latlon() for tr in tracks]
    records: list[EpochRecord] = []

    def forecast_user(k: int, cursor: int):
        res = fit_and_forecast(models[k], latlon[k][cursor : cursor + H], K)
        truth = tracks[k].slice(cursor + H, cursor + H + K)
        return res, score_forecast(res.latlon, truth, res.normalizer)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        epoch = 0
        while max_epochs is None or epoch < max_epochs:
            cursor = epoch * K
            if cursor + H + K > shortest:
                break
            t0 = time.perf_counter()
            if pool is None:
                results = [forecast_user(k, cursor) for k in range(config.N)]
            else:
                results = list(pool.map(lambda k: forecast_user(k, cursor), range(config.N)))
            ends = []
            for k, (res, _) in enumerate(results):
                lat, lon = res.latlon[-1]
                if not (np.isfinite(lat) and np.isfinite(lon)):
                    raise FloatingPointError(f"forecast for {tracks[k].user_id!r} diverged")
                ends.append(GeoPoint(float(lat), float(lon)))
            clusters = kmeans(ends, config.n, seed=config.kmeans_seed)
            P = place_all(clusters, ends, config.placement)
            costs = build_cost_matrix([u.pos for u in L], [p.pos for p in P])
            scheme = solve_min_matching(costs)
            rec = EpochRecord(
                epoch_index=epoch,
                current_positions=L,
                predicted_positions=P,
                matching=scheme,
                per_ue_rmse=[s.rmse for _, s in results],
                mean_error_m=[s.mean_error_m for _, s in results],
                user_ids=[tr.user_id for tr in tracks],
                forecasts=[r.latlon for r, _ in results],
                normalizers=[r.normalizer for r, _ in results],
                cost_matrix=np.array(costs.w),
                wall_time=time.perf_counter() - t0,
            )
            records.append(rec)
            log.info(
                "epoch %d: reposition %.1f m, mean forecast error %.1f m",
                epoch, scheme.total_cost, float(np.mean(rec.mean_error_m)),
            )
            L = rec.next_positions()
            epoch += 1
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def require_epoch(config: SimulationConfig, tracks: Sequence[Track]) -> None:
    need = config.history_steps + config.horizon_steps
    short = [tr.user_id for tr in tracks if len(tr.points) < need]
    if short:
        raise TrackExhausted(f"{len(short)} track(s) shorter than one epoch ({need} samples): {short[:5]}")


@dataclass
class SweepRow:
    size: int
    rmse_weighted: float
    mean_error_m: float


def reservoir_sweep(
    track: Track,
    sizes: Sequence[int],
    history_s: float = 900.0,
    horizon_s: float = 300.0,
    base: EsnParams = EsnParams(),
    lambda_s: Optional[float] = None,
) -> list[SweepRow]:
    """Forecast one track with several reservoir sizes.

    The first ``history_s`` seconds train each model and seed the forecast;
    the next ``horizon_s`` seconds are the reference.
    """
    dt = lambda_s or track.dt
    if dt is None:
        raise ValueError("track is not on a fixed grid; resample it first")
    H = _steps(history_s, dt, "history_s") + 1
    K = _steps(horizon_s, dt, "horizon_s")
    if len(track.points) < H + K:
        raise TrackExhausted(f"track {track.user_id!r} has {len(track.points)} samples; need {H + K}")
    ll = track.latlon()
    truth = track.slice(H, H + K)
    rows = []
    for m in sizes:
        model = EsnModel.create(base.replace(reservoir_size=int(m)))
        res = fit_and_forecast(model, ll[:H], K)
        s = score_forecast(res.latlon, truth, res.normalizer)
        rows.append(SweepRow(int(m), s.rmse, s.mean_error_m))
        log.info("reservoir %d: rmse %.4f, mean error %.1f m", m, s.rmse, s.mean_error_m)
    return rows


def write_records_jsonl(records: Sequence[EpochRecord], out: TextIO) -> None:
    for r in records:
        out.write(r.to_json() + "\n")


def write_positions_csv(records: Sequence[EpochRecord], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epoch", "kind", "index", "cluster_id", "lat", "lon", "covered"])
    for r in records:
        for kind, ps in (("current", r.current_positions), ("predicted", r.predicted_positions)):
            for i, p in enumerate(ps):
                w.writerow([r.epoch_index, kind, i, p.cluster_id, repr(p.pos.lat), repr(p.pos.lon), p.covered])


def write_costs_csv(records: Sequence[EpochRecord], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epoch", "current", "predicted", "cost_m", "cost_m_display"])
    for r in records:
        for i, row in enumerate(r.cost_matrix):
            for j, c in enumerate(row):
                w.writerow([r.epoch_index, i, j, repr(float(c)), int(round(c))])


def write_matchings_csv(records: Sequence[EpochRecord], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epoch", "current", "predicted", "cost_m", "total_cost_m", "total_cost_m_display"])
    for r in records:
        for i, j in enumerate(r.matching.perm):
            c = float(r.cost_matrix[i][j])
            w.writerow([r.epoch_index, i, j, repr(c), repr(r.matching.total_cost), int(round(r.matching.total_cost))])


def write_rmse_csv(records: Sequence[EpochRecord], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epoch", "user_id", "rmse_weighted", "mean_error_m"])
    for r in records:
        for uid, e, m in zip(r.user_ids, r.per_ue_rmse, r.mean_error_m):
            w.writerow([r.epoch_index, uid, repr(e), repr(m)])


def write_sweep_csv(rows: Sequence[SweepRow], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["size", "rmse_weighted", "mean_error_m", "mean_error_m_display"])
    for r in rows:
        w.writerow([r.size, repr(r.rmse_weighted), repr(r.mean_error_m), int(round(r.mean_error_m))])
