"""Command-line front end.

Every subcommand reads CSV/JSON and writes CSV/JSON; logs go to stderr.

Exit codes: 0 success, 1 unexpected error, 2 unreadable input directory
(or bad usage), 3 malformed cost matrix, 4 track too short, 5 enumeration
refused because n is too large.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Iterator, Optional, Sequence, TextIO


from . import __version__
from .clustering import kmeans, read_assignment_csv, write_assignment_csv, write_centroids_csv
from .errors import InsufficientData, MalformedRecord, TooLarge, TooShort, TrackExhausted
from .esn import RESERVOIR_SIZES, EsnModel, EsnParams, Normalizer, one_step_pairs
from .geo import GeoPoint
from .matching import (
    ENUMERATE_MAX_N,
    CostMatrix,
    build_cost_matrix,
    enumerate_all,
    read_cost_csv,
    solve_min_matching,
)
from .pipeline import (
    SimulationConfig,
    require_epoch,
    reservoir_sweep,
    run,
    write_costs_csv,
    write_matchings_csv,
    write_positions_csv,
    write_records_jsonl,
    write_rmse_csv,
    write_sweep_csv,
)
from .placement import PlacementConfig, place_cluster, read_positions_csv, write_positions_csv as write_uav_csv
from .synthetic import walker_crowd
from .trajectory import iter_geolife, parse_plt, read_tracks_csv, resample, split, write_tracks_csv

log = logging.getLogger("uavbs")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNREADABLE = 2
EXIT_BAD_MATRIX = 3
EXIT_SHORT_TRACK = 4
EXIT_TOO_LARGE = 5

RMSE_CLAIM = 0.030
_GREEK = "αβγδεζηθικλμνξοπρστυφχψω"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@contextlib.contextmanager
def _open_out(path: Optional[str]) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


def _label_current(i: int, n: int) -> str:
    return chr(ord("A") + i) if n <= 26 else f"L{i}"


def _label_predicted(j: int, n: int) -> str:
    return _GREEK[j] if n <= len(_GREEK) else f"P{j}"


def _scheme_text(perm: Sequence[int]) -> str:
    n = len(perm)
    return ", ".join(f"{_label_current(i, n)}->{_label_predicted(j, n)}" for i, j in enumerate(perm))


def _pick_track(path: str, user: Optional[str]):
    tracks = read_tracks_csv(path)
    if not tracks:
        raise CliError(f"{path}: no tracks", EXIT_SHORT_TRACK)
    if user is None:
        return tracks[0]
    for tr in tracks:
        if tr.user_id == user:
            return tr
    raise CliError(f"{path}: no track for user {user!r}", EXIT_ERROR)


def _esn_params(args) -> EsnParams:
    base = EsnParams()
    if getattr(args, "config", None):
        base = SimulationConfig.from_json(Path(args.config).read_text()).esn
    changes = {}
    if getattr(args, "size", None) is not None:
        changes["reservoir_size"] = args.size
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return base.replace(**changes)


def _read_points(path: str) -> tuple[list[str], list[GeoPoint]]:
    """Points from a CSV with lat/lon columns; track CSVs contribute each user's first sample."""
    ids: list[str] = []
    pts: list[GeoPoint] = []
    seen = set()
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.DictReader(fh)):
            uid = row.get("user_id") or str(k)
            if uid in seen:
                continue
            seen.add(uid)
            ids.append(uid)
            pts.append(GeoPoint(float(row["lat"]), float(row["lon"])))
    return ids, pts


# --- subcommands -------------------------------------------------------------


def cmd_ingest(args) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise CliError(f"cannot read directory {root}", EXIT_UNREADABLE)
    try:
        files = list(iter_geolife(root))
    except OSError as exc:
        raise CliError(f"cannot read directory {root}: {exc}", EXIT_UNREADABLE) from None
    tracks = []
    points_per_user: Counter = Counter()
    dropped_per_user: Counter = Counter()
    for user, plt in files:
        try:
            tr = parse_plt(plt.read_bytes(), f"{user}/{plt.stem}")
        except (MalformedRecord, OSError) as exc:
            log.error("skipping %s: %s", plt, exc)
            continue
        dropped_per_user[user] += tr.dropped
        if len(tr.points) < 2:
            log.warning("skipping %s: fewer than two usable records", plt)
            continue
        rs = resample(tr, args.dt)
        tracks.append(rs)
        points_per_user[user] += len(rs.points)
    if not tracks:
        log.warning("no usable trajectories under %s", root)
    with _open_out(args.out) as fh:
        write_tracks_csv(tracks, fh)
    for user in sorted(points_per_user):
        print(f"{user}: {points_per_user[user]} points, {dropped_per_user[user]} dropped", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    tr = _pick_track(args.track, args.user)
    train, _ = split(tr, args.train_fraction)
    if len(train.points) < 3:
        raise CliError(f"track {tr.user_id!r} too short to train", EXIT_SHORT_TRACK)
    model = EsnModel.create(_esn_params(args))
    ll = train.latlon()
    norm = Normalizer.fit(ll)
    z = norm.transform(ll)
    try:
        model.train_readout(*one_step_pairs(z))
    except InsufficientData as exc:
        raise CliError(str(exc), EXIT_SHORT_TRACK) from None
    model.normalizer = norm
    with _open_out(args.out) as fh:
        fh.write(model.to_json())
    return EXIT_OK


def cmd_forecast(args) -> int:
    model = EsnModel.from_json(Path(args.model).read_text())
    if model.normalizer is None:
        raise CliError("model has no stored normaliser", EXIT_ERROR)
    tr = _pick_track(args.track, args.user)
    ll = tr.latlon()
    if args.history is not None:
        ll = ll[: args.history]
    pred = model.normalizer.inverse(model.forecast(model.normalizer.transform(ll), args.horizon))
    dt = tr.dt or 0.0
    t_last = tr.points[len(ll) - 1].t
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t_s", "lat", "lon"])
        for k, (lat, lon) in enumerate(pred, start=1):
            w.writerow([k, repr(t_last + k * dt), repr(float(lat)), repr(float(lon))])
    return EXIT_OK


def cmd_cluster(args) -> int:
    ids, pts = _read_points(args.points)
    res = kmeans(pts, args.n, seed=args.seed, max_iter=args.max_iter, tol=args.tol)
    with _open_out(args.out) as fh:
        write_assignment_csv(res, ids, fh)
    if args.centroids:
        with _open_out(args.centroids) as fh:
            write_centroids_csv(res, fh)
    return EXIT_OK


def cmd_place(args) -> int:
    ids, pts = _read_points(args.points)
    with open(args.assign, newline="") as fh:
        labels = read_assignment_csv(fh)
    missing = [u for u in ids if u not in labels]
    if missing:
        raise CliError(f"no cluster for users {missing[:5]}", EXIT_ERROR)
    cfg = PlacementConfig(args.radius, args.grid_step, args.capacity)
    out = []
    for k in sorted(set(labels[u] for u in ids)):
        members = [p for u, p in zip(ids, pts) if labels[u] == k]
        out.append(place_cluster(members, cfg, cluster_id=k))
    with _open_out(args.out) as fh:
        write_uav_csv(out, fh)
    return EXIT_OK


def _load_costs(args) -> CostMatrix:
    try:
        if args.costs:
            with open(args.costs, newline="") as fh:
                return read_cost_csv(fh)
        if args.current and args.predicted:
            with open(args.current, newline="") as fh:
                cur = read_positions_csv(fh)
            with open(args.predicted, newline="") as fh:
                pred = read_positions_csv(fh)
            return build_cost_matrix(cur, pred)
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"malformed cost input: {exc}", EXIT_BAD_MATRIX) from None
    raise CliError("give --costs or both --current and --predicted", EXIT_BAD_MATRIX)


def cmd_match(args) -> int:
    costs = _load_costs(args)
    if args.enumerate:
        return _enumerate(costs, args)
    scheme = solve_min_matching(costs)
    print(f"scheme: {_scheme_text(scheme.perm)}")
    print(f"total: {scheme.total_cost!r} m ({round(scheme.total_cost)} m)")
    if args.json:
        with _open_out(args.json) as fh:
            json.dump(scheme.to_json(), fh)
            fh.write("\n")
    return EXIT_OK


def _enumerate(costs: CostMatrix, args) -> int:
    try:
        schemes = enumerate_all(costs)
    except TooLarge as exc:
        raise CliError(f"{exc}; enumeration is limited to n <= {ENUMERATE_MAX_N}", EXIT_TOO_LARGE) from None
    best = schemes[0].total_cost
    for s in schemes:
        mark = "  (minimal)" if s.total_cost == best else ""
        print(f"{_scheme_text(s.perm)}\t{s.total_cost!r}\t{round(s.total_cost)}{mark}")
    if args.json:
        with _open_out(args.json) as fh:
            json.dump({"schemes": [s.to_json() for s in schemes]}, fh)
            fh.write("\n")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    return _enumerate(_load_costs(args), args)


def cmd_simulate(args) -> int:
    cfg = SimulationConfig.from_json(Path(args.config).read_text())
    if args.tracks:
        tracks = read_tracks_csv(args.tracks)
    else:
        duration = cfg.tau_s + cfg.T_s * (args.synthetic_epochs or 1)
        tracks = walker_crowd(cfg.N, n_groups=cfg.n, duration_s=duration, dt=cfg.lambda_s, seed=args.synthetic_seed)
    if len(tracks) != cfg.N:
        raise CliError(f"config expects N={cfg.N} tracks, found {len(tracks)}", EXIT_ERROR)
    try:
        require_epoch(cfg, tracks)
    except TrackExhausted as exc:
        raise CliError(str(exc), EXIT_SHORT_TRACK) from None
    records = run(cfg, tracks, workers=args.workers, max_epochs=args.max_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as fh:
        write_records_jsonl(records, fh)
    for name, writer in [
        ("positions.csv", write_positions_csv),
        ("costs.csv", write_costs_csv),
        ("matchings.csv", write_matchings_csv),
        ("rmse.csv", write_rmse_csv),
    ]:
        with open(out / name, "w", newline="") as fh:
            writer(records, fh)
    print(f"{len(records)} epoch(s) written to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    tr = _pick_track(args.track, args.user)
    try:
        rows = reservoir_sweep(tr, args.sizes, args.history, args.horizon, _esn_params(args))
    except (TrackExhausted, TooShort) as exc:
        raise CliError(str(exc), EXIT_SHORT_TRACK) from None
    with _open_out(args.out) as fh:
        write_sweep_csv(rows, fh)
    over = [r for r in rows if r.rmse_weighted > RMSE_CLAIM]
    if over:
        log.warning(
            "RMSE above %.3f for sizes %s: %s",
            RMSE_CLAIM,
            [r.size for r in over],
            ", ".join(f"{r.size}={r.rmse_weighted:.4f}" for r in rows),
        )
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def _sizes(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavbs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse GeoLife PLT files and resample to a fixed interval")
    s.add_argument("root")
    s.add_argument("out", nargs="?", default="-")
    s.add_argument("--dt", type=float, default=3.0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="fit an ESN readout on the leading part of one track")
    s.add_argument("--track", required=True)
    s.add_argument("--user")
    s.add_argument("--out", default="-")
    s.add_argument("--size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--train-fraction", type=float, default=0.75)
    s.add_argument("--config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("forecast", help="free-run a trained ESN past the end of a track")
    s.add_argument("--model", required=True)
    s.add_argument("--track", required=True)
    s.add_argument("--user")
    s.add_argument("--history", type=int, help="use only the first HISTORY samples")
    s.add_argument("--horizon", type=int, default=100, help="steps to forecast")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("cluster", help="K-means over user positions")
    s.add_argument("--points", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--out", default="-")
    s.add_argument("--centroids")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("place", help="one UAV-BS per cluster by coverage grid search")
    s.add_argument("--points", required=True)
    s.add_argument("--assign", required=True)
    s.add_argument("--radius", type=float, default=500.0)
    s.add_argument("--grid-step", type=float, default=25.0)
    s.add_argument("--capacity", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_place)

    for name, func, help_ in [
        ("match", cmd_match, "minimum-distance reposition matching"),
        ("enumerate", cmd_enumerate, "list every matching scheme with its total"),
    ]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--costs", help="CSV: n, then n rows of n costs")
        s.add_argument("--current", help="CSV with lat,lon columns")
        s.add_argument("--predicted", help="CSV with lat,lon columns")
        s.add_argument("--json", help="also write JSON output here")
        if name == "match":
            s.add_argument("--enumerate", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("simulate", help="run the full predict-and-reposition loop")
    s.add_argument("--config", required=True)
    s.add_argument("--tracks", help="track CSV; synthetic walkers when omitted")
    s.add_argument("--synthetic-seed", type=int, default=0)
    s.add_argument("--synthetic-epochs", type=int, default=3)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="forecast one track with several reservoir sizes")
    s.add_argument("--track", required=True)
    s.add_argument("--user")
    s.add_argument("--sizes", type=_sizes, default=list(RESERVOIR_SIZES))
    s.add_argument("--history", type=float, default=900.0, help="seconds")
    s.add_argument("--horizon", type=float, default=300.0, help="seconds")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except Exception as exc:  # noqa: BLE001
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
