"""Acceptance checks. Each test prints one PASS/FAIL line for its criterion."""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from uavbs.clustering import kmeans
from uavbs.esn import RESERVOIR_SIZES, EsnModel, EsnParams, fit_and_forecast
from uavbs.geo import GeoPoint, LocalFrame, haversine_array, to_points
from uavbs.matching import CostMatrix, brute_force_min, build_cost_matrix, enumerate_all, solve_min_matching
from uavbs.pipeline import SimulationConfig, reservoir_sweep, run
from uavbs.synthetic import straight_walker, walker_crowd
from uavbs.trajectory import iter_geolife, parse_plt, resample

CURRENT = [GeoPoint(39.984536, 116.316354), GeoPoint(39.984501, 116.313659), GeoPoint(39.98492, 116.314663)]
PREDICTED = [GeoPoint(39.986506, 116.314564), GeoPoint(39.988203, 116.316238), GeoPoint(39.988461, 116.321711)]

PRINTED_DISTANCES = np.array([[267, 408, 631], [236, 467, 851], [117, 389, 718]])
PRINTED_SUMS = {(0, 1, 2): 1452, (0, 2, 1): 1471, (1, 0, 2): 1362, (1, 2, 0): 1400, (2, 0, 1): 1256, (2, 1, 0): 1275}


def best_time(fn, repeats=50):
    """Fastest of several runs, so one scheduler hiccup does not decide the verdict."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


# 1 ----------------------------------------------------------------------------


def test_c1_distance_table(report):
    w = build_cost_matrix(CURRENT, PREDICTED).w
    elapsed = best_time(lambda: build_cost_matrix(CURRENT, PREDICTED))
    off = np.abs(w - PRINTED_DISTANCES)
    bad = [f"{'ABC'[i]}->{'αβγ'[j]} {w[i, j]:.1f} vs {PRINTED_DISTANCES[i, j]}" for i, j in zip(*np.nonzero(off > 3))]
    ok = not bad and elapsed < 1e-3
    detail = f"max |diff| {off.max():.1f} m, {elapsed * 1e3:.3f} ms"
    if bad:
        detail += "; outside ±3 m: " + ", ".join(bad)
    report("criterion 1 (distance table)", ok, detail)
    assert not bad, detail
    assert elapsed < 1e-3


# 2 ----------------------------------------------------------------------------


def test_c2_scheme_and_sums(report):
    costs = build_cost_matrix(CURRENT, PREDICTED)

    def both():
        return solve_min_matching(costs), enumerate_all(costs)

    scheme, schemes = both()
    elapsed = best_time(both)
    sums = {s.perm: s.total_cost for s in schemes}
    worst = max(abs(sums[p] - v) for p, v in PRINTED_SUMS.items())
    minimal = min(schemes, key=lambda s: s.total_cost).perm
    ok = (
        scheme.perm == (2, 0, 1)
        and abs(scheme.total_cost - 1256) <= 5
        and len(sums) == 6
        and worst <= 5
        and minimal == (2, 0, 1)
        and elapsed < 1e-3
    )
    report(
        "criterion 2 (matching scheme)",
        ok,
        f"scheme A->{'αβγ'[scheme.perm[0]]}, B->{'αβγ'[scheme.perm[1]]}, C->{'αβγ'[scheme.perm[2]]}, "
        f"total {scheme.total_cost:.1f} m, worst sum diff {worst:.1f} m, {elapsed * 1e3:.3f} ms",
    )
    assert ok


# 3 ----------------------------------------------------------------------------


def test_c3_solver_optimal(report):
    rng = np.random.default_rng(2024)
    mismatches = 0
    t0 = time.perf_counter()
    for n in range(2, 9):
        for _ in range(500):
            c = CostMatrix(rng.uniform(0, 1000, (n, n)))
            if solve_min_matching(c).total_cost != brute_force_min(c).total_cost:
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    report("criterion 3 (solver optimality)", ok, f"3500 matrices, {mismatches} mismatches, {elapsed:.1f} s")
    assert ok


# 4 ----------------------------------------------------------------------------


def test_c4_esn_invariants(report):
    errs = {}
    for m in (500, 1000, 2000):
        model = EsnModel.create(EsnParams(reservoir_size=m, seed=m))
        dense = np.max(np.abs(np.linalg.eigvals(model.W_res.toarray())))
        errs[m] = abs(dense - 0.9)
    radius_ok = max(errs.values()) < 1e-6

    rng = np.random.default_rng(7)
    model = EsnModel.create(EsnParams(reservoir_size=500, input_scale=1.0, seed=3))
    peak = 0.0
    for u in rng.uniform(-50, 50, (10_000, 2)):
        peak = max(peak, float(np.max(np.abs(model.step(u)))))
    bounded_ok = peak < 1.0

    model = EsnModel.create(EsnParams(reservoir_size=500, spectral_radius=0.9, input_scale=0.5, seed=11))
    inputs = rng.uniform(-1, 1, (500, 2))
    xa, xb = rng.uniform(-1, 1, 500), rng.uniform(-1, 1, 500)
    finals = []
    for x0 in (xa, xb):
        model.state = x0.copy()
        for u in inputs:
            model.step(u)
        finals.append(model.state.copy())
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(xa - xb)
    contraction_ok = ratio < 1e-6

    ok = radius_ok and bounded_ok and contraction_ok
    report(
        "criterion 4 (ESN invariants)",
        ok,
        "radius error " + ", ".join(f"m={m}: {e:.1e}" for m, e in errs.items())
        + f"; peak |x| {peak!r} over 10000 steps; contraction ratio {ratio:.1e}",
    )
    assert ok


# 5 ----------------------------------------------------------------------------


def test_c5_ridge_normal_equations(report):
    p = EsnParams(input_dim=2, reservoir_size=5, connectivity=1.0, ridge_lambda=0.0, washout=0, input_scale=0.8, seed=1)
    model = EsnModel.create(p)
    rng = np.random.default_rng(5)
    u = rng.uniform(-1, 1, (50, 2))
    y = rng.uniform(-1, 1, (50, 2))
    model.train_readout(u, y)

    # independent recomputation of the states with dense matrices
    W_in, W = model.W_in, model.W_res.toarray()
    x = np.zeros(5)
    X = np.empty((50, 5))
    for k in range(50):
        x = np.tanh(W_in @ u[k] + W @ x)
        X[k] = x
    assert np.linalg.matrix_rank(X) == 5
    ref = np.linalg.solve(X.T @ X, X.T @ y).T
    diff = float(np.max(np.abs(model.W_out - ref)))
    ok = diff <= 1e-8
    report("criterion 5 (ridge readout)", ok, f"max entry diff {diff:.1e}")
    assert ok


# 6 ----------------------------------------------------------------------------


def linear_extrapolation(history_latlon, horizon):
    """Least-squares constant-velocity fit over the history, projected forward."""
    frame = LocalFrame.about(history_latlon)
    xy = frame.forward(history_latlon)
    t = np.arange(len(xy), dtype=float)
    coef = np.polyfit(t, xy, 1)
    tf = np.arange(len(xy), len(xy) + horizon, dtype=float)
    return frame.inverse(np.outer(tf, coef[0]) + coef[1])


def mean_error_m(pred, truth):
    return float(haversine_array(pred[:, 0], pred[:, 1], truth[:, 0], truth[:, 1]).mean())


def test_c6_forecast_protocol(report):
    cfg = SimulationConfig(N=3, n=1)
    H, K = cfg.history_steps, cfg.horizon_steps
    recs = run(cfg, walker_crowd(3, n_groups=1, duration_s=1500, seed=1))
    counts = {f.shape[0] for r in recs for f in r.forecasts}

    esn_err, lin_err = [], []
    for seed in range(5):
        tr = straight_walker(f"w{seed}", speed_mps=1.2, heading_deg=37.0 * seed, duration_s=1200, snr_db=40, seed=seed)
        ll = tr.latlon()
        truth = ll[H : H + K]
        res = fit_and_forecast(EsnModel.create(cfg.esn), ll[:H], K)
        esn_err.append(mean_error_m(res.latlon, truth))
        lin_err.append(mean_error_m(linear_extrapolation(ll[:H], K), truth))
    ok = counts == {100} and len(recs) >= 1 and max(esn_err) < 50
    report(
        "criterion 6 (forecast protocol)",
        ok,
        f"points per UE per epoch {sorted(counts)}; ESN mean error "
        + ", ".join(f"{e:.1f}" for e in esn_err)
        + " m; linear baseline "
        + ", ".join(f"{e:.1f}" for e in lin_err)
        + f" m; worst ratio {max(e / b for e, b in zip(esn_err, lin_err)):.2f}",
    )
    assert ok


# 7 ----------------------------------------------------------------------------


def _geolife_track():
    src = os.environ.get("UAVBS_GEOLIFE")
    if not src:
        return None
    src = Path(src)
    files = [src] if src.is_file() else [p for _, p in iter_geolife(src)]
    need = 301 + 100
    for f in files:
        try:
            tr = parse_plt(f.read_bytes(), f.stem)
        except Exception:
            continue
        if len(tr.points) < 2:
            continue
        rs = resample(tr, 3.0)
        if len(rs.points) >= need:
            return rs
    return None


def _flag_sizes(report, label, rows):
    values = ", ".join(f"{r.size}: {r.rmse_weighted:.4f}" for r in rows)
    over = [r.size for r in rows if r.rmse_weighted >= 0.030]
    if over:
        report.note(label, f"FLAG rmse >= 0.030 for sizes {over}; per size {values}")
    else:
        report.note(label, f"all sizes below 0.030; per size {values}")
    return over


def test_c7_rmse_scale(report):
    # a diagonal heading keeps both coordinates well spread in the normalised window
    synth = reservoir_sweep(straight_walker("synthetic", seed=3, heading_deg=37.0), RESERVOIR_SIZES)
    _flag_sizes(report, "criterion 7 (synthetic walker, reference only)", synth)

    track = _geolife_track()
    if track is None:
        report.note(
            "criterion 7 (RMSE scale, GeoLife)",
            "SKIP - no GeoLife track available; set UAVBS_GEOLIFE to a .plt file or dataset root",
        )
        pytest.skip("UAVBS_GEOLIFE not set or no track covers 20 minutes")
    rows = reservoir_sweep(track, RESERVOIR_SIZES)
    over = _flag_sizes(report, f"criterion 7 (RMSE scale, GeoLife {track.user_id})", rows)
    # soft criterion: violations are flagged above rather than failing the run
    report("criterion 7 (RMSE scale, GeoLife)", not over, "see per-size values above")


# 8 ----------------------------------------------------------------------------


def test_c8_simulate_deterministic(report, tmp_path):
    from uavbs.cli import main

    cfg = tmp_path / "cfg.json"
    cfg.write_text(SimulationConfig(N=30, n=3).to_json())
    t0 = time.perf_counter()
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["simulate", "--config", str(cfg), "--out", str(out), "--synthetic-epochs", "3"]) == 0
        outs.append(out)
    elapsed = time.perf_counter() - t0
    names = sorted(p.name for p in outs[0].iterdir())
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in names)
    epochs = len((outs[0] / "records.jsonl").read_text().splitlines())
    ok = same and epochs == 3 and elapsed / 2 < 120
    report(
        "criterion 8 (simulate determinism)",
        ok,
        f"{len(names)} output files identical: {same}; {epochs} epochs; {elapsed / 2:.1f} s per run",
    )
    assert ok


# 9 ----------------------------------------------------------------------------


def test_c9_kmeans_blobs(report):
    origin = LocalFrame(39.98, 116.31)
    scores = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        xy = np.vstack([rng.normal((0.0, 0.0), 100.0, (100, 2)), rng.normal((2000.0, 0.0), 100.0, (100, 2))])
        truth = np.repeat([0, 1], 100)
        res = kmeans(to_points(origin.inverse(xy)), 2, seed=seed)
        same = float(np.mean(res.assignment == truth))
        scores.append(max(same, 1 - same))
    ok = min(scores) >= 0.99
    report("criterion 9 (k-means recovery)", ok, f"worst agreement over 20 seeds {min(scores):.3f}")
    assert ok
