import csv
import json
import math

import pytest

from uavbs.cli import main
from uavbs.esn import EsnParams
from uavbs.matching import write_cost_csv, CostMatrix
from uavbs.pipeline import SimulationConfig
from uavbs.synthetic import plt_text, straight_walker, walker_crowd
from uavbs.trajectory import read_tracks_csv, write_tracks_csv

SMALL = EsnParams(reservoir_size=120)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_tracks(path, tracks):
    with open(path, "w", newline="") as fh:
        write_tracks_csv(tracks, fh)
    return str(path)


@pytest.fixture
def geolife(tmp_path):
    root = tmp_path / "geolife"
    for uid, seed in [("000", 1), ("001", 2)]:
        d = root / uid / "Trajectory"
        d.mkdir(parents=True)
        tr = straight_walker(uid, duration_s=60, dt=5.0, seed=seed)
        (d / "20081023025304.plt").write_text(plt_text(tr))
    return root


def test_ingest_two_users(geolife, tmp_path, capsys):
    out = tmp_path / "tracks.csv"
    assert main(["ingest", str(geolife), str(out), "--dt", "3"]) == 0
    tracks = read_tracks_csv(out)
    assert [t.user_id for t in tracks] == ["000/20081023025304", "001/20081023025304"]
    assert all(t.dt == 3.0 and len(t.points) == 21 for t in tracks)
    err = capsys.readouterr().err
    assert "000: 21 points, 0 dropped" in err


def test_ingest_unreadable_root(tmp_path):
    assert main(["ingest", str(tmp_path / "missing"), str(tmp_path / "o.csv")]) == 2


def test_ingest_empty_root(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    out = tmp_path / "o.csv"
    assert main(["ingest", str(tmp_path / "empty"), str(out)]) == 0
    assert out.read_text() == "user_id,t_s,lat,lon\n"
    assert "no usable trajectories" in caplog.text


def test_ingest_skips_malformed(geolife, tmp_path, caplog):
    bad = geolife / "002" / "Trajectory"
    bad.mkdir(parents=True)
    (bad / "x.plt").write_text("only\ntwo lines\n")
    out = tmp_path / "o.csv"
    assert main(["ingest", str(geolife), str(out)]) == 0
    assert len(read_tracks_csv(out)) == 2
    assert "skipping" in caplog.text


COSTS = [[267.0, 408.0, 631.0], [236.0, 467.0, 815.0], [177.0, 389.0, 718.0]]


@pytest.fixture
def cost_file(tmp_path):
    p = tmp_path / "costs.csv"
    with open(p, "w", newline="") as fh:
        write_cost_csv(CostMatrix(COSTS), fh)
    return str(p)


def test_match_prints_scheme(cost_file, tmp_path, capsys):
    js = tmp_path / "m.json"
    assert main(["match", "--costs", cost_file, "--json", str(js)]) == 0
    out = capsys.readouterr().out
    assert "A->γ, B->α, C->β" in out
    doc = json.loads(js.read_text())
    assert doc == {"perm": [2, 0, 1], "total_cost_m": 1256.0}


def test_enumerate_lists_all(cost_file, capsys):
    assert main(["match", "--costs", cost_file, "--enumerate"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6
    assert lines[0].endswith("(minimal)") and "1256" in lines[0]
    assert main(["enumerate", "--costs", cost_file]) == 0


def test_enumerate_refuses_large(tmp_path, caplog):
    p = tmp_path / "big.csv"
    with open(p, "w", newline="") as fh:
        write_cost_csv(CostMatrix([[float(i + j) for j in range(11)] for i in range(11)]), fh)
    assert main(["enumerate", "--costs", str(p)]) == 5
    assert "n <= 10" in caplog.text


@pytest.mark.parametrize(
    "text",
    ["", "3\n1,2,3\n4,5,6\n", "2\n1,2\n3,x\n", "2\n1,2\n3,-4\n", "2\n1,2,3\n4,5,6\n"],
)
def test_match_malformed(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    assert main(["match", "--costs", str(p)]) == 3


def test_match_from_positions(tmp_path, capsys):
    cur, pred = tmp_path / "cur.csv", tmp_path / "pred.csv"
    cur.write_text("lat,lon\n39.98,116.31\n39.99,116.32\n")
    pred.write_text("lat,lon\n39.99,116.32\n39.98,116.31\n")
    assert main(["match", "--current", str(cur), "--predicted", str(pred)]) == 0
    assert "A->β, B->α" in capsys.readouterr().out


def test_cluster_and_place(tmp_path):
    tracks = walker_crowd(12, n_groups=3, duration_s=30, seed=2)
    pts = write_tracks(tmp_path / "t.csv", tracks)
    assign, cents, uavs = tmp_path / "a.csv", tmp_path / "c.csv", tmp_path / "u.csv"
    assert main(["cluster", "--points", pts, "--n", "3", "--out", str(assign), "--centroids", str(cents)]) == 0
    a = rows(assign)
    assert len(a) == 12 and {r["cluster_id"] for r in a} == {"0", "1", "2"}
    assert len(rows(cents)) == 3
    assert main(["place", "--points", pts, "--assign", str(assign), "--out", str(uavs)]) == 0
    placed = rows(uavs)
    assert [r["cluster_id"] for r in placed] == ["0", "1", "2"]
    assert sum(int(r["covered"]) for r in placed) <= 12


def test_train_then_forecast(tmp_path):
    tr = straight_walker("w", duration_s=900, seed=5)
    path = write_tracks(tmp_path / "t.csv", [tr])
    model = tmp_path / "m.json"
    assert main(["train", "--track", path, "--out", str(model), "--size", "100"]) == 0
    doc = json.loads(model.read_text())
    assert doc["trained"] and "normalizer" in doc
    fc = tmp_path / "f.csv"
    assert main(["forecast", "--model", str(model), "--track", path, "--history", "200", "--horizon", "20", "--out", str(fc)]) == 0
    out = rows(fc)
    assert len(out) == 20
    assert float(out[0]["t_s"]) == pytest.approx(tr.points[199].t + 3.0)
    assert all(math.isfinite(float(r["lat"])) for r in out)


def test_sweep_writes_rows(tmp_path):
    path = write_tracks(tmp_path / "t.csv", [straight_walker("w", seed=1)])
    out = tmp_path / "s.csv"
    assert main(["sweep", "--track", path, "--sizes", "100,150", "--out", str(out)]) == 0
    r = rows(out)
    assert [x["size"] for x in r] == ["100", "150"]
    assert list(r[0]) == ["size", "rmse_weighted", "mean_error_m", "mean_error_m_display"]


def test_sweep_too_short(tmp_path):
    path = write_tracks(tmp_path / "t.csv", [straight_walker("w", duration_s=600)])
    assert main(["sweep", "--track", path, "--sizes", "100"]) == 4


def test_simulate_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(SimulationConfig(N=6, n=2, esn=SMALL).to_json())
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", str(cfg), "--out", str(out), "--synthetic-epochs", "2"]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == ["costs.csv", "matchings.csv", "positions.csv", "records.jsonl", "rmse.csv"]
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert len((outs[0] / "records.jsonl").read_text().splitlines()) == 2


def test_simulate_short_tracks(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(SimulationConfig(N=3, n=1, esn=SMALL).to_json())
    tracks = write_tracks(tmp_path / "t.csv", walker_crowd(3, duration_s=600, seed=0))
    assert main(["simulate", "--config", str(cfg), "--tracks", tracks, "--out", str(tmp_path / "o")]) == 4


def test_match_table_coordinates(tmp_path, capsys):
    cur, pred = tmp_path / "cur.csv", tmp_path / "pred.csv"
    cur.write_text("lat,lon\n39.984536,116.316354\n39.984501,116.313659\n39.98492,116.314663\n")
    pred.write_text("lat,lon\n39.986506,116.314564\n39.988203,116.316238\n39.988461,116.321711\n")
    assert main(["match", "--current", str(cur), "--predicted", str(pred)]) == 0
    out = capsys.readouterr().out
    assert "A->γ, B->α, C->β" in out
    assert "(1256 m)" in out


def test_match_single_entry(tmp_path, capsys):
    p = tmp_path / "one.csv"
    p.write_text("1\n42.5\n")
    assert main(["match", "--costs", str(p)]) == 0
    assert "total: 42.5 m" in capsys.readouterr().out
