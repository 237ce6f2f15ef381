import csv
import json

import pytest

from metacontinuum.cli import main


def rows_of(path):
    with open(path, newline="") as fh:
        return {(r["layer"], r["metric"]): r["value"] for r in csv.DictReader(fh)}


def test_replay_is_byte_identical(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}.csv"
        rc = main(["replay", "--set", "generate.events=3000", "--set", "generate.seed=4",
                   "--set", "edge.capacity=10%", "--set", "edge.predictor=dls",
                   "--csv", str(out), "--json", str(tmp_path / f"run{i}.json")])
        assert rc == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    summary = json.loads((tmp_path / "run0.json").read_text())
    assert summary["config"]["edge"]["predictor"] == "dls"
    assert summary["source"]["generate_seed"] == 4


def test_replay_remote_only_baseline(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["replay", "--set", "generate.events=1000", "--set", "experiment.topology=E",
                 "--set", "edge.capacity=0", "--csv", str(out)]) == 0
    r = rows_of(out)
    assert float(r[("edge", "hit_rate")]) == 0.0
    assert float(r[("client", "avg_latency_ms")]) == pytest.approx(32.0)


def test_replay_from_trace_file(tmp_path):
    trace = tmp_path / "t.tsv"
    assert main(["generate", "--set", "generate.events=2000", "--out", str(trace)]) == 0
    out = tmp_path / "r.csv"
    assert main(["replay", "--trace", str(trace), "--csv", str(out)]) == 0
    assert int(rows_of(out)[("client", "list_ops")]) == 2000


def test_generate_then_stats(tmp_path):
    trace = tmp_path / "g.tsv"
    meta = tmp_path / "g.json"
    assert main(["generate", "--set", "generate.events=5000", "--seed", "3",
                 "--out", str(trace), "--json", str(meta)]) == 0
    out = tmp_path / "s.csv"
    assert main(["stats", str(trace), "--csv", str(out)]) == 0
    r = rows_of(out)
    tallies = json.loads(meta.read_text())["tallies"]
    assert int(r[("trace", "list_ops")]) == tallies["list_ops"] == 5000
    assert int(r[("trace", "unique_paths")]) == tallies["unique_paths"]


def test_generate_pair(tmp_path):
    d1, d2 = tmp_path / "d1.tsv", tmp_path / "d2.tsv"
    assert main(["generate", "--set", "generate.events=1000", "--out", str(d1), "--pair", str(d2)]) == 0
    assert d1.stat().st_size > 0 and d2.stat().st_size > 0


def test_stats_missing_file(capsys):
    assert main(["stats", "/nonexistent/trace.tsv"]) != 0
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("override", [
    "experiment.topology=XYZ", "edge.predictor=bogus", "cloud.predictor=dls",
    "edge.capacity=-5", "rtt.edge-cloud=-1", "rtt.edge-fog=2", "experiment.nonsense=1", "noseparator",
])
def test_config_errors_exit_2(override, capsys):
    assert main(["replay", "--set", "generate.events=10", "--set", override]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exit_2():
    assert main(["replay", "--config", "/nonexistent/exp.ini"]) == 2


def test_config_file_and_override(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("[experiment]\ntopology = E\n[edge]\ncapacity = 0\n[generate]\nevents = 500\n")
    out = tmp_path / "c.csv"
    assert main(["replay", "--config", str(ini), "--set", "edge.capacity=10%", "--csv", str(out)]) == 0
    assert rows_of(out)[("edge", "capacity")] != "0"


def test_bench_pipeline(tmp_path):
    out, lat, js = tmp_path / "b.csv", tmp_path / "lat.csv", tmp_path / "b.json"
    assert main(["bench-pipeline", "--requests", "200", "--services", "5,30",
                 "--csv", str(out), "--latencies", str(lat), "--json", str(js)]) == 0
    r = rows_of(out)
    assert float(r[("s5c5", "p95_ms")]) > float(r[("s30c5", "p95_ms")])
    with open(lat, newline="") as fh:
        assert sum(1 for _ in csv.DictReader(fh)) == 400
    assert len(json.loads(js.read_text())["points"]) == 2
    assert main(["bench-pipeline", "--requests", "0"]) == 2


def test_bench_channel_mode(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["bench-pipeline", "--mode", "channel", "--requests", "20", "--rtt", "50",
                 "--capacity", "1,20", "--services", "1", "--csv", str(out)]) == 0
    r = rows_of(out)
    assert float(r[("s1c1", "total_ms")]) == pytest.approx(1000.0)
    assert float(r[("s1c20", "total_ms")]) == pytest.approx(50.0)
