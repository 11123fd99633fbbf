import csv
import json
import time

import pytest

from pythia.calibration import default_calibration_path
from pythia.cli import REPORT_FILES, main
from pythia.scenario import SHIPPED

CUSTOM = """
version = 1
name = "custom"
horizon_ms = 4000
devices = {devices}
apps = {apps}
batch_grid = {grid}
{ifaces}
"""


def _custom(tmp_path, devices, apps, grid):
    ifaces = "".join(f'[[interface]]\napp = "{a}"\nrate = [[0, 1.0]]\n'
                     for a in [a if apps[:i].count(a) == 0 else f"{a}#{apps[:i].count(a) + 1}"
                               for i, a in enumerate(apps)])
    p = tmp_path / "custom.toml"
    p.write_text(CUSTOM.format(devices=json.dumps(devices), apps=json.dumps(apps), grid=json.dumps(grid),
                               ifaces=ifaces))
    return p


def test_calibrate_counts(tmp_path, capsys):
    assert main(["calibrate", "--scenario", "fig5b", "--out", str(tmp_path / "s")]) == 0
    assert "profiled 28 configurations" in capsys.readouterr().out
    p = _custom(tmp_path, ["UHD"], ["AES"], [1024])
    assert main(["calibrate", "--scenario", str(p), "--out", str(tmp_path / "one")]) == 0
    assert "profiled 1 configurations" in capsys.readouterr().out
    p = _custom(tmp_path, ["UHD", "GTX1080Ti", "i7-8700K"], ["AES", "DPI"], [1024, 4096, 16384])
    assert main(["calibrate", "--scenario", str(p), "--out", str(tmp_path / "27")]) == 0
    assert "profiled 27 configurations" in capsys.readouterr().out
    assert len([ln for ln in (tmp_path / "27").read_text().splitlines() if not ln.startswith("#")]) == 27


def test_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["calibrate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "--scenario", "fig5b", "--out", "x", "--training-batches", "0"])
    assert exc.value.code == 1
    assert main(["calibrate", "--scenario", str(tmp_path / "none.toml"), "--out", str(tmp_path / "s")]) == 2
    bad_store = tmp_path / "bad.store"
    bad_store.write_text("garbage\n")
    assert main(["simulate", "--scenario", "fig5b", "--store", str(bad_store), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--scenario", "fig5b", "--store", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == 3


def test_simulate_outputs_and_determinism(tmp_path, capsys):
    store = tmp_path / "fig5d.store"
    assert main(["calibrate", "--scenario", "fig5d", "--out", str(store)]) == 0
    for d in ("a", "b"):
        assert main(["simulate", "--scenario", "fig5d", "--store", str(store), "--out", str(tmp_path / d)]) == 0
    for f in ("trace.csv", "switches.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["scenario"] == "fig5d" and summary["ticks"] == 30
    # wrong store for the scenario
    assert main(["simulate", "--scenario", "fig5a", "--store", str(store), "--out", str(tmp_path / "c")]) == 2
    assert main(["simulate", "--scenario", "fig5d", "--store", str(store), "--out", str(tmp_path / "c"),
                 "--backend", "live"]) == 1


def test_command_file(tmp_path):
    store = tmp_path / "s"
    main(["calibrate", "--scenario", "fig5b", "--out", str(store)])
    cmds = tmp_path / "cmds.txt"
    cmds.write_text("# switch to throughput mode\n5000 policy max_throughput\n")
    assert main(["simulate", "--scenario", "fig5b", "--store", str(store), "--out", str(tmp_path / "o"),
                 "--commands", str(cmds)]) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "trace.csv").open()))
    assert rows[3]["policy"] == "min_energy" and rows[5]["policy"] == "max_throughput"
    cmds.write_text("5000 reboot now\n")
    assert main(["simulate", "--scenario", "fig5b", "--store", str(store), "--out", str(tmp_path / "o"),
                 "--commands", str(cmds)]) == 2


def test_validate(tmp_path, capsys):
    assert main(["validate"]) == 2                 # homogeneous-load check fails on the shipped tables
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" in out
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["validate", str(empty)]) == 2
    assert "no data" in capsys.readouterr().out
    lines = default_calibration_path().read_text().splitlines()
    header = tmp_path / "header.csv"
    header.write_text(lines[0] + "\n")
    assert main(["validate", str(header)]) == 2
    assert "no data" in capsys.readouterr().out
    # a GTX-only slice passes all checks; a corrupted aggregate is caught
    gtx = [ln for ln in lines[1:] if ln.startswith("GTX1080Ti,")]
    good = tmp_path / "gtx.csv"
    good.write_text("\n".join([lines[0], *gtx]) + "\n")
    assert main(["validate", str(good), "--errata", str(default_calibration_path().with_name("errata.csv"))]) == 0
    assert "FAIL" not in capsys.readouterr().out
    f = gtx[0].split(",")
    f[-1] = str(float(f[-1]) * 2)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join([lines[0], ",".join(f), *gtx[1:]]) + "\n")
    assert main(["validate", str(bad), "--errata", str(default_calibration_path().with_name("errata.csv"))]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_report(tmp_path, capsys):
    store = tmp_path / "s"
    main(["calibrate", "--scenario", "fig5b", "--out", str(store)])
    main(["simulate", "--scenario", "fig5b", "--store", str(store), "--out", str(tmp_path / "o")])
    assert main(["report", "--trace", str(tmp_path / "o" / "trace.csv"), "--out", str(tmp_path / "r")]) == 0
    assert sorted(p.name for p in (tmp_path / "r").iterdir()) == sorted(REPORT_FILES)
    trace = list(csv.DictReader((tmp_path / "o" / "trace.csv").open()))
    thr = list(csv.DictReader((tmp_path / "r" / "throughput.csv").open()))
    assert [r["processed_gbps"] for r in thr] == [r["processed_gbps"] for r in trace]
    lat = list(csv.DictReader((tmp_path / "r" / "latency.csv").open()))
    assert [r["latency_ms"] for r in lat] == [r["latency_ms"] for r in trace]
    pw = list(csv.DictReader((tmp_path / "r" / "power.csv").open()))
    for p, t in zip(pw, trace):
        devs = [k for k in t if k.startswith("dev:")]
        assert float(p["total_watts"]) == pytest.approx(sum(float(t[k]) for k in devs), abs=1e-3)
    notes = list(csv.DictReader((tmp_path / "r" / "annotations.csv").open()))
    assert {n["kind"] for n in notes} >= {"config", "policy", "switch"}
    assert [float(n["t_ms"]) for n in notes] == sorted(float(n["t_ms"]) for n in notes)

    # a one-row trace still reports
    lines = (tmp_path / "o" / "trace.csv").read_text().splitlines()
    one = tmp_path / "one" / "trace.csv"
    one.parent.mkdir()
    one.write_text("\n".join(lines[:2]) + "\n")
    assert main(["report", "--trace", str(one), "--out", str(tmp_path / "r1")]) == 0
    assert len((tmp_path / "r1" / "throughput.csv").read_text().splitlines()) == 2

    broken = tmp_path / "broken.csv"
    broken.write_text(lines[0] + "\n" + lines[1].replace(",", ",x", 1) + "\n")
    assert main(["report", "--trace", str(broken), "--out", str(tmp_path / "r2")]) == 2
    broken.write_text("a,b\n1,2\n")
    assert main(["report", "--trace", str(broken), "--out", str(tmp_path / "r2")]) == 2


def test_validate_flags_injected_solo_violation(tmp_path, capsys):
    lines = default_calibration_path().read_text().splitlines()
    gtx = [ln for ln in lines[1:] if ln.startswith("GTX1080Ti,")]
    f = gtx[0].split(",")
    # 99% slow-down with a huge kernel rate implies an absurd solo rate; the Gbps/Mpps ratio stays valid
    f[5], f[6], f[7], f[8] = "0.1", "100.0", "1173.0", "99.0"
    bad = tmp_path / "solo.csv"
    bad.write_text("\n".join([lines[0], ",".join(f), *gtx[1:]]) + "\n")
    assert main(["validate", str(bad), "--errata", str(default_calibration_path().with_name("errata.csv"))]) == 2
    out = capsys.readouterr().out
    assert "[FAIL] implied-solo spread" in out and "[PASS] gbps/mpps ratio" in out


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_pipeline(tmp_path, capsys, name):
    t0 = time.perf_counter()
    assert main(["calibrate", "--scenario", name, "--out", str(tmp_path / "s")]) == 0
    assert main(["simulate", "--scenario", name, "--store", str(tmp_path / "s"), "--out", str(tmp_path / "o")]) == 0
    assert main(["report", "--trace", str(tmp_path / "o" / "trace.csv"), "--out", str(tmp_path / "r")]) == 0
    assert time.perf_counter() - t0 < 60.0
