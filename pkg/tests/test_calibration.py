import math

import pytest

from pythia.calibration import (
    CalibrationParseError, DeviceProfile, InvariantViolation, ModelGapError, PerfRecord, UnknownReference,
    check_homogeneous, check_ratio, check_solo_consistency, context_record, default_calibration_path,
    domain_power, implied_solo_mpps, load_calibration, lookup, make_table, power_draw, read_rows,
)

HEADER = "device,app,batch,coworkers,coworker_app,k_ms,k_mpps,k_gbps,slowdown_pct,agg_ms,agg_mpps,agg_gbps\n"


def test_shipped_rows_transcribed(table):
    r = table.records[("GTX1080Ti", "DPI", 1024, 1, "MD5")]
    assert (r.kernel_latency_ms, r.kernel_mpps, r.kernel_gbps) == (1.0, 1.099, 12.9)
    assert r.slowdown_frac == pytest.approx(0.146)
    assert (r.agg_latency_ms, r.agg_mpps, r.agg_gbps) == (1.9, 2.196, 25.8)
    r = table.records[("UHD", "AES", 16384, 3, "AES")]
    assert (r.kernel_latency_ms, r.kernel_mpps, r.kernel_gbps) == (52.9, 0.310, 3.6)
    assert r.slowdown_frac == pytest.approx(0.712)
    assert (r.agg_latency_ms, r.agg_mpps, r.agg_gbps) == (212.3, 1.235, 14.5)


def test_row_counts(table):
    measured = [r for r in table.records.values() if not r.synthesized]
    assert len(measured) == 162
    # a solo row per (device, app, batch)
    assert len(table) - len(measured) == 3 * 3 * 3


def test_errata_applied_by_default():
    key = ("GTX1080Ti", "MD5", 1024, 3, "MD5")
    assert load_calibration().records[key].kernel_mpps == 0.588
    raw = {r.key: r for r in read_rows(default_calibration_path())}
    assert raw[key].kernel_mpps == 0.558
    # the published value breaks the Gbps/Mpps invariant
    with pytest.raises(InvariantViolation):
        load_calibration(errata=None)


def test_empty_file_is_parse_error(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(CalibrationParseError):
        load_calibration(p)
    p.write_text(HEADER)
    with pytest.raises(CalibrationParseError):
        read_rows(p)


def test_bad_field_reports_position(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(HEADER + "UHD,AES,1024,1,AES,x,1,1,10,1,1,1\n")
    with pytest.raises(CalibrationParseError) as exc:
        read_rows(p)
    assert exc.value.row == 2 and exc.value.column == "k_ms"


def test_unknown_device_rejected(profiles):
    rec = PerfRecord("TPU", "AES", 1024, 0, None, 1, 1, 12, 0, 1, 1, 12)
    with pytest.raises(UnknownReference):
        make_table([rec], profiles)


@pytest.mark.parametrize("kw", [
    dict(kernel_latency_ms=0.0),
    dict(slowdown_frac=0.1),                      # slow-down without co-workers
    dict(agg_mpps=0.5),                           # aggregate below kernel
])
def test_record_invariants(profiles, kw):
    base = dict(device="UHD", app="AES", batch_size=1024, coworkers=0, coworker_app=None,
                kernel_latency_ms=1.0, kernel_mpps=1.0, kernel_gbps=12.0, slowdown_frac=0.0,
                agg_latency_ms=1.0, agg_mpps=1.0, agg_gbps=12.0)
    base.update(kw)
    with pytest.raises(InvariantViolation):
        make_table([PerfRecord(**base)], profiles)


def test_lookup_exact(table):
    r = lookup(table, "i7-8700K", "MD5", 16384, 1, "MD5")
    assert (r.kernel_latency_ms, r.kernel_mpps, r.kernel_gbps) == (13.9, 1.180, 13.9)
    solo = lookup(table, "GTX1080Ti", "DPI", 1024)
    assert solo is table.records[("GTX1080Ti", "DPI", 1024, 0, None)]


def test_lookup_interpolates_log_log(table):
    lo = table.records[("GTX1080Ti", "DPI", 1024, 1, "MD5")]
    hi = table.records[("GTX1080Ti", "DPI", 4096, 1, "MD5")]
    mid = lookup(table, "GTX1080Ti", "DPI", 2048, 1, "MD5")
    # 2048 sits halfway between 1024 and 4096 in log batch size
    for m in ("kernel_latency_ms", "kernel_mpps", "kernel_gbps", "agg_mpps", "agg_gbps"):
        assert getattr(mid, m) == pytest.approx(math.sqrt(getattr(lo, m) * getattr(hi, m)), rel=1e-12)
    assert mid.interpolated


def test_lookup_clamps_outside_range(table):
    edge = table.records[("UHD", "AES", 16384, 1, "AES")]
    big = lookup(table, "UHD", "AES", 65536, 1, "AES")
    assert big.kernel_mpps == pytest.approx(edge.kernel_mpps)
    assert big.kernel_latency_ms == pytest.approx(edge.kernel_latency_ms * 4)
    low = table.records[("UHD", "AES", 1024, 0, None)]
    one = lookup(table, "UHD", "AES", 1)
    assert one.kernel_latency_ms == pytest.approx(low.kernel_latency_ms / 1024)


def test_lookup_errors(table, profiles):
    with pytest.raises(UnknownReference):
        lookup(table, "TPU", "AES", 1024)
    with pytest.raises(UnknownReference):
        lookup(table, "UHD", "SHA1", 1024)
    only_uhd = make_table([r for r in table.records.values() if r.device == "UHD"], profiles)
    with pytest.raises(ModelGapError):
        lookup(only_uhd, "GTX1080Ti", "AES", 1024)


def test_mixed_coworkers_average(table):
    rec = context_record(table, "UHD", "AES", 4096, ["MD5", "DPI", "DPI"])
    a = lookup(table, "UHD", "AES", 4096, 3, "DPI")
    b = lookup(table, "UHD", "AES", 4096, 3, "MD5")
    assert rec.kernel_mpps == pytest.approx((2 * a.kernel_mpps + b.kernel_mpps) / 3)


def test_implied_solo():
    def rec(mpps, slow):
        co = 1 if slow else 0
        return PerfRecord("GTX1080Ti", "DPI", 1024, co, "MD5" if co else None, 1, mpps, 12, slow, 2, 2 * mpps, 24)
    assert implied_solo_mpps(rec(1.099, 0.146)) == pytest.approx(1.287, abs=5e-4)
    assert implied_solo_mpps(rec(1.177, 0.086)) == pytest.approx(1.288, abs=5e-4)
    assert implied_solo_mpps(rec(0.7, 0.0)) == 0.7


def test_power_draw(profiles):
    gtx, cpu = profiles["GTX1080Ti"], profiles["i7-8700K"]
    assert power_draw(gtx, 1.0, True) == 250.0
    assert power_draw(gtx, 0.7, False) == gtx.off_watts
    assert power_draw(cpu, 0.5, True) == 57.5
    with pytest.raises(ValueError):
        power_draw(gtx, 1.5, True)


def test_die_domain_capped(profiles):
    assert domain_power(profiles, "i7-8700K", {"i7-8700K": 95.0, "UHD": 25.0}) == 95.0
    assert domain_power(profiles, "i7-8700K", {"i7-8700K": 20.0, "UHD": 3.0}) == 23.0


def test_device_profile_invariants():
    with pytest.raises(InvariantViolation):
        DeviceProfile("x", "cpu", tdp_watts=10, idle_watts=20)
    with pytest.raises(InvariantViolation):
        DeviceProfile("x", "fpga", tdp_watts=10, idle_watts=2)


def test_shipped_checks():
    rows = load_calibration().records.values()
    measured = [r for r in rows if not r.synthesized]
    assert check_ratio(measured).passed
    assert check_solo_consistency(measured).passed
    homo = check_homogeneous(measured)
    # five i7 rows in the published data aggregate well below coworkers+1
    assert {k for k, _ in homo.offenders} == {
        "i7-8700K/DPI/1024/1/DPI", "i7-8700K/DPI/4096/1/DPI", "i7-8700K/DPI/16384/1/DPI",
        "i7-8700K/AES/1024/1/AES", "i7-8700K/MD5/16384/3/MD5"}


def test_injected_solo_violation_flagged():
    rows = [r for r in read_rows(default_calibration_path())]
    r = rows[0]
    bad = PerfRecord(r.device, r.app, r.batch_size, 2, "AES", r.kernel_latency_ms, 500.0, 6000.0, 0.99,
                     r.agg_latency_ms, 1500.0, 18000.0)
    res = check_solo_consistency([*rows, bad])
    assert not res.passed
    assert res.offenders[0][0] == f"{r.device}/{r.app}/{r.batch_size}"
