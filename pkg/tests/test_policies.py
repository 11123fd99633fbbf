import math
import random

import pytest

from pythia.policies import (
    PolicyContext, PolicyError, PolicyId, PolicyRegistry, UnknownPolicy, feasible, select,
)
from pythia.profiler import ConfigStats, Configuration, build_store, enumerate_configs

POLICIES = ["max_throughput", "min_latency", "min_energy", "target_rate:10", "target_rate:20"]


def _tie(c, s):
    return (s.avg_power_watts, c.batch_size, c.id)


def oracle(policy, store, offered):
    """Linear scans, written independently of the indexes."""
    rows = [(c, s) for c, s in store.items() if s.profiled]
    pid = PolicyId.parse(policy)
    if pid.name == "max_throughput":
        return min(rows, key=lambda cs: (-cs[1].agg_gbps, *_tie(*cs)))[0]
    if pid.name == "target_rate":
        return min(rows, key=lambda cs: (abs(cs[1].agg_gbps - pid.param), *_tie(*cs)))[0]
    ok = [(c, s) for c, s in rows if all(dict(s.app_gbps).get(a, 0) >= offered.get(a, 0) for a in c.apps)]
    if pid.name == "min_latency":
        pool = ok or rows
        return min(pool, key=lambda cs: (cs[1].avg_latency_ms, *_tie(*cs)))[0]
    if ok:
        return min(ok, key=lambda cs: _tie(*cs))[0]
    return min(rows, key=lambda cs: (-(cs[1].agg_gbps / cs[1].avg_power_watts), *_tie(*cs)))[0]


def _stats(rng, t):
    a, d = rng.choice([4.0, 8.9, 14.5, rng.uniform(0.5, 20)]), rng.choice([4.0, 13.8, rng.uniform(0.5, 20)])
    return ConfigStats(a + d, (a + d) / 11.8, rng.choice([5.0, rng.uniform(1, 500)]),
                       rng.choice([34.0, 80.0, rng.uniform(20, 300)]), rng.randrange(50), t,
                       (("AES", a), ("DPI", d)), 2.0)


def test_selections_match_oracle_after_random_updates():
    rng = random.Random(42)
    cfgs = enumerate_configs(["AES", "DPI"], ["i7", "UHD", "GTX"], [1024 * 2 ** i for i in range(7)])
    store = build_store([(c, _stats(rng, 0)) for c in cfgs])
    for i in range(1, 1001):
        store.update(rng.randrange(len(cfgs)), _stats(rng, i) if rng.random() > 0.02 else ConfigStats.unprofiled(i))
        if i % 50 == 0 or i == 1000:
            offered = {"AES": rng.uniform(0, 15), "DPI": rng.uniform(0, 15)}
            for p in POLICIES:
                assert select(p, store, PolicyContext(offered)).id == oracle(p, store, offered).id, (p, i)
    store.check()


def test_scaling_invariance():
    rng = random.Random(5)
    cfgs = enumerate_configs(["AES", "DPI"], ["a", "b"], [1, 2, 3, 4, 5, 6, 7])
    base = [(c, _stats(rng, 0)) for c in cfgs]
    offered = {"AES": 3.0, "DPI": 3.0}
    for k in (0.5, 3.0):
        scaled = build_store([(c, ConfigStats(s.agg_gbps, s.agg_mpps, s.avg_latency_ms * k, s.avg_power_watts * k,
                                              s.samples, 0, s.app_gbps, s.service_ms)) for c, s in base])
        plain = build_store(base)
        for p in ("max_throughput", "min_latency", "min_energy"):
            assert select(p, scaled, PolicyContext(offered)).id == select(p, plain, PolicyContext(offered)).id


def test_target_rate_example():
    cfgs = enumerate_configs(["AES"], ["a", "b", "c"], [1024])
    store = build_store([(c, ConfigStats(g, g / 12, 1, 50, 1)) for c, g in zip(cfgs, (8.9, 14.5, 27.6))])
    assert select("target_rate:10", store).id == 0
    assert select("target_rate:25", store).id == 2
    assert select(PolicyId("target_rate"), store).id == 0          # default 10 Gbps


def test_tie_breaks_lower_power_then_batch_then_id():
    c = [Configuration(i, (("AES", "d"),), b) for i, b in enumerate((4096, 1024, 1024, 2048))]
    s = [ConfigStats(10, 1, 1, w, 1) for w in (50, 60, 60, 50)]
    store = build_store(zip(c, s))
    assert select("max_throughput", store).id == 3       # 50 W, smaller batch than #0
    store.update(3, ConfigStats(10, 1, 1, 70, 1))
    assert select("max_throughput", store).id == 0
    store.update(0, ConfigStats(10, 1, 1, 60, 1))
    assert select("max_throughput", store).id == 1       # same power and batch as #2, lower id


def test_single_entry_store():
    store = build_store([(Configuration(7, (("AES", "d"),), 1), ConfigStats(1, 0.1, 1, 1, 1))])
    for p in POLICIES:
        assert select(p, store, PolicyContext({"AES": 100.0})).id == 7


def test_feasibility():
    c = Configuration(0, (("AES", "a"), ("DPI", "b")), 1)
    s = ConfigStats(20, 2, 1, 1, 1, app_gbps=(("AES", 10.0), ("DPI", 10.0)))
    assert feasible(c, s, {"AES": 10.0, "DPI": 9.0})
    assert not feasible(c, s, {"AES": 10.5, "DPI": 0.0})
    assert not feasible(c, ConfigStats.unprofiled(), {})


def test_tables_max_throughput_single_device(sim_backend, table):
    from pythia.profiler import profile_all
    cfgs = [c for c in enumerate_configs(["MD5", "MD5"], ["UHD", "GTX1080Ti"], [1024, 4096, 16384])
            if len(c.devices) == 1]
    store = profile_all(cfgs, 2, sim_backend)
    best = select("max_throughput", store)
    ceiling = max(table.records[(d, "MD5", b, 1, "MD5")].agg_gbps
                  for d in ("UHD", "GTX1080Ti") for b in (1024, 4096, 16384))
    assert ceiling == 27.6 and store.stats(best.id).agg_gbps == 27.6
    # ties at the ceiling resolve to the lowest power
    tied = [s.avg_power_watts for _, s in store.profiled() if s.agg_gbps == 27.6]
    assert len(tied) > 1 and store.stats(best.id).avg_power_watts == min(tied)


def test_aes_dpi_single_device_ceiling(runs):
    # two-instance AES+DPI rows top out at 27.3 Gbps (i7-8700K, 1024)
    store = runs.store("fig5d")
    single = build_store([(c, s) for c, s in store.items() if len(c.devices) == 1])
    assert single.stats(select("max_throughput", single).id).agg_gbps == 27.3


def test_user_policy_registry():
    reg = PolicyRegistry()
    cfgs = enumerate_configs(["AES"], ["a", "b", "c"], [1])
    stats = [ConfigStats(10, 1, 1, 100, 1), ConfigStats(6, 1, 1, 30, 1), ConfigStats(20, 1, 1, 250, 1)]
    store = build_store(zip(cfgs, stats))

    def gbps_per_watt(st, ctx):
        return max(st.profiled(), key=lambda cs: cs[1].agg_gbps / cs[1].avg_power_watts)[0]

    pid = reg.register_user_policy("gbps_per_watt", gbps_per_watt)
    assert str(pid) == "user:gbps_per_watt"
    assert select("user:gbps_per_watt", store, registry=reg).id == 1
    with pytest.raises(PolicyError):
        reg.register_user_policy("gbps_per_watt", gbps_per_watt)
    with pytest.raises(UnknownPolicy) as exc:
        select("user:nope", store, registry=reg)
    assert "nope" in str(exc.value)
    assert "user:gbps_per_watt" in reg.names()
    reg.unregister("gbps_per_watt")
    with pytest.raises(UnknownPolicy):
        reg.resolve("user:gbps_per_watt")


def test_policy_id_parse():
    assert PolicyId.parse("target_rate:12.5") == PolicyId("target_rate", 12.5)
    assert str(PolicyId.parse("target_rate")) == "target_rate:10"
    assert PolicyId.parse("min_energy").param is None
    for bad in ("fastest", "min_energy:3", "target_rate:x", "target_rate:-1", "user:"):
        with pytest.raises(PolicyError):
            PolicyId.parse(bad)
    assert math.isclose(PolicyId.parse(" target_rate:7 ").param, 7)
