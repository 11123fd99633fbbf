import pytest

from pythia.policies import PolicyContext, UnknownPolicy, select
from pythia.profiler import ConfigStats, ConfigStore, StoreError, build_store, enumerate_configs
from pythia.scheduler import (
    POLICY_CHANGE, POLICY_DECISION, STARTUP, ActivationError, Measurement, Scheduler, SwitchEvent,
)


class FakeBackend:
    """Replays true per-config behaviour; the store may hold stale numbers."""

    def __init__(self, truth, offered, broken=()):
        self.truth = truth                 # id -> (app_gbps dict, latency, watts)
        self.offered = dict(offered)
        self.active = None
        self.since = 0.0
        self.broken = set(broken)
        self.activations = []

    def offered_gbps(self, t):
        return dict(self.offered)

    def measure(self, t0, t1):
        g, lat, w = self.truth[self.active.id]
        return Measurement(t1 - t0, dict(self.offered), dict(g), {a: v / 12 for a, v in g.items()}, lat, w,
                           10 * len(g), self.since <= t0)

    def activate(self, config, now, reason):
        if config.id in self.broken:
            raise ActivationError("device missing")
        prev = self.active
        self.active = config
        self.since = now
        self.activations.append((now, config.id, reason))
        return SwitchEvent(now, None if prev is None else prev.id, config.id, reason, now + 5.0)


def _stats(g, lat, w, t=0.0):
    return ConfigStats(sum(g.values()), sum(g.values()) / 12, lat, w, 20, t, tuple(g.items()), 1.0)


def _setup(profiles=None, offered=None):
    cfgs = enumerate_configs(["AES"], ["a", "b", "c"], [1024])
    profiles = profiles or [({"AES": 10.0}, 5.0, 100.0), ({"AES": 20.0}, 3.0, 250.0), ({"AES": 4.0}, 9.0, 30.0)]
    store = build_store([(c, _stats(*p)) for c, p in zip(cfgs, profiles)])
    truth = {c.id: p for c, p in zip(cfgs, profiles)}
    return store, FakeBackend(truth, offered or {"AES": 2.0})


def test_startup_picks_head():
    store, be = _setup()
    s = Scheduler.create(store, "max_throughput", be)
    ev = s.start(0.0)
    assert ev.to_config == store.head("gbps")[0].id == 1 and ev.reason == STARTUP


def test_fixed_point_and_samples():
    store, be = _setup()
    s = Scheduler.create(store, "max_throughput", be)
    s.start(0.0)
    before = store.stats(1).samples
    for k in range(1, 6):
        assert s.tick(k * 1000.0) is None
    assert store.stats(1).samples == before + 5 * 10
    assert store.stats(1).last_updated_ms == 5000.0


def test_converges_within_two_ticks_when_profile_is_wrong():
    # the store claims b is fastest; in reality it only reaches 8 Gbps
    store, be = _setup()
    be.truth[1] = ({"AES": 8.0}, 3.0, 250.0)
    s = Scheduler.create(store, "max_throughput", be)
    s.start(0.0)
    ev = s.tick(1000.0)
    assert ev is not None and ev.to_config == 0 and ev.reason == POLICY_DECISION
    seen = [s.tick(t) for t in (2000.0, 3000.0, 4000.0, 5000.0)]
    assert seen[0] is None or seen[1] is None
    assert all(e is None for e in seen[1:])
    assert s.state.active == 0


def test_partial_window_does_not_refresh():
    store, be = _setup()
    s = Scheduler.create(store, "max_throughput", be)
    s.start(500.0)
    s.tick(1000.0)                        # window [500, 1000] starts exactly at activation: complete
    be.since = 1500.0
    stale = store.stats(1)
    s.tick(2000.0)
    assert store.stats(1) == stale


def test_hysteresis_holds_close_candidates():
    store, be = _setup([({"AES": 10.0}, 5.0, 100.0), ({"AES": 10.1}, 5.0, 100.0)])
    be.truth[1] = ({"AES": 10.1}, 5.0, 100.0)
    s = Scheduler.create(store, "max_throughput", be, hysteresis=0.02)
    s.start(0.0)
    assert s.state.active == 1
    be.truth[1] = ({"AES": 9.95}, 5.0, 100.0)
    assert s.tick(1000.0) is None          # 10.0 is not 2% better than 9.95
    s2_store, be2 = _setup([({"AES": 10.0}, 5.0, 100.0), ({"AES": 10.1}, 5.0, 100.0)])
    be2.truth[1] = ({"AES": 9.95}, 5.0, 100.0)
    s2 = Scheduler.create(s2_store, "max_throughput", be2, hysteresis=0.0)
    s2.start(0.0)
    assert s2.tick(1000.0).to_config == 0  # paper-fidelity: any improvement switches


def test_policy_change_and_rejections():
    store, be = _setup()
    s = Scheduler.create(store, "max_throughput", be)
    s.start(0.0)
    assert s.set_policy("max_throughput", 100.0) is False
    with pytest.raises(UnknownPolicy):
        s.set_policy("foo", 100.0)
    assert str(s.state.policy) == "max_throughput"
    s.command("policy min_energy", 15_000.0)
    ev = s.tick(16_000.0)
    assert ev.reason == POLICY_CHANGE and ev.to_config == 2
    with pytest.raises(ValueError):
        s.command("reboot now", 0.0)
    s.command("shutdown 20000", 0.0)
    assert s.state.shutdown_at_ms == 20_000.0


def test_feasibility_override_and_step():
    store, be = _setup(offered={"AES": 3.0})
    s = Scheduler.create(store, "min_energy", be)
    s.start(0.0)
    assert s.state.active == 2              # 4 Gbps at 30 W covers 3 Gbps
    be.offered = {"AES": 15.0}
    ev = s.tick(1000.0)
    assert ev.to_config == 1                # only b covers 15 Gbps
    be.offered = {"AES": 3.0}
    assert s.tick(2000.0).to_config == 2    # deactivated on the following tick


def test_min_energy_zero_load_picks_lowest_power():
    store, be = _setup(offered={"AES": 0.0})
    s = Scheduler.create(store, "min_energy", be)
    assert s.start(0.0).to_config == 2


def test_failed_activation_marks_unprofiled():
    store, be = _setup()
    be.truth[1] = ({"AES": 1.0}, 3.0, 250.0)
    be.broken = {0}
    s = Scheduler.create(store, "max_throughput", be)
    s.start(0.0)
    assert s.tick(1000.0) is None
    assert not store.stats(0).profiled and s.state.active == 1
    assert select("max_throughput", store, PolicyContext()).id == 2


def test_ewma_blend():
    store, be = _setup()
    be.truth[1] = ({"AES": 10.0}, 3.0, 250.0)
    s = Scheduler.create(store, "max_throughput", be, ewma_alpha=0.5, hysteresis=0.5)
    s.start(0.0)
    s.tick(1000.0)
    assert store.stats(1).agg_gbps == pytest.approx(15.0)
    with pytest.raises(ValueError):
        Scheduler.create(store, "max_throughput", be, ewma_alpha=2.0)


def test_empty_store_rejected():
    with pytest.raises(StoreError):
        Scheduler.create(ConfigStore(), "max_throughput", FakeBackend({}, {}))
    store, be = _setup()
    with pytest.raises(RuntimeError):
        Scheduler.create(store, "max_throughput", be).tick(1.0)
