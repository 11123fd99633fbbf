import csv

import pytest

from pythia.calibration import DeviceProfile
from pythia.powermeter import (
    ClockError, LiveCpuProvider, MeterError, PowerProvider, ProviderRegistry, SimPowerProvider, UnknownDevice,
    UnknownProvider, energy_between, export_csv, open_meter, sample,
)


@pytest.fixture
def sim(profiles):
    return SimPowerProvider(profiles)


def test_open_meter(sim):
    h = open_meter("GTX1080Ti", sim, 100)
    assert h.device == "GTX1080Ti" and h.sample_interval_ms == 100
    with pytest.raises(UnknownProvider):
        open_meter("GTX1080Ti", "nvml")
    with pytest.raises(UnknownDevice):
        open_meter("TPU", sim)
    assert open_meter("GTX1080Ti").provider == "sim"


def test_die_meter_covers_integrated_gpu(sim):
    assert sim.members("i7-8700K") == ["UHD", "i7-8700K"]
    assert sim.members("UHD") == ["UHD"]
    sim.set_state("i7-8700K", 0, 0.0, True)
    sim.set_state("UHD", 0, 1.0, True)
    assert sim.watts("i7-8700K", 10) == 20.0 + 25.0
    sim.set_state("i7-8700K", 0, 1.0, True)
    assert sim.watts("i7-8700K", 10) == 95.0         # capped at the die TDP


def test_off_device_energy(sim, profiles):
    sim.set_state("GTX1080Ti", 0, 0.0, False)
    h = open_meter("GTX1080Ti", sim)
    sample(h, 0)
    s = sample(h, 1000)
    assert s.watts == profiles["GTX1080Ti"].off_watts
    assert s.joules_since_prev == profiles["GTX1080Ti"].off_watts


def test_full_load_one_second(sim):
    sim.set_state("GTX1080Ti", 0, 1.0, True)
    h = open_meter("GTX1080Ti", sim)
    sample(h, 0)
    assert sample(h, 1000).joules_since_prev == pytest.approx(250.0)


def test_ramp_is_trapezoid(sim):
    sim.set_state("GTX1080Ti", 0, 0.0, True)
    sim.set_state("GTX1080Ti", 1000, 1.0, True, ramp=True)
    h = open_meter("GTX1080Ti", sim)
    sample(h, 0)
    assert sample(h, 1000).joules_since_prev == pytest.approx((55.0 + 250.0) / 2)


def test_energy_between(sim):
    sim.set_state("GTX1080Ti", 0, 1.0, True)
    sim.set_state("GTX1080Ti", 1000, 0.0, True)
    h = open_meter("GTX1080Ti", sim, 100)
    for t in range(0, 2001, 100):
        sample(h, t)
    assert energy_between(h, 500, 500) == 0.0
    assert energy_between(h, 0, 2000) == pytest.approx(250 + 55)
    assert energy_between(h, 0, 1000) + energy_between(h, 1000, 2000) == pytest.approx(energy_between(h, 0, 2000))
    assert energy_between(h, 950, 1050) == pytest.approx(12.5 + 2.75)
    with pytest.raises(MeterError):
        energy_between(h, 0, 3000)
    with pytest.raises(ValueError):
        energy_between(h, 10, 5)


def test_constant_and_piecewise(profiles):
    p = DeviceProfile("X", "cpu", tdp_watts=300, idle_watts=100)
    sim = SimPowerProvider({"X": p})
    h = open_meter("X", sim)
    sample(h, 0)
    sample(h, 2000)
    assert energy_between(h, 0, 2000) == pytest.approx(200.0)
    sim2 = SimPowerProvider(profiles)
    sim2.set_state("GTX1080Ti", 0, 1.0, True)
    sim2.set_state("i7-8700K", 0, 0.0, True)
    assert sim2.energy("GTX1080Ti", 0, 1000) + sim2.energy("i7-8700K", 1000, 2000) == pytest.approx(250 + 20 + 3)


def test_cap_crossing_split(profiles):
    sim = SimPowerProvider(profiles, initial={"UHD": (1.0, True), "i7-8700K": (0.0, True)})
    sim.set_state("i7-8700K", 1000, 1.0, True, ramp=True)     # 20 -> 95 W, plus 25 W of UHD
    # uncapped sum ramps 45 -> 120 W and crosses 95 W at 2/3 of the second
    t = 1000 * (95 - 45) / 75
    expect = (45 + 95) / 2 * t / 1000 + 95 * (1000 - t) / 1000
    assert sim.energy("i7-8700K", 0, 1000) == pytest.approx(expect)


def test_clock_must_not_go_back(sim):
    h = open_meter("GTX1080Ti", sim)
    sample(h, 100)
    with pytest.raises(ClockError):
        sample(h, 50)


def test_trapezoid_fallback():
    class Linear(PowerProvider):
        name = "lin"

        def devices(self):
            return {"d"}

        def watts(self, device, t_ms):
            return t_ms / 10.0

    h = open_meter("d", Linear())
    sample(h, 0)
    assert sample(h, 1000).joules_since_prev == pytest.approx(50.0)


def test_live_provider_and_registry(profiles):
    live = LiveCpuProvider(profiles["i7-8700K"], util_fn=lambda: 0.5)
    assert live.watts("i7-8700K", 0) == 57.5
    with pytest.raises(UnknownDevice):
        live.watts("GTX1080Ti", 0)
    reg = ProviderRegistry()
    reg.register("live", live)
    assert reg.get("live") is live and reg.names() == ["live"]
    with pytest.raises(UnknownProvider):
        reg.get("sim")


def test_export_csv(sim, tmp_path):
    h = open_meter("GTX1080Ti", sim)
    for t in (0, 100, 200):
        sample(h, t)
    p = tmp_path / "power.csv"
    export_csv([h], p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["t_ms", "device", "watts", "joules_interval"] and len(rows) == 4
