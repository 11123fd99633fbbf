import pytest

from pythia.calibration import load_calibration, load_device_profiles
from pythia.profiler import enumerate_configs, profile_all
from pythia.scenario import SHIPPED, load_scenario
from pythia.simengine import SimBackend, run


@pytest.fixture(scope="session")
def profiles():
    return load_device_profiles()


@pytest.fixture(scope="session")
def table(profiles):
    return load_calibration(devices=profiles)


@pytest.fixture(scope="session")
def sim_backend(table, profiles):
    return SimBackend(table, profiles)


class _Runs:
    """Calibrated stores and traces of the shipped scenarios, built on demand."""

    def __init__(self, table, profiles):
        self.table, self.profiles = table, profiles
        self._stores, self._traces = {}, {}

    def spec(self, name):
        return load_scenario(name)

    def store(self, name):
        if name not in self._stores:
            spec = self.spec(name)
            backend = SimBackend(self.table, self.profiles, spec.packet_bytes, spec.flows)
            configs = enumerate_configs(spec.apps, spec.devices, spec.batch_grid)
            self._stores[name] = profile_all(configs, spec.training_batches, backend)
        return self._stores[name]

    def fresh_store(self, name):
        from pythia.profiler import parse_store, format_store
        return parse_store(format_store(self.store(name)))

    def trace(self, name):
        if name not in self._traces:
            self._traces[name] = run(self.spec(name), self.fresh_store(name),
                                     table=self.table, profiles=self.profiles)
        return self._traces[name]


@pytest.fixture(scope="session")
def runs(table, profiles):
    return _Runs(table, profiles)


@pytest.fixture(scope="session")
def shipped():
    return SHIPPED


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line for an acceptance criterion."""
    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        request.config._criteria.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_criteria", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
