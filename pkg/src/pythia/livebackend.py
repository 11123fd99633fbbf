"""Live backend: runs the reference kernels on the host CPU.

Only the CPU device can be exercised; configurations that map an app to a
GPU are reported as model gaps. Each batch is timed on a sample of at most
``max_packets`` packets and the wall time scaled linearly to the full batch,
which keeps 64K-packet batches affordable. Co-located apps run back to back
in one process, so the co-worker slow-down is whatever time-sharing costs.
"""

from __future__ import annotations

import time
from typing import Mapping

from pythia.calibration import DeviceProfile, ModelGapError, load_device_profiles, power_draw
from pythia.profiler import Configuration, TrainingResult, kernel_of
from pythia.refkernels import default_matcher, run_kernel
from pythia.traffic import make_flow, synth_payload

DEFAULT_SAMPLE_PACKETS = 256


class LiveBackend:
    name = "live"

    def __init__(self, profiles: Mapping[str, DeviceProfile] | None = None, packet_bytes: int = 1514,
                 max_packets: int = DEFAULT_SAMPLE_PACKETS, seed: int = 0, match_fraction: float = 0.3,
                 util_fn=None):
        profs = dict(profiles) if profiles is not None else load_device_profiles()
        cpus = [p for p in profs.values() if p.cls == "cpu"]
        if not cpus:
            raise ValueError("live backend needs a cpu device profile")
        self.cpu = cpus[0]
        self.packet_bytes = packet_bytes
        self.max_packets = max_packets
        self.seed = seed
        self.match_fraction = match_fraction
        self._payloads: dict[int, list[bytes]] = {}
        self._flows: list[int] = [make_flow(0, i, seed).hash for i in range(max_packets)]
        self._util_fn = util_fn
        self._matcher = None

    def _sample(self, n: int) -> list[bytes]:
        if n not in self._payloads:
            self._payloads[n] = [synth_payload(self.seed * 1_000_003 + i, self.packet_bytes, self.match_fraction)
                                 for i in range(n)]
        return self._payloads[n]

    def _cpu_util(self) -> float:
        if self._util_fn is not None:
            return self._util_fn()
        import psutil
        return psutil.cpu_percent(interval=None) / 100.0

    def train(self, config: Configuration, training_batches: int) -> TrainingResult:
        bad = [d for d in config.devices if d != self.cpu.id]
        if bad:
            raise ModelGapError(f"live backend cannot run on {', '.join(bad)}")
        n = min(config.batch_size, self.max_packets)
        scale = config.batch_size / n
        payloads = self._sample(n)
        flows = self._flows[:n]
        if self._matcher is None and any(kernel_of(a) == "DPI" for a in config.apps):
            self._matcher = default_matcher()     # built once, outside the timed region
        self._cpu_util()                      # prime the psutil counter
        bits = config.batch_size * self.packet_bytes * 8
        per_app_ms: dict[str, float] = {a: 0.0 for a in config.apps}
        lat: list[float] = []
        t0 = time.perf_counter()
        for _ in range(training_batches):
            for app in config.apps:
                r = run_kernel(kernel_of(app), payloads, flows, self._matcher, key_seed=self.seed)
                ms = r.wall_latency_ms * scale
                per_app_ms[app] += ms
                lat.append(ms)
        wall_ms = (time.perf_counter() - t0) * 1000.0 * scale
        util = min(max(self._cpu_util(), 0.0), 1.0)
        total_ms = sum(per_app_ms.values())
        # apps share the CPU back to back: each gets bits over the whole round
        app_gbps = {a: training_batches * bits / total_ms / 1e6 for a in config.apps}
        agg = sum(app_gbps.values())
        energy = power_draw(self.cpu, util, True) * wall_ms / 1000.0
        return TrainingResult(agg, agg / (self.packet_bytes * 8 / 1000.0), app_gbps,
                              total_ms / len(lat), lat, energy, wall_ms, training_batches)
