"""Deterministic 4G/5G transfer emulation and the load/save timing experiments.

A transfer takes one-way latency plus payload over effective throughput plus a
seeded uniform jitter term. Profiles are calibrated per scenario from observed
durations; the built-in profiles reproduce the reported model-load times for
the lab beam (~154 MB: 3.0 s on 4G, 1.2 s on 5G) and the city bridge
(~430 MB: 4.0 s on 4G, 1.5 s on 5G), with 4G damage-data saves landing in the
20-30 ms band.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .alignment import percentile

BEAM_MODEL_BYTES = 154_000_000
BRIDGE_MODEL_BYTES = 430_000_000

# Assumed one-way latencies the calibration residual is measured against.
LATENCY_4G_MS = 25.0
LATENCY_5G_MS = 10.0


@dataclass(frozen=True)
class NetworkProfile:
    name: str
    latency_ms: float
    throughput_bytes_per_s: float
    jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")
        if self.throughput_bytes_per_s <= 0:
            raise ValueError("throughput_bytes_per_s must be > 0")
        if self.jitter_ms < 0:
            raise ValueError("jitter_ms must be >= 0")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "latency_ms": self.latency_ms,
            "throughput_bytes_per_s": self.throughput_bytes_per_s,
            "jitter_ms": self.jitter_ms,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkProfile":
        return cls(
            name=data["name"],
            latency_ms=float(data["latency_ms"]),
            throughput_bytes_per_s=float(data["throughput_bytes_per_s"]),
            jitter_ms=float(data.get("jitter_ms", 0.0)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class TimingSample:
    operation: str  # model_load | data_load | data_save
    duration_ms: float
    profile: str
    payload_bytes: int

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be > 0")


def simulate_transfer(profile: NetworkProfile, payload_bytes: int, rng=None) -> float:
    """Duration in ms: latency + payload/throughput + seeded jitter.

    Pass one rng across calls to draw a jitter sequence; with rng=None a
    fresh generator seeded from the profile is used, so repeated standalone
    calls are identical.
    """
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    duration = profile.latency_ms + 1000.0 * payload_bytes / profile.throughput_bytes_per_s
    if profile.jitter_ms > 0:
        if rng is None:
            rng = np.random.default_rng(profile.seed)
        duration += float(rng.uniform(0.0, profile.jitter_ms))
    return duration


def calibrate_profile(
    observed_duration_ms: float,
    payload_bytes: int,
    latency_ms: float,
    name: str = "calibrated",
    jitter_ms: float = 0.0,
    seed: int = 0,
) -> NetworkProfile:
    """Solve the throughput that reproduces an observed duration exactly (jitter 0)."""
    if observed_duration_ms <= latency_ms:
        raise ValueError(
            f"observed duration {observed_duration_ms} ms must exceed latency {latency_ms} ms"
        )
    throughput = 1000.0 * payload_bytes / (observed_duration_ms - latency_ms)
    return NetworkProfile(name, latency_ms, throughput, jitter_ms=jitter_ms, seed=seed)


def builtin_profiles(jitter_ms_4g: float = 0.0, jitter_ms_5g: float = 0.0, seed: int = 0) -> dict[str, NetworkProfile]:
    """Per-scenario calibrated profiles for the beam and bridge experiments."""
    return {
        "4G-beam": calibrate_profile(3000.0, BEAM_MODEL_BYTES, LATENCY_4G_MS, "4G-beam", jitter_ms_4g, seed),
        "5G-beam": calibrate_profile(1200.0, BEAM_MODEL_BYTES, LATENCY_5G_MS, "5G-beam", jitter_ms_5g, seed),
        "4G-bridge": calibrate_profile(4000.0, BRIDGE_MODEL_BYTES, LATENCY_4G_MS, "4G-bridge", jitter_ms_4g, seed),
        "5G-bridge": calibrate_profile(1500.0, BRIDGE_MODEL_BYTES, LATENCY_5G_MS, "5G-bridge", jitter_ms_5g, seed),
    }


def boxplot_stats(samples) -> dict:
    """Median/quartiles with Tukey 1.5*IQR whiskers and the points beyond them."""
    values = sorted(float(v) for v in samples)
    if not values:
        raise ValueError("boxplot of an empty sample set")
    q1 = percentile(values, 25)
    median = percentile(values, 50)
    q3 = percentile(values, 75)
    iqr = q3 - q1
    low_fence = q1 - 1.5 * iqr
    high_fence = q3 + 1.5 * iqr
    inside = [v for v in values if low_fence <= v <= high_fence]
    return {
        "median": median,
        "q1": q1,
        "q3": q3,
        "iqr": iqr,
        "whisker_low": min(inside),
        "whisker_high": max(inside),
        "outliers": [v for v in values if v < low_fence or v > high_fence],
        "n": len(values),
    }


@dataclass(frozen=True)
class TimingScenario:
    """Payload sizes exercised per trial: one load of the model, one damage-data
    load, one damage-data save."""

    name: str
    model_bytes: int
    data_load_bytes: int = 20_000
    data_save_bytes: int = 1_000

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model_bytes": self.model_bytes,
            "data_load_bytes": self.data_load_bytes,
            "data_save_bytes": self.data_save_bytes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TimingScenario":
        return cls(
            name=data["name"],
            model_bytes=int(data["model_bytes"]),
            data_load_bytes=int(data.get("data_load_bytes", 20_000)),
            data_save_bytes=int(data.get("data_save_bytes", 1_000)),
        )


BEAM_SCENARIO = TimingScenario("beam", BEAM_MODEL_BYTES)
BRIDGE_SCENARIO = TimingScenario("bridge", BRIDGE_MODEL_BYTES)

OPERATIONS = ("model_load", "data_load", "data_save")


def run_timing_experiment(scenario: TimingScenario, profiles, trials: int) -> dict:
    """Record load/save timings per profile across trials and summarize them.

    Returns {"scenario", "trials", "samples": {profile: {op: [TimingSample]}},
    "stats": {profile: {op: boxplot}}, "ratios": {"5G/4G": {op: ratio}}}.
    Bit-reproducible for a fixed profile seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    payloads = {
        "model_load": scenario.model_bytes,
        "data_load": scenario.data_load_bytes,
        "data_save": scenario.data_save_bytes,
    }
    samples: dict[str, dict[str, list[TimingSample]]] = {}
    for profile in profiles:
        rng = np.random.default_rng(profile.seed)
        per_op = {op: [] for op in OPERATIONS}
        for _ in range(trials):
            for op in OPERATIONS:
                duration = simulate_transfer(profile, payloads[op], rng)
                per_op[op].append(TimingSample(op, duration, profile.name, payloads[op]))
        samples[profile.name] = per_op

    stats = {
        name: {op: boxplot_stats([s.duration_ms for s in op_samples]) for op, op_samples in per_op.items()}
        for name, per_op in samples.items()
    }
    ratios = {}
    for fast in samples:
        for slow in samples:
            if fast.startswith("5G") and slow.startswith("4G"):
                ratios[f"{fast}/{slow}"] = {
                    op: stats[fast][op]["median"] / stats[slow][op]["median"] for op in OPERATIONS
                }
    return {"scenario": scenario.name, "trials": trials, "samples": samples, "stats": stats, "ratios": ratios}


def report_dict(result: dict) -> dict:
    """JSON-friendly form of a timing-experiment result."""
    return {
        "scenario": result["scenario"],
        "trials": result["trials"],
        "stats": result["stats"],
        "ratios": result["ratios"],
        "samples": {
            name: {op: [s.duration_ms for s in op_samples] for op, op_samples in per_op.items()}
            for name, per_op in result["samples"].items()
        },
    }


def format_report(result: dict) -> str:
    lines = [f"scenario: {result['scenario']}  trials: {result['trials']}"]
    header = f"{'profile':<12}{'operation':<12}{'median':>12}{'q1':>12}{'q3':>12}{'outliers':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for name, per_op in result["stats"].items():
        for op, stats in per_op.items():
            lines.append(
                f"{name:<12}{op:<12}{stats['median']:>12.1f}{stats['q1']:>12.1f}{stats['q3']:>12.1f}"
                f"{len(stats['outliers']):>10}"
            )
    for pair, per_op in result["ratios"].items():
        ratio_text = ", ".join(f"{op} {ratio:.2f}" for op, ratio in per_op.items())
        lines.append(f"median ratio {pair}: {ratio_text}")
    return "\n".join(lines)


def load_profiles(path) -> list[NetworkProfile]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = [raw]
    return [NetworkProfile.from_dict(p) for p in raw]


def load_scenario(path) -> TimingScenario:
    with open(path, "r", encoding="utf-8") as fh:
        return TimingScenario.from_dict(json.load(fh))
