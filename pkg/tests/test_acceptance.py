"""Acceptance suite: one test per criterion, each printing a PASS line with the
measured margin. Run with `pytest tests/test_acceptance.py -v -s`.
"""
import math
import time

import numpy as np
import pytest

from generators import generate_events, generate_scenario, lww_oracle, strip_offline, units_written
from sitesync import alignment
from sitesync.alignment import AlignmentTrial, cdf, percentile, rmse, summarize_by_distance
from sitesync.client import load_scenario, run_in_process
from sitesync.damage import OutlineError, SegmentationOutline, polygon_area, polygon_perimeter
from sitesync.geometry import (
    FovSpec,
    Pose,
    Transform,
    fov_footprint,
    quat_rotate,
    rotation_angle_between,
    to_model_coordinates,
    to_world_coordinates,
)
from sitesync.netsim import (
    BEAM_SCENARIO,
    BRIDGE_SCENARIO,
    NetworkProfile,
    boxplot_stats,
    builtin_profiles,
    run_timing_experiment,
)
from sitesync.service import DataStore, LimitExceededError, SessionService
from sitesync.service.core import MAX_BLOB_BYTES, MAX_POLYGONS
from sitesync.sync import MOVE_MODEL, SessionEvent, SessionState



def note(line: str):
    print(f"\nACCEPTANCE {line}")


# --------------------------------------------------------------------------
# shared oracles (independent of the implementations under test)


def quat_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def homogeneous(t: Transform):
    m = np.eye(4)
    m[:3, :3] = t.scale * quat_matrix(t.orientation)
    m[:3, 3] = t.position
    return m


def percentile_oracle(values, p):
    data = sorted(values)
    rank = (p / 100.0) * (len(data) - 1)
    lo, hi = math.floor(rank), math.ceil(rank)
    return data[lo] + (rank - lo) * (data[hi] - data[lo])


def rmse_oracle(values):
    return math.sqrt(sum(v * v for v in values) / len(values))


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_transform(rng):
    return Transform(Pose(rng.uniform(-10, 10, 3), random_unit_quat(rng)), rng.uniform(0.1, 10.0))


# --------------------------------------------------------------------------
# criteria


def test_c01_transform_correctness_10k():
    rng = np.random.default_rng(101)
    started = time.perf_counter()
    worst_round_trip = 0.0
    worst_oracle = 0.0
    for _ in range(10_000):
        model = random_transform(rng)
        point = rng.uniform(-20, 20, 3)
        local = to_model_coordinates(point, model)
        back = to_world_coordinates(local, model)
        worst_round_trip = max(worst_round_trip, float(np.max(np.abs(back - point))))
        oracle_local = (np.linalg.inv(homogeneous(model)) @ np.append(point, 1.0))[:3]
        worst_oracle = max(worst_oracle, float(np.max(np.abs(local - oracle_local))))
    elapsed = time.perf_counter() - started
    assert worst_round_trip < 1e-9
    assert worst_oracle < 1e-9
    assert elapsed < 5.0
    note(
        f"C01 transform correctness: 10k pairs, round-trip {worst_round_trip:.2e}, "
        f"oracle dev {worst_oracle:.2e}, {elapsed:.2f}s -- PASS"
    )


def test_c02_rotation_metric_10k():
    rng = np.random.default_rng(202)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(10_000):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        got = rotation_angle_between(a, b)
        r = quat_matrix(a).T @ quat_matrix(b)
        expected = math.degrees(math.acos(min(1.0, max(-1.0, (np.trace(r) - 1.0) / 2.0))))
        worst = max(worst, abs(got - expected))
        assert rotation_angle_between(b, -b) == 0.0  # double cover, exact after clamping
    elapsed = time.perf_counter() - started
    assert worst < 1e-6
    assert elapsed < 5.0
    note(f"C02 rotation metric: 10k pairs, max deviation {worst:.2e} deg, {elapsed:.2f}s -- PASS")


def test_c03_fov_footprint_reported_values():
    fov = FovSpec(43.0, 29.0)
    w15, h15 = fov_footprint(fov, 15.0)
    w20, h20 = fov_footprint(fov, 20.0)
    for got, want in ((w15, 11.8), (h15, 7.8), (w20, 15.8), (h20, 10.3)):
        assert abs(got - want) <= 0.05
    note(
        f"C03 FOV footprint: 15m -> {w15:.2f}x{h15:.2f} (11.8x7.8), "
        f"20m -> {w20:.2f}x{h20:.2f} (15.8x10.3), within 0.05m -- PASS"
    )


def test_c04_statistics_against_brute_force():
    rng = np.random.default_rng(404)
    for _ in range(1000):
        n = int(rng.integers(1, 501))
        values = rng.uniform(0, 1000, n).tolist()
        p = float(rng.uniform(0, 100))
        assert abs(percentile(values, p) - percentile_oracle(values, p)) < 1e-9
        assert abs(rmse(values) - rmse_oracle(values)) < 1e-9
        points = cdf(values)
        expected_cdf = [(v, (i + 1) / n) for i, v in enumerate(sorted(values))]
        assert all(abs(a[0] - b[0]) < 1e-9 and abs(a[1] - b[1]) < 1e-9 for a, b in zip(points, expected_cdf))
        stats = boxplot_stats(values)
        q1, q3 = percentile_oracle(values, 25), percentile_oracle(values, 75)
        iqr = q3 - q1
        expected_outliers = sorted(v for v in values if v < q1 - 1.5 * iqr or v > q3 + 1.5 * iqr)
        assert abs(stats["q1"] - q1) < 1e-9 and abs(stats["q3"] - q3) < 1e-9
        assert abs(stats["median"] - percentile_oracle(values, 50)) < 1e-9
        assert np.allclose(stats["outliers"], expected_outliers, atol=1e-9)

    # Table-4-shaped stand-in report: synthetic 5 trials x 4 distances,
    # expectations hand-computed with the stated percentile rule.
    trials = []
    offsets = {}
    for di, distance in enumerate((2.0, 3.0, 4.0, 5.0)):
        per = [0.02 * (di + 1) + 0.01 * r for r in range(5)]  # meters
        offsets[distance] = [v * 100 for v in per]
        for run, offset in enumerate(per, start=1):
            trials.append(
                AlignmentTrial(distance, run, Pose([offset, 0, 0], [1, 0, 0, 0]), Pose([0, 0, 0], [1, 0, 0, 0]))
            )
    summary = summarize_by_distance(trials)
    assert sorted(summary) == [2.0, 3.0, 4.0, 5.0]
    for distance, (trans, _rot) in summary.items():
        want = offsets[distance]
        assert trans.n == 5
        assert abs(trans.rmse - rmse_oracle(want)) < 1e-9
        assert abs(trans.p50 - percentile_oracle(want, 50)) < 1e-9
        assert abs(trans.p95 - percentile_oracle(want, 95)) < 1e-9
    rows = alignment.summary_rows(summary)
    assert len(rows) == 4 and list(rows[0]) == list(alignment.REPORT_COLUMNS)
    note("C04 statistics: 1000 datasets vs brute force < 1e-9; 5x4 synthetic report matches hand-computed -- PASS")


def test_c05_lww_convergence_100_seeds():
    started = time.perf_counter()
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        events = generate_events(rng, 200)
        replicas = []
        for _ in range(2):
            order = rng.permutation(len(events))
            state = SessionState("m")
            for idx in order:
                state.merge(events[idx])
            replicas.append(state)
        a, b = replicas
        assert a.fingerprint() == b.fingerprint()

        def conflict_multiset(state):
            return sorted(
                (tuple(c.target), c.losing_event.event_id, c.winning_timestamp_ms, c.winning_client_id)
                for c in state.conflict_log()
            )

        assert conflict_multiset(a) == conflict_multiset(b)

        winners = lww_oracle(events)
        losses = {}
        for c in a.conflict_log():
            key = (tuple(c.target), c.losing_event.event_id)
            losses[key] = losses.get(key, 0) + 1
        canonical = a.canonical_state()
        for unit, winner in winners.items():
            if unit[0] == "model_transform":
                stamp = canonical["model_transform"]["stamp"]
            elif unit[0] == "record":
                stamp = canonical["ledger"][str(unit[1])]["stamp"]
            else:
                key = "meta" if unit[0] == "marker_meta" else "position"
                stamp = canonical["markers"][str(unit[1])][key]["stamp"]
            assert stamp == [winner.timestamp_ms, winner.client_id, winner.event_id]
        for event in events:
            for unit in units_written(event):
                key = (unit, event.event_id)
                if winners[unit].event_id == event.event_id:
                    assert key not in losses
                else:
                    assert losses.get(key) == 1
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    note(f"C05 LWW convergence: 100 seeds x 200 events x 2 delivery orders, {elapsed:.1f}s -- PASS")


def test_c06_persistence_and_parenting(tmp_path):
    rng = np.random.default_rng(606)
    store = DataStore(tmp_path / "data")
    service = SessionService(store, snapshot_interval=3)
    service.register_model(b"beam" * 64, qr_token="qr-acc", display_name="beam", polygon_count=1000)
    model_id = service.resolve_qr("qr-acc").model_id
    service.join("A", "qr-acc")

    for i, world in enumerate(([1.5, 0.25, -2.0], [0.1, 0.2, 0.3], [-3.0, 1.0, 0.5]), start=1):
        service.submit_event(
            "A",
            model_id,
            SessionEvent(f"add{i}", "add_marker", "A", 100 + i, {"world_position": world, "label": "spalling", "details": f"d{i}"}),
        )
    locals_before = {
        m["marker_id"]: list(m["local_position"]) for m in service.session_snapshot(model_id)["markers"]
    }

    last_transform = None
    for i in range(10):
        quat = random_unit_quat(rng)
        transform = {
            "pos": [float(v) for v in rng.uniform(-5, 5, 3)],
            "quat": [float(v) for v in quat],
            "scale": float(rng.uniform(0.1, 10.0)),
        }
        last_transform = transform
        service.submit_event(
            "A", model_id, SessionEvent(f"mv{i}", MOVE_MODEL, "A", 200 + i, {"transform": transform})
        )
    service.submit_event("A", model_id, SessionEvent("end", "end_session", "A", 500, {}))
    service.close()

    revived = SessionService(DataStore(tmp_path / "data"))
    snapshot = revived.session_snapshot(model_id)
    assert snapshot["sealed"] is True
    restored = SessionState.restore(snapshot)
    worst = 0.0
    for marker_id, local in locals_before.items():
        got = restored.marker(marker_id).local_position
        assert list(got) == local  # bit-identical local coordinates
        model = Transform.from_dict(last_transform)
        oracle_world = (homogeneous(model) @ np.append(np.asarray(local), 1.0))[:3]
        dev = float(np.max(np.abs(restored.world_position_of(marker_id) - oracle_world)))
        worst = max(worst, dev)
    assert worst < 1e-9
    revived.close()
    note(f"C06 persistence/parenting: 3 markers bit-identical after 10 moves + restore; world dev {worst:.2e} -- PASS")


def test_c07_offline_equivalence_50_scripts():
    flat = NetworkProfile("flat", latency_ms=2.0, throughput_bytes_per_s=1e9)
    started = time.perf_counter()
    for seed in range(50):
        rng = np.random.default_rng(7000 + seed)
        doc = generate_scenario(rng, n_clients=int(rng.integers(1, 4)), steps_per_client=int(rng.integers(6, 14)))
        has_offline = any(s["op"] == "go_offline" for c in doc["clients"] for s in c["steps"])
        if not has_offline:
            doc["clients"][0]["steps"].insert(2, {"op": "go_offline"})
            doc["clients"][0]["steps"].insert(3, {"op": "go_online"})

        offline_service = SessionService(store=None)
        offline_service.register_model(b"m" * 64, qr_token="qr-sim", display_name="m", polygon_count=10)
        online_service = SessionService(store=None)
        online_service.register_model(b"m" * 64, qr_token="qr-sim", display_name="m", polygon_count=10)

        offline_report = run_in_process(load_scenario(doc), offline_service, flat, seed=99)
        online_report = run_in_process(load_scenario(strip_offline(doc)), online_service, flat, seed=99)

        assert offline_report.final_state_hash == online_report.final_state_hash
        offline_ids = [t["event_id"] for t in offline_report.event_trace]
        online_ids = [t["event_id"] for t in online_report.event_trace]
        assert sorted(offline_ids) == sorted(online_ids)  # zero loss
        assert len(offline_ids) == len(set(offline_ids))  # zero duplication
        assert offline_report.event_accounting["queued_leftover"] == 0
        assert offline_report.event_accounting["submitted"] == len(offline_ids)
    elapsed = time.perf_counter() - started
    note(f"C07 offline equivalence: 50 random scripts with disconnects, {elapsed:.1f}s -- PASS")


def test_c08_model_limits_boundaries():
    service = SessionService(store=None)
    with pytest.raises(LimitExceededError):
        service.register_model(b"x", qr_token="p1", display_name="m", polygon_count=MAX_POLYGONS + 1)
    with pytest.raises(LimitExceededError):
        service.register_model(bytes(MAX_BLOB_BYTES + 1), qr_token="b1", display_name="m", polygon_count=1)
    boundary = service.register_model(
        bytes(MAX_BLOB_BYTES), qr_token="b2", display_name="m", polygon_count=MAX_POLYGONS
    )
    assert boundary.blob_size_bytes == MAX_BLOB_BYTES
    beam = service.register_model(bytes(154 * 10**6), qr_token="beam", display_name="beam", polygon_count=100_000)
    assert beam.blob_size_bytes == 154 * 10**6
    note(
        f"C08 model limits: {MAX_POLYGONS + 1} polys and {MAX_BLOB_BYTES + 1} bytes rejected; "
        f"boundaries and the 154MB beam accepted -- PASS"
    )


def test_c09_timing_reproduction():
    profiles = builtin_profiles()
    beam = run_timing_experiment(BEAM_SCENARIO, [profiles["4G-beam"], profiles["5G-beam"]], trials=5)
    bridge = run_timing_experiment(BRIDGE_SCENARIO, [profiles["4G-bridge"], profiles["5G-bridge"]], trials=5)
    checks = [
        (beam["stats"]["4G-beam"]["model_load"]["median"], 3000.0),
        (beam["stats"]["5G-beam"]["model_load"]["median"], 1200.0),
        (bridge["stats"]["4G-bridge"]["model_load"]["median"], 4000.0),
        (bridge["stats"]["5G-bridge"]["model_load"]["median"], 1500.0),
    ]
    for got, want in checks:
        assert abs(got - want) <= 0.10 * want
    save_4g = beam["stats"]["4G-beam"]["data_save"]["median"]
    assert 20.0 <= save_4g <= 30.0

    # sample-wise dominance under dominance-ordered profiles (shared jitter seed)
    slow = NetworkProfile("4G-dom", 25.0, 51.76e6, jitter_ms=40.0, seed=9)
    fast = NetworkProfile("5G-dom", 10.0, 129.4e6, jitter_ms=15.0, seed=9)
    result = run_timing_experiment(BEAM_SCENARIO, [slow, fast], trials=25)
    for op in ("model_load", "data_load", "data_save"):
        fast_samples = [s.duration_ms for s in result["samples"]["5G-dom"][op]]
        slow_samples = [s.duration_ms for s in result["samples"]["4G-dom"][op]]
        assert all(f <= s for f, s in zip(fast_samples, slow_samples))
    note(
        f"C09 timing: beam {checks[0][0]:.0f}/{checks[1][0]:.0f} ms, bridge {checks[2][0]:.0f}/{checks[3][0]:.0f} ms "
        f"(within 10%), 4G save {save_4g:.1f} ms in [20,30], 5G dominates sample-wise -- PASS"
    )


def test_c10_damage_geometry():
    square = SegmentationOutline([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], closed=True)
    assert polygon_area(square) == pytest.approx(1.0, abs=1e-12)
    assert polygon_perimeter(square) == pytest.approx(4.0, abs=1e-12)
    triangle = SegmentationOutline([(0, 0, 0), (3, 0, 0), (3, 4, 0)], closed=True)
    assert polygon_area(triangle) == pytest.approx(6.0, abs=1e-12)
    assert polygon_perimeter(triangle) == pytest.approx(12.0, abs=1e-12)

    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(200):
        quat = random_unit_quat(rng)
        shift = rng.uniform(-5, 5, 3)
        moved = SegmentationOutline([quat_rotate(quat, p) + shift for p in square.points], closed=True)
        worst = max(worst, abs(polygon_area(moved) - 1.0), abs(polygon_perimeter(moved) - 4.0))
    assert worst < 1e-9

    bumped = SegmentationOutline([(0, 0, 0), (1, 0, 0), (1, 1, 0.1), (0, 1, 0)], closed=True)
    with pytest.raises(OutlineError, match="deviation"):
        polygon_area(bumped)
    note(f"C10 damage geometry: square/triangle exact, rigid-motion dev {worst:.2e}, non-planar rejected -- PASS")
