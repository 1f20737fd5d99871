import math

import numpy as np
import pytest

from sitesync.geometry import (
    FovSpec,
    GeometryError,
    Pose,
    Transform,
    compose,
    fov_footprint,
    inverse,
    quat_from_axis_angle,
    rotation_angle_between,
    to_model_coordinates,
    to_world_coordinates,
    translation_offset,
)

# ---------------------------------------------------------------------------
# Independent oracles: build 4x4 homogeneous matrices from scratch and do all
# the algebra with numpy.linalg, never through the code under test.


def quat_matrix_oracle(q):
    w, x, y, z = q
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def matrix_oracle(t: Transform) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = t.scale * quat_matrix_oracle(t.orientation)
    m[:3, 3] = t.position
    return m


def apply_matrix(m: np.ndarray, p) -> np.ndarray:
    return (m @ np.append(np.asarray(p, dtype=float), 1.0))[:3]


def angle_trace_oracle(qa, qb) -> float:
    """Geodesic angle via the relative rotation matrix trace: acos((tr-1)/2)."""
    r = quat_matrix_oracle(qa).T @ quat_matrix_oracle(qb)
    c = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def random_unit_quat(rng) -> np.ndarray:
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_transform(rng, scale_range=(0.1, 10.0)) -> Transform:
    return Transform(
        Pose(rng.uniform(-10, 10, 3), random_unit_quat(rng)),
        rng.uniform(*scale_range),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# ---------------------------------------------------------------------------
# Construction and validation


def test_pose_normalizes_orientation():
    pose = Pose([0, 0, 0], [2.0, 0.0, 0.0, 0.0])
    assert abs(np.linalg.norm(pose.orientation) - 1.0) < 1e-9


def test_pose_rejects_bad_inputs():
    with pytest.raises(GeometryError):
        Pose([0, 0, float("nan")], [1, 0, 0, 0])
    with pytest.raises(GeometryError):
        Pose([0, 0, 0], [0, 0, 0, 0])


def test_transform_rejects_nonpositive_scale():
    for scale in (0.0, -1.0, float("nan")):
        with pytest.raises(GeometryError):
            Transform(Pose.identity(), scale)


def test_fovspec_range():
    with pytest.raises(GeometryError):
        FovSpec(0.0, 29.0)
    with pytest.raises(GeometryError):
        FovSpec(43.0, 180.0)


# ---------------------------------------------------------------------------
# compose / inverse


def test_compose_identity_is_neutral(rng):
    t = random_transform(rng)
    for composed in (compose(Transform.identity(), t), compose(t, Transform.identity())):
        assert np.allclose(composed.position, t.position, atol=1e-12)
        assert composed.scale == pytest.approx(t.scale)


def test_compose_pure_translations_add():
    a = Transform.from_parts(position=(10, 0, 0))
    b = Transform.from_parts(position=(1, 2, 0))
    c = compose(a, b)
    assert np.allclose(c.position, [11, 2, 0])


def test_compose_scale_acts_on_child_translation():
    # scale-2 parent at the origin pushes the child's translation out to (2,4,0)
    parent = Transform.from_parts(scale=2.0)
    child = Transform.from_parts(position=(1, 2, 0))
    composed = compose(parent, child)
    oracle = matrix_oracle(parent) @ matrix_oracle(child)
    assert np.allclose(composed.position, [2, 4, 0], atol=1e-12)
    assert np.allclose(matrix_oracle(composed), oracle, atol=1e-12)


def test_compose_matches_matrix_product(rng):
    for _ in range(200):
        a, b = random_transform(rng), random_transform(rng)
        got = matrix_oracle(compose(a, b))
        want = matrix_oracle(a) @ matrix_oracle(b)
        assert np.max(np.abs(got - want)) < 1e-9


def test_compose_associative(rng):
    for _ in range(100):
        a, b, c = (random_transform(rng) for _ in range(3))
        left = matrix_oracle(compose(compose(a, b), c))
        right = matrix_oracle(compose(a, compose(b, c)))
        assert np.max(np.abs(left - right)) < 1e-9


def test_inverse_trivial_cases():
    ident = inverse(Transform.identity())
    assert np.allclose(ident.position, [0, 0, 0])
    assert ident.scale == pytest.approx(1.0)

    shifted = inverse(Transform.from_parts(position=(3, 0, 0)))
    assert np.allclose(shifted.position, [-3, 0, 0])


def test_inverse_composes_to_identity(rng):
    t = Transform.from_parts(position=(10, 0, 0), scale=2.0)
    for t in [t] + [random_transform(rng) for _ in range(100)]:
        round_trip = compose(t, inverse(t))
        assert np.max(np.abs(matrix_oracle(round_trip) - np.eye(4))) < 1e-9


# ---------------------------------------------------------------------------
# frame conversion


def test_to_model_coordinates_examples():
    model = Transform.from_parts(position=(10, 0, 0))
    assert np.allclose(to_model_coordinates([11, 2, 0], model), [1, 2, 0])

    scaled = Transform.from_parts(position=(10, 0, 0), scale=2.0)
    assert np.allclose(to_model_coordinates([12, 4, 0], scaled), [1, 2, 0], atol=1e-12)


def test_model_origin_maps_to_local_origin(rng):
    model = random_transform(rng)
    assert np.allclose(to_model_coordinates(model.position, model), [0, 0, 0], atol=1e-12)


def test_to_world_coordinates_examples(rng):
    model = Transform.from_parts(position=(10, 0, 0))
    assert np.allclose(to_world_coordinates([1, 2, 0], model), [11, 2, 0])

    scaled = Transform.from_parts(position=(10, 0, 0), scale=2.0)
    assert np.allclose(to_world_coordinates([1, 2, 0], scaled), [12, 4, 0])

    model = random_transform(rng)
    assert np.allclose(to_world_coordinates([0, 0, 0], model), model.position)


def test_round_trip_and_matrix_oracle(rng):
    for _ in range(500):
        model = random_transform(rng)
        point = rng.uniform(-20, 20, 3)
        local = to_model_coordinates(point, model)
        assert np.max(np.abs(to_world_coordinates(local, model) - point)) < 1e-9
        oracle_local = apply_matrix(np.linalg.inv(matrix_oracle(model)), point)
        assert np.max(np.abs(local - oracle_local)) < 1e-9


# ---------------------------------------------------------------------------
# rotation / translation metrics


def test_rotation_angle_trivial_cases():
    ident = np.array([1.0, 0, 0, 0])
    zflip = np.array([0.0, 0, 0, 1.0])  # 180 degrees about z
    assert rotation_angle_between(ident, ident) == pytest.approx(0.0)
    assert rotation_angle_between(ident, zflip) == pytest.approx(180.0)


def test_rotation_angle_double_cover(rng):
    q = random_unit_quat(rng)
    assert rotation_angle_between(q, -q) == 0.0


def test_rotation_angle_90_about_x():
    q = quat_from_axis_angle([1, 0, 0], math.pi / 2)
    ident = np.array([1.0, 0, 0, 0])
    assert rotation_angle_between(ident, q) == pytest.approx(90.0, abs=1e-9)
    assert rotation_angle_between(ident, q) == pytest.approx(angle_trace_oracle(ident, q), abs=1e-6)


def test_rotation_angle_matches_trace_oracle(rng):
    for _ in range(2000):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        got = rotation_angle_between(a, b)
        assert got == pytest.approx(rotation_angle_between(b, a))
        assert abs(got - angle_trace_oracle(a, b)) < 1e-6


def test_rotation_angle_rejects_non_unit():
    with pytest.raises(GeometryError):
        rotation_angle_between([0.5, 0, 0, 0], [1, 0, 0, 0])


def test_translation_offset():
    assert translation_offset([0, 0, 0], [0, 0, 0]) == 0.0
    assert translation_offset([0, 0, 0], [3, 4, 0]) == pytest.approx(5.0)
    # hand arithmetic: sqrt(0.0025 + 0.0144) = 0.13
    assert translation_offset([0, 0, 0], [0.05, 0, 0.12]) == pytest.approx(0.13)


# ---------------------------------------------------------------------------
# field of view


def test_fov_footprint_headset_values():
    fov = FovSpec(43.0, 29.0)
    width, height = fov_footprint(fov, 15.0)
    assert width == pytest.approx(11.8, abs=0.05)
    assert height == pytest.approx(7.8, abs=0.05)
    width, height = fov_footprint(fov, 20.0)
    assert width == pytest.approx(15.8, abs=0.05)
    assert height == pytest.approx(10.3, abs=0.05)


def test_fov_footprint_zero_distance_and_linearity(rng):
    fov = FovSpec(43.0, 29.0)
    assert fov_footprint(fov, 0.0) == (0.0, 0.0)
    base_w, base_h = fov_footprint(fov, 1.0)
    for _ in range(20):
        d = rng.uniform(0, 100)
        w, h = fov_footprint(fov, d)
        assert w == pytest.approx(base_w * d, rel=1e-12)
        assert h == pytest.approx(base_h * d, rel=1e-12)
    with pytest.raises(GeometryError):
        fov_footprint(fov, -1.0)
