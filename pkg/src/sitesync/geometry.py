"""Rigid transforms, quaternion math, and field-of-view footprint arithmetic.

Conventions: quaternions are scalar-first ``(w, x, y, z)``, right-handed,
Y-up. Positions are in meters. Angles are radians internally and degrees at
reporting boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Unit-quaternion inputs are accepted up to this norm tolerance, then
# renormalized exactly.
QUAT_NORM_TOL = 1e-6


class GeometryError(ValueError):
    """Invalid geometric input (non-finite, degenerate, or out of range)."""


def _as_vec3(value) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GeometryError("vector components must be finite")
    return v


def _as_unit_quat(value) -> np.ndarray:
    q = np.asarray(value, dtype=float)
    if q.shape != (4,):
        raise GeometryError(f"expected a (w, x, y, z) quaternion, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise GeometryError("quaternion components must be finite")
    norm = float(np.linalg.norm(q))
    if norm < 1e-12:
        raise GeometryError("quaternion norm is zero")
    return q / norm


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b, scalar-first."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate 3-vector v by unit quaternion q."""
    w = q[0]
    u = np.asarray(q[1:4], dtype=float)
    v = np.asarray(v, dtype=float)
    # v' = v + 2 w (u x v) + 2 u x (u x v)
    t = np.cross(u, v)
    return v + 2.0 * w * t + 2.0 * np.cross(u, t)


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = _as_vec3(axis)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        raise GeometryError("rotation axis has zero length")
    half = 0.5 * angle_rad
    return np.concatenate(([math.cos(half)], math.sin(half) * axis / n))


def quat_from_rotation_vector(rvec) -> np.ndarray:
    """Quaternion for an axis-angle vector whose norm is the angle in radians."""
    rvec = _as_vec3(rvec)
    angle = float(np.linalg.norm(rvec))
    if angle < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return quat_from_axis_angle(rvec, angle)


@dataclass(frozen=True)
class Pose:
    """Position (m) plus unit quaternion orientation.

    The orientation is normalized on construction; the stored norm is within
    1e-9 of 1.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position))
        object.__setattr__(self, "orientation", _as_unit_quat(self.orientation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def to_dict(self) -> dict:
        return {"pos": list(self.position), "quat": list(self.orientation)}

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        return cls(data["pos"], data["quat"])


@dataclass(frozen=True)
class Transform:
    """Rigid pose plus a uniform positive scale.

    Matrix form is ``[[s*R, t], [0, 1]]``: scale and rotation first, then
    translation. Non-uniform scale is rejected by construction, which keeps
    the inverse well-defined.
    """

    pose: Pose
    scale: float = 1.0

    def __post_init__(self):
        scale = float(self.scale)
        if not math.isfinite(scale) or scale <= 0.0:
            raise GeometryError(f"scale must be a positive finite number, got {scale}")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(Pose.identity(), 1.0)

    @classmethod
    def from_parts(cls, position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0, 0.0), scale: float = 1.0) -> "Transform":
        return cls(Pose(position, orientation), scale)

    @property
    def position(self) -> np.ndarray:
        return self.pose.position

    @property
    def orientation(self) -> np.ndarray:
        return self.pose.orientation

    def apply(self, point) -> np.ndarray:
        """Map a local point to the parent frame: s * R @ p + t."""
        p = _as_vec3(point)
        return self.scale * quat_rotate(self.orientation, p) + self.position

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        w, x, y, z = self.orientation
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        m = np.eye(4)
        m[:3, :3] = self.scale * rot
        m[:3, 3] = self.position
        return m

    def to_dict(self) -> dict:
        return {"pos": list(self.position), "quat": list(self.orientation), "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> "Transform":
        return cls(Pose(data["pos"], data["quat"]), data.get("scale", 1.0))


def compose(parent: Transform, child: Transform) -> Transform:
    """Transform equal to applying child first, then parent.

    Equals the product of the 4x4 homogeneous forms.
    """
    orientation = quat_multiply(parent.orientation, child.orientation)
    position = parent.apply(child.position)
    return Transform(Pose(position, orientation), parent.scale * child.scale)


def inverse(t: Transform) -> Transform:
    """Transform such that compose(t, inverse(t)) is the identity."""
    conj = quat_conjugate(t.orientation)
    position = quat_rotate(conj, -t.position) / t.scale
    return Transform(Pose(position, conj), 1.0 / t.scale)


def to_model_coordinates(world_point, model: Transform) -> np.ndarray:
    """Express a world-frame point in the model's local frame."""
    p = _as_vec3(world_point)
    return quat_rotate(quat_conjugate(model.orientation), p - model.position) / model.scale


def to_world_coordinates(local_point, model: Transform) -> np.ndarray:
    """Express a model-local point in the world frame."""
    return model.apply(local_point)


def rotation_angle_between(a, b) -> float:
    """Smallest rotation angle (degrees, in [0, 180]) mapping orientation a onto b.

    Invariant under sign flip of either quaternion (double cover). Raises
    GeometryError if an input is not unit within QUAT_NORM_TOL.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for q in (a, b):
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise GeometryError("expected finite (w, x, y, z) quaternions")
        if abs(float(np.linalg.norm(q)) - 1.0) > QUAT_NORM_TOL:
            raise GeometryError(f"quaternion is not unit length (norm {np.linalg.norm(q):.6g})")
    dot = abs(float(np.dot(a, b)))
    # Clamp: numerically >= 1 dot products would make acos return NaN. The
    # snap window also covers |dot| a few ulp under 1 (e.g. q vs -q, where
    # |dot| = |q|^2), which must come out as exactly zero.
    if dot >= 1.0 - 1e-12:
        return 0.0
    return math.degrees(2.0 * math.acos(dot))


def translation_offset(a, b) -> float:
    """Euclidean distance in meters between two positions."""
    return float(np.linalg.norm(_as_vec3(a) - _as_vec3(b)))


@dataclass(frozen=True)
class FovSpec:
    """Horizontal and vertical view angles in degrees, each in (0, 180)."""

    horizontal_deg: float
    vertical_deg: float

    def __post_init__(self):
        for name in ("horizontal_deg", "vertical_deg"):
            angle = float(getattr(self, name))
            if not 0.0 < angle < 180.0:
                raise GeometryError(f"{name} must be in (0, 180), got {angle}")
            object.__setattr__(self, name, angle)


def fov_footprint(fov: FovSpec, distance_m: float) -> tuple[float, float]:
    """Visible (width, height) in meters at the given stand-off distance."""
    d = float(distance_m)
    if not math.isfinite(d) or d < 0.0:
        raise GeometryError(f"distance must be non-negative, got {d}")
    width = 2.0 * d * math.tan(math.radians(fov.horizontal_deg) / 2.0)
    height = 2.0 * d * math.tan(math.radians(fov.vertical_deg) / 2.0)
    return width, height
