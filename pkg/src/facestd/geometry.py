"""Rotation, quaternion and rigid-transform algebra.

Conventions
-----------
- Quaternions are ``(w, x, y, z)`` (Hamilton, scalar first) and are kept
  canonical: ``w >= 0``, and when ``w == 0`` the first nonzero component is
  positive.
- Euler angles are in degrees, extrinsic about fixed x, then y, then z:
  ``R = Rz @ Ry @ Rx``.  They are only used to draw random initial poses.
- A :class:`RigidTransform` ``(R, t)`` is the 3x4 matrix ``[R | t]`` that maps
  an *output* grid coordinate to the *input* coordinate it samples, in
  normalized units where every volume axis spans ``[-1, 1]``::

      p_in = R @ p_out + t

  Composition follows from that map: resampling by ``outer`` and then by
  ``inner`` equals a single resampling by ``compose(outer, inner)``.
- The columns of ``R`` are the plane normals (sagittal, coronal, axial)
  expressed in input coordinates, so the standardized volume's axes run along
  them.  ``R.T`` is the change-of-basis matrix whose rows are the normals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import TranslationRangeWarning

ORTHO_TOL = 1e-9
UNIT_TOL = 1e-6


def _as_vector(v, n, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have {n} components, got shape {np.shape(v)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_rotation(R, tol=ORTHO_TOL):
    """Return ``R`` as a float array, raising ``ValueError`` unless it is in SO(3)."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation must be finite")
    ortho_err = np.linalg.norm(R.T @ R - np.eye(3))
    if ortho_err > tol:
        raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {ortho_err:.3e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise ValueError(f"rotation has det {det:.12f}, expected +1")
    return R


def normalize_quat(q):
    q = _as_vector(q, 4, "quaternion")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def canonicalize(q):
    """Pick the sign of ``q`` so that ``w >= 0`` (first nonzero positive on ties)."""
    q = _as_vector(q, 4, "quaternion")
    for component in q:
        if component > 0.0:
            return q.copy()
        if component < 0.0:
            return -q
    raise ValueError("zero quaternion has no canonical form")


def quat_to_rotation(q):
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    q = _as_vector(q, 4, "quaternion")
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"quaternion must be unit-norm, got |q| = {norm:.9f}")
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R):
    """Canonical unit quaternion of a rotation matrix.

    Shepperd's method: branch on the largest of the trace and the diagonal so
    the divisor is never small, which keeps rotations near 180 degrees exact.
    """
    R = check_rotation(R)
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    candidates = (trace, R[0, 0], R[1, 1], R[2, 2])
    branch = int(np.argmax(candidates))
    if branch == 0:
        s = 2.0 * math.sqrt(1.0 + trace)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif branch == 1:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif branch == 2:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return canonicalize(q / np.linalg.norm(q))


def rot_x(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(angles_deg):
    """``Rz(az) @ Ry(ay) @ Rx(ax)`` for angles ``(ax, ay, az)`` in degrees."""
    ax, ay, az = _as_vector(angles_deg, 3, "euler angles")
    return rot_z(az) @ rot_y(ay) @ rot_x(ax)


def axis_angle_to_rotation(axis, angle_deg):
    """Rodrigues' formula; ``axis`` need not be normalized."""
    axis = _as_vector(axis, 3, "axis")
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    k = axis / n
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    a = math.radians(angle_deg)
    return np.eye(3) + math.sin(a) * K + (1.0 - math.cos(a)) * (K @ K)


def geodesic_angle_deg(R1, R2):
    """Angle in degrees of the relative rotation ``R1 @ R2.T``.

    ``acos((tr(R1 R2^T) - 1) / 2)`` with the argument clamped to [-1, 1].
    Below 90 degrees the equivalent chordal form
    ``2 asin(|R1 - R2|_F / sqrt(8))`` is used instead; it is exactly zero for
    equal inputs and keeps full precision for small angles.
    """
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    cos_angle = 0.5 * (np.trace(R1 @ R2.T) - 1.0)
    if cos_angle > 0.0:
        chord = np.linalg.norm(R1 - R2) / math.sqrt(8.0)
        return math.degrees(2.0 * math.asin(min(1.0, chord)))
    return math.degrees(math.acos(max(-1.0, cos_angle)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation in normalized ``[-1, 1]`` units (see module docs)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = check_rotation(self.rotation).copy()
        t = _as_vector(self.translation, 3, "translation").copy()
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quat(cls, q, t=(0.0, 0.0, 0.0)):
        return cls(quat_to_rotation(q), t)

    @classmethod
    def from_euler(cls, angles_deg, t=(0.0, 0.0, 0.0)):
        return cls(euler_to_rotation(angles_deg), t)

    @classmethod
    def from_matrix(cls, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (3, 4):
            raise ValueError(f"transform matrix must be 3x4, got {theta.shape}")
        return cls(theta[:, :3], theta[:, 3])

    @property
    def matrix(self):
        """The 3x4 matrix ``[R | t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])

    @property
    def quaternion(self):
        return rotation_to_quat(self.rotation)

    @property
    def change_of_basis(self):
        """Matrix whose rows are the sagittal, coronal and axial normals."""
        return self.rotation.T.copy()

    @property
    def normals(self):
        """Sagittal, coronal and axial plane normals (columns of the rotation)."""
        return tuple(self.rotation[:, k].copy() for k in range(3))

    @property
    def out_of_range(self):
        """True when a translation component lies outside ``[-1, 1]``."""
        return bool(np.any(np.abs(self.translation) > 1.0))

    def apply(self, points):
        """Map output coordinates ``(..., 3)`` to input coordinates."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def allclose(self, other, atol=1e-9):
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self):
        q = np.array2string(self.quaternion, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"RigidTransform(q={q}, t={t})"


def compose(outer, inner):
    """Single transform equal to resampling with ``outer`` and then with ``inner``.

    ``R = R_outer @ R_inner`` and ``t = R_outer @ t_inner + t_outer``.  A result
    whose translation leaves ``[-1, 1]`` is still returned unclamped, with
    :attr:`RigidTransform.out_of_range` set and a
    :class:`~facestd.errors.TranslationRangeWarning` issued.
    """
    R = outer.rotation @ inner.rotation
    t = outer.rotation @ inner.translation + outer.translation
    result = RigidTransform(R, t)
    if result.out_of_range:
        warnings.warn(
            f"composed translation {t} is outside the normalized [-1, 1] box",
            TranslationRangeWarning,
            stacklevel=2,
        )
    return result


def invert(transform):
    Rt = transform.rotation.T
    return RigidTransform(Rt, -(Rt @ transform.translation))


def random_perturbation(seed, max_angle=20.0, max_trans=0.05):
    """Random rigid transform with uniform Euler angles and translations.

    Angles are drawn in ``[-max_angle, max_angle]`` degrees per axis and
    translation components in ``[-max_trans, max_trans]``.  ``seed`` may be an
    integer or a ``numpy.random.Generator``.
    """
    if max_angle < 0:
        raise ValueError("max_angle must be non-negative")
    if not 0.0 <= max_trans <= 1.0:
        raise ValueError("max_trans must lie in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    angles = rng.uniform(-max_angle, max_angle, size=3)
    t = rng.uniform(-max_trans, max_trans, size=3)
    return RigidTransform(euler_to_rotation(angles), t)
