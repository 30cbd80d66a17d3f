"""Synthetic head phantoms with closed-form landmarks and ground truth.

The canonical phantom is defined in normalized coordinates: x runs left to
right (sagittal normal), y from back to front (coronal normal, the face
points to +y) and z upward (axial normal).  It is a sum of compactly
supported bumps ``amp * (1 - r^2)^2`` over ellipsoidal radius ``r``, which is
C1 at the support boundary.

A pose ``(R, t)`` moves every feature from canonical ``p`` to ``R p + t``; the
posed volume is evaluated analytically, never resampled, so the ground-truth
transform equals the pose and standardizing with it recovers the canonical
phantom up to interpolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError
from .geometry import RigidTransform
from .planes import PlaneSet, planes_to_gt_transform
from .sampler import apply_transform, half_extent
from .volume import Volume


@dataclass(frozen=True)
class Bump:
    center: tuple
    axes: tuple
    amplitude: float

    @property
    def reach(self):
        return float(np.linalg.norm(self.center) + max(self.axes))


FACE_FEATURES = (
    Bump((0.0, -0.05, 0.05), (0.36, 0.50, 0.60), 0.60),  # head
    Bump((0.0, -0.14, 0.16), (0.26, 0.32, 0.36), -0.25),  # brain, darker core
    Bump((0.0, 0.46, -0.02), (0.07, 0.12, 0.18), 0.80),  # nose ridge
    Bump((0.17, 0.34, 0.04), (0.09, 0.08, 0.08), 0.70),  # eye
    Bump((-0.17, 0.34, 0.04), (0.09, 0.08, 0.08), 0.70),  # eye
    Bump((0.0, 0.40, -0.28), (0.15, 0.06, 0.05), 0.50),  # mouth
    Bump((0.0, 0.25, -0.40), (0.20, 0.14, 0.09), 0.40),  # jaw
    Bump((0.22, -0.05, -0.25), (0.11, 0.13, 0.10), 0.60),  # chirality marker, +x side only
)

SHAPES = {
    "face": FACE_FEATURES,
    "ellipsoid": (Bump((0.0, 0.0, 0.0), (0.35, 0.45, 0.55), 1.0),),
    "sphere": (Bump((0.0, 0.0, 0.0), (0.5, 0.5, 0.5), 1.0),),
}

# Canonical landmarks (normalized units): 9 sagittal, 7 coronal, 7 axial.
CANONICAL_LANDMARKS = {
    1: (0.0, 0.58, -0.02),  # nose tip
    2: (0.0, 0.42, 0.14),  # nasion
    3: (0.0, 0.38, 0.40),  # forehead
    4: (0.0, -0.05, 0.57),  # vertex
    5: (0.0, -0.50, 0.05),  # occiput
    6: (0.0, 0.30, -0.46),  # chin
    7: (0.0, 0.45, -0.24),  # upper lip
    8: (0.0, 0.44, -0.32),  # lower lip
    9: (0.0, 0.50, -0.15),  # subnasale
    10: (0.40, 0.0, 0.02),  # right tragus
    11: (-0.36, 0.0, 0.02),  # left tragus
    12: (0.25, 0.0, 0.40),
    13: (-0.25, 0.0, 0.40),
    14: (0.20, 0.0, -0.35),
    15: (-0.20, 0.0, -0.35),
    16: (0.0, 0.0, 0.57),
    17: (0.17, 0.36, 0.0),  # right eye
    18: (-0.17, 0.36, 0.0),  # left eye
    19: (0.46, -0.10, 0.0),
    20: (-0.38, -0.12, 0.0),
    21: (0.28, -0.38, 0.0),
    22: (-0.28, -0.38, 0.0),
    23: (0.0, 0.20, 0.0),
}

DEFAULT_MEMBERSHIP = {i: ("S" if i <= 9 else "C" if i <= 16 else "A") for i in CANONICAL_LANDMARKS}


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (128, 128, 128)
    spacing: tuple = (0.5, 0.5, 0.5)
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    noise_sigma: float = 0.0
    seed: int = 0
    shape: str = "face"

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) < 32:
            raise ValueError(f"phantom dims must be three values >= 32, got {self.dims}")
        if len(set(dims)) != 1:
            raise ValueError(f"phantom volumes must be cubic so normalized rotations stay rigid, got {dims}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown phantom shape {self.shape!r}; choose from {sorted(SHAPES)}")
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True, eq=False)
class PhantomBundle:
    volume: Volume
    landmarks: dict
    membership: dict
    gt_planes: PlaneSet
    gt_transform: RigidTransform
    spec: PhantomSpec


def canonical_field(points, features=FACE_FEATURES):
    """Phantom intensity at canonical normalized ``points`` of shape ``(..., 3)``."""
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape[:-1])
    for bump in features:
        r2 = np.zeros(points.shape[:-1])
        for k in range(3):
            r2 += ((points[..., k] - bump.center[k]) / bump.axes[k]) ** 2
        inside = r2 < 1.0
        profile = np.where(inside, (1.0 - r2) ** 2, 0.0)
        out += bump.amplitude * profile
    return out


def _lattice(dims):
    axes = [np.linspace(-1.0, 1.0, n) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _posed_field(dims, pose, features):
    p = _lattice(dims)
    # canonical point whose feature lands at p: R^T (p - t)
    canon = (p - pose.translation) @ pose.rotation
    return canonical_field(canon, features)


def _check_bounds(pose, features):
    reach = max(b.reach for b in features)
    shift = float(np.linalg.norm(pose.translation))
    if reach + shift >= 1.0:
        raise RangeError(f"phantom features reach {reach + shift:.3f} normalized units under this pose, must stay < 1")


def generate_phantom(spec=None):
    spec = spec or PhantomSpec()
    features = SHAPES[spec.shape]
    pose = spec.pose
    _check_bounds(pose, features)
    data = _posed_field(spec.dims, pose, features)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    volume = Volume(data, spec.spacing)

    s = half_extent(spec.dims)
    landmarks = {}
    for lid, p in CANONICAL_LANDMARKS.items():
        posed = pose.rotation @ np.asarray(p) + pose.translation
        landmarks[lid] = (posed + 1.0) * s
    center = (pose.translation + 1.0) * s
    gt_planes = PlaneSet(*(pose.rotation[:, k] for k in range(3)), center=center)
    gt_transform = planes_to_gt_transform(gt_planes, spec.dims)
    return PhantomBundle(volume, landmarks, dict(DEFAULT_MEMBERSHIP), gt_planes, gt_transform, spec)


def axis_aligned_rotations():
    """The 24 proper rotations that permute and flip the coordinate axes."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            M = np.zeros((3, 3))
            for row, col in enumerate(perm):
                M[row, col] = signs[row]
            if np.linalg.det(M) > 0:
                mats.append(M)
    return mats


def phantom_asymmetry_check(bundle):
    """True iff no non-identity axis-aligned rotation maps the canonical phantom onto itself."""
    spec = bundle.spec
    canonical = Volume(_posed_field(spec.dims, RigidTransform.identity(), SHAPES[spec.shape]), spec.spacing)
    threshold = 10.0 * spec.noise_sigma + 1e-3
    for M in axis_aligned_rotations():
        if np.allclose(M, np.eye(3)):
            continue
        # axis-aligned rotations of a cubic lattice land on voxel centers exactly
        rotated = apply_transform(canonical, RigidTransform(M, np.zeros(3)))
        diff = np.mean(np.abs(rotated.data - canonical.data))
        if diff <= threshold:
            return False
    return True
