"""Orthonormal plane-triple fitting from landmarks.

A landmark set maps integer ids to voxel positions; a membership maps ids to
the subset of planes (``"S"``, ``"C"``, ``"A"``) each landmark lies on.  The
fit finds three mutually orthogonal planes with a common intersection point
that minimize the summed squared point-to-plane distances of the members.

Sign convention: the objective cannot see normal signs, so the sagittal and
coronal normals are pointed toward the non-member landmark farthest from
their plane, and the axial normal is their cross product.  This keeps the
triple right-handed and makes the fit equivariant under rigid motions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, FitDegenerateError, RangeError
from .geometry import RigidTransform, axis_angle_to_rotation

PLANE_CODES = ("S", "C", "A")
PLANE_NAMES = {"S": "sagittal", "C": "coronal", "A": "axial"}


@dataclass(frozen=True, eq=False)
class PlaneSet:
    """Sagittal, coronal and axial unit normals plus their common point (voxels)."""

    n_s: np.ndarray
    n_c: np.ndarray
    n_a: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        for name in ("n_s", "n_c", "n_a", "center"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def normals(self):
        """3x3 array with the normals as rows (S, C, A)."""
        return np.vstack([self.n_s, self.n_c, self.n_a])

    @classmethod
    def canonical(cls, center):
        e = np.eye(3)
        return cls(e[0], e[1], e[2], center)

    def transformed(self, R, delta):
        """Planes moved by ``x -> R x + delta``."""
        R = np.asarray(R, dtype=float)
        return PlaneSet(R @ self.n_s, R @ self.n_c, R @ self.n_a, R @ self.center + np.asarray(delta, dtype=float))


@dataclass
class PlaneFit:
    planes: PlaneSet
    objective: float
    iterations: int
    residuals: dict = field(default_factory=dict)


def point_plane_distance(point, normal, center):
    """Unsigned distance from ``point`` to the plane through ``center`` with unit ``normal``."""
    return abs(float(np.dot(np.asarray(normal, dtype=float), np.asarray(point, dtype=float) - np.asarray(center, dtype=float))))


def _plane_members(landmarks, membership):
    members = {code: [] for code in PLANE_CODES}
    for lid, planes in sorted(membership.items()):
        if lid not in landmarks:
            raise FitDegenerateError(f"membership references unknown landmark {lid}", {"landmark": lid})
        for code in planes.upper():
            if code not in members:
                raise ValueError(f"unknown plane code {code!r} for landmark {lid}")
            members[code].append(lid)
    return members


def _check_configuration(points, members):
    total = sum(len(ids) for ids in members.values())
    if total < 9:
        raise FitDegenerateError(f"need at least 9 landmark-plane constraints, got {total}", {"constraints": total})
    for code, ids in members.items():
        if len(ids) < 3:
            raise FitDegenerateError(
                f"{PLANE_NAMES[code]} plane has {len(ids)} landmarks, needs at least 3",
                {"plane": code, "landmarks": ids},
            )
        X = points[code]
        centered = X - X.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        scale = max(sv[0], 1.0)
        if sv[1] <= 1e-9 * scale:
            raise FitDegenerateError(
                f"{PLANE_NAMES[code]} plane landmarks are collinear",
                {"plane": code, "landmarks": ids, "singular_values": sv.tolist()},
            )


def _orthonormalize(rows):
    U, _, Vt = np.linalg.svd(rows)
    N = U @ Vt
    if np.linalg.det(N) < 0:
        N[2] = -N[2]
    return N


def _initial_guesses(scatters):
    """Rotation candidates from the least-variance direction of each plane."""
    e = []
    for S in scatters:
        _, vecs = np.linalg.eigh(S)
        e.append(vecs[:, 0])
    e = np.array(e)
    guesses = [_orthonormalize(e)]
    for order in itertools.permutations(range(3)):
        N = np.zeros((3, 3))
        first, second, third = order
        N[first] = e[first]
        v = e[second] - np.dot(e[second], N[first]) * N[first]
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            continue
        N[second] = v / nv
        N[third] = np.cross(N[(third + 1) % 3], N[(third + 2) % 3])
        guesses.append(N)
    return guesses


def _objective(N, centered):
    return float(sum(np.sum((c @ N[p]) ** 2) for p, c in enumerate(centered)))


def _gauss_newton(N, centered, max_iter, tol):
    f = _objective(N, centered)
    lam = 1e-6
    for it in range(1, max_iter + 1):
        rows_r = []
        rows_J = []
        for p, c in enumerate(centered):
            rows_r.append(c @ N[p])
            rows_J.append(np.cross(N[p][None, :], c))
        r = np.concatenate(rows_r)
        J = np.vstack(rows_J)
        H = J.T @ J
        g = J.T @ r
        while True:
            step = np.linalg.solve(H + lam * (np.trace(H) / 3.0 + 1e-12) * np.eye(3), -g)
            angle = np.linalg.norm(step)
            if angle == 0.0:
                return N, f, it, True
            Rstep = axis_angle_to_rotation(step, np.degrees(angle))
            trial = N @ Rstep.T
            f_trial = _objective(trial, centered)
            if f_trial < f:
                decrease = f - f_trial
                N, f = trial, f_trial
                lam = max(lam / 10.0, 1e-12)
                if decrease < tol:
                    return N, f, it, True
                break
            lam *= 10.0
            if lam > 1e12:
                return N, f, it, True
    return N, f, max_iter, False


def fit_orthogonal_planes(landmarks, membership, max_iter=200, tol=1e-10):
    """Least-squares orthonormal plane triple through a common center.

    ``landmarks`` maps id -> position (voxels); ``membership`` maps id -> plane
    codes such as ``"SC"``.  Returns a :class:`PlaneFit`.
    """
    landmarks = {int(k): np.asarray(v, dtype=float).reshape(3) for k, v in landmarks.items()}
    for lid, pos in landmarks.items():
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"landmark {lid} has a non-finite position")
    members = _plane_members(landmarks, membership)
    points = {code: np.array([landmarks[i] for i in ids]).reshape(-1, 3) for code, ids in members.items()}
    _check_configuration(points, members)

    means = [points[code].mean(axis=0) for code in PLANE_CODES]
    centered = [points[code] - m for code, m in zip(PLANE_CODES, means)]
    scatters = [c.T @ c for c in centered]

    best = None
    for N0 in _initial_guesses(scatters):
        N, f, iters, converged = _gauss_newton(N0, centered, max_iter, tol)
        if best is None or f < best[1] - 1e-12:
            best = (N, f, iters, converged)
    N, f, iters, converged = best
    N = _orient(N, means, landmarks, members)
    offsets = np.array([N[p] @ means[p] for p in range(3)])
    center = N.T @ offsets
    planes = PlaneSet(N[0], N[1], N[2], center)

    residuals = {}
    for p, code in enumerate(PLANE_CODES):
        for lid in members[code]:
            residuals[(lid, code)] = point_plane_distance(landmarks[lid], N[p], center)
    fit = PlaneFit(planes, f, iters, residuals)
    if not converged:
        raise ConvergenceError(f"plane fit did not converge in {max_iter} iterations", best=fit)
    return fit


def _orient(N, means, landmarks, members):
    N = N.copy()
    ids = sorted(landmarks)
    for p, code in enumerate(PLANE_CODES[:2]):
        others = [i for i in ids if i not in members[code]]
        if others:
            signed = np.array([N[p] @ (landmarks[i] - means[p]) for i in others])
            pick = int(np.argmax(np.abs(signed)))
            if signed[pick] < 0:
                N[p] = -N[p]
        elif N[p][p] < 0:
            N[p] = -N[p]
    N[2] = np.cross(N[0], N[1])
    return N


def fit_objective(planes, landmarks, membership):
    """Summed squared member distances for an arbitrary plane triple."""
    total = 0.0
    normals = planes.normals
    for lid, codes in membership.items():
        x = np.asarray(landmarks[lid], dtype=float)
        for code in codes.upper():
            total += float(normals[PLANE_CODES.index(code)] @ (x - planes.center)) ** 2
    return total


def planes_to_gt_transform(planes, dims):
    """Ground-truth transform that resamples a volume onto the fitted planes.

    The rotation's columns are the sagittal, coronal and axial normals, so
    the standardized volume's axes run along them; its transpose is the
    change-of-basis matrix with the normals as rows.  The center is mapped
    to normalized units with ``t_k = 2 c_k / (dim_k - 1) - 1``.
    """
    dims = np.asarray(dims, dtype=float)
    c = planes.center
    if np.any(c < 0) or np.any(c > dims - 1):
        raise RangeError(f"plane center {c} lies outside the volume of dims {tuple(int(d) for d in dims)}")
    t = 2.0 * c / (dims - 1.0) - 1.0
    R = planes.normals.T
    return RigidTransform(R, t)
