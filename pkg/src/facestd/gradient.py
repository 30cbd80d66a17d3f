"""Analytic gradient of the pose loss through the trilinear sampler.

The pose is ``(q, t)`` with ``q = (w, x, y, z)`` a unit quaternion and ``t`` a
normalized translation.  The loss is the image term (per-plane mean absolute
difference between target and sampled center slices, summed over planes),
plus, when a ground-truth transform is given, ``beta * |t - t_gt|_1`` and
``gamma`` times the geodesic angle in radians.

The quaternion part of the gradient is projected onto the tangent space of
the unit sphere, so it matches finite differences of ``loss(q / |q|, t)``.
Residuals within ``RESIDUAL_TOL`` (relative to the target's magnitude) are
treated as exactly zero when choosing the subgradient of ``|r|``.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import UNIT_TOL, RigidTransform, quat_to_rotation
from .sampler import _map_points, _voxel_map, center_slice_points, half_extent, trilinear

RESIDUAL_TOL = 1e-12


def rotation_quat_jacobian(q):
    """``dR[i, j] / dq[k]`` for the unit-quaternion matrix, shape ``(3, 3, 4)``."""
    w, x, y, z = q
    return 2.0 * np.array(
        [
            [[0, 0, -2 * y, -2 * z], [-z, y, x, -w], [y, z, w, x]],
            [[z, y, x, w], [0, -2 * x, 0, -2 * z], [-x, -w, z, y]],
            [[-y, z, -w, x], [x, w, z, y], [0, -2 * x, -2 * y, 0]],
        ],
        dtype=float,
    )


def _left_matrix(p):
    """Matrix ``L(p)`` with ``p (x) q = L(p) @ q`` (Hamilton product)."""
    w, x, y, z = p
    return np.array([[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])


def geodesic_term(q, q_gt):
    """Relative rotation angle (radians) and its gradient with respect to ``q``.

    Uses ``2 * atan2(|v|, |w|)`` of ``conj(q_gt) (x) q``, which equals
    ``acos((tr(R R_gt^T) - 1) / 2)`` but stays well conditioned near zero.  The
    gradient at exactly zero angle is taken as 0.
    """
    conj = np.array([q_gt[0], -q_gt[1], -q_gt[2], -q_gt[3]])
    L = _left_matrix(conj)
    r = L @ q
    a = abs(r[0])
    v = r[1:]
    n = float(np.linalg.norm(v))
    angle = 2.0 * math.atan2(n, a)
    if n == 0.0:
        return angle, np.zeros(4)
    denom = a * a + n * n
    dn = (v / n) @ L[1:]
    da = math.copysign(1.0, r[0]) * L[0]
    return angle, 2.0 * (a * dn - n * da) / denom


def image_term(volume, target, q, t, with_gradient=True):
    """Image term of the loss and its raw ``(dq, dt)`` gradient, plus the slices."""
    dims = volume.dims
    R = quat_to_rotation(q)
    M, offset, _ = _voxel_map(RigidTransform(R, t), dims)
    s = half_extent(dims)
    loss = 0.0
    dR = np.zeros((3, 3))
    dt = np.zeros(3)
    sampled = []
    for (a, b, c, shape), tgt in zip(center_slice_points(dims), target):
        tgt = np.asarray(tgt, dtype=float)
        if tgt.shape != shape:
            raise ValueError(f"target slice shape {tgt.shape} does not match sampled shape {shape}")
        x, y, z = _map_points(M, offset, a, b, c)
        if not with_gradient:
            val = trilinear(volume, x, y, z)
            sampled.append(val.reshape(shape))
            loss += float(np.mean(np.abs(tgt.reshape(-1) - val)))
            continue
        val, gx, gy, gz = trilinear(volume, x, y, z, gradient=True)
        sampled.append(val.reshape(shape))
        resid = tgt.reshape(-1) - val
        count = resid.size
        loss += float(np.mean(np.abs(resid)))
        # residuals at rounding level pick the zero subgradient of |r|
        dead = RESIDUAL_TOL * max(1.0, float(np.max(np.abs(tgt))))
        w = -np.where(np.abs(resid) > dead, np.sign(resid), 0.0) / count
        gv = (w * gx, w * gy, w * gz)
        centered = (a, b, c)
        for i in range(3):
            dt[i] += float(np.sum(gv[i])) * s[i]
            for j in range(3):
                dR[i, j] += float(np.dot(gv[i], centered[j])) * s[i] / s[j]
    if not with_gradient:
        return loss, None, None, sampled
    dq = np.einsum("ij,ijk->k", dR, rotation_quat_jacobian(q))
    return loss, dq, dt, sampled


def loss_and_gradient(volume, target, q, t, beta=1.0, gamma=1.0, gt=None):
    """Return ``(loss, gradient)``; gradient is ``d/d(q0..q3, tx, ty, tz)``."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise ValueError(f"pose quaternion must be unit-norm, got |q| = {np.linalg.norm(q):.9f}")
    loss, dq, dt, _ = image_term(volume, target, q, t)
    if gt is not None:
        dt_gt = t - gt.translation
        loss += beta * float(np.sum(np.abs(dt_gt)))
        dt = dt + beta * np.sign(dt_gt)
        angle, dangle = geodesic_term(q, gt.quaternion)
        loss += gamma * angle
        dq = dq + gamma * dangle
    dq = dq - np.dot(dq, q) * q
    return loss, np.concatenate([dq, dt])


def loss_pose_gradient(volume, target, pose, beta=1.0, gamma=1.0, gt=None):
    """Gradient of the pose loss at ``pose = (q, t)``; see :func:`loss_and_gradient`."""
    q, t = pose
    return loss_and_gradient(volume, target, q, t, beta, gamma, gt)[1]


def pose_loss(volume, target, q, t, beta=1.0, gamma=1.0, gt=None):
    """Loss value only, with ``q`` normalized first (finite-difference friendly)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    loss, _, _, _ = image_term(volume, target, q, np.asarray(t, dtype=float), with_gradient=False)
    if gt is not None:
        loss += beta * float(np.sum(np.abs(np.asarray(t) - gt.translation)))
        R = quat_to_rotation(q)
        cos_angle = 0.5 * (np.trace(R @ gt.rotation.T) - 1.0)
        loss += gamma * math.acos(min(1.0, max(-1.0, cos_angle)))
    return loss
