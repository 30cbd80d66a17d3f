"""Affine sampling grids and trilinear resampling.

Normalized coordinates run from -1 at the first voxel center to +1 at the
last one on every axis (align-corners convention), so voxel ``k`` of an axis
with ``n`` voxels sits at ``-1 + 2k/(n-1)``.  Normalized x, y and z address
array axes 0, 1 and 2.

Sample positions are carried in voxel units as well as normalized units.  The
voxel-unit map is evaluated directly (``M_ij = R_ij * s_i / s_j`` with
``s = (n-1)/2``), which keeps the identity transform exact on the lattice.
Points whose trilinear stencil leaves the lattice see zeros there, so a
sample further than one voxel outside the volume is exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import SliceTriplet, Volume, center_indices

_CHUNK_POINTS = 1 << 19


def half_extent(dims):
    """Per-axis scale from normalized to voxel units, ``(n - 1) / 2``."""
    if min(dims) < 2:
        raise ValueError(f"normalized coordinates need >= 2 voxels per axis, got {tuple(dims)}")
    return np.array([(n - 1) / 2.0 for n in dims])


def to_voxel(normalized, dims):
    s = half_extent(dims)
    return (np.asarray(normalized, dtype=float) + 1.0) * s


def to_normalized(voxel, dims):
    s = half_extent(dims)
    return np.asarray(voxel, dtype=float) / s - 1.0


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """Input positions, shape ``(*out_shape, 3)``, for each output voxel.

    ``dims`` is the shape of the volume being sampled.
    """

    normalized: np.ndarray
    voxel: np.ndarray
    dims: tuple

    @classmethod
    def from_normalized(cls, normalized, dims):
        normalized = np.asarray(normalized, dtype=float)
        return cls(normalized, to_voxel(normalized, dims), tuple(dims))

    @property
    def shape(self):
        return self.normalized.shape[:-1]

    @property
    def out_of_bounds(self):
        """Mask of sample points outside ``[-1, 1]^3``."""
        return np.any(np.abs(self.normalized) > 1.0, axis=-1)


def _voxel_map(transform, dims):
    """Matrix, offset and center of the voxel-unit form of ``transform``."""
    s = half_extent(dims)
    R = transform.rotation
    M = R * s[:, None] / s[None, :]
    center = s.copy()
    offset = center + s * transform.translation
    return M, offset, center


def _map_points(M, offset, a, b, c):
    """Input voxel coordinates for centered output coordinates ``a, b, c``.

    Arrays broadcast; each point is computed by the same scalar expression no
    matter how the output is tiled, so results are independent of chunking.
    """
    x = M[0, 0] * a + M[0, 1] * b + M[0, 2] * c + offset[0]
    y = M[1, 0] * a + M[1, 1] * b + M[1, 2] * c + offset[1]
    z = M[2, 0] * a + M[2, 1] * b + M[2, 2] * c + offset[2]
    return x, y, z


def _centered_axes(dims):
    """Output lattice coordinates per axis, centered, in voxel units."""
    s = half_extent(dims)
    return [np.arange(n, dtype=float) - s[i] for i, n in enumerate(dims)]


def affine_grid(transform, dims):
    """Sampling grid of ``transform`` over the ``dims`` output lattice."""
    dims = tuple(int(n) for n in dims)
    M, offset, _ = _voxel_map(transform, dims)
    a, b, c = _centered_axes(dims)
    x, y, z = _map_points(M, offset, a[:, None, None], b[None, :, None], c[None, None, :])
    voxel = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
    return SamplingGrid(to_normalized(voxel, dims), voxel, dims)


def output_lattice(dims):
    """Normalized coordinates of the output voxels themselves, ``(*dims, 3)``."""
    # same expression as to_normalized, so the identity grid matches bit for bit
    axes = [np.arange(n, dtype=float) / ((n - 1) / 2.0) - 1.0 for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _stencil(v, n):
    """Lower neighbor index, fraction and clipped indices of both neighbors.

    On an exact lattice coordinate ``m`` the lower cell ``[m-1, m]`` is used
    (fraction 1), which fixes the one-sided derivative there.  The first
    voxel (``m = 0``) keeps the cell ``[0, 1]`` instead, the only one inside
    the lattice.
    """
    lower = np.ceil(v) - 1.0
    # coordinate 0 lies only in lattice cell [0, 1]; avoid stepping into padding
    lower = np.where(v == 0.0, 0.0, lower)
    f = v - lower
    i0 = np.clip(lower, -1, n).astype(np.intp)
    i1 = np.clip(lower + 1.0, -1, n).astype(np.intp)
    return i0 + 1, i1 + 1, f


def trilinear(volume, x, y, z, gradient=False):
    """Sample ``volume`` at voxel coordinates ``x, y, z`` (1-D arrays).

    Returns values, and with ``gradient=True`` also the partial derivatives
    with respect to ``x``, ``y`` and ``z`` (voxel units).
    """
    n0, n1, n2 = volume.dims
    flat = volume.padded.reshape(-1)
    st1 = n2 + 2
    st0 = (n1 + 2) * st1
    ax0, ax1, fx = _stencil(x, n0)
    ay0, ay1, fy = _stencil(y, n1)
    az0, az1, fz = _stencil(z, n2)

    def gather(ix, iy, iz):
        return flat[ix * st0 + iy * st1 + iz]

    u000 = gather(ax0, ay0, az0)
    u001 = gather(ax0, ay0, az1)
    u010 = gather(ax0, ay1, az0)
    u011 = gather(ax0, ay1, az1)
    u100 = gather(ax1, ay0, az0)
    u101 = gather(ax1, ay0, az1)
    u110 = gather(ax1, ay1, az0)
    u111 = gather(ax1, ay1, az1)

    gz = 1.0 - fz
    c00 = u000 * gz + u001 * fz
    c01 = u010 * gz + u011 * fz
    c10 = u100 * gz + u101 * fz
    c11 = u110 * gz + u111 * fz
    gy = 1.0 - fy
    c0 = c00 * gy + c01 * fy
    c1 = c10 * gy + c11 * fy
    value = c0 * (1.0 - fx) + c1 * fx
    if not gradient:
        return value

    dx = c1 - c0
    gx = 1.0 - fx
    dy = (c01 - c00) * gx + (c11 - c10) * fx
    e0 = (u001 - u000) * gy + (u011 - u010) * fy
    e1 = (u101 - u100) * gy + (u111 - u110) * fy
    dz = e0 * gx + e1 * fx
    return value, dx, dy, dz


def trilinear_sample(volume, grid, out_dims=None):
    """Resample ``volume`` at every point of ``grid``.

    ``out_dims`` optionally asserts the expected output shape.
    """
    if tuple(grid.dims) != volume.dims:
        raise ValueError(f"grid was built for dims {grid.dims}, volume has {volume.dims}")
    if out_dims is not None and tuple(grid.shape) != tuple(out_dims):
        raise ValueError(f"grid shape {grid.shape} does not match requested dims {tuple(out_dims)}")
    pts = grid.voxel.reshape(-1, 3)
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], _CHUNK_POINTS):
        chunk = pts[start : start + _CHUNK_POINTS]
        out[start : start + _CHUNK_POINTS] = trilinear(volume, chunk[:, 0], chunk[:, 1], chunk[:, 2])
    return out.reshape(grid.shape)


def apply_transform(volume, transform):
    """Resampled volume ``V(p) = U(R p + t)`` on the input lattice.

    Evaluated slab by slab along axis 0 so memory stays bounded for 256^3.
    """
    dims = volume.dims
    M, offset, _ = _voxel_map(transform, dims)
    a, b, c = _centered_axes(dims)
    out = np.empty(dims)
    slab = max(1, _CHUNK_POINTS // (dims[1] * dims[2]))
    for start in range(0, dims[0], slab):
        aa = a[start : start + slab]
        x, y, z = _map_points(M, offset, aa[:, None, None], b[None, :, None], c[None, None, :])
        x, y, z = (np.broadcast_to(v, (aa.size, dims[1], dims[2])).reshape(-1) for v in (x, y, z))
        out[start : start + slab] = trilinear(volume, x, y, z).reshape(aa.size, dims[1], dims[2])
    return Volume(out, volume.spacing)


def center_slice_points(dims):
    """Centered output coordinates of the three center slices.

    Returns a list of ``(a, b, c, shape)`` per plane, with ``a, b, c`` already
    broadcast to the slice shape and flattened.
    """
    a, b, c = _centered_axes(dims)
    ix, iy, iz = center_indices(dims)
    planes = []
    for axis, idx in zip(range(3), (ix, iy, iz)):
        axes = [a, b, c]
        axes[axis] = axes[axis][idx : idx + 1]
        shape = [len(v) for v in axes]
        mesh = np.meshgrid(*axes, indexing="ij")
        planes.append(tuple(m.reshape(-1) for m in mesh) + (tuple(s for k, s in enumerate(shape) if k != axis),))
    return planes


def sample_center_slices(volume, transform):
    """Center slices of ``apply_transform(volume, transform)``, sampling only the slices."""
    dims = volume.dims
    M, offset, _ = _voxel_map(transform, dims)
    images = []
    for a, b, c, shape in center_slice_points(dims):
        x, y, z = _map_points(M, offset, a, b, c)
        images.append(trilinear(volume, x, y, z).reshape(shape))
    return SliceTriplet(*images, indices=center_indices(dims), spacing=volume.spacing)
