"""Volume and slice containers plus the resize/pad preprocessing.

Intensities live in a ``(H, W, D)`` array indexed ``[x, y, z]``: axis 0 is
the sagittal axis, axis 1 coronal, axis 2 axial.  On disk (VVOL) the same
array is written x-fastest, i.e. Fortran order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SizeError

PLANES = ("sagittal", "coronal", "axial")


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ValueError(f"volume must be 3-D, got {data.ndim}-D")
        if min(data.shape) < 1:
            raise ValueError(f"volume axes must be non-empty, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume intensities must be finite")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @cached_property
    def padded(self):
        """Copy with one zero voxel on every face; used by the sampler's gathers."""
        arr = np.pad(self.data, 1)
        arr.setflags(write=False)
        return arr


@dataclass(frozen=True, eq=False)
class SliceTriplet:
    """Sagittal, coronal and axial images cut from a volume.

    ``indices`` records the voxel index of each cut along its normal axis.
    """

    sagittal: np.ndarray
    coronal: np.ndarray
    axial: np.ndarray
    indices: tuple = (0, 0, 0)
    spacing: tuple = (1.0, 1.0, 1.0)

    def __iter__(self):
        return iter((self.sagittal, self.coronal, self.axial))

    def __getitem__(self, key):
        if isinstance(key, str):
            return getattr(self, key)
        return (self.sagittal, self.coronal, self.axial)[key]

    def as_dict(self):
        return dict(zip(PLANES, self))


def center_indices(dims):
    return tuple(int(n) // 2 for n in dims)


def extract_center_slices(volume):
    ix, iy, iz = center_indices(volume.dims)
    data = volume.data
    return SliceTriplet(
        sagittal=data[ix, :, :].copy(),
        coronal=data[:, iy, :].copy(),
        axial=data[:, :, iz].copy(),
        indices=(ix, iy, iz),
        spacing=volume.spacing,
    )


def downsample_by_two(volume):
    """2x2x2 mean pooling; odd trailing slabs average the voxels they have."""
    data = volume.data
    out = data
    for axis in range(3):
        n = out.shape[axis]
        pairs = n // 2
        head = np.take(out, np.arange(2 * pairs), axis=axis)
        shape = list(head.shape)
        shape[axis : axis + 1] = [pairs, 2]
        reduced = head.reshape(shape).mean(axis=axis + 1)
        if n % 2:
            tail = np.take(out, [n - 1], axis=axis)
            reduced = np.concatenate([reduced, tail], axis=axis)
        out = reduced
    spacing = tuple(2.0 * s for s in volume.spacing)
    return Volume(out, spacing)


def zero_pad_to_cube(volume, size=256):
    """Center the volume in a ``size**3`` zero cube; odd leftovers go high."""
    dims = volume.dims
    if any(n > size for n in dims):
        raise SizeError(f"volume dims {dims} exceed target size {size}")
    pads = []
    for n in dims:
        total = size - n
        pads.append((total // 2, total - total // 2))
    return Volume(np.pad(volume.data, pads), volume.spacing)


def preprocess(volume, size=256):
    """Downsample by two, then zero-pad to a cube of edge ``size``."""
    return zero_pad_to_cube(downsample_by_two(volume), size)
