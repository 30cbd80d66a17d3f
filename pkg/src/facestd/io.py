"""Readers and writers for volumes, transforms, landmarks, slices and manifests.

Text documents are ``key=value`` lines.  Floats destined for re-reading
(transforms, planes) are written with 17 significant digits so they round
trip exactly; reports use 6 decimals.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, rotation_to_quat
from .planes import PlaneSet, PLANE_CODES
from .volume import PLANES, SliceTriplet, Volume

VVOL_MAGIC = b"VVOL1\x00"
_VVOL_HEADER = struct.Struct("<6s3I3d")


def fmt_exact(x):
    return f"{float(x):.16e}"


def _join(values, fmt=fmt_exact):
    return " ".join(fmt(v) for v in np.asarray(values, dtype=float).reshape(-1))


def parse_kv(text):
    """Ordered ``key -> raw string`` mapping of a key=value document."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def _floats(raw, n, key):
    parts = raw.replace(",", " ").split()
    if len(parts) != n:
        raise ValueError(f"{key}: expected {n} numbers, got {len(parts)}")
    return np.array([float(p) for p in parts])


# -- volumes -----------------------------------------------------------------


def write_vvol(path, volume):
    """Little-endian VVOL: magic, uint32 dims, float64 spacing, float32 data x-fastest."""
    H, W, D = volume.dims
    header = _VVOL_HEADER.pack(VVOL_MAGIC, H, W, D, *volume.spacing)
    payload = np.asarray(volume.data, dtype="<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def read_vvol(path):
    raw = Path(path).read_bytes()
    if len(raw) < _VVOL_HEADER.size:
        raise ValueError(f"{path}: too short for a VVOL header")
    magic, H, W, D, sx, sy, sz = _VVOL_HEADER.unpack_from(raw)
    if magic != VVOL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    count = H * W * D
    expected = _VVOL_HEADER.size + 4 * count
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for dims {(H, W, D)}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_VVOL_HEADER.size)
    return Volume(data.reshape((H, W, D), order="F"), (sx, sy, sz))


# -- transforms --------------------------------------------------------------


def transform_to_text(transform):
    return (
        f"rotation={_join(transform.rotation)}\n"
        f"translation={_join(transform.translation)}\n"
        f"quaternion={_join(rotation_to_quat(transform.rotation))}\n"
    )


def transform_from_text(text):
    kv = parse_kv(text)
    missing = {"rotation", "translation"} - set(kv)
    if missing:
        raise ValueError(f"transform document lacks {sorted(missing)}")
    R = _floats(kv["rotation"], 9, "rotation").reshape(3, 3)
    t = _floats(kv["translation"], 3, "translation")
    transform = RigidTransform(R, t)
    if "quaternion" in kv:
        q = _floats(kv["quaternion"], 4, "quaternion")
        if not np.allclose(q, transform.quaternion, atol=1e-9):
            raise ValueError("quaternion field disagrees with the rotation matrix")
    return transform


def write_transform(path, transform):
    Path(path).write_text(transform_to_text(transform))


def read_transform(path):
    return transform_from_text(Path(path).read_text())


# -- landmarks and planes ------------------------------------------------------


def write_landmarks(path, landmarks):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "z"])
        for lid in sorted(landmarks):
            w.writerow([lid, *(fmt_exact(v) for v in landmarks[lid])])


def _rows(path):
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            row = [c.strip() for c in row]
            if not row or not row[0] or row[0].startswith("#"):
                continue
            if row[0].lower() == "id":
                continue
            yield row


def read_landmarks(path):
    out = {}
    for row in _rows(path):
        if len(row) != 4:
            raise ValueError(f"{path}: landmark rows need id,x,y,z, got {row}")
        lid = int(row[0])
        if lid in out:
            raise ValueError(f"{path}: duplicate landmark id {lid}")
        out[lid] = np.array([float(v) for v in row[1:]])
    return out


def write_membership(path, membership):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "planes"])
        for lid in sorted(membership):
            w.writerow([lid, membership[lid]])


def read_membership(path):
    out = {}
    for row in _rows(path):
        if len(row) != 2:
            raise ValueError(f"{path}: membership rows need id,planes, got {row}")
        codes = row[1].upper()
        if not codes or any(c not in PLANE_CODES for c in codes):
            raise ValueError(f"{path}: bad plane letters {row[1]!r} for landmark {row[0]}")
        out[int(row[0])] = codes
    return out


def write_planes(path, planes):
    Path(path).write_text(
        f"n_s={_join(planes.n_s)}\nn_c={_join(planes.n_c)}\nn_a={_join(planes.n_a)}\ncenter={_join(planes.center)}\n"
    )


def read_planes(path):
    kv = parse_kv(Path(path).read_text())
    return PlaneSet(*(_floats(kv[k], 3, k) for k in ("n_s", "n_c", "n_a", "center")))


def write_residuals(path, residuals):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "plane", "distance"])
        for (lid, code), dist in sorted(residuals.items()):
            w.writerow([lid, code, f"{dist:.6e}"])


# -- slices ------------------------------------------------------------------


def write_pgm(path, image):
    """16-bit binary PGM, min-max scaled; returns ``(lo, hi)`` of the scaling."""
    image = np.asarray(image, dtype=float)
    lo, hi = float(image.min()), float(image.max())
    span = hi - lo
    if span > 0:
        scaled = np.rint((image - lo) / span * 65535.0)
    else:
        scaled = np.zeros_like(image)
    rows, cols = image.shape
    header = f"P5\n{cols} {rows}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + scaled.astype(">u2").tobytes())
    return lo, hi


def read_pgm(path):
    """Raw 16-bit samples of a binary PGM written by :func:`write_pgm`."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw, dtype=dtype, count=rows * cols, offset=pos).reshape(rows, cols)


def write_slices(out_dir, slices, prefix=""):
    """Write three PGMs plus ``<plane>.txt`` sidecars recording scale and index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for axis, (plane, image) in enumerate(slices.as_dict().items()):
        pgm = out_dir / f"{prefix}{plane}.pgm"
        lo, hi = write_pgm(pgm, image)
        sidecar = out_dir / f"{prefix}{plane}.txt"
        sidecar.write_text(
            f"plane={plane}\naxis={axis}\nindex={slices.indices[axis]}\n"
            f"min={fmt_exact(lo)}\nmax={fmt_exact(hi)}\nmaxval=65535\n"
        )
        paths += [pgm, sidecar]
    return paths


def read_slices(in_dir, prefix=""):
    """Slices written by :func:`write_slices`, rescaled to intensities."""
    in_dir = Path(in_dir)
    images = []
    indices = []
    for plane in PLANES:
        samples = read_pgm(in_dir / f"{prefix}{plane}.pgm").astype(float)
        kv = parse_kv((in_dir / f"{prefix}{plane}.txt").read_text())
        lo, hi = float(kv["min"]), float(kv["max"])
        images.append(lo + samples / float(kv.get("maxval", 65535)) * (hi - lo))
        indices.append(int(kv["index"]))
    return SliceTriplet(*images, indices=tuple(indices))


# -- manifests ---------------------------------------------------------------


def _manifest_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_manifest_value(v) for v in value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def write_manifest(path, entries):
    """Write ``entries`` (an ordered mapping) as key=value lines."""
    lines = [f"{key}={_manifest_value(value)}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    return parse_kv(Path(path).read_text())
