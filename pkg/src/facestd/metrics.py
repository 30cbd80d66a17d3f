"""Training loss and evaluation metrics for standardized poses."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import geodesic_angle_deg
from .sampler import half_extent, sample_center_slices
from .volume import PLANES

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def translation_l1(est, gt):
    return float(np.sum(np.abs(est.translation - gt.translation)))


def rotation_angle_rad(est, gt):
    return math.radians(geodesic_angle_deg(est.rotation, gt.rotation))


def image_l1(I_es, I_gt):
    """Per-plane mean absolute difference, summed over the three planes."""
    total = 0.0
    for es, gt in zip(I_es, I_gt):
        es, gt = _pair(es, gt)
        total += float(np.mean(np.abs(gt - es)))
    return total


def network_loss(est, gt, I_es, I_gt, weights=None):
    """``beta * |t_es - t_gt|_1 + gamma * angle(R_es R_gt^T) + image term``."""
    beta = 1.0 if weights is None else weights.beta
    gamma = 1.0 if weights is None else weights.gamma
    return beta * translation_l1(est, gt) + gamma * rotation_angle_rad(est, gt) + image_l1(I_es, I_gt)


def translation_error_mm(est, gt, volume):
    """Total and per-plane translation error in millimetres.

    The normalized difference is scaled per axis by ``(dim - 1) / 2`` voxels
    and the voxel spacing.  The per-plane value is the component along each
    ground-truth plane normal.
    """
    delta = (est.translation - gt.translation) * half_extent(volume.dims) * np.asarray(volume.spacing)
    total = float(np.sqrt(np.sum(delta**2)))
    per_plane = tuple(abs(float(np.dot(n, delta))) for n in gt.normals)
    return total, per_plane


def euclidean_angle_errors(est, gt):
    """Angle between corresponding plane normals, sign-insensitive, in degrees."""
    per_plane = []
    for n_es, n_gt in zip(est.normals, gt.normals):
        # atan2 form is exact at zero, unlike acos of a rounded dot product
        if np.dot(n_es, n_gt) < 0:
            n_gt = -n_gt
        angle = 2.0 * math.atan2(np.linalg.norm(n_es - n_gt), np.linalg.norm(n_es + n_gt))
        per_plane.append(math.degrees(angle))
    return float(np.mean(per_plane)), tuple(per_plane)


def dynamic_range(a, b):
    peak = max(float(np.max(a)), float(np.max(b)))
    return peak if peak > 0 else 1.0


def ssim(a, b, window=SSIM_WINDOW):
    """Mean SSIM over all fully contained ``window x window`` uniform windows.

    Means, variances and the covariance are plain (population) window averages;
    ``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2`` with ``L`` the largest
    intensity in either image (1 when neither is positive).
    """
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < window:
        raise ValueError(f"ssim needs 2-D images of at least {window}x{window}, got {a.shape}")
    L = dynamic_range(a, b)
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2

    def local_mean(x):
        return sliding_window_view(x, (window, window)).mean(axis=(-2, -1))

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    L = dynamic_range(a, b)
    return 10.0 * math.log10(L * L / mse)


@dataclass(frozen=True)
class EvalReport:
    so3_deg: float
    ea_mean_deg: float
    ea_per_plane_deg: tuple
    trans_mm_total: float
    trans_mm_per_plane: tuple
    ssim: float
    psnr_db: float

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(_fmt(v) for v in value)
            else:
                text = _fmt(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        names = [f.name for f in fields(cls)]
        unknown = set(values) - set(names)
        missing = set(names) - set(values)
        if unknown or missing:
            raise ValueError(f"bad report: unknown keys {sorted(unknown)}, missing keys {sorted(missing)}")
        kwargs = {}
        for name in names:
            parts = [float(p) for p in values[name].split(",")]
            kwargs[name] = tuple(parts) if name.endswith("per_plane_deg") or name.endswith("per_plane") else parts[0]
        return cls(**kwargs)

    def flat(self):
        """Scalar view with per-plane entries suffixed by plane name."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                for plane, v in zip(PLANES, value):
                    out[f"{f.name}_{plane}"] = v
            else:
                out[f.name] = value
        return out


def _fmt(value):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def evaluate(est, gt, volume):
    """Full metric report for an estimated versus ground-truth transform."""
    so3 = geodesic_angle_deg(est.rotation, gt.rotation)
    ea_mean, ea_planes = euclidean_angle_errors(est, gt)
    trans_total, trans_planes = translation_error_mm(est, gt, volume)
    I_es = sample_center_slices(volume, est)
    I_gt = sample_center_slices(volume, gt)
    ssims = [ssim(e, g) for e, g in zip(I_es, I_gt)]
    psnrs = [psnr(e, g) for e, g in zip(I_es, I_gt)]
    return EvalReport(
        so3_deg=so3,
        ea_mean_deg=ea_mean,
        ea_per_plane_deg=ea_planes,
        trans_mm_total=trans_total,
        trans_mm_per_plane=trans_planes,
        ssim=float(np.mean(ssims)),
        psnr_db=float(np.mean(psnrs)),
    )

