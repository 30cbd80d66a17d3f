import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facestd.geometry import RigidTransform, axis_angle_to_rotation, compose, euler_to_rotation, random_perturbation
from facestd.metrics import (
    EvalReport,
    euclidean_angle_errors,
    evaluate,
    image_l1,
    network_loss,
    psnr,
    ssim,
    translation_error_mm,
)
from facestd.phantom import PhantomSpec, generate_phantom
from facestd.pipeline import LossWeights
from facestd.sampler import apply_transform
from facestd.volume import Volume, extract_center_slices
from oracles import psnr_direct, ssim_loops


@pytest.fixture(scope="module")
def phantom():
    return generate_phantom(PhantomSpec(dims=(32, 32, 32))).volume


def fixture_pair(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(16, 16))
    b = np.clip(a + rng.normal(0, 0.1, size=(16, 16)), 0, None)
    return a, b


def random_slices(rng, shapes=((5, 6), (4, 6), (4, 5))):
    return [rng.normal(size=s) for s in shapes]


class TestNetworkLoss:
    def test_zero(self):
        T = RigidTransform.from_euler([1, 2, 3], [0.1, 0, 0])
        s = random_slices(np.random.default_rng(0))
        assert network_loss(T, T, s, s) == 0.0

    def test_constant_offset(self):
        T = RigidTransform.identity()
        s = random_slices(np.random.default_rng(1))
        assert network_loss(T, T, s, [x + 1.0 for x in s]) == pytest.approx(3.0, abs=1e-12)

    def test_term_by_term(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            est, gt = random_perturbation(rng), random_perturbation(rng)
            I_es, I_gt = random_slices(rng), random_slices(rng)
            w = LossWeights(rng.uniform(0, 2), rng.uniform(0, 2))
            t_term = sum(abs(a - b) for a, b in zip(est.translation, gt.translation))
            c = (np.trace(est.rotation @ gt.rotation.T) - 1) / 2
            r_term = math.acos(max(-1.0, min(1.0, c)))
            i_term = sum(np.abs(g - e).sum() / g.size for e, g in zip(I_es, I_gt))
            expected = w.beta * t_term + w.gamma * r_term + i_term
            assert network_loss(est, gt, I_es, I_gt, w) == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            image_l1([np.zeros((3, 3))], [np.zeros((3, 4))])

    def test_quaternion_sign_invariant(self):
        est = RigidTransform.from_euler([10, 0, 0])
        flipped = RigidTransform.from_quat(-est.quaternion)
        gt = RigidTransform.identity()
        s = random_slices(np.random.default_rng(3))
        assert network_loss(est, gt, s, s) == network_loss(flipped, gt, s, s)

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(1.0, math.nan)


class TestTranslationError:
    def test_zero(self, phantom):
        T = RigidTransform.from_euler([3, 4, 5], [0.01, 0.02, 0.03])
        assert translation_error_mm(T, T, phantom) == (0.0, (0.0, 0.0, 0.0))

    def test_unit_conversion(self):
        vol = Volume(np.zeros((11, 11, 11)), (1.0, 1.0, 1.0))
        est = RigidTransform(np.eye(3), [2.0 / 10, 0, 0])
        total, per = translation_error_mm(est, RigidTransform.identity(), vol)
        assert total == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(per, (1.0, 0.0, 0.0), atol=1e-12)

    def test_norm_oracle(self):
        rng = np.random.default_rng(4)
        vol = Volume(np.zeros((9, 13, 17)), (0.5, 0.7, 1.1))
        for _ in range(20):
            est, gt = random_perturbation(rng), random_perturbation(rng)
            mm = [(e - g) * (n - 1) / 2 * s for e, g, n, s in zip(est.translation, gt.translation, vol.dims, vol.spacing)]
            total, per = translation_error_mm(est, gt, vol)
            assert total == pytest.approx(math.sqrt(sum(v * v for v in mm)), abs=1e-12)
            np.testing.assert_allclose(per, [abs(np.dot(gt.rotation[:, k], mm)) for k in range(3)], atol=1e-12)

    def test_axis_permutation_invariance(self):
        est = RigidTransform(np.eye(3), [0.1, -0.2, 0.3])
        gt = RigidTransform.identity()
        a = translation_error_mm(est, gt, Volume(np.zeros((5, 7, 9)), (1.0, 2.0, 3.0)))[0]
        est_p = RigidTransform(np.eye(3), [0.3, 0.1, -0.2])
        b = translation_error_mm(est_p, gt, Volume(np.zeros((9, 5, 7)), (3.0, 1.0, 2.0)))[0]
        assert a == pytest.approx(b, abs=1e-12)


class TestEuclideanAngles:
    def test_zero(self):
        T = RigidTransform.from_euler([3, 4, 5])
        assert euclidean_angle_errors(T, T) == (0.0, (0.0, 0.0, 0.0))

    def test_rotation_about_sagittal_normal(self):
        gt = RigidTransform.from_euler([5, -10, 20])
        R = axis_angle_to_rotation(gt.rotation[:, 0], 10.0)
        est = RigidTransform(R @ gt.rotation, gt.translation)
        mean, per = euclidean_angle_errors(est, gt)
        assert per[0] == pytest.approx(0.0, abs=1e-6)
        assert per[1] == pytest.approx(10.0, abs=1e-9)
        assert per[2] == pytest.approx(10.0, abs=1e-9)
        assert mean == pytest.approx(20.0 / 3, abs=1e-6)

    def test_acos_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            est, gt = random_perturbation(rng, 60.0), random_perturbation(rng, 60.0)
            _, per = euclidean_angle_errors(est, gt)
            for k in range(3):
                d = abs(float(np.dot(est.rotation[:, k], gt.rotation[:, k])))
                assert per[k] == pytest.approx(math.degrees(math.acos(min(1.0, d))), abs=1e-9)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, seed):
        rng = np.random.default_rng(seed)
        q1, q2 = rng.normal(size=4), rng.normal(size=4)
        est = RigidTransform.from_quat(q1 / np.linalg.norm(q1))
        gt = RigidTransform.from_quat(q2 / np.linalg.norm(q2))
        mean, per = euclidean_angle_errors(est, gt)
        assert all(0.0 <= p <= 90.0 + 1e-9 for p in per)


class TestSSIM:
    def test_identical(self):
        a, _ = fixture_pair()
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_fixture_oracle(self):
        for seed in range(3):
            a, b = fixture_pair(seed)
            assert ssim(a, b) == pytest.approx(ssim_loops(a, b), abs=1e-9)

    def test_against_zeros_decreasing(self):
        rng = np.random.default_rng(6)
        base = rng.uniform(0.5, 1.0, size=(16, 16))
        zeros = np.zeros_like(base)
        values = [ssim(k * base, zeros) for k in (0.5, 1.0, 2.0)]
        assert all(0.0 < v < 1.0 for v in values)
        assert values[0] >= values[1] >= values[2]

    def test_symmetric(self):
        a, b = fixture_pair(7)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 9)))
        with pytest.raises(ValueError):
            ssim(np.zeros((5, 5)), np.zeros((5, 5)))

    def test_all_zero(self):
        z = np.zeros((8, 8))
        assert ssim(z, z) == 1.0


class TestPSNR:
    def test_identical(self):
        a, _ = fixture_pair()
        assert psnr(a, a) == math.inf

    def test_closed_form(self):
        c = np.zeros((10, 10))
        c[0, 0] = 1.0
        d = c + 0.1
        d[0, 0] = 1.0
        mse = np.mean((c - d) ** 2)
        assert psnr(c, d) == pytest.approx(10 * math.log10(1.0 / mse), abs=1e-9)

    def test_twenty_db(self):
        a = np.full((4, 4), 0.0)
        a[0, 0] = 1.0
        b = a.copy()
        b[1:, :] = 0.1 * math.sqrt(16 / 12)
        assert np.mean((a - b) ** 2) == pytest.approx(0.01)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_oracle(self):
        for seed in range(3):
            a, b = fixture_pair(seed)
            assert psnr(a, b) == pytest.approx(psnr_direct(a, b), abs=1e-9)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 3)), np.zeros((4, 3)))


class TestEvaluate:
    def test_identity_report(self, phantom):
        gt = RigidTransform.from_euler([5, 5, 5], [0.01, 0, 0])
        r = evaluate(gt, gt, phantom)
        assert r.so3_deg == 0.0 and r.ea_mean_deg == 0.0 and r.trans_mm_total == 0.0
        assert r.ea_per_plane_deg == (0.0, 0.0, 0.0) and r.trans_mm_per_plane == (0.0, 0.0, 0.0)
        assert r.ssim == 1.0 and r.psnr_db == math.inf

    def test_ninety_about_z(self, phantom):
        gt = RigidTransform.identity()
        est = compose(gt, RigidTransform(euler_to_rotation([0, 0, 90]), np.zeros(3)))
        assert evaluate(est, gt, phantom).so3_deg == pytest.approx(90.0, abs=1e-9)

    def test_fields_match_oracles(self, phantom):
        gt = RigidTransform.from_euler([2, -3, 4], [0.01, 0.0, 0.02])
        est = compose(gt, random_perturbation(11, 5.0, 0.02))
        r = evaluate(est, gt, phantom)
        I_es = extract_center_slices(apply_transform(phantom, est))
        I_gt = extract_center_slices(apply_transform(phantom, gt))
        assert r.ssim == pytest.approx(np.mean([ssim_loops(e, g) for e, g in zip(I_es, I_gt)]), abs=1e-9)
        assert r.psnr_db == pytest.approx(np.mean([psnr_direct(e, g) for e, g in zip(I_es, I_gt)]), abs=1e-9)
        c = (np.trace(est.rotation @ gt.rotation.T) - 1) / 2
        assert r.so3_deg == pytest.approx(math.degrees(math.acos(c)), abs=1e-6)
        assert 0 < r.ssim < 1

    def test_text_round_trip(self):
        r = EvalReport(1.5, 2.25, (1.0, 2.0, 3.0), 0.125, (0.1, 0.0, 0.05), 0.875, math.inf)
        text = r.to_text()
        assert "psnr_db=inf" in text
        assert "so3_deg=1.500000" in text
        assert EvalReport.from_text(text) == r

    def test_text_rejects_unknown_keys(self):
        r = EvalReport(0, 0, (0, 0, 0), 0, (0, 0, 0), 1, math.inf)
        with pytest.raises(ValueError):
            EvalReport.from_text(r.to_text() + "extra=1\n")
        with pytest.raises(ValueError):
            EvalReport.from_text("so3_deg=1\n")
