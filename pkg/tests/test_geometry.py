import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facestd.errors import TranslationRangeWarning
from oracles import quat_from_axis_angle, quat_log_angle_deg
from facestd.geometry import (
    RigidTransform,
    axis_angle_to_rotation,
    canonicalize,
    check_rotation,
    compose,
    euler_to_rotation,
    geodesic_angle_deg,
    invert,
    quat_to_rotation,
    random_perturbation,
    rotation_to_quat,
)


unit_quats = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 0.1
).map(lambda v: np.asarray(v) / np.linalg.norm(v))

vectors = st.lists(st.floats(-0.3, 0.3, allow_nan=False), min_size=3, max_size=3).map(np.asarray)


def transforms():
    return st.builds(lambda q, t: RigidTransform.from_quat(q, t), unit_quats, vectors)


class TestQuaternions:
    def test_identity(self):
        np.testing.assert_array_equal(quat_to_rotation([1, 0, 0, 0]), np.eye(3))
        np.testing.assert_array_equal(rotation_to_quat(np.eye(3)), [1, 0, 0, 0])

    def test_matches_rodrigues(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            axis = rng.normal(size=3)
            angle = rng.uniform(-180, 180)
            q = quat_from_axis_angle(axis, math.radians(angle))
            np.testing.assert_allclose(quat_to_rotation(q), axis_angle_to_rotation(axis, angle), atol=1e-12)

    def test_known_90_about_z(self):
        R = quat_to_rotation(quat_from_axis_angle([0, 0, 1], math.pi / 2))
        np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    @pytest.mark.parametrize("axis", [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, -2, 3]])
    def test_half_turns_round_trip(self, axis):
        R = axis_angle_to_rotation(axis, 180.0)
        q = rotation_to_quat(R)
        np.testing.assert_allclose(quat_to_rotation(q), R, atol=1e-12)
        assert q[0] >= 0

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            quat_to_rotation([1.0, 0.1, 0, 0])

    def test_canonical_sign(self):
        np.testing.assert_array_equal(canonicalize([-0.5, 0.5, 0.5, 0.5]), [0.5, -0.5, -0.5, -0.5])
        np.testing.assert_array_equal(canonicalize([0.0, -1.0, 0, 0]), [0.0, 1.0, 0, 0])
        with pytest.raises(ValueError):
            canonicalize([0, 0, 0, 0])

    @given(unit_quats)
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, q):
        q2 = rotation_to_quat(quat_to_rotation(q))
        # at w ~ 0 the sign is decided by rounding, so compare up to sign
        assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-9
        np.testing.assert_array_equal(q2, canonicalize(q2))
        if abs(q[0]) > 1e-6:
            np.testing.assert_allclose(q2, canonicalize(q), atol=1e-9)

    @given(unit_quats)
    @settings(max_examples=100, deadline=None)
    def test_q_and_minus_q_same_rotation(self, q):
        np.testing.assert_allclose(quat_to_rotation(q), quat_to_rotation(-q), atol=1e-15)


class TestRotationChecks:
    def test_reflection_rejected(self):
        with pytest.raises(ValueError, match="det"):
            check_rotation(np.diag([1.0, 1.0, -1.0]))

    def test_non_orthogonal_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(2), np.zeros(3))
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3), np.zeros(2))
        with pytest.raises(ValueError):
            RigidTransform.from_matrix(np.eye(3))


class TestEuler:
    def test_order_is_z_y_x(self):
        ax, ay, az = 10.0, 5.0, -8.0
        expected = (
            axis_angle_to_rotation([0, 0, 1], az)
            @ axis_angle_to_rotation([0, 1, 0], ay)
            @ axis_angle_to_rotation([1, 0, 0], ax)
        )
        np.testing.assert_allclose(euler_to_rotation([ax, ay, az]), expected, atol=1e-15)

    def test_single_axis(self):
        np.testing.assert_allclose(euler_to_rotation([0, 0, 90]) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


class TestGeodesic:
    def test_zero_for_equal(self):
        R = euler_to_rotation([12, -7, 33])
        assert geodesic_angle_deg(R, R) == 0.0

    def test_ninety_about_z(self):
        assert geodesic_angle_deg(euler_to_rotation([0, 0, 90]), np.eye(3)) == pytest.approx(90.0, abs=1e-12)

    def test_half_turn(self):
        assert geodesic_angle_deg(axis_angle_to_rotation([1, 2, 3], 180), np.eye(3)) == pytest.approx(180.0, abs=1e-6)

    def test_quat_log_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            q1 = quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
            q2 = quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
            got = geodesic_angle_deg(quat_to_rotation(q1), quat_to_rotation(q2))
            assert got == pytest.approx(quat_log_angle_deg(q1, q2), abs=1e-6)

    @given(unit_quats, unit_quats)
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, q1, q2):
        R1, R2 = quat_to_rotation(q1), quat_to_rotation(q2)
        a = geodesic_angle_deg(R1, R2)
        assert 0.0 <= a <= 180.0
        assert a == pytest.approx(geodesic_angle_deg(R2, R1), abs=1e-7)


class TestRigidTransform:
    def test_read_only(self):
        T = RigidTransform.identity()
        with pytest.raises(ValueError):
            T.rotation[0, 0] = 2.0
        with pytest.raises(AttributeError):
            T.translation = np.ones(3)

    def test_matrix_round_trip(self):
        T = RigidTransform.from_euler([3, 4, 5], [0.1, 0.2, -0.3])
        assert RigidTransform.from_matrix(T.matrix).allclose(T, atol=0)

    def test_normals_are_columns(self):
        T = RigidTransform.from_euler([10, 20, 30])
        n_s, n_c, n_a = T.normals
        np.testing.assert_array_equal(n_s, T.rotation[:, 0])
        np.testing.assert_array_equal(T.change_of_basis, np.stack([n_s, n_c, n_a]))

    def test_compose_with_identity(self):
        T = RigidTransform.from_euler([10, -5, 3], [0.01, 0.02, 0.03])
        assert compose(T, RigidTransform.identity()).allclose(T, atol=0)
        assert compose(RigidTransform.identity(), T).allclose(T, atol=0)

    def test_compose_matches_point_maps(self):
        a = RigidTransform.from_euler([10, -5, 3], [0.01, 0.02, 0.03])
        b = RigidTransform.from_euler([-4, 8, 1], [0.05, -0.02, 0.0])
        pts = np.random.default_rng(0).uniform(-1, 1, size=(20, 3))
        np.testing.assert_allclose(compose(a, b).apply(pts), a.apply(b.apply(pts)), atol=1e-14)

    def test_compose_out_of_range_warns_unclamped(self):
        a = RigidTransform(np.eye(3), [0.8, 0, 0])
        with pytest.warns(TranslationRangeWarning):
            c = compose(a, a)
        assert c.out_of_range
        assert c.translation[0] == pytest.approx(1.6)

    def test_compose_in_range_is_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            compose(RigidTransform(np.eye(3), [0.3, 0, 0]), RigidTransform(np.eye(3), [0.3, 0, 0]))

    @given(transforms())
    @settings(max_examples=100, deadline=None)
    def test_inverse_property(self, T):
        assert compose(T, invert(T)).allclose(RigidTransform.identity(), atol=1e-12)
        assert compose(invert(T), T).allclose(RigidTransform.identity(), atol=1e-12)

    @given(transforms(), transforms(), transforms())
    @settings(max_examples=100, deadline=None)
    def test_associative(self, a, b, c):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TranslationRangeWarning)
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
        assert left.allclose(right, atol=1e-12)


class TestRandomPerturbation:
    def test_deterministic(self):
        a = random_perturbation(5)
        b = random_perturbation(5)
        assert a.allclose(b, atol=0)

    def test_within_bounds(self):
        for seed in range(200):
            T = random_perturbation(seed, 20.0, 0.05)
            assert np.all(np.abs(T.translation) <= 0.05)
            # three axes of at most 20 degrees compose to well below 60
            assert geodesic_angle_deg(T.rotation, np.eye(3)) <= 60.0

    def test_zero_ranges_give_identity(self):
        assert random_perturbation(3, 0.0, 0.0).allclose(RigidTransform.identity(), atol=0)

    def test_bad_ranges(self):
        with pytest.raises(ValueError):
            random_perturbation(0, -1.0, 0.0)
        with pytest.raises(ValueError):
            random_perturbation(0, 1.0, 2.0)
