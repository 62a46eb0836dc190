import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from posealign.encoding import (
    angle_budgets,
    encode_angle,
    encode_angle_batch,
    encode_euler,
    encode_euler_batch,
)
from posealign.geometry import EulerAngles


class TestAngleBudgets:
    def test_divisible_by_six_splits_evenly(self):
        assert angle_budgets(12) == (4, 4, 4)
        assert angle_budgets(6) == (2, 2, 2)

    def test_uneven_budgets_lead_heavy(self):
        assert angle_budgets(64) == (22, 22, 20)
        assert angle_budgets(8) == (4, 2, 2)

    @pytest.mark.parametrize("bad", [0, 4, 7, 13, -6])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            angle_budgets(bad)

    @given(st.integers(3, 200))
    def test_budgets_sum_and_parity(self, half):
        dim = 2 * half
        budgets = angle_budgets(dim)
        assert sum(budgets) == dim
        assert all(b % 2 == 0 and b >= 2 for b in budgets)


class TestEncodeAngle:
    def test_zero_angle(self):
        assert encode_angle(0.0, 4).tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_full_period_identical(self):
        np.testing.assert_array_equal(encode_angle(360.0, 4), encode_angle(0.0, 4))

    def test_quarter_turn(self):
        np.testing.assert_allclose(encode_angle(90.0, 2), [1.0, 0.0], atol=1e-15)

    def test_rejects_odd_dim(self):
        with pytest.raises(ValueError):
            encode_angle(10.0, 3)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            encode_angle(float("nan"), 4)

    @given(st.floats(-1000, 1000), st.integers(1, 24))
    def test_components_bounded(self, angle, half):
        values = encode_angle(angle, 2 * half)
        assert np.all(np.abs(values) <= 1.0 + 1e-12)

    def test_deterministic_and_matches_batch(self):
        angles = np.array([13.7, -55.0, 400.0])
        block = encode_angle_batch(angles, 10)
        for i, a in enumerate(angles):
            np.testing.assert_array_equal(block[i], encode_angle(a, 10))


class TestEncodeEuler:
    def test_zero_pose_dim12(self):
        out = encode_euler(EulerAngles(0, 0, 0), 12)
        np.testing.assert_array_equal(out, np.tile([0.0, 0.0, 1.0, 1.0], 3))

    def test_periodicity_exact(self):
        a = encode_euler(EulerAngles(0, 0, 0), 12)
        b = encode_euler(EulerAngles(360, 360, 360), 12)
        np.testing.assert_array_equal(a, b)

    def test_single_axis_quarter_turn(self):
        out = encode_euler(EulerAngles(90, 0, 0), 6)
        np.testing.assert_allclose(out, [1, 0, 0, 1, 0, 1], atol=1e-15)

    @pytest.mark.parametrize("bad", [4, 7, 0])
    def test_rejects_invalid_dim(self, bad):
        with pytest.raises(ValueError):
            encode_euler(EulerAngles(0, 0, 0), bad)

    @given(
        st.floats(-180, 179.9), st.floats(-180, 179.9), st.floats(-180, 179.9),
        st.integers(1, 16),
    )
    def test_periodicity_close_for_floats(self, p, y, r, third):
        dim = 6 * third
        base = encode_euler(EulerAngles(p, y, r), dim)
        shifted = encode_euler(EulerAngles(p + 360, y + 360, r + 360), dim)
        np.testing.assert_allclose(shifted, base, atol=1e-10)

    def test_continuity_small_perturbation(self):
        # max frequency at dim d is d/6 per angle; 0.001 deg perturbs any
        # component by at most k * 1.75e-5. The 1e-4 componentwise bound
        # holds for dims up to 30 (k <= 5).
        delta = 0.001
        for dim in (6, 12, 18, 24, 30):
            base = encode_euler(EulerAngles(33.3, -71.2, 12.9), dim)
            moved = encode_euler(EulerAngles(33.3 + delta, -71.2 + delta, 12.9 + delta), dim)
            assert np.max(np.abs(moved - base)) < 1e-4

    def test_continuity_lipschitz_bound(self):
        delta = 0.001
        for dim in (36, 60, 96):
            k_max = max(angle_budgets(dim)) // 2
            bound = k_max * math.radians(delta)
            base = encode_euler(EulerAngles(10.0, 20.0, 30.0), dim)
            moved = encode_euler(EulerAngles(10.0 + delta, 20.0, 30.0), dim)
            assert np.max(np.abs(moved - base)) <= bound + 1e-12

    def test_batch_matches_scalar(self):
        angles = np.array([[10.0, 20.0, 30.0], [-90.0, 45.0, 0.0]])
        block = encode_euler_batch(angles, 24)
        for i in range(len(angles)):
            np.testing.assert_array_equal(block[i], encode_euler(EulerAngles(*angles[i]), 24))

    def test_batch_shape_validation(self):
        with pytest.raises(ValueError):
            encode_euler_batch(np.zeros((4, 2)), 12)
