import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castwb.chroma import (
    CASTS,
    NEUTRAL,
    Cast,
    DomainError,
    StepSchedule,
    angular_error_deg,
    chromaticity_point,
    geo_mean3,
    is_canonical,
    normalize,
    rotate_toward,
    step_angle,
    tangent_toward,
)

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False, allow_infinity=False)
rgb = st.tuples(positive, positive, positive)
casts = st.sampled_from(CASTS)


def rodrigues(u, axis_to, angle_deg):
    """Independent oracle: rotate u in the plane (u, axis_to) with Rodrigues' formula."""
    k = np.cross(u, axis_to)
    k /= np.linalg.norm(k)
    a = math.radians(angle_deg)
    return u * math.cos(a) + np.cross(k, u) * math.sin(a) + k * np.dot(k, u) * (1 - math.cos(a))


class TestNormalize:
    def test_symmetric(self):
        np.testing.assert_allclose(normalize([2, 2, 2]), [0.5773502691896258] * 3, rtol=1e-15)

    def test_clamps_zeros(self):
        v = normalize([1, 0, 0])
        assert v[0] == pytest.approx(1.0, abs=1e-11)
        np.testing.assert_allclose(v[1:], [1e-6, 1e-6], rtol=1e-11)

    def test_proportional_after_clamp(self):
        v = normalize([0.6, 0.8, 0.0])
        expected = np.array([0.6, 0.8, 1e-6]) / math.sqrt(0.36 + 0.64 + 1e-12)
        np.testing.assert_allclose(v, expected, rtol=1e-14)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("bad", [[0, 0, 0], [-1, -2, 0], [np.nan, 1, 1], [np.inf, 1, 1], [1, 2]])
    def test_rejects(self, bad):
        with pytest.raises(DomainError):
            normalize(bad)


class TestAngularError:
    def test_identity(self):
        assert angular_error_deg(NEUTRAL, NEUTRAL) == 0.0

    def test_orthogonal_raw_axes(self):
        assert angular_error_deg([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0, abs=1e-12)

    def test_worked_example(self):
        # arccos(4 / (sqrt(3) * sqrt(6)))
        expected = math.degrees(math.acos(4 / (math.sqrt(3) * math.sqrt(6))))
        assert expected == pytest.approx(19.471220634490674)
        assert angular_error_deg(normalize([1, 1, 1]), normalize([2, 1, 1])) == pytest.approx(expected, abs=1e-12)

    @given(rgb, rgb, positive)
    def test_symmetric_and_scale_invariant(self, a, b, s):
        a, b = np.array(a), np.array(b)
        e = angular_error_deg(a, b)
        assert 0.0 <= e <= 180.0
        assert e == pytest.approx(angular_error_deg(b, a), abs=1e-12)
        assert e == pytest.approx(angular_error_deg(s * a, b), abs=1e-9)

    def test_triangle_inequality(self, rng):
        for _ in range(1000):
            a, b, c = (normalize(rng.uniform(0.01, 1, 3)) for _ in range(3))
            assert angular_error_deg(a, c) <= angular_error_deg(a, b) + angular_error_deg(b, c) + 1e-9

    def test_zero_only_for_equal(self, rng):
        for _ in range(100):
            a = normalize(rng.uniform(0.01, 1, 3))
            b = normalize(a + rng.normal(scale=1e-3, size=3))
            assert angular_error_deg(a, b) > 0


class TestRotate:
    def test_worked_example(self):
        u = normalize([1, 1, 1])
        v = tangent_toward(u, Cast.RED)
        np.testing.assert_allclose(v, [0.816496580927726, -0.408248290463863, -0.408248290463863], rtol=1e-12)
        out = rotate_toward(u, Cast.RED, 3.0)
        np.testing.assert_allclose(out, rodrigues(u, Cast.RED.axis, 3.0), atol=1e-15)
        np.testing.assert_allclose(out, [0.619291, 0.555193, 0.555193], atol=1e-6)

    def test_red_green_permutation(self):
        u = normalize([1, 1, 1])
        red = rotate_toward(u, Cast.RED, 2.0)
        green = rotate_toward(u, Cast.GREEN, 2.0)
        np.testing.assert_allclose(red[[1, 0, 2]], green, atol=1e-15)

    def test_in_plane(self, rng):
        for _ in range(200):
            u = normalize(rng.uniform(0.05, 1, 3))
            c = CASTS[rng.integers(3)]
            out = rotate_toward(u, c, rng.uniform(0.1, 3))
            normal = np.cross(u, c.axis)
            assert abs(np.dot(out, normal)) < 1e-12

    def test_matches_rodrigues(self, rng):
        for _ in range(500):
            u = normalize(rng.uniform(0.05, 1, 3))
            c = CASTS[rng.integers(3)]
            a = rng.uniform(0.01, 3)
            np.testing.assert_allclose(rotate_toward(u, c, a), rodrigues(u, c.axis, a), atol=1e-13)

    def test_exact_angle_property(self, rng):
        worst = 0.0
        for _ in range(10_000):
            u = normalize(rng.uniform(0.01, 1, 3))
            c = CASTS[rng.integers(3)]
            a = 3.0 * (1.0 - rng.random())
            out = rotate_toward(u, c, a)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-9
            worst = max(worst, abs(angular_error_deg(u, out) - a))
        assert worst < 1e-6

    def test_planar_composition(self, rng):
        for _ in range(500):
            u = normalize(rng.uniform(0.05, 1, 3))
            c = CASTS[rng.integers(3)]
            a, b = rng.uniform(0.01, 3, 2)
            two = rotate_toward(rotate_toward(u, c, a), c, b)
            one = rotate_toward(u, c, a + b)
            assert angular_error_deg(two, one) < 1e-6

    def test_degenerate_axis(self):
        u = normalize([1, 0, 0])
        # the clamp leaves u a hair off the axis, so build an exact axis vector
        exact = np.array([1.0, 0.0, 0.0])
        assert tangent_toward(exact, Cast.RED) is None
        assert tangent_toward(u, Cast.RED) is not None

    @pytest.mark.parametrize("angle", [0.0, -1.0, 90.0, 120.0])
    def test_angle_domain(self, angle):
        with pytest.raises(DomainError):
            rotate_toward(NEUTRAL, Cast.RED, angle)


class TestSchedule:
    def test_endpoints_exact(self):
        s = StepSchedule()
        assert step_angle(s, 1) == 3.0
        assert step_angle(s, 20) == 0.1

    def test_midpoint(self):
        assert step_angle(StepSchedule(), 11) == pytest.approx(1.4736842105263157, abs=1e-14)

    def test_halving(self):
        s = StepSchedule()
        assert step_angle(s, 5, halving_active=True) == 0.5 * step_angle(s, 5)

    @pytest.mark.parametrize("t", [0, 21, -3])
    def test_out_of_range(self, t):
        with pytest.raises(DomainError):
            step_angle(StepSchedule(), t)

    @pytest.mark.parametrize("kwargs", [dict(a_start=0.1, a_end=3.0), dict(a_end=0.0), dict(t_max=1)])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            StepSchedule(**kwargs)

    @given(
        st.floats(min_value=0.01, max_value=10),
        st.floats(min_value=0.001, max_value=0.99),
        st.integers(min_value=2, max_value=200),
        st.booleans(),
    )
    def test_strictly_decreasing(self, a_start, frac, t_max, halving):
        s = StepSchedule(a_start, a_start * frac, t_max)
        values = [step_angle(s, t, halving) for t in range(1, t_max + 1)]
        assert all(x > y for x, y in zip(values, values[1:]))


class TestGeoMean:
    def test_idempotent(self, rng):
        v = normalize(rng.uniform(0.1, 1, 3))
        np.testing.assert_allclose(geo_mean3(v, v, v), v, atol=1e-15)

    def test_commutative(self, rng):
        a, b, c = (normalize(rng.uniform(0.1, 1, 3)) for _ in range(3))
        np.testing.assert_array_equal(geo_mean3(a, b, c), geo_mean3(c, a, b))

    def test_worked_example(self):
        out = geo_mean3(normalize([2, 1, 1]), normalize([1, 2, 1]), normalize([1, 1, 2]))
        np.testing.assert_allclose(out, NEUTRAL, atol=1e-15)

    def test_contraction(self, rng):
        for _ in range(1000):
            vs = [normalize(rng.uniform(0.01, 1, 3)) for _ in range(3)]
            m = geo_mean3(*vs)
            spread = max(angular_error_deg(vs[i], vs[j]) for i in range(3) for j in range(i + 1, 3))
            assert all(angular_error_deg(m, v) <= spread + 1e-9 for v in vs)
            assert is_canonical(m)


@pytest.mark.parametrize(
    "v, expected",
    [([1, 1, 1], (1 / 3, 1 / 3)), ([2, 1, 1], (0.5, 0.25)), ([1, 2, 3], (1 / 6, 1 / 3))],
)
def test_chromaticity_point(v, expected):
    r, g = chromaticity_point(normalize(v))
    assert (r, g) == pytest.approx(expected, abs=1e-15)
    assert 0 < r < 1 and 0 < g < 1 and r + g < 1


def test_cast_order_and_parse():
    assert sorted([Cast.BLUE, Cast.RED, Cast.GREEN]) == [Cast.RED, Cast.GREEN, Cast.BLUE]
    assert Cast.parse("green") is Cast.GREEN
    with pytest.raises(DomainError):
        Cast.parse("Greenish")
