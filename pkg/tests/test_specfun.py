"""Series special functions against frozen high-precision values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pebackstep import specfun

# 40-digit mpmath evaluations, rounded to double precision
ORACLE = {
    ("I1", 2.0): 1.590636854637329,
    ("I2", 1.0): 0.1357476697670383,
    ("I1", 1.0): 0.5651591039924850,
    ("J1", 2.0): 0.5767248077568734,
    ("J1", 1.0): 0.4400505857449335,
    ("erf", 1.0): 0.8427007929497149,
    ("erfi", 1.0): 1.650425758797543,
}


def _eval(name, x):
    return {
        "I1": lambda t: specfun.bessel_i(1, t),
        "I2": lambda t: specfun.bessel_i(2, t),
        "J1": specfun.bessel_j1,
        "erf": specfun.erf,
        "erfi": specfun.erfi,
    }[name](x)


class TestOracleValues:
    @pytest.mark.parametrize("key", sorted(ORACLE))
    def test_frozen_value(self, key):
        name, x = key
        assert _eval(name, x) == pytest.approx(ORACLE[key], rel=1e-14)

    def test_against_mpmath_grid(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 40
        xs = np.linspace(0.0, 6.0, 25)
        for x in xs:
            assert specfun.bessel_i(0, x) == pytest.approx(float(mpmath.besseli(0, x)), rel=1e-14)
            assert specfun.bessel_i(1, x) == pytest.approx(
                float(mpmath.besseli(1, x)), rel=1e-14, abs=1e-300
            )
            assert specfun.bessel_j1(x) == pytest.approx(
                float(mpmath.besselj(1, x)), rel=1e-12, abs=1e-15
            )
            assert specfun.erf(x / 2) == pytest.approx(float(mpmath.erf(x / 2)), rel=1e-13)
            assert specfun.erfi(x / 2) == pytest.approx(float(mpmath.erfi(x / 2)), rel=1e-14)


class TestInvariants:
    def test_values_at_zero(self):
        assert specfun.bessel_i(0, 0.0) == 1.0
        assert specfun.bessel_i(1, 0.0) == 0.0
        assert specfun.erf(0.0) == 0.0
        assert specfun.erfi(0.0) == 0.0
        assert specfun.ratio_i1(0.0) == 0.5
        assert specfun.ratio_j1(0.0) == 0.5
        assert specfun.ratio_i2(0.0) == 0.125

    def test_ratio_continuous_across_crossover(self):
        c = specfun.RATIO_CROSSOVER
        for f in (specfun.ratio_i1, specfun.ratio_j1, specfun.ratio_i2):
            below, above = f(c * (1 - 1e-9)), f(c * (1 + 1e-9))
            assert below == pytest.approx(above, rel=1e-14)

    def test_array_shape_preserved(self):
        x = np.linspace(0, 2, 12).reshape(3, 4)
        assert specfun.bessel_i(1, x).shape == (3, 4)
        assert specfun.ratio_j1(x).shape == (3, 4)
        assert isinstance(specfun.erf(0.3), float)

    def test_derivative_identity(self):
        # I_1'(x) = I_0(x) - I_1(x)/x, checked by central differences
        x, h = 1.7, 1e-5
        fd = (specfun.bessel_i(1, x + h) - specfun.bessel_i(1, x - h)) / (2 * h)
        exact = specfun.bessel_i(0, x) - specfun.bessel_i(1, x) / x
        assert fd == pytest.approx(exact, rel=1e-9)

    def test_recurrence(self):
        # I_0 - I_2 = 2 I_1 / x
        x = np.array([0.3, 1.0, 2.5, 5.0])
        lhs = specfun.bessel_i(0, x) - specfun.bessel_i(2, x)
        np.testing.assert_allclose(lhs, 2 * specfun.bessel_i(1, x) / x, rtol=1e-14)

    def test_erf_erfi_small_argument(self):
        x = 1e-8
        assert specfun.erf(x) == pytest.approx(2 * x / math.sqrt(math.pi), rel=1e-15)
        assert specfun.erfi(x) == pytest.approx(2 * x / math.sqrt(math.pi), rel=1e-15)


class TestErrors:
    def test_negative_argument_rejected(self):
        with pytest.raises(ValueError):
            specfun.bessel_i(1, -1.0)
        with pytest.raises(ValueError):
            specfun.ratio_i1(-0.5)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            specfun.bessel_i(3, 1.0)

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            specfun.erf(float("nan"))

    def test_nonconvergence_raises(self):
        ctl = specfun.SeriesControl(max_terms=3)
        with pytest.raises(specfun.SeriesConvergenceError) as info:
            specfun.bessel_i(1, 5.0, control=ctl)
        assert info.value.max_terms == 3

    def test_bad_control(self):
        with pytest.raises(ValueError):
            specfun.SeriesControl(rel_tol=0.0)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=0.0, max_value=4.0))
    def test_erf_odd_and_bounded(self, x):
        assert specfun.erf(-x) == -specfun.erf(x)
        assert specfun.erfi(-x) == -specfun.erfi(x)
        assert 0.0 <= specfun.erf(x) < 1.0 + 1e-15
        assert specfun.erfi(x) >= specfun.erf(x) - 1e-15

    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=0.0, max_value=8.0), st.floats(min_value=1e-3, max_value=1.0))
    def test_i1_monotone(self, x, dx):
        assert specfun.bessel_i(1, x + dx) > specfun.bessel_i(1, x)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=0.0, max_value=6.0))
    def test_j1_dominated_by_i1(self, z):
        assert abs(specfun.ratio_j1(z)) <= specfun.ratio_i1(z) + 1e-16
