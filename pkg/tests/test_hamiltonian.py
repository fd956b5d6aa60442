import math

import numpy as np
import pytest

from svasym import hamiltonian as ham
from svasym import measures
from svasym.errors import RangeError, ValidationError
from svasym.model import ModelParams, VolFnSpec
from svasym.simulate import McConfig

OU = ModelParams(m=0.0, nu=math.sqrt(2.0), beta=0.0, rho=0.0, r=0.0,
                 sigma=VolFnSpec.power_abs(1.0, 0.5), y0=0.0)
CONST = ModelParams(m=0.0, nu=math.sqrt(2.0), beta=0.0, rho=0.0, r=0.0,
                    sigma=VolFnSpec.constant(0.2), y0=0.0)


class TestEigen:
    def test_constant_sigma_quadratic(self):
        # with sigma frozen the functional is deterministic:
        # Hbar0(p) = sigma0^2 p^2 / 2 exactly
        val, err = ham.hbar0_eigen(CONST, 2.0)
        assert val == pytest.approx(0.5 * 0.04 * 4.0, abs=1e-9)
        assert err < 1e-9

    def test_symmetry_without_correlation(self):
        vp, _ = ham.hbar0_eigen(OU, 1.0)
        vm, _ = ham.hbar0_eigen(OU, -1.0)
        assert vp == pytest.approx(vm, abs=1e-10)

    def test_dominates_averaged_variance_parabola(self):
        # the constant test function in the variational form gives the
        # lower bound (sbar^2 / 2) p^2
        sbar2 = measures.sigma_bar_sq(OU)
        val, _ = ham.hbar0_eigen(OU, 1.0)
        assert val >= 0.5 * sbar2 - 1e-8

    def test_error_estimate_is_honest(self):
        coarse, err = ham.hbar0_eigen(OU, 1.0, grid_spec=measures.GridSpec(n=513))
        fine, _ = ham.hbar0_eigen(OU, 1.0, grid_spec=measures.GridSpec(n=4097))
        assert abs(coarse - fine) <= max(10.0 * err, 1e-10)


class TestBuildCurve:
    def test_closed_form_pins_origin(self):
        curve = ham.build_curve(CONST, np.linspace(-2, 2, 9), method="closed-form")
        assert curve(0.0) == 0.0
        assert curve(2.0) == pytest.approx(0.08, abs=1e-12)

    def test_grid_must_be_symmetric_with_zero(self):
        with pytest.raises(ValidationError):
            ham.build_curve(CONST, [0.0, 1.0, 2.0], method="closed-form")
        with pytest.raises(ValidationError):
            ham.build_curve(CONST, [-2.0, 0.5, 2.0], method="closed-form")

    def test_closed_form_requires_constant_sigma(self):
        with pytest.raises(ValidationError):
            ham.build_curve(OU, np.linspace(-1, 1, 5), method="closed-form")

    def test_eigen_curve_is_convex(self):
        curve = ham.build_curve(OU, np.linspace(-1.5, 1.5, 13))
        d2 = np.diff(curve.values, 2)
        assert np.min(d2) > -1e-8

    def test_call_outside_range(self):
        curve = ham.build_curve(CONST, np.linspace(-1, 1, 5), method="closed-form")
        with pytest.raises(RangeError):
            curve(1.5)

    def test_mc_horizon_guard(self):
        with pytest.raises(ValidationError):
            ham.hbar0_mc(CONST, 1.0, 5.0, McConfig(paths=10))

    def test_csv_format(self, tmp_path):
        curve = ham.build_curve(CONST, np.linspace(-1, 1, 5), method="closed-form")
        path = tmp_path / "hamiltonian.csv"
        curve.to_csv(path)
        lines = path.read_bytes().split(b"\r\n")
        assert lines[0] == b"p,value,err"


class TestConjugacy:
    def test_conjugate_of_quadratic(self):
        # f(x) = a x^2 / 2  =>  f*(q) = q^2 / (2a)
        a = 0.7
        x = np.linspace(-10, 10, 4001)
        f = 0.5 * a * x ** 2
        q = np.linspace(-3, 3, 41)
        vals, x_star, flags = ham.conjugate(x, f, q)
        assert np.max(np.abs(vals - q ** 2 / (2 * a))) < 1e-6
        assert np.max(np.abs(x_star - q / a)) < 1e-3
        assert set(flags) == {"interior"}

    def test_range_error_without_extrapolation(self):
        x = np.linspace(-1, 1, 101)
        f = 0.5 * x ** 2
        with pytest.raises(RangeError):
            ham.conjugate(x, f, [5.0], extrapolate=False)

    def test_edge_slope_flagged_extrapolated(self):
        x = np.linspace(-1, 1, 101)
        f = 0.5 * x ** 2
        _, _, flags = ham.conjugate(x, f, [5.0])
        assert flags == ("extrapolated",)

    def test_legendre_of_quadratic_hamiltonian(self):
        # Lbar0(q) = q^2 / (2 sigma0^2) for the constant-sigma curve
        curve = ham.build_curve(CONST, np.linspace(-40, 40, 8001),
                                method="closed-form")
        q = np.linspace(-1, 1, 101)
        leg = ham.legendre(curve, q)
        assert np.max(np.abs(leg.values - q ** 2 / (2 * 0.04))) < 1e-6

    def test_biconjugation_recovers_hull(self):
        curve = ham.build_curve(CONST, np.linspace(-40, 40, 8001),
                                method="closed-form")
        q = np.linspace(-1.6, 1.6, 2001)  # covers slopes of |p| <= 40
        back = ham.biconjugate(curve, q)
        interior = np.abs(curve.p_grid) <= 30
        assert np.max(np.abs(back[interior] - curve.values[interior])) < 1e-6

    def test_convex_hull_repairs_dents(self):
        x = np.linspace(-1, 1, 201)
        f = x ** 2
        dented = f.copy()
        dented[100] += 0.05  # a concave spike at the bottom
        hull = ham._convex_hull_values(x, dented)
        assert np.all(hull <= dented + 1e-12)
        assert hull[100] < dented[100]
        # convexity of the repaired curve
        assert np.min(np.diff(hull, 2)) > -1e-12
