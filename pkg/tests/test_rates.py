import math

import numpy as np
import pytest

from svasym import hamiltonian as ham
from svasym import rates
from svasym.errors import ATMWarning, RangeError, ResolutionError, ValidationError
from svasym.model import ModelParams, Regime, VolFnSpec

CONST = ModelParams(m=0.0, nu=math.sqrt(2.0), beta=0.0, rho=0.0, r=0.0,
                    sigma=VolFnSpec.constant(0.2), y0=0.0)
SBAR2 = 0.04  # averaged variance of the constant-sigma model


@pytest.fixture(scope="module")
def const_legendre():
    curve = ham.build_curve(CONST, np.linspace(-40, 40, 8001),
                            method="closed-form")
    return ham.legendre(curve, np.linspace(-1.5, 1.5, 3001))


class TestRateFunctions:
    def test_quadratic_rate_value(self):
        # |x0 - x|^2 / (2 sbar^2 t)
        assert rates.rate_i4(0.3, 0.0, 1.0, SBAR2) == pytest.approx(
            0.09 / 0.08, rel=1e-12)

    def test_quadratic_rate_validations(self):
        with pytest.raises(ValidationError):
            rates.rate_i4(0.3, 0.0, 0.0, SBAR2)
        with pytest.raises(ValidationError):
            rates.rate_i4(0.3, 0.0, 1.0, -1.0)

    def test_regimes_collapse_for_constant_sigma(self, const_legendre):
        x = np.linspace(-1.0, 1.0, 41)
        i4 = rates.rate_i4(x, 0.0, 1.0, SBAR2)
        i2 = rates.rate_i2(x, 0.0, 1.0, const_legendre)
        assert np.max(np.abs(i2 - i4)) < 1e-6

    def test_rate_curve_requires_ingredients(self):
        with pytest.raises(ValidationError):
            rates.rate_curve(Regime.ULTRA_FAST, 0.0, 1.0, [0.0, 0.1])
        with pytest.raises(ValidationError):
            rates.rate_curve(Regime.FAST, 0.0, 1.0, [0.0, 0.1])

    def test_rate_curve_interpolates_and_guards(self):
        curve = rates.rate_curve(Regime.ULTRA_FAST, 0.0, 1.0,
                                 np.linspace(-1, 1, 201), sigma_bar_sq=SBAR2)
        assert curve(0.4) == pytest.approx(rates.rate_i4(0.4, 0.0, 1.0, SBAR2),
                                           abs=1e-4)
        with pytest.raises(RangeError):
            curve(2.0)

    def test_csv_format(self, tmp_path):
        curve = rates.rate_curve(Regime.ULTRA_FAST, 0.0, 1.0,
                                 np.linspace(-1, 1, 11), sigma_bar_sq=SBAR2)
        path = tmp_path / "rate.csv"
        curve.to_csv(path)
        assert path.read_bytes().split(b"\r\n")[0] == b"x,rate,regime"


class TestLax:
    def test_quadratic_payoff_closed_form(self):
        # h(x') = -x'^2/2 against the quadratic cost q^2/(2 b):
        # u(t, x) = -x^2 / (2 (1 + b t))
        b, t = SBAR2, 1.0
        grid = np.linspace(-5, 5, 20001)
        h = -0.5 * grid ** 2
        for x in (0.0, 0.3, -0.7):
            val = rates.lax_solution(grid, h, t, x, Regime.ULTRA_FAST,
                                     sigma_bar_sq=b)
            assert val == pytest.approx(-x * x / (2 * (1 + b * t)), abs=1e-7)

    def test_constant_payoff_is_invariant(self):
        grid = np.linspace(-5, 5, 2001)
        h = np.full_like(grid, 1.3)
        val = rates.lax_solution(grid, h, 1.0, 0.2, Regime.ULTRA_FAST,
                                 sigma_bar_sq=SBAR2)
        assert val == pytest.approx(1.3, abs=1e-10)

    def test_matches_brute_force_on_tent(self, const_legendre):
        grid = np.linspace(-5, 5, 20001)
        h = -np.abs(grid - 0.2)
        t, x = 1.0, 0.1
        val = rates.lax_solution(grid, h, t, x, Regime.FAST,
                                 legendre=const_legendre)
        cost = np.interp((x - grid) / t, const_legendre.q_grid,
                         const_legendre.values)
        brute = np.max(h - t * cost)
        assert val == pytest.approx(brute, abs=1e-6)

    def test_edge_supremum_raises(self):
        # with cost slope b t x* = 0.04 * 10 = 0.4 the supremum sits well
        # outside this narrow payoff table
        grid = np.linspace(-0.1, 0.1, 21)
        h = 10.0 * grid
        with pytest.raises(RangeError):
            rates.lax_solution(grid, h, 1.0, 0.0, Regime.ULTRA_FAST,
                               sigma_bar_sq=SBAR2)


class TestPricesAndSmiles:
    def test_price_decay_rate(self):
        val = rates.option_price_log_asymptote(1.2, 0.0, 1.0,
                                               Regime.ULTRA_FAST,
                                               sigma_bar_sq=SBAR2)
        lk = math.log(1.2)
        assert val == pytest.approx(-lk * lk / (2 * SBAR2), rel=1e-12)

    def test_put_side_same_rate(self):
        call = rates.option_price_log_asymptote(1.2, 0.0, 1.0,
                                                Regime.ULTRA_FAST,
                                                sigma_bar_sq=SBAR2)
        put = rates.option_price_log_asymptote(1 / 1.2, 0.0, 1.0,
                                               Regime.ULTRA_FAST,
                                               sigma_bar_sq=SBAR2)
        assert put == pytest.approx(call, rel=1e-12)

    def test_atm_degenerates_with_warning(self):
        with pytest.warns(ATMWarning):
            val = rates.option_price_log_asymptote(1.0, 0.0, 1.0,
                                                   Regime.ULTRA_FAST,
                                                   sigma_bar_sq=SBAR2)
        assert val == 0.0

    def test_strike_must_be_positive(self):
        with pytest.raises(ValidationError):
            rates.option_price_log_asymptote(0.0, 0.0, 1.0,
                                             Regime.ULTRA_FAST,
                                             sigma_bar_sq=SBAR2)

    def test_ultra_fast_smile_is_flat(self):
        logk = np.linspace(-0.5, 0.5, 101)
        smile = rates.implied_vol_curve(0.0, Regime.ULTRA_FAST, 1.0, logk,
                                        sigma_bar_sq=SBAR2)
        assert np.max(np.abs(smile.values / SBAR2 - 1.0)) < 1e-10
        assert smile.atm_value == SBAR2

    def test_fast_smile_flat_for_constant_sigma(self, const_legendre):
        logk = np.linspace(-0.4, 0.4, 81)
        smile = rates.implied_vol_curve(0.0, Regime.FAST, 1.0, logk,
                                        sigma_bar_sq=SBAR2,
                                        legendre=const_legendre)
        assert np.max(np.abs(smile.values / SBAR2 - 1.0)) < 1e-4

    def test_smile_csv_format(self, tmp_path):
        logk = np.linspace(-0.1, 0.1, 5)
        smile = rates.implied_vol_curve(0.0, Regime.ULTRA_FAST, 1.0, logk,
                                        sigma_bar_sq=SBAR2)
        path = tmp_path / "smile.csv"
        smile.to_csv(path)
        assert path.read_bytes().split(b"\r\n")[0] == b"logK,implied_var,regime"


class TestAtmProbe:
    def test_probe_trends_to_averaged_variance(self):
        # a cost with a quartic correction: q^2/(2 b) + q^4 gives the ratio
        # b / (1 + 2 b q^2), which climbs to b as the probe points shrink
        q = np.linspace(-1.0, 1.0, 4001)
        leg = ham.LegendreCurve(q_grid=q,
                                values=q ** 2 / (2 * SBAR2) + q ** 4,
                                p_star=np.zeros_like(q),
                                flags=("interior",) * q.size)
        probe = rates.atm_conjecture_probe(1.0, leg, target=SBAR2)
        assert probe.trending is True
        # the smallest probe points sit between table nodes, so linear
        # interpolation caps the attainable accuracy near the vertex
        assert probe.ratio[-1] == pytest.approx(SBAR2, rel=1e-2)

    def test_noise_floor_guard(self):
        q = np.linspace(-1, 1, 101)
        flat = ham.LegendreCurve(q_grid=q, values=np.zeros_like(q),
                                 p_star=np.zeros_like(q),
                                 flags=("interior",) * q.size)
        with pytest.raises(ResolutionError):
            rates.atm_conjecture_probe(1.0, flat, target=SBAR2)
