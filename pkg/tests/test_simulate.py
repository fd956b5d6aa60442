import math
import os
import struct

import numpy as np
import pytest

from svasym import simulate
from svasym.errors import ValidationError
from svasym.model import ModelParams, Regime, VolFnSpec

CONST = ModelParams(m=0.0, nu=math.sqrt(2.0), beta=0.0, rho=0.0, r=0.0,
                    sigma=VolFnSpec.constant(0.2), y0=0.0)
OU = ModelParams(m=0.0, nu=math.sqrt(2.0), beta=0.0, rho=0.0, r=0.0,
                 sigma=VolFnSpec.power_abs(1.0, 0.5), y0=0.0)
CIR = ModelParams(m=1.0, nu=1.0, beta=0.5, rho=0.0, r=0.0,
                  sigma=VolFnSpec.power_abs(1.0, 0.25), y0=1.0)


class TestSimulateXY:
    def test_constant_sigma_terminal_law(self):
        # X_t = x0 + eps (r - s0^2/2) t + sqrt(eps) s0 W_t exactly
        eps, t, s0 = 0.5, 1.0, 0.2
        mc = simulate.McConfig(paths=20_000, seed=7)
        batch = simulate.simulate_xy(CONST, Regime.ULTRA_FAST, eps, t, mc)
        mean = eps * (0.0 - 0.5 * s0 ** 2) * t
        sd = math.sqrt(eps) * s0 * math.sqrt(t)
        assert np.mean(batch.x) == pytest.approx(
            mean, abs=4 * sd / math.sqrt(mc.paths))
        assert np.var(batch.x) == pytest.approx(sd * sd, rel=0.05)

    def test_same_seed_identical(self):
        mc = simulate.McConfig(paths=5_000, seed=11)
        a = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.5, mc)
        b = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.5, mc)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_different_seed_differs(self):
        a = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.5,
                                 simulate.McConfig(paths=1_000, seed=1))
        b = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.5,
                                 simulate.McConfig(paths=1_000, seed=2))
        assert not np.array_equal(a.x, b.x)

    def test_thread_count_does_not_change_results(self):
        mc = simulate.McConfig(paths=150_000, seed=5)  # spans three blocks
        old = os.environ.get("SVASYM_THREADS")
        try:
            os.environ["SVASYM_THREADS"] = "1"
            a = simulate.simulate_xy(CONST, Regime.ULTRA_FAST, 0.5, 0.2, mc)
            os.environ["SVASYM_THREADS"] = "4"
            b = simulate.simulate_xy(CONST, Regime.ULTRA_FAST, 0.5, 0.2, mc)
        finally:
            if old is None:
                os.environ.pop("SVASYM_THREADS", None)
            else:
                os.environ["SVASYM_THREADS"] = old
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_positivity_of_square_root_factor(self):
        mc = simulate.McConfig(paths=2_000, steps_per_unit_time=100, seed=3)
        batch = simulate.simulate_xy(CIR, Regime.FAST, 0.25, 0.5, mc)
        assert np.all(batch.y >= 0.0)
        assert batch.truncated_fraction < 0.01

    def test_whole_line_factor_never_truncates(self):
        mc = simulate.McConfig(paths=1_000, seed=3)
        batch = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.5, mc)
        assert batch.truncated_fraction == 0.0

    def test_validations(self):
        mc = simulate.McConfig(paths=10)
        with pytest.raises(ValidationError):
            simulate.simulate_xy(OU, Regime.FAST, 0.0, 1.0, mc)
        with pytest.raises(ValidationError):
            simulate.simulate_xy(OU, Regime.FAST, 1.5, 1.0, mc)
        with pytest.raises(ValidationError):
            simulate.simulate_xy(
                CIR, Regime.FAST, 0.5, 1.0,
                simulate.McConfig(paths=10, steps_per_unit_time=50))
        with pytest.raises(ValidationError):
            simulate.simulate_xy(
                OU, Regime.FAST, 0.5, 1.0,
                simulate.McConfig(paths=10, scheme="euler"))

    def test_summary_csv_single_record(self, tmp_path):
        mc = simulate.McConfig(paths=500, seed=9)
        batch = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.2, mc)
        path = tmp_path / "summary.csv"
        batch.to_csv(path)
        lines = path.read_bytes().split(b"\r\n")
        header = lines[0].split(b",")
        assert b"paths" in header and b"seed" in header
        assert len(lines) == 3  # header, one record, trailing terminator

    def test_binary_round_trip(self, tmp_path):
        mc = simulate.McConfig(paths=257, seed=9)
        batch = simulate.simulate_xy(OU, Regime.FAST, 0.5, 0.2, mc)
        path = tmp_path / "paths.bin"
        batch.to_binary(path)
        raw = path.read_bytes()
        assert raw[:8] == b"SVABIN1\x00"
        (count,) = struct.unpack_from("<Q", raw, 8)
        assert count == 257
        x = np.frombuffer(raw, dtype="<f8", count=count, offset=16)
        y = np.frombuffer(raw, dtype="<f8", count=count, offset=16 + 8 * count)
        assert np.array_equal(x, batch.x) and np.array_equal(y, batch.y)


class TestTiltedAndErgodic:
    def test_tilt_shifts_stationary_mean(self):
        # constant sigma, rho != 0: the tilt adds the constant drift
        # rho p sigma0 nu, moving the stationary mean to m + rho p sigma0 nu
        params = ModelParams(m=0.0, nu=math.sqrt(2.0), beta=0.0, rho=0.5, r=0.0,
                             sigma=VolFnSpec.constant(0.2), y0=0.0)
        p = 1.0
        mc = simulate.McConfig(paths=10_000, seed=21)
        tb = simulate.simulate_tilted(params, 15.0, mc, p=p)
        expected = params.rho * p * 0.2 * params.nu
        se = 1.0 / math.sqrt(mc.paths)  # stationary variance nu^2/2 = 1
        assert np.mean(tb.y) == pytest.approx(expected, abs=5 * se)

    def test_ergodic_average_matches_invariant_moment(self):
        # E|Y| = sqrt(2/pi) under the standard normal invariant law
        mc = simulate.McConfig(paths=4_000, seed=13)
        est = simulate.ergodic_average(OU, lambda y: np.abs(y), 40.0, mc)
        closed = math.sqrt(2.0 / math.pi)
        assert est.value == pytest.approx(closed, abs=5 * max(est.stderr, 1e-4))

    def test_drift_shift_from_function_table(self):
        # adding nu^2 h' to the drift with h = c y reweights the invariant
        # law by e^{2 c y}, shifting the Gaussian mean to 2c
        c = 0.3
        grid = np.linspace(-10, 10, 2001)
        mc = simulate.McConfig(paths=3_000, seed=17)
        est = simulate.ergodic_average(OU, lambda y: y, 30.0, mc,
                                       h=(grid, c * grid))
        assert est.value == pytest.approx(2 * c, abs=5 * max(est.stderr, 1e-4))

    def test_burn_in_bounds(self):
        mc = simulate.McConfig(paths=10)
        with pytest.raises(ValidationError):
            simulate.simulate_tilted(OU, 1.0, mc, burn_in=1.0)


class TestEstimators:
    def test_log_mean_exp_matches_direct(self):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=500)
        lme, se = simulate.log_mean_exp(samples)
        assert lme == pytest.approx(math.log(np.mean(np.exp(samples))),
                                    abs=1e-12)
        assert se > 0.0

    def test_log_mean_exp_overflow_safe(self):
        lme, _ = simulate.log_mean_exp(np.array([1000.0, 1000.0]))
        assert lme == pytest.approx(1000.0, abs=1e-9)

    def test_moment_check_requires_p_above_one(self):
        mc = simulate.McConfig(paths=10)
        with pytest.raises(ValidationError):
            simulate.moment_check(CONST, Regime.ULTRA_FAST, (0.5, 0.25), 1.0,
                                  1.0, mc)
