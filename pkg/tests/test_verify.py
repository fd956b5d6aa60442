import math

import numpy as np
import pytest

from svasym import hamiltonian as ham
from svasym import measures, simulate, verify
from svasym.errors import SvasymError
from svasym.model import Regime, validate


class TestWilson:
    def test_contains_point_estimate(self):
        lo, hi = verify.wilson_interval(50, 100)
        assert lo < 0.5 < hi

    def test_degenerate_counts(self):
        lo, hi = verify.wilson_interval(0, 100)
        assert lo == pytest.approx(0.0, abs=1e-15) and hi < 0.1
        lo, hi = verify.wilson_interval(0, 0)
        assert (lo, hi) == (0.0, 1.0)

    def test_narrows_with_samples(self):
        lo1, hi1 = verify.wilson_interval(50, 100)
        lo2, hi2 = verify.wilson_interval(5000, 10000)
        assert hi2 - lo2 < hi1 - lo1


class TestFixtures:
    @pytest.mark.parametrize("name", sorted(verify.FIXTURES))
    def test_fixtures_are_admissible(self, name):
        assert validate(verify.FIXTURES[name]()).passed


class TestLdpTail:
    def test_rejects_target_at_start(self):
        params = verify.fixture_bs()
        mc = simulate.McConfig(paths=100)
        with pytest.raises(SvasymError):
            verify.ldp_tail(params, Regime.ULTRA_FAST, params.x0, 1.0,
                            (0.5, 0.25), mc, sigma_bar_sq=0.04)

    def test_rejects_non_decreasing_sequence(self):
        params = verify.fixture_bs()
        mc = simulate.McConfig(paths=100)
        with pytest.raises(SvasymError):
            verify.ldp_tail(params, Regime.ULTRA_FAST, 0.1, 1.0,
                            (0.25, 0.5), mc, sigma_bar_sq=0.04)

    def test_report_structure(self):
        params = verify.fixture_bs()
        mc = simulate.McConfig(paths=20_000, seed=3)
        report = verify.ldp_tail(params, Regime.ULTRA_FAST, 0.1, 1.0,
                                 (0.5, 0.35, 0.25), mc, sigma_bar_sq=0.04)
        assert len(report.points) == 3
        assert report.predicted == pytest.approx(-0.01 / 0.08, rel=1e-12)
        assert report.verdict in ("PASS", "FAIL")
        doc = report.to_json()
        assert doc["regime"] == 4 and len(doc["points"]) == 3
        # per-point bookkeeping is consistent
        for q in report.points:
            assert 0 <= q.hits <= q.paths
            if q.hits > 0:
                assert q.ci_lo <= q.estimate <= q.ci_hi


class TestRegimeCompare:
    def test_constant_sigma_rates_coincide(self):
        params = verify.fixture_bs()
        sbar2 = measures.sigma_bar_sq(params)
        curve = ham.build_curve(params, np.linspace(-40, 40, 8001),
                                method="closed-form")
        leg = ham.legendre(curve, np.linspace(-1.5, 1.5, 3001))
        rows = verify.regime_compare(np.linspace(-0.5, 0.5, 21), 0.0, 1.0,
                                     sigma_bar_sq=sbar2, legendre=leg,
                                     rho=0.0, tol=1e-6)
        for row in rows:
            assert row.ok
            assert row.i2 == pytest.approx(row.i4, abs=1e-6)


class TestRunAcceptance:
    def test_report_shape_and_json(self, tmp_path):
        out = tmp_path / "acceptance.json"
        report = verify.run_acceptance({"seed": 42, "criteria": ["C1"],
                                        "out": str(out)})
        ids = [e["criterion_id"] for e in report["criteria"]]
        assert ids == ["C0", "C1"]
        for entry in report["criteria"]:
            assert {"criterion_id", "description", "measured", "pass",
                    "runtime_s", "seed"} <= set(entry)
        assert out.exists()

    def test_crash_is_recorded_not_raised(self, monkeypatch):
        def boom(seed):
            raise RuntimeError("synthetic failure")
        monkeypatch.setitem(verify.CRITERIA, "C1", boom)
        report = verify.run_acceptance({"seed": 42, "criteria": ["C1"]})
        entry = next(e for e in report["criteria"]
                     if e["criterion_id"] == "C1")
        assert not entry["pass"]
