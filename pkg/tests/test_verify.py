import json
import math

import numpy as np
import pytest

from lbmlab.coefficients import make_preset
from lbmlab.field import GridSpec
from lbmlab.generator import bump, constant, poly_cutoff, polynomial
from lbmlab.kernels import KernelParams
from lbmlab.report import VerificationReport
from lbmlab.verify import (
    test_cross_construction as cross_construction,
    test_liouville_mass as liouville_mass,
    test_martingale as martingale,
    test_non_explosion as non_explosion,
    test_quadratic_variation as quadratic_variation,
    with_floor,
)

BM = make_preset("bm")


class TestReport:
    def test_pass_rule(self):
        r = VerificationReport.from_statistic("x", 1.0, 0.5, 0.2, 4.0, 10)
        assert r.passed and r.recompute_pass()
        r = VerificationReport.from_statistic("x", 1.0, 0.0, 0.2, 4.0, 10)
        assert not r.passed and not r.recompute_pass()

    def test_ineligible_fails(self):
        r = VerificationReport.from_statistic("x", 0.0, 0.0, 1.0, 4.0, 10, eligible=False)
        assert not r.passed

    def test_nan_fails(self):
        assert not VerificationReport.from_statistic("x", math.nan, 0.0, 1.0, 4.0, 1).passed

    def test_json(self):
        r = VerificationReport.from_statistic("x", 1.0, 1.0, 0.0, 4.0, 3, arr=np.arange(2))
        d = json.loads(json.dumps(r.to_dict()))
        assert d["pass"] is True and d["details"]["arr"] == [0, 1] and d["details"]["target"] == 1.0


class TestMartingale:
    def test_brownian_bump(self):
        rep = martingale(BM, bump((0, 0), 2.0), [0.25, 0.5, 1.0], 4000, 0.01, seed=1)
        assert rep.passed, rep.line()
        assert len(rep.details["components"]) == 3

    def test_constant_is_exactly_zero(self):
        rep = martingale(BM, constant(2.0), [1.0], 500, 0.01, seed=1)
        assert rep.estimate == 0.0 and rep.std_error == 0.0 and rep.passed

    def test_dropping_the_integral_fails(self):
        rep = martingale(BM, bump((0, 0), 1.0), [1.0], 4000, 0.01, seed=1, drop_integral=True)
        assert not rep.passed

    def test_exclusion_makes_ineligible(self):
        spec = make_preset("bm", {"domain": [[-1, -1], [1, 1]]})
        rep = martingale(spec, bump((0, 0), 0.5), [1.0], 500, 0.01, seed=2)
        assert rep.details["excluded_fraction"] > 0.01 and not rep.details["eligible"] and not rep.passed

    @pytest.mark.parametrize("name", ["distorted-bm", "locally-elliptic", "aniso-degenerate"])
    def test_other_families(self, name):
        spec = make_preset(name)
        rep = martingale(spec, bump((0.5, 0.5), 1.5), [0.5], 4000, 0.005, seed=3, x0=(0.5, 0.5))
        assert rep.passed, rep.line()

    def test_deterministic(self):
        a = martingale(BM, bump((0, 0), 2.0), [0.5], 300, 0.01, seed=4)
        b = martingale(BM, bump((0, 0), 2.0), [0.5], 300, 0.01, seed=4)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


class TestQuadraticVariation:
    def test_brownian(self):
        u = poly_cutoff({(1, 0): 1.0}, (0, 0), 2.0)
        rep = quadratic_variation(BM, u, 1.0, 4000, 0.01, seed=5)
        assert rep.passed, rep.line()
        assert rep.details["components"][0]["mean_gamma_integral"] > 0

    def test_constant(self):
        rep = quadratic_variation(BM, constant(1.0), 1.0, 200, 0.01, seed=5)
        assert rep.estimate == 0.0 and rep.passed

    def test_covariation_disjoint_variables(self):
        u = poly_cutoff({(1, 0): 1.0}, (0, 0), 2.0)
        v = poly_cutoff({(0, 1): 1.0}, (0, 0), 2.0)
        rep = quadratic_variation(BM, u, 1.0, 4000, 0.01, seed=6, v=v)
        assert rep.passed, rep.line()

    def test_wrong_gamma_fails(self):
        # halving the reported Gamma must break the identity
        spec = make_preset("lbm", {"rho": 0.5})
        u = poly_cutoff({(1, 0): 1.0}, (0, 0), 2.0)
        rep = quadratic_variation(spec, u, 1.0, 4000, 0.01, seed=6)
        assert rep.passed
        from lbmlab import verify

        orig = verify._gamma
        try:
            verify._gamma = lambda s, a, b: (lambda x: 0.5 * orig(s, a, b)(x))
            assert not quadratic_variation(spec, u, 1.0, 4000, 0.01, seed=6).passed
        finally:
            verify._gamma = orig


class TestCrossConstruction:
    def test_constant_density(self):
        spec = make_preset("lbm", {"rho": 4.0, "domain": [[-20, -20], [20, 20]]})
        rep = cross_construction(spec, 1.0, 3000, 0.01, seed=7)
        assert rep.passed, rep.line()
        comps = {c["component"]: c for c in rep.details["components"]}
        for key in ("cov[0][0]", "cov[1][1]"):
            c = comps[key]
            assert abs(c["time_change"] - 0.25) < 0.03 and abs(c["sde"] - 0.25) < 0.03

    def test_field_density(self, lbm_spec):
        rep = cross_construction(lbm_spec, 0.25, 3000, 0.005, seed=8)
        assert rep.passed, rep.line()

    def test_needs_lbm(self):
        with pytest.raises(ValueError):
            cross_construction(make_preset("distorted-bm"), 0.5, 10, 0.1, seed=0)


class TestLiouvilleMass:
    GRID = GridSpec((0.0, 0.0), (2.0, 2.0), (9, 9))
    BOX = ((0.5, 0.5), (1.5, 1.5))

    def test_zero_field_is_exact(self):
        rep = liouville_mass(KernelParams.dyadic(1.0, 1, 1.0), self.GRID, self.BOX, 100, seed=1)
        assert rep.estimate == pytest.approx(1.0, abs=1e-14)

    def test_small_gamma(self):
        rep = liouville_mass(KernelParams.dyadic(1.0, 3, 1e-8), self.GRID, self.BOX, 100, seed=1)
        assert rep.estimate == pytest.approx(1.0, abs=1e-7)

    def test_unit_mean(self):
        rep = liouville_mass(KernelParams.dyadic(1.0, 3, 1.0), self.GRID, self.BOX, 5000, seed=2)
        assert rep.passed, rep.line()

    def test_misaligned_box(self):
        with pytest.raises(ValueError):
            liouville_mass(KernelParams.dyadic(1.0, 3, 1.0), self.GRID, ((0.3, 0.5), (1.5, 1.5)), 10, seed=1)


class TestNonExplosion:
    def test_brownian(self):
        rep = non_explosion(make_preset("bm"), 1.0, 500, 0.01, seed=1)
        assert rep.passed and rep.estimate == 0

    def test_raised_floor_kills(self, lbm_spec):
        floor = 0.9 * float(lbm_spec.coeffs.rho(np.array([[0.0, 0.0]]))[0])
        rep = non_explosion(with_floor(lbm_spec, floor), 1.0, 500, 0.01, seed=1)
        assert not rep.passed and rep.estimate > 0

    def test_domain_exits_not_counted(self):
        spec = make_preset("bm", {"domain": [[-0.5, -0.5], [0.5, 0.5]]})
        rep = non_explosion(spec, 1.0, 200, 0.01, seed=1)
        assert rep.passed and rep.details["domain_exits"] > 0
