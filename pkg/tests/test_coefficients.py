import dataclasses
import math

import numpy as np
import pytest

from lbmlab.coefficients import (
    PRESETS,
    CoefficientSet,
    DiffusionSpec,
    Family,
    liouville_rho,
    make_preset,
    validate_spec,
)
from lbmlab.errors import InvalidParameter, UnknownPreset
from lbmlab.field import GridField, GridSpec, evaluate_field, sample_values
from lbmlab.kernels import KernelParams
from lbmlab.sde import diffusion_matrix, drift

NON_FIELD = [name for name in PRESETS if name != "lbm"]


def probes(spec, n=100, seed=0, shrink=0.8):
    g = np.random.default_rng(seed)
    c = spec.center
    half = 0.5 * shrink * (spec.hi - spec.lo)
    pts = c - half + 2 * half * g.random((4 * n, spec.dim))
    return pts[spec.degeneracy(pts) > 1e-3][:n]


@pytest.fixture(params=sorted(PRESETS))
def preset(request, small_field):
    params = {"field": small_field} if request.param == "lbm" else {}
    return make_preset(request.param, params)


class TestLiouvilleRho:
    def test_node_value(self):
        p = KernelParams.dyadic(1.0, 2, 1.0)
        g = GridSpec((0, 0), (1, 1), (2, 2))
        f = GridField(g, np.zeros(4), p.field_variance, p, 0)
        co = liouville_rho(f, 1.0)
        assert co.rho(np.array([0.0, 0.0])) == pytest.approx(1 / math.sqrt(2), rel=1e-15)

    def test_small_gamma_limit(self, small_field):
        co = liouville_rho(small_field, 1e-9)
        pts = small_field.grid.nodes()
        np.testing.assert_allclose(co.rho(pts), 1.0, atol=1e-7)

    @pytest.mark.parametrize("gamma", [0.0, 2.0, -1.0])
    def test_gamma_range(self, small_field, gamma):
        with pytest.raises(InvalidParameter):
            liouville_rho(small_field, gamma)

    def test_log_rho_is_bilinear(self, small_field):
        co = liouville_rho(small_field, 0.7)
        pts = np.random.default_rng(2).uniform(-3.9, 3.9, (200, 2))
        expect = 0.7 * evaluate_field(small_field, pts) - 0.5 * 0.49 * small_field.variance
        np.testing.assert_allclose(np.log(co.rho(pts)), expect, rtol=1e-12, atol=1e-12)
        assert np.all(co.rho(pts) > 0)

    def test_unit_mean_at_nodes(self):
        p = KernelParams.dyadic(1.0, 3, 1.0)
        g = GridSpec((0, 0), (1, 1), (3, 3))
        x = sample_values(p, g, 17, 20000)
        rho = np.exp(x - 0.5 * p.field_variance)
        se = rho.std(axis=0, ddof=1) / math.sqrt(len(rho))
        assert np.all(np.abs(rho.mean(axis=0) - 1) < 4 * se)


class TestPresets:
    def test_unknown(self):
        with pytest.raises(UnknownPreset):
            make_preset("nope")

    def test_distorted_bm_flat_is_brownian(self):
        spec = make_preset("distorted-bm", {"amp": 0.0})
        x = probes(spec, 20)
        np.testing.assert_array_equal(drift(spec, x), 0.0)
        np.testing.assert_allclose(diffusion_matrix(spec, x), np.broadcast_to(np.eye(2), (len(x), 2, 2)),
                                   atol=1e-15)

    def test_lebesgue_constant_has_no_drift(self):
        spec = make_preset("lebesgue-degenerate", {"degenerate": False, "beta": 0.0})
        np.testing.assert_array_equal(drift(spec, probes(spec, 20)), 0.0)

    def test_aniso_lambda_is_condition_number(self):
        m = np.array([[2.0, 0.5], [0.5, 1.0]])
        spec = make_preset("aniso-degenerate")
        ev = np.linalg.eigvalsh(m)
        assert spec.ellipticity == pytest.approx(ev[1] / ev[0])
        x = probes(spec)
        eig = np.linalg.eigvalsh(spec.coeffs.a(x))
        rho = spec.coeffs.rho(x)
        assert np.all(eig[:, 0] >= rho / spec.ellipticity * (1 - 1e-12))
        assert np.all(eig[:, 1] <= rho * spec.ellipticity * (1 + 1e-12))

    def test_aniso_rejects_matrix_off_unit(self):
        with pytest.raises(InvalidParameter):
            make_preset("aniso-degenerate", {"M": [[3.0, 0.0], [0.0, 2.0]]})

    def test_lbm_needs_field_inside_grid(self, small_field):
        with pytest.raises(InvalidParameter):
            make_preset("lbm", {"field": small_field, "domain": [[-5, -5], [5, 5]]})

    def test_families(self, preset):
        assert isinstance(preset.family, Family)
        assert preset.inside(np.array(preset.x0))

    def test_derivatives_match_differences(self, preset):
        co = preset.coeffs
        x = probes(preset)
        if co.fd_valid is not None:
            x = x[co.fd_valid(x)]
        tol = max(1e-6, 10 * co.fd_step ** 2)
        for analytic, fd in ((co.grad_rho, co.fd_gradient_rho), (co.div_a, co.fd_divergence_a)):
            a, b = analytic(x), fd(x)
            scale = np.maximum(np.linalg.norm(a, axis=-1), 1.0)
            assert np.max(np.linalg.norm(a - b, axis=-1) / scale) < tol


class TestValidateSpec:
    def test_presets_pass(self, preset):
        rep = validate_spec(preset, probes(preset), mc_samples=50_000, seed=3)
        assert rep.passed, rep.details["failed"]

    def test_asymmetric_a_fails(self):
        spec = make_preset("distorted-bm")

        def skew(x):
            a = spec.coeffs.a(x)
            a[..., 0, 1] += 0.1
            return a

        bad = dataclasses.replace(spec, coeffs=dataclasses.replace(spec.coeffs, a=skew))
        rep = validate_spec(bad, probes(bad, 20), mc_samples=10_000)
        assert not rep.passed
        assert "a_symmetric" in rep.details["failed"]

    def test_wrong_gradient_fails(self):
        spec = make_preset("distorted-bm")
        bad = dataclasses.replace(spec, coeffs=dataclasses.replace(
            spec.coeffs, grad_rho=lambda x: 1.01 * spec.coeffs.grad_rho(x) + 1e-3))
        rep = validate_spec(bad, probes(bad, 20), mc_samples=10_000)
        assert "grad_rho_fd" in rep.details["failed"]

    def test_rotational_drift_with_radial_weight(self):
        # B = (-x2, x1) is tangent to the level sets of a radial rho
        spec = make_preset("distorted-bm", {"omega": 1.0})
        rep = validate_spec(spec, probes(spec, 20), mc_samples=100_000, seed=9)
        assert rep.details["checks"]["b_weakly_divergence_free"]["pass"]

    def test_compressive_drift_fails_divergence(self):
        spec = make_preset("lebesgue-degenerate", {"degenerate": False, "beta": 0.0})
        bad = dataclasses.replace(spec, coeffs=dataclasses.replace(spec.coeffs, b=lambda x: -np.asarray(x)))
        rep = validate_spec(bad, probes(bad, 20), mc_samples=50_000)
        assert "b_weakly_divergence_free" in rep.details["failed"]

    def test_floor_violation_reported(self):
        spec = make_preset("aniso-degenerate")
        rep = validate_spec(spec, np.array([[-2.0, 0.0], [1.0, 1.0]]), mc_samples=10_000)
        assert "above_floor" in rep.details["failed"]

    def test_pass_flag_recomputable(self, preset):
        rep = validate_spec(preset, probes(preset, 20), mc_samples=10_000)
        assert rep.passed == rep.recompute_pass()


class TestSpecConstruction:
    def test_bad_domain(self):
        co = make_preset("bm").coeffs
        with pytest.raises(InvalidParameter):
            DiffusionSpec(Family.LBM, co, 2, ((0, 0), (0, 1)))

    def test_bad_floor(self):
        co = make_preset("bm").coeffs
        with pytest.raises(InvalidParameter):
            DiffusionSpec(Family.LBM, co, 2, ((0, 0), (1, 1)), rho_floor=0.0)

    def test_fd_fallback(self):
        spec = make_preset("distorted-bm")
        co = dataclasses.replace(spec.coeffs, grad_rho=None, div_a=None)
        assert isinstance(co, CoefficientSet)
        x = probes(spec, 10)
        np.testing.assert_allclose(co.gradient_rho(x), spec.coeffs.grad_rho(x), atol=1e-8)
        np.testing.assert_allclose(co.divergence_a(x), spec.coeffs.div_a(x), atol=1e-8)
