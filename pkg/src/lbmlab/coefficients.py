"""Coefficient bundles (rho, A, B and derivatives) for the four model families.

Every callable is vectorized: it takes points of shape ``(..., d)`` and
returns ``(...)`` scalars, ``(..., d)`` vectors or ``(..., d, d)`` matrices.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .errors import InvalidParameter, UnknownPreset
from .field import GridField, evaluate_field, field_gradient
from .report import VerificationReport

DEFAULT_RHO_FLOOR = 1e-8


class Family(str, enum.Enum):
    LBM = "LBM"
    DEGENERATE_WEIGHTED = "DegenerateWeighted"
    LOCALLY_ELLIPTIC = "LocallyElliptic"
    LEBESGUE_DEGENERATE = "LebesgueDegenerate"


def _batch(x):
    return np.asarray(x, dtype=float)


def _const_matrix(mat):
    mat = np.array(mat, dtype=float)

    def a(x):
        x = _batch(x)
        return np.broadcast_to(mat, x.shape[:-1] + mat.shape).copy()

    return a


def _zero_vector(x):
    return np.zeros_like(_batch(x))


def _const_scalar(c):
    def f(x):
        return np.full(_batch(x).shape[:-1], float(c))

    return f


@dataclass(frozen=True)
class CoefficientSet:
    """Pointwise coefficients of one diffusion.

    ``grad_rho`` and ``div_a`` (row divergence ``sum_j d_j a_ij``) are optional;
    missing ones fall back to centered differences with step ``fd_step``.
    ``psi`` is the degeneracy function of the Lebesgue-reference family.
    ``fd_valid`` flags points whose difference stencil stays inside one
    smooth piece of a piecewise-smooth coefficient.
    """

    rho: Callable
    a: Callable
    b: Callable
    grad_rho: Optional[Callable] = None
    div_a: Optional[Callable] = None
    psi: Optional[Callable] = None
    fd_step: float = 1e-5
    fd_valid: Optional[Callable] = None

    def gradient_rho(self, x):
        return self.grad_rho(x) if self.grad_rho is not None else self.fd_gradient_rho(x)

    def divergence_a(self, x):
        return self.div_a(x) if self.div_a is not None else self.fd_divergence_a(x)

    def fd_gradient_rho(self, x):
        x = _batch(x)
        h = self.fd_step
        out = np.empty_like(x)
        for j in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[j] = h
            out[..., j] = (self.rho(x + e) - self.rho(x - e)) / (2 * h)
        return out

    def fd_divergence_a(self, x):
        x = _batch(x)
        h = self.fd_step
        out = np.zeros_like(x)
        for j in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[j] = h
            out += (self.a(x + e)[..., :, j] - self.a(x - e)[..., :, j]) / (2 * h)
        return out


@dataclass(frozen=True)
class DiffusionSpec:
    """A model family together with its coefficients and simulation box."""

    family: Family
    coeffs: CoefficientSet
    dim: int
    domain: tuple
    rho_floor: float = DEFAULT_RHO_FLOOR
    preset_name: str = ""
    ellipticity: Optional[float] = None
    x0: Optional[tuple] = None
    field: Optional[GridField] = field(default=None, compare=False)

    def __post_init__(self):
        lo, hi = (tuple(float(v) for v in bound) for bound in self.domain)
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "family", Family(self.family))
        if self.dim < 2 or len(lo) != self.dim or len(hi) != self.dim:
            raise InvalidParameter("domain bounds must match dim >= 2")
        if any(h <= l for l, h in zip(lo, hi)):
            raise InvalidParameter(f"empty domain box {self.domain}")
        if not self.rho_floor > 0:
            raise InvalidParameter(f"rho_floor must be positive, got {self.rho_floor}")
        if self.x0 is None:
            object.__setattr__(self, "x0", tuple(self.center))
        else:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @property
    def lo(self):
        return np.array(self.domain[0])

    @property
    def hi(self):
        return np.array(self.domain[1])

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def inside(self, x):
        x = _batch(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def degeneracy(self, x):
        """The function whose zero set is removed from the state space."""
        if self.family is Family.LEBESGUE_DEGENERATE:
            psi = self.coeffs.psi
            return psi(x) if psi is not None else np.ones(_batch(x).shape[:-1])
        return self.coeffs.rho(x)


def liouville_rho(field, gamma, fd_step=1e-5):
    """Density ``exp(gamma X_n - gamma^2/2 E[X_n^2])`` of the regularized Liouville measure."""
    if not 0 < gamma < 2:
        raise InvalidParameter(f"gamma must lie in (0, 2), got {gamma}")
    shift = 0.5 * gamma * gamma * field.variance
    hx, hy = field.grid.spacing
    origin = np.array(field.grid.origin)

    def rho(x):
        return np.exp(gamma * evaluate_field(field, x) - shift)

    def grad_rho(x):
        return (rho(x) * gamma)[..., None] * field_gradient(field, x)

    def fd_valid(x):
        u = (_batch(x) - origin) / np.array([hx, hy])
        dist = np.abs(u - np.round(u)) * np.array([hx, hy])
        return np.all(dist > 2 * fd_step, axis=-1)

    return CoefficientSet(rho=rho, a=_const_matrix(np.eye(2)), b=_zero_vector,
                          grad_rho=grad_rho, div_a=_zero_vector, fd_step=fd_step, fd_valid=fd_valid)


def _rotation(omega, center):
    center = np.array(center, dtype=float)

    def b(x):
        y = _batch(x) - center
        return omega * np.stack([-y[..., 1], y[..., 0]], axis=-1)

    return b


def _gaussian_bump(amp, center, width):
    center = np.array(center, dtype=float)
    if amp <= -1:
        raise InvalidParameter("bump amplitude must exceed -1 to keep rho positive")

    def rho(x):
        y = _batch(x) - center
        return 1.0 + amp * np.exp(-0.5 * np.sum(y * y, axis=-1) / width ** 2)

    def grad(x):
        y = _batch(x) - center
        g = amp * np.exp(-0.5 * np.sum(y * y, axis=-1) / width ** 2)
        return -(g / width ** 2)[..., None] * y

    return rho, grad


def _domain(params, dim, half=5.0):
    dom = params.get("domain")
    if dom is None:
        return (tuple([-half] * dim), tuple([half] * dim))
    if isinstance(dom, dict):
        return (tuple(dom["lo"]), tuple(dom["hi"]))
    return (tuple(dom[0]), tuple(dom[1]))


def _fd_step(domain):
    lo, hi = np.array(domain[0]), np.array(domain[1])
    return 1e-5 * float(np.linalg.norm(hi - lo))


def _preset_bm(params):
    dim = int(params.get("dim", 2))
    domain = _domain(params, dim)
    coeffs = CoefficientSet(rho=_const_scalar(1.0), a=_const_matrix(np.eye(dim)), b=_zero_vector,
                            grad_rho=_zero_vector, div_a=_zero_vector, fd_step=_fd_step(domain))
    return Family.LBM, coeffs, dim, domain, {}


def _preset_lbm(params):
    fld = params.get("field")
    if fld is None:
        c = float(params.get("rho", 1.0))
        if not c > 0:
            raise InvalidParameter(f"constant rho must be positive, got {c}")
        dim = int(params.get("dim", 2))
        domain = _domain(params, dim)
        coeffs = CoefficientSet(rho=_const_scalar(c), a=_const_matrix(np.eye(dim)), b=_zero_vector,
                                grad_rho=_zero_vector, div_a=_zero_vector, fd_step=_fd_step(domain))
        return Family.LBM, coeffs, dim, domain, {}
    if not isinstance(fld, GridField):
        raise InvalidParameter("lbm preset expects a GridField under 'field'")
    gamma = float(params.get("gamma", fld.params.gamma))
    domain = _domain(params, 2) if "domain" in params else \
        (tuple(fld.grid.lo), tuple(fld.grid.hi))
    lo, hi = np.array(domain[0]), np.array(domain[1])
    if np.any(lo < fld.grid.lo - 1e-12) or np.any(hi > fld.grid.hi + 1e-12):
        raise InvalidParameter("lbm domain must lie inside the field grid")
    coeffs = liouville_rho(fld, gamma, fd_step=_fd_step(domain))
    return Family.LBM, coeffs, 2, domain, {"field": fld}


def _preset_distorted_bm(params):
    dim = int(params.get("dim", 2))
    domain = _domain(params, dim)
    amp = float(params.get("amp", 0.5))
    width = float(params.get("width", 1.0))
    center = tuple(params.get("center", [0.0] * dim))
    omega = float(params.get("omega", 0.0))
    rho, grad = _gaussian_bump(amp, center, width)
    if omega != 0.0 and dim != 2:
        raise InvalidParameter("rotational drift is only defined for dim = 2")

    def a(x):
        return rho(x)[..., None, None] * np.eye(dim)

    coeffs = CoefficientSet(rho=rho, a=a, b=_rotation(omega, center) if omega else _zero_vector,
                            grad_rho=grad, div_a=grad, fd_step=_fd_step(domain))
    return Family.DEGENERATE_WEIGHTED, coeffs, dim, domain, {"ellipticity": 1.0}


def _preset_aniso_degenerate(params):
    domain = _domain(params, 2)
    mat = np.array(params.get("M", [[2.0, 0.5], [0.5, 1.0]]), dtype=float)
    if mat.shape != (2, 2) or not np.allclose(mat, mat.T):
        raise InvalidParameter("M must be a symmetric 2x2 matrix")
    eig = np.linalg.eigvalsh(mat)
    if eig[0] <= 0:
        raise InvalidParameter("M must be positive definite")
    if not eig[0] <= 1.0 <= eig[1]:
        raise InvalidParameter("the spectrum of M must straddle 1 so that lambda = cond(M)")
    center = np.array(params.get("center", [-2.0, 0.0]), dtype=float)
    delta = float(params.get("delta", 0.0))
    omega = float(params.get("omega", 0.0))
    if delta < 0:
        raise InvalidParameter("delta must be nonnegative")

    # rho = |x - center|^2 + delta vanishes at the center when delta = 0
    def rho(x):
        y = _batch(x) - center
        return np.sum(y * y, axis=-1) + delta

    def grad(x):
        return 2.0 * (_batch(x) - center)

    def a(x):
        return rho(x)[..., None, None] * mat

    def div_a(x):
        return grad(x) @ mat.T

    coeffs = CoefficientSet(rho=rho, a=a, b=_rotation(omega, center) if omega else _zero_vector,
                            grad_rho=grad, div_a=div_a, fd_step=_fd_step(domain))
    return Family.DEGENERATE_WEIGHTED, coeffs, 2, domain, {"ellipticity": float(eig[1] / eig[0])}


def _preset_locally_elliptic(params):
    domain = _domain(params, 2)
    omega = float(params.get("omega", 0.5))
    s = float(params.get("strength", 0.3))
    if not 0 <= s < 1:
        raise InvalidParameter("strength must lie in [0, 1)")

    def rho(x):
        x = _batch(x)
        return np.exp(-np.sum(x * x, axis=-1))

    def grad(x):
        return -2.0 * _batch(x) * rho(x)[..., None]

    def a(x):
        x = _batch(x)
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.5 + 0.5 * np.sin(x[..., 1])
        out[..., 1, 1] = 1.5 + 0.5 * np.cos(x[..., 0])
        out[..., 0, 1] = out[..., 1, 0] = s * np.cos(x[..., 0])
        return out

    def div_a(x):
        x = _batch(x)
        out = np.zeros_like(x)
        out[..., 1] = -s * np.sin(x[..., 0])
        return out

    coeffs = CoefficientSet(rho=rho, a=a, b=_rotation(omega, (0.0, 0.0)) if omega else _zero_vector,
                            grad_rho=grad, div_a=div_a, fd_step=_fd_step(domain))
    return Family.LOCALLY_ELLIPTIC, coeffs, 2, domain, {}


def _preset_lebesgue_degenerate(params):
    domain = _domain(params, 2)
    degenerate = bool(params.get("degenerate", True))
    beta = float(params.get("beta", 0.5))

    if degenerate:
        def psi(x):
            x1 = _batch(x)[..., 0]
            return x1 * x1 / (1.0 + x1 * x1)

        def div_a(x):
            x1 = _batch(x)[..., 0]
            out = np.zeros_like(_batch(x))
            out[..., 0] = 2.0 * x1 / (1.0 + x1 * x1) ** 2
            return out
    else:
        psi = _const_scalar(1.0)
        div_a = _zero_vector

    def a(x):
        return psi(x)[..., None, None] * np.eye(2)

    def b(x):
        x = _batch(x)
        out = np.zeros_like(x)
        out[..., 1] = beta * np.sin(x[..., 0])
        return out

    coeffs = CoefficientSet(rho=_const_scalar(1.0), a=a, b=b if beta else _zero_vector,
                            grad_rho=_zero_vector, div_a=div_a, psi=psi, fd_step=_fd_step(domain))
    extra = {"x0": (1.0, 0.0)} if degenerate else {}
    return Family.LEBESGUE_DEGENERATE, coeffs, 2, domain, extra


PRESETS = {
    "bm": _preset_bm,
    "lbm": _preset_lbm,
    "distorted-bm": _preset_distorted_bm,
    "aniso-degenerate": _preset_aniso_degenerate,
    "locally-elliptic": _preset_locally_elliptic,
    "lebesgue-degenerate": _preset_lebesgue_degenerate,
}

PRESET_FAMILIES = {
    "bm": Family.LBM,
    "lbm": Family.LBM,
    "distorted-bm": Family.DEGENERATE_WEIGHTED,
    "aniso-degenerate": Family.DEGENERATE_WEIGHTED,
    "locally-elliptic": Family.LOCALLY_ELLIPTIC,
    "lebesgue-degenerate": Family.LEBESGUE_DEGENERATE,
}


def make_preset(name, params=None):
    """Build a named :class:`DiffusionSpec`.

    Common keys in ``params``: ``domain`` (``(lo, hi)`` or ``{"lo", "hi"}``),
    ``rho_floor`` and ``x0``. See the README for the preset-specific keys.
    """
    params = dict(params or {})
    try:
        builder = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    family, coeffs, dim, domain, extra = builder(params)
    x0 = params.get("x0", extra.get("x0"))
    return DiffusionSpec(family=family, coeffs=coeffs, dim=dim, domain=domain,
                         rho_floor=float(params.get("rho_floor", DEFAULT_RHO_FLOOR)),
                         preset_name=name, ellipticity=extra.get("ellipticity"),
                         x0=x0, field=extra.get("field"))


def _polynomial_test_functions(spec):
    """Compactly supported test functions used for the weak divergence check."""
    from .generator import poly_cutoff

    c = spec.center
    half = 0.45 * (spec.hi - spec.lo)
    return [
        poly_cutoff({(1, 0): 1.0}, c, half, offset=c),
        poly_cutoff({(0, 1): 1.0}, c, half, offset=c),
        poly_cutoff({(1, 1): 1.0}, c, half, offset=c),
        poly_cutoff({(2, 0): 1.0, (0, 2): 1.0}, c, half, offset=c),
    ]


def _rel_err(analytic, approx, scale):
    num = np.linalg.norm(np.atleast_1d(analytic - approx).reshape(len(analytic), -1), axis=-1)
    den = np.maximum.reduce([
        np.linalg.norm(np.atleast_1d(analytic).reshape(len(analytic), -1), axis=-1),
        np.linalg.norm(np.atleast_1d(approx).reshape(len(analytic), -1), axis=-1),
        1e-8 * (1.0 + scale),
    ])
    return num / den


def validate_spec(spec, probes, mc_samples=100_000, seed=0, threshold=4.0):
    """Pointwise and weak sanity checks of a :class:`DiffusionSpec`.

    Failures are reported, never raised. The report's estimate counts failed
    checks (target 0, zero standard error).
    """
    x = np.atleast_2d(np.asarray(probes, dtype=float))
    co = spec.coeffs
    checks = {}

    amat = co.a(x)
    asym = float(np.max(np.abs(amat - np.swapaxes(amat, -1, -2))))
    checks["a_symmetric"] = {"pass": asym <= 1e-12 * (1.0 + float(np.max(np.abs(amat)))),
                             "max_asymmetry": asym}

    sym = 0.5 * (amat + np.swapaxes(amat, -1, -2))
    eig = np.linalg.eigvalsh(sym)
    rho = co.rho(x)
    tol = 1e-12
    if spec.family is Family.LBM:
        ok = np.allclose(amat, np.eye(spec.dim), rtol=0, atol=1e-15)
        checks["ellipticity"] = {"pass": bool(ok), "rule": "A = Id"}
    elif spec.family is Family.DEGENERATE_WEIGHTED:
        lam = spec.ellipticity if spec.ellipticity is not None else 1.0
        lower = eig[:, 0] >= rho / lam * (1 - tol) - tol
        upper = eig[:, -1] <= lam * rho * (1 + tol) + tol
        checks["ellipticity"] = {"pass": bool(np.all(lower & upper)), "rule": "rho/lambda <= A <= lambda rho",
                                 "lambda": lam}
    elif spec.family is Family.LOCALLY_ELLIPTIC:
        checks["ellipticity"] = {"pass": bool(np.all(eig[:, 0] > 0)), "rule": "A > 0",
                                 "min_eigenvalue": float(eig[:, 0].min())}
    else:
        psi = spec.degeneracy(x)
        checks["ellipticity"] = {"pass": bool(np.all(eig[:, 0] >= psi * (1 - tol) - tol)),
                                 "rule": "A >= psi"}

    floor_ok = spec.degeneracy(x) > spec.rho_floor
    checks["above_floor"] = {"pass": bool(np.all(floor_ok)), "violations": int(np.sum(~floor_ok))}

    valid = np.ones(len(x), dtype=bool) if co.fd_valid is None else np.asarray(co.fd_valid(x))
    dtol = max(1e-6, 10 * co.fd_step ** 2)
    xv = x[valid]
    if co.grad_rho is not None and len(xv):
        err = _rel_err(co.grad_rho(xv), co.fd_gradient_rho(xv), np.abs(co.rho(xv)))
        checks["grad_rho_fd"] = {"pass": bool(np.all(err < dtol)), "max_rel_err": float(err.max()),
                                 "probes": int(len(xv))}
    if co.div_a is not None and len(xv):
        err = _rel_err(co.div_a(xv), co.fd_divergence_a(xv),
                       np.max(np.abs(co.a(xv)), axis=(-1, -2)))
        checks["div_a_fd"] = {"pass": bool(np.all(err < dtol)), "max_rel_err": float(err.max()),
                              "probes": int(len(xv))}

    checks["b_weakly_divergence_free"] = _divergence_check(spec, mc_samples, seed, threshold)

    failed = sorted(k for k, v in checks.items() if not v["pass"])
    return VerificationReport.from_statistic(
        f"validate_spec[{spec.preset_name or spec.family.value}]", len(failed), 0.0, 0.0, 0.0,
        len(x), checks=checks, failed=failed)


def _divergence_check(spec, n, seed, threshold):
    """Monte Carlo estimate of ``int <B, grad f> w dx`` over the box for a few ``f``.

    The weight ``w`` is the reference density: ``rho`` except for the
    Lebesgue family.
    """
    if spec.dim != 2:
        return {"pass": True, "skipped": "test functions are two-dimensional"}
    gen = rng.stream(seed, "divergence-check")
    pts = spec.lo + (spec.hi - spec.lo) * gen.random((n, spec.dim))
    area = float(np.prod(spec.hi - spec.lo))
    bvec = spec.coeffs.b(pts)
    weight = np.ones(n) if spec.family is Family.LEBESGUE_DEGENERATE else spec.coeffs.rho(pts)
    results = []
    ok = True
    for f in _polynomial_test_functions(spec):
        vals = np.sum(bvec * f.grad(pts), axis=-1) * weight * area
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n))
        passed = abs(est) <= threshold * se
        ok &= passed
        results.append({"estimate": est, "std_error": se, "pass": passed})
    return {"pass": bool(ok), "tests": results, "samples": n}
