"""Generators, carré du champ, and smooth compactly supported test functions."""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidParameter
from .report import VerificationReport
from .sde import check_floor, drift_unchecked, second_order

_INF_BOX = (-math.inf, math.inf)


@dataclass(frozen=True)
class TestFunction:
    """A smooth function with closed-form gradient and Hessian.

    ``support_box`` is ``(lo, hi)``; the function vanishes outside it.
    """

    __test__ = False  # not a pytest class

    value: Callable
    grad: Callable
    hess: Callable
    support_box: tuple
    name: str = "u"

    def __call__(self, x):
        return self.value(x)


def _asx(x):
    return np.asarray(x, dtype=float)


def constant(c, dim=2):
    """The constant function ``c`` (no compact support; used as a control)."""
    def value(x):
        return np.full(_asx(x).shape[:-1], float(c))

    def grad(x):
        return np.zeros_like(_asx(x))

    def hess(x):
        x = _asx(x)
        return np.zeros(x.shape + (x.shape[-1],))

    box = (tuple([-math.inf] * dim), tuple([math.inf] * dim))
    return TestFunction(value, grad, hess, box, name=f"const({c:g})")


def polynomial(coeffs, offset=None, dim=2):
    """``sum_e c_e prod_i (x_i - offset_i)**e_i`` from ``{exponent tuple: c_e}``."""
    terms = [(np.array(e, dtype=int), float(c)) for e, c in coeffs.items()]
    if any(len(e) != dim for e, _ in terms):
        raise InvalidParameter("exponent tuples must have length dim")
    off = np.zeros(dim) if offset is None else np.array(offset, dtype=float)

    def _powers(y, e):
        # y**e with the convention 0**negative never arising
        return np.where(e >= 0, y ** np.maximum(e, 0), 0.0)

    def value(x):
        y = _asx(x) - off
        out = np.zeros(y.shape[:-1])
        for e, c in terms:
            out += c * np.prod(_powers(y, e), axis=-1)
        return out

    def grad(x):
        y = _asx(x) - off
        out = np.zeros_like(y)
        for e, c in terms:
            for i in range(dim):
                if e[i] == 0:
                    continue
                ei = e.copy()
                ei[i] -= 1
                out[..., i] += c * e[i] * np.prod(_powers(y, ei), axis=-1)
        return out

    def hess(x):
        y = _asx(x) - off
        out = np.zeros(y.shape + (dim,))
        for e, c in terms:
            for i in range(dim):
                for j in range(dim):
                    ej = e.copy()
                    fac = ej[i]
                    ej[i] -= 1
                    fac *= ej[j]
                    ej[j] -= 1
                    if fac == 0:
                        continue
                    out[..., i, j] += c * fac * np.prod(_powers(y, ej), axis=-1)
        return out

    box = (tuple([-math.inf] * dim), tuple([math.inf] * dim))
    return TestFunction(value, grad, hess, box, name="poly")


def _smooth_step(s):
    """``S(s)`` rising from 0 (``s <= 0``) to 1 (``s >= 1``) and its first two derivatives."""
    s = _asx(s)
    inner = (s > 0) & (s < 1)
    sc = np.clip(s, 1e-6, 1 - 1e-6)
    r = 1 - sc
    with np.errstate(under="ignore"):
        p = np.exp(-1 / sc)
        q = np.exp(-1 / r)
    g = p + q
    dp, dq = p / sc ** 2, -q / r ** 2
    ddp, ddq = p * (1 / sc ** 4 - 2 / sc ** 3), q * (1 / r ** 4 - 2 / r ** 3)
    val = p / g
    d1 = (dp * q - p * dq) / g ** 2
    d2 = (ddp * q - p * ddq) / g ** 2 - 2 * d1 * (dp + dq) / g
    val = np.where(inner, val, (s >= 1).astype(float))
    d1 = np.where(inner, d1, 0.0)
    d2 = np.where(inner, d2, 0.0)
    return val, d1, d2


def cutoff(center, half_width, plateau=0.0):
    """Tensor-product smooth cutoff: 1 on ``|x_i - c_i| <= plateau_i``, 0 beyond ``half_width_i``."""
    c = np.array(center, dtype=float)
    b = np.broadcast_to(np.array(half_width, dtype=float), c.shape).copy()
    a = np.broadcast_to(np.array(plateau, dtype=float), c.shape).copy()
    if np.any(a < 0) or np.any(b <= a):
        raise InvalidParameter("need 0 <= plateau < half_width")
    dim = len(c)

    def parts(x):
        t = _asx(x) - c
        s = (np.abs(t) - a) / (b - a)
        val, d1, d2 = _smooth_step(s)
        chi = 1 - val
        dchi = -d1 * np.sign(t) / (b - a)
        ddchi = -d2 / (b - a) ** 2
        return chi, dchi, ddchi

    def value(x):
        return np.prod(parts(x)[0], axis=-1)

    def grad(x):
        chi, dchi, _ = parts(x)
        out = np.empty_like(chi)
        for i in range(dim):
            others = np.prod(np.delete(chi, i, axis=-1), axis=-1)
            out[..., i] = dchi[..., i] * others
        return out

    def hess(x):
        chi, dchi, ddchi = parts(x)
        out = np.empty(chi.shape + (dim,))
        for i in range(dim):
            for j in range(dim):
                if i == j:
                    out[..., i, i] = ddchi[..., i] * np.prod(np.delete(chi, i, axis=-1), axis=-1)
                else:
                    rest = np.prod(np.delete(chi, [i, j], axis=-1), axis=-1)
                    out[..., i, j] = dchi[..., i] * dchi[..., j] * rest
        return out

    return TestFunction(value, grad, hess, (tuple(c - b), tuple(c + b)), name="cutoff")


def product(u, v):
    """Pointwise product with the product rule for derivatives."""
    def value(x):
        return u.value(x) * v.value(x)

    def grad(x):
        return u.value(x)[..., None] * v.grad(x) + v.value(x)[..., None] * u.grad(x)

    def hess(x):
        gu, gv = u.grad(x), v.grad(x)
        outer = gu[..., :, None] * gv[..., None, :]
        h = (u.value(x)[..., None, None] * v.hess(x) + v.value(x)[..., None, None] * u.hess(x)
             + outer + np.swapaxes(outer, -1, -2))
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    lo = tuple(np.maximum(u.support_box[0], v.support_box[0]))
    hi = tuple(np.minimum(u.support_box[1], v.support_box[1]))
    return TestFunction(value, grad, hess, (lo, hi), name=f"({u.name})*({v.name})")


def linear_combination(alpha, u, beta, v):
    """``alpha*u + beta*v``."""
    def value(x):
        return alpha * u.value(x) + beta * v.value(x)

    def grad(x):
        return alpha * u.grad(x) + beta * v.grad(x)

    def hess(x):
        return alpha * u.hess(x) + beta * v.hess(x)

    lo = tuple(np.minimum(u.support_box[0], v.support_box[0]))
    hi = tuple(np.maximum(u.support_box[1], v.support_box[1]))
    return TestFunction(value, grad, hess, (lo, hi), name=f"{alpha:g}*{u.name}+{beta:g}*{v.name}")


def poly_cutoff(coeffs, center, half_width, plateau=0.0, offset=None):
    """Polynomial times smooth cutoff; the default test-function shape."""
    center = np.array(center, dtype=float)
    p = polynomial(coeffs, offset=offset, dim=len(center))
    f = product(p, cutoff(center, half_width, plateau))
    return TestFunction(f.value, f.grad, f.hess, f.support_box, name=f"poly{dict(coeffs)}*cutoff")


def bump(center, radius):
    """Smooth bump equal to 1 at ``center`` with support ``center +- radius``."""
    f = cutoff(center, radius)
    return TestFunction(f.value, f.grad, f.hess, f.support_box, name="bump")


def finite_difference(u, h=1e-4):
    """Replace the derivatives of ``u`` by centered differences of its values."""
    def grad(x):
        x = _asx(x)
        out = np.empty_like(x)
        for i in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[i] = h
            out[..., i] = (u.value(x + e) - u.value(x - e)) / (2 * h)
        return out

    def hess(x):
        x = _asx(x)
        d = x.shape[-1]
        out = np.empty(x.shape + (d,))
        f0 = u.value(x)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            out[..., i, i] = (u.value(x + ei) - 2 * f0 + u.value(x - ei)) / h ** 2
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = h
                mixed = (u.value(x + ei + ej) - u.value(x + ei - ej)
                         - u.value(x - ei + ej) + u.value(x - ei - ej)) / (4 * h * h)
                out[..., i, j] = out[..., j, i] = mixed
        return out

    return TestFunction(u.value, grad, hess, u.support_box, name=f"fd({u.name})")


def default_test_functions(spec):
    """Three bump-type test functions supported well inside the spec's domain."""
    c = np.array(spec.x0, dtype=float)
    room = np.minimum(c - spec.lo, spec.hi - c)
    half = 0.5 * room
    return [
        bump(c, half),
        poly_cutoff({(1, 0): 1.0}, c, half, offset=c),
        poly_cutoff({(1, 1): 1.0, (2, 0): 0.5}, c, half, offset=c),
    ]


def generator_terms(spec, x, check=True):
    """Second-order matrix ``D`` and drift ``b`` of ``L = 1/2 D:Hess + b.grad``."""
    x = _asx(x)
    if check:
        check_floor(spec, x)
    return second_order(spec, x), drift_unchecked(spec, x)


def apply_generator(spec, u, x):
    """``(L u)(x)`` for the spec's family."""
    dmat, b = generator_terms(spec, x)
    return 0.5 * np.einsum("...ij,...ij->...", dmat, u.hess(x)) + np.sum(b * u.grad(x), axis=-1)


def carre_du_champ(spec, u, v, x):
    """``Gamma(u, v)(x) = sum_ij D_ij d_i u d_j v``."""
    dmat = second_order(spec, _asx(x))
    check_floor(spec, _asx(x))
    return np.einsum("...i,...ij,...j->...", u.grad(x), dmat, v.grad(x))


def check_gamma_identity(spec, u, probes, use_fd=False, perturb=0.0, tol=None, fd_h=1e-4):
    """Compare ``L(u^2) - 2 u L u`` with ``Gamma(u, u)`` at the probes.

    The two sides are assembled independently; ``perturb`` is added to
    ``Gamma`` as a negative control. Passing means the maximal discrepancy,
    relative to the largest term, is below ``tol`` (``1e-8`` with analytic
    derivatives, ``1e-4`` with finite differences).
    """
    x = np.atleast_2d(_asx(probes))
    if tol is None:
        tol = 1e-4 if use_fd else 1e-8
    u2 = product(u, u)
    if use_fd:
        u, u2 = finite_difference(u, fd_h), finite_difference(u2, fd_h)
    lu2 = apply_generator(spec, u2, x)
    two_ulu = 2 * u.value(x) * apply_generator(spec, u, x)
    gam = carre_du_champ(spec, u, u, x) + perturb
    scale = max(float(np.max(np.abs(lu2))), float(np.max(np.abs(two_ulu))),
                float(np.max(np.abs(gam))), 1e-300)
    err = float(np.max(np.abs(lu2 - two_ulu - gam))) / scale
    return VerificationReport.from_statistic(
        f"gamma_identity[{spec.preset_name or spec.family.value}:{u.name}]", err, 0.0, tol, 1.0,
        len(x), derivatives="finite-difference" if use_fd else "analytic", scale=scale,
        min_gamma=float(np.min(gam)))
