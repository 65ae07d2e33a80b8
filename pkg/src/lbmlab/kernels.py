"""Scalar kernels of the massive planar Gaussian free field.

All integrals over (0, inf) are evaluated after the substitution ``s = e^t``,
which turns the integrands used here into smooth functions on the real line
with (at least) exponentially decaying tails. The trapezoidal rule on such
integrands converges geometrically, so the scheme simply halves the step
until two successive sums agree to the requested relative tolerance.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InvalidParameter, QuadratureFailure, SingularArgument

DEFAULT_QUAD_TOL = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """Parameterization of the n-regularized field and its Liouville measure.

    Parameters
    ----------
    m : float
        Mass, ``m > 0``.
    cuts : tuple of float
        Layer cut points ``c_1 < c_2 < ... < c_N`` with ``c_1 = 1``.
    n : int
        Number of layers summed into the field, ``1 <= n <= N``.
    gamma : float
        Coupling constant in ``(0, 2)``.
    quad_tol : float
        Relative quadrature tolerance in ``(0, 1e-3]``.
    """

    m: float
    cuts: tuple
    n: int
    gamma: float
    quad_tol: float = DEFAULT_QUAD_TOL

    def __post_init__(self):
        object.__setattr__(self, "cuts", tuple(float(c) for c in self.cuts))
        if not (math.isfinite(self.m) and self.m > 0):
            raise InvalidParameter(f"mass m must be positive, got {self.m}")
        if len(self.cuts) == 0 or self.cuts[0] != 1.0:
            raise InvalidParameter("cuts must start with c_1 = 1")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise InvalidParameter("cuts must be strictly increasing")
        if not all(math.isfinite(c) for c in self.cuts):
            raise InvalidParameter("cuts must be finite")
        if int(self.n) != self.n or not 1 <= self.n <= len(self.cuts):
            raise InvalidParameter(f"n must be an integer in [1, {len(self.cuts)}], got {self.n}")
        if not 0 < self.gamma < 2:
            raise InvalidParameter(f"gamma must lie in (0, 2), got {self.gamma}")
        if not 0 < self.quad_tol <= 1e-3:
            raise InvalidParameter(f"quad_tol must lie in (0, 1e-3], got {self.quad_tol}")

    @classmethod
    def dyadic(cls, m, n, gamma, n_cuts=None, quad_tol=DEFAULT_QUAD_TOL):
        """Parameters with the default cut sequence ``c_k = 2**(k-1)``."""
        n_cuts = n if n_cuts is None else n_cuts
        return cls(m, tuple(2.0 ** k for k in range(n_cuts)), n, gamma, quad_tol)

    @property
    def field_variance(self):
        """``E[X_n(z)^2] = ln c_n`` under the ``c_0 = c_1`` convention."""
        return sum(math.log(self.cuts[k] / self.cuts[k - 1]) for k in range(1, self.n))


def _log_line_integral(f, tol, max_levels=12):
    """Integrate ``f`` (vectorized, in the log variable ``t``) over the real line.

    The coarse scan locates the peak and the region where ``f`` is
    non-negligible; the trapezoidal grid is anchored at the peak.
    """
    span = 60.0
    while True:
        t = np.arange(-span, span + 0.25, 0.25)
        with np.errstate(over="ignore", under="ignore"):
            y = f(t)
        if not np.all(np.isfinite(y)):
            raise QuadratureFailure("integrand is not finite on the scan grid")
        ymax = float(np.max(np.abs(y)))
        if ymax == 0.0:
            return 0.0
        big = np.nonzero(np.abs(y) > 1e-22 * ymax)[0]
        if big[0] > 0 and big[-1] < len(t) - 1:
            break
        span *= 2
        if span > 2000:
            raise QuadratureFailure("integrand tails do not decay on the scan range")
    peak = float(t[int(np.argmax(np.abs(y)))])
    lo, hi = float(t[big[0] - 1]), float(t[big[-1] + 1])

    prev = None
    h = 0.25
    for _ in range(max_levels):
        k_lo = math.floor((lo - peak) / h)
        k_hi = math.ceil((hi - peak) / h)
        nodes = peak + h * np.arange(k_lo, k_hi + 1)
        with np.errstate(over="ignore", under="ignore"):
            total = h * float(np.sum(f(nodes)))
        if prev is not None and abs(total - prev) <= tol * abs(total):
            return total
        prev = total
        h /= 2
    raise QuadratureFailure(f"trapezoidal refinement did not reach relative tolerance {tol}")


def _radius(z):
    z = np.asarray(z, dtype=float)
    return abs(float(z)) if z.ndim == 0 else float(np.linalg.norm(z))


def k_m(params, z):
    """Positive-type kernel ``k_m(z) = 1/2 int_0^inf exp(-m^2|z|^2/(2s) - s/2) ds``.

    ``z`` is a point of the plane, or a scalar taken as ``|z|``.
    """
    r = _radius(z)
    q = 0.5 * (params.m * r) ** 2

    def f(t):
        return 0.5 * np.exp(t - 0.5 * np.exp(t) - q * np.exp(-t))

    return _log_line_integral(f, params.quad_tol)


def green_massive(params, r):
    """Massive Green function ``G^(m)`` at distance ``r > 0``, first representation."""
    r = float(r)
    if not r > 0:
        raise SingularArgument(f"Green function diverges at r = {r}")
    a = 0.5 * params.m ** 2
    b = 0.5 * r * r

    def f(t):
        return 0.5 * np.exp(-a * np.exp(t) - b * np.exp(-t))

    return _log_line_integral(f, params.quad_tol)


def green_via_kernel(params, r):
    """Second representation ``int_1^inf k_m(s r)/s ds`` by nested quadrature.

    Far slower than :func:`green_massive`; intended for cross-checking it.
    The outer variable is ``s = 1 + e^t``.
    """
    r = float(r)
    if not r > 0:
        raise SingularArgument(f"Green function diverges at r = {r}")

    def f(t):
        s = 1.0 + np.exp(t)
        return np.array([k_m(params, si * r) for si in s]) / s * (s - 1.0)

    return _log_line_integral(f, params.quad_tol)


def _layer_bounds(params, k):
    if int(k) != k or not 1 <= k <= len(params.cuts):
        raise IndexOutOfRange(f"layer index {k} outside [1, {len(params.cuts)}]")
    k = int(k)
    # c_0 := c_1, so the first layer is identically zero
    lo = params.cuts[k - 2] if k >= 2 else params.cuts[0]
    return lo, params.cuts[k - 1]


def layer_covariance(params, k, r):
    """Covariance ``E[Y_k(x) Y_k(y)]`` of layer ``k`` at distance ``r``.

    Exchanging the order of integration in
    ``int_{c_{k-1}}^{c_k} k_m(s r)/s ds`` leaves the single integral
    ``1/2 int_0^inf (e^{-a^2 w/2} - e^{-b^2 w/2}) e^{-m^2 r^2/(2w)} dw/w``.
    """
    a, b = _layer_bounds(params, k)
    r = float(r)
    if r < 0:
        raise InvalidParameter(f"distance must be nonnegative, got {r}")
    if a == b:
        return 0.0
    if r == 0.0:
        return math.log(b / a)
    ha, hb = 0.5 * a * a, 0.5 * b * b
    q = 0.5 * (params.m * r) ** 2

    def f(t):
        w = np.exp(t)
        # e^{-x} - e^{-y} without cancellation for small w
        diff = -np.exp(-ha * w) * np.expm1(-(hb - ha) * w)
        return 0.5 * diff * np.exp(-q / w)

    return _log_line_integral(f, params.quad_tol)


def layer_covariance_direct(params, k, r):
    """Layer covariance straight from its definition, by nested quadrature.

    The outer variable maps ``(c_{k-1}, c_k)`` onto the real line through a
    logistic substitution. Slow; used to validate :func:`layer_covariance`.
    """
    a, b = _layer_bounds(params, k)
    if a == b:
        return 0.0
    r = float(r)

    def f(t):
        sig = 0.5 * (1.0 + np.tanh(0.5 * t))
        s = a + (b - a) * sig
        vals = np.array([k_m(params, si * r) for si in s])
        return vals / s * (b - a) * sig * (1.0 - sig)

    return _log_line_integral(f, params.quad_tol)


def field_covariance(params, r):
    """Covariance of ``X_n`` at distance ``r``: sum of layers ``2..n``."""
    return sum(layer_covariance(params, k, r) for k in range(2, params.n + 1))
