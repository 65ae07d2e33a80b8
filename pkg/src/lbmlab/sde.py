"""Euler-Maruyama weak solvers for the four families, with killing.

Second-order coefficient ``D`` (so that ``D = sigma sigma^T``) and drift per family:

==================  =============  ====================================================
family              D              drift_i
==================  =============  ====================================================
LBM                 Id / rho       0
DegenerateWeighted  A / rho        sum_j d_j a_ij / (2 rho) + b_i
LocallyElliptic     A              sum_j d_j a_ij / 2 + (d_j rho / 2 rho) a_ij + b_i
LebesgueDegenerate  A              sum_j d_j a_ij / 2 + b_i
==================  =============  ====================================================
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .coefficients import Family
from .errors import IndefiniteMatrix, InvalidParameter, NotSymmetric, RhoFloorViolation
from .paths import ALIVE, EnsembleResult, KillReason, Lifetime, Path, n_steps

PSD_TOL = 1e-10
_REASON_CODES = {1: KillReason.RHO_FLOOR.value, 2: KillReason.LEFT_DOMAIN.value}


def sqrt_spd(M, psd_tol=PSD_TOL):
    """Symmetric square root of a symmetric nonnegative-definite matrix (batched).

    Eigenvalues in ``[-psd_tol * max(1, |M|), 0)`` are floored at zero.
    """
    M = np.asarray(M, dtype=float)
    scale = np.maximum(1.0, np.max(np.abs(M), axis=(-1, -2), keepdims=True))
    if np.any(np.abs(M - np.swapaxes(M, -1, -2)) > 1e-12 * scale):
        raise NotSymmetric("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (M + np.swapaxes(M, -1, -2)))
    if np.any(w < -psd_tol * scale[..., 0]):
        raise IndefiniteMatrix(f"negative eigenvalue {float(np.min(w)):.3e}")
    root = np.sqrt(np.clip(w, 0.0, None))
    return (v * root[..., None, :]) @ np.swapaxes(v, -1, -2)


def check_floor(spec, x):
    deg = spec.degeneracy(x)
    if np.any(~(deg > spec.rho_floor)):
        raise RhoFloorViolation(f"degeneracy function at or below the floor {spec.rho_floor}")
    return deg


def second_order(spec, x):
    """``D(x)`` in ``L = 1/2 sum D_ij d_ij + drift . grad``."""
    x = np.asarray(x, dtype=float)
    fam = spec.family
    if fam is Family.LBM:
        return (1.0 / spec.coeffs.rho(x))[..., None, None] * np.eye(spec.dim)
    amat = spec.coeffs.a(x)
    if fam is Family.DEGENERATE_WEIGHTED:
        return amat / spec.coeffs.rho(x)[..., None, None]
    return amat


def drift_unchecked(spec, x):
    x = np.asarray(x, dtype=float)
    co = spec.coeffs
    fam = spec.family
    if fam is Family.LBM:
        return np.zeros_like(x)
    div = co.divergence_a(x)
    if fam is Family.DEGENERATE_WEIGHTED:
        return div / (2.0 * co.rho(x))[..., None] + co.b(x)
    if fam is Family.LOCALLY_ELLIPTIC:
        log_grad = co.gradient_rho(x) / co.rho(x)[..., None]
        return 0.5 * div + 0.5 * np.einsum("...ij,...j->...i", co.a(x), log_grad) + co.b(x)
    return 0.5 * div + co.b(x)


def drift(spec, x):
    """Family drift vector at ``x``."""
    check_floor(spec, x)
    return drift_unchecked(spec, x)


def diffusion_unchecked(spec, x):
    x = np.asarray(x, dtype=float)
    fam = spec.family
    if fam is Family.LBM:
        return (spec.coeffs.rho(x) ** -0.5)[..., None, None] * np.eye(spec.dim)
    # sqrt(A/rho) equals sqrt(A)/sqrt(rho); taking the root of the ratio makes
    # A = rho Id cancel to the identity exactly
    return sqrt_spd(second_order(spec, x))


def diffusion_matrix(spec, x):
    """``sigma(x)`` with ``sigma sigma^T = D(x)``."""
    check_floor(spec, x)
    return diffusion_unchecked(spec, x)


def _apply_diffusion(spec, x, xi):
    if spec.family is Family.LBM:
        return xi * (spec.coeffs.rho(x) ** -0.5)[:, None]
    return np.einsum("bij,bj->bi", diffusion_unchecked(spec, x), xi)


@dataclass(frozen=True)
class SdeRun:
    spec: object
    x0: tuple
    dt: float
    horizon: float
    seed: int
    localization_radii: tuple = ()
    path_index: int = 0
    substeps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "localization_radii", tuple(float(r) for r in self.localization_radii))
        if not (self.dt > 0 and self.horizon > 0 and self.dt <= self.horizon):
            raise InvalidParameter("need 0 < dt <= horizon")
        if any(b <= a for a, b in zip(self.localization_radii, self.localization_radii[1:])):
            raise InvalidParameter("localization radii must increase")
        if len(self.x0) != self.spec.dim:
            raise InvalidParameter("x0 dimension does not match the spec")


def _validate_start(spec, x0):
    x0 = np.asarray(x0, dtype=float)
    if not spec.inside(x0):
        raise InvalidParameter(f"x0={tuple(x0)} lies outside the domain")
    if not spec.degeneracy(x0[None])[0] > spec.rho_floor:
        raise RhoFloorViolation(f"x0={tuple(x0)} is at or below the floor")
    return x0


def _record_indices(times, dt, steps):
    idx = []
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= k <= steps:
            raise InvalidParameter(f"record time {t} is not a grid time of step {dt} within the horizon")
        idx.append(k)
    return np.array(idx, dtype=int)


def _run_block(spec, x0, dt, steps, rec_idx, integrands, radii, seed, indices, substeps):
    b, d = len(indices), spec.dim
    noise = np.empty((b, steps, d))
    for row, i in enumerate(indices):
        z = rng.stream(seed, "sde", i).standard_normal((steps * substeps, d))
        noise[row] = z.reshape(steps, substeps, d).sum(axis=1) / math.sqrt(substeps) if substeps > 1 else z
    sq = math.sqrt(dt)
    center = spec.center
    lo, hi = spec.lo, spec.hi
    r_max = radii[-1] if len(radii) else math.inf

    x = np.tile(x0, (b, 1))
    alive = np.ones(b, dtype=bool)
    kill_step = np.full(b, -1)
    kill_code = np.zeros(b, dtype=int)
    kill_states = np.full((b, d), np.nan)
    exit_steps = np.full((b, len(radii)), -1)
    n_int = len(integrands)
    g_prev = np.stack([g(x) for g in integrands], axis=-1) if n_int else np.zeros((b, 0))
    acc = np.zeros((b, n_int))
    rec_states = np.full((b, len(rec_idx), d), np.nan)
    rec_int = np.full((b, len(rec_idx), n_int), np.nan)
    slots = {}
    for r, k in enumerate(rec_idx):
        slots.setdefault(int(k), []).append(r)
    for r in slots.get(0, []):
        rec_states[:, r] = x
        rec_int[:, r] = 0.0

    for k in range(steps):
        xn = x + drift_unchecked(spec, x) * dt + _apply_diffusion(spec, x, noise[:, k]) * sq
        finite = np.all(np.isfinite(xn), axis=1)
        dist = np.max(np.abs(np.where(finite[:, None], xn, np.inf) - center), axis=1)
        for j, rad in enumerate(radii):
            new_exit = alive & (exit_steps[:, j] < 0) & (dist >= rad)
            exit_steps[new_exit, j] = k + 1
        out = ~finite | np.any((xn < lo) | (xn > hi), axis=1) | (dist >= r_max)
        probe = np.where(out[:, None], x, xn)
        low = ~out & ~(spec.degeneracy(probe) > spec.rho_floor)
        dead = alive & (out | low)
        if dead.any():
            kill_step[dead] = k + 1
            kill_code[dead & out] = 2
            kill_code[dead & ~out] = 1
            kill_states[dead] = xn[dead]
            alive &= ~dead
        x = np.where(alive[:, None], xn, x)
        if n_int:
            g_new = np.stack([g(x) for g in integrands], axis=-1)
            acc += np.where(alive[:, None], 0.5 * dt * (g_prev + g_new), 0.0)
            g_prev = g_new
        for r in slots.get(k + 1, []):
            rec_states[alive, r] = x[alive]
            rec_int[alive, r] = acc[alive]
    return rec_states, rec_int, kill_step, kill_code, kill_states, exit_steps


def simulate_ensemble(spec, x0, dt, horizon, n_paths, seed, record_times=None, integrands=(),
                      localization_radii=(), substeps=1, threads=1, block_size=2000, start=0):
    """Euler-Maruyama ensemble; path ``p`` uses the stream ``(seed, "sde", start + p)``.

    ``integrands`` are vectorized functions ``g_j`` whose trapezoidal
    integrals along each path are reported at the recording times. Killed
    paths are frozen: their later states and integrals are NaN.
    """
    x0 = _validate_start(spec, x0)
    steps = n_steps(horizon, dt)
    record_times = np.array([steps * dt] if record_times is None else record_times, dtype=float)
    rec_idx = _record_indices(record_times, dt, steps)
    radii = tuple(float(r) for r in localization_radii)
    blocks = [range(start + i, start + min(i + block_size, n_paths)) for i in range(0, n_paths, block_size)]

    def work(block):
        return _run_block(spec, x0, dt, steps, rec_idx, tuple(integrands), radii, seed, block, substeps)

    if threads and threads != 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=None if threads == 0 else threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(bl) for bl in blocks]
    rec_states, rec_int, kill_step, kill_code, kill_states, exit_steps = (
        np.concatenate([p[i] for p in parts]) for i in range(6))
    kill_time = np.where(kill_step >= 0, kill_step * dt, np.inf)
    reason = np.array([_REASON_CODES.get(int(c), "") for c in kill_code])
    return EnsembleResult(record_times, rec_states, kill_time, reason, integrals=rec_int,
                          exit_steps=exit_steps, kill_states=kill_states)


def simulate_sde(run):
    """One Euler-Maruyama path on the full time grid.

    A killed path keeps the offending state at its kill index, and stops there.
    """
    spec = run.spec
    x0 = _validate_start(spec, run.x0)
    steps = n_steps(run.horizon, run.dt)
    rec = np.arange(steps + 1)
    states, _, kill_step, kill_code, kill_states, _ = _run_block(
        spec, x0, run.dt, steps, rec, (), run.localization_radii, run.seed, [run.path_index], run.substeps)
    times = np.arange(steps + 1) * run.dt
    k = int(kill_step[0])
    if k < 0:
        return Path(times, states[0], ALIVE, dt=run.dt)
    path_states = np.vstack([states[0, :k], kill_states[0][None]])
    return Path(times[:k + 1], path_states, Lifetime.kill(k, _REASON_CODES[int(kill_code[0])]), dt=run.dt)
