"""Brownian paths, the additive functional ``F_t = int_0^t rho(W_s) ds`` and time change."""

import csv
import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .errors import HorizonExceeded, InvalidParameter, OutOfDomain


class KillReason(str, enum.Enum):
    RHO_FLOOR = "RhoFloor"
    LEFT_DOMAIN = "LeftDomain"
    HORIZON_EXCEEDED = "HorizonExceeded"


@dataclass(frozen=True)
class Lifetime:
    killed: bool = False
    index: Optional[int] = None
    reason: Optional[KillReason] = None

    @classmethod
    def kill(cls, index, reason):
        return cls(True, int(index), KillReason(reason))


ALIVE = Lifetime()


@dataclass(frozen=True, eq=False)
class Path:
    """States on a time grid; ``dt`` is set when the grid is ``k*dt``."""

    times: np.ndarray
    states: np.ndarray
    lifetime: Lifetime = ALIVE
    dt: Optional[float] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or len(states) != len(times):
            raise InvalidParameter("need one state per time")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise InvalidParameter("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def dim(self):
        return self.states.shape[1]


@dataclass(frozen=True, eq=False)
class AdditiveFunctional:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.values) or self.values[0] != 0.0:
            raise InvalidParameter("values must start at 0 and match the time grid")
        if np.any(np.diff(self.values) < 0):
            raise InvalidParameter("additive functional must be nondecreasing")


def n_steps(horizon, dt):
    if not (dt > 0 and horizon > 0):
        raise InvalidParameter(f"need dt > 0 and horizon > 0, got dt={dt}, horizon={horizon}")
    return max(1, math.ceil(horizon / dt - 1e-9))


def brownian_increments(seed, tag, index, steps, dim, dt, substeps=1):
    """Increments ``sqrt(dt) * xi_k`` for one path.

    With ``substeps > 1`` each increment aggregates that many finer normals,
    so runs at ``dt`` and ``dt/substeps`` share one Brownian path.
    """
    z = rng.stream(seed, tag, index).standard_normal((steps * substeps, dim))
    if substeps > 1:
        z = z.reshape(steps, substeps, dim).sum(axis=1) / math.sqrt(substeps)
    return math.sqrt(dt) * z


def simulate_bm(dim, x0, dt, horizon, seed, index=0, substeps=1):
    """Standard Brownian motion started at ``x0`` on the grid ``k*dt``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise InvalidParameter(f"x0 must have shape ({dim},)")
    k = n_steps(horizon, dt)
    inc = brownian_increments(seed, "bm", index, k, dim, dt, substeps)
    states = np.vstack([x0, x0 + np.cumsum(inc, axis=0)])
    return Path(np.arange(k + 1) * dt, states, ALIVE, dt=dt)


def pcaf(path, rho):
    """Trapezoidal ``F(t_k) = int_0^{t_k} rho(W_s) ds`` along the path."""
    r = np.asarray(rho(path.states), dtype=float)
    half = 0.5 * (r[:-1] + r[1:])
    if path.dt is not None:
        values = path.dt * np.concatenate([[0.0], np.cumsum(half)])
    else:
        values = np.concatenate([[0.0], np.cumsum(half * np.diff(path.times))])
    return AdditiveFunctional(path.times, values)


def inverse_time_change(F, t):
    """``s`` with ``F(s) = t`` under piecewise-linear interpolation of ``F``.

    Accepts a scalar or an array of times. Exact values of ``F`` map back to
    their grid times exactly.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InvalidParameter("time-change argument must be nonnegative")
    if np.any(t_arr > F.values[-1]):
        raise HorizonExceeded(f"t={np.max(t_arr)} exceeds F(T)={F.values[-1]}")
    v, s = F.values, F.times
    k = np.clip(np.searchsorted(v, t_arr, side="left"), 1, len(v) - 1)
    lo_v, hi_v = v[k - 1], v[k]
    frac = np.where(hi_v > lo_v, (t_arr - lo_v) / np.where(hi_v > lo_v, hi_v - lo_v, 1.0), 1.0)
    out = s[k - 1] + frac * (s[k] - s[k - 1])
    out = np.where(hi_v == t_arr, s[k], out)
    out = np.where(t_arr == 0.0, s[0], out)
    return float(out) if out.ndim == 0 else out


def interpolate_states(path, s):
    """Linear interpolation of the path states at times ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    k = np.clip(np.searchsorted(path.times, s, side="right") - 1, 0, len(path.times) - 2)
    t0, t1 = path.times[k], path.times[k + 1]
    theta = ((s - t0) / (t1 - t0))[:, None]
    exact = (s == t0)[:, None]
    interp = path.states[k] + theta * (path.states[k + 1] - path.states[k])
    return np.where(exact, path.states[k], interp)


def time_changed_path(bm, rho, sample_times):
    """``B(t) = W(F^{-1}(t))`` at the sample times.

    Sample times past ``F(T)`` are dropped and the returned path is marked
    killed with reason ``HorizonExceeded`` at the first dropped index.
    """
    sample_times = np.asarray(sample_times, dtype=float)
    F = pcaf(bm, rho)
    ok = sample_times <= F.values[-1]
    n_ok = int(np.argmin(ok)) if not np.all(ok) else len(sample_times)
    s = inverse_time_change(F, sample_times[:n_ok]) if n_ok else np.empty(0)
    states = interpolate_states(bm, s) if n_ok else np.empty((0, bm.dim))
    life = ALIVE if n_ok == len(sample_times) else Lifetime.kill(n_ok, KillReason.HORIZON_EXCEEDED)
    return Path(sample_times[:n_ok], states, life)


@dataclass(eq=False)
class EnsembleResult:
    """Ensemble states at recording times, with per-path kill bookkeeping.

    ``states[p, r]`` is NaN once path ``p`` is dead at ``times[r]``.
    ``integrals[p, r, j]`` holds ``int_0^{times[r]} g_j(X_s) ds`` (trapezoidal).
    """

    times: np.ndarray
    states: np.ndarray
    kill_time: np.ndarray
    kill_reason: np.ndarray
    integrals: Optional[np.ndarray] = None
    exit_steps: Optional[np.ndarray] = None
    kill_states: Optional[np.ndarray] = None

    @property
    def n_paths(self):
        return self.states.shape[0]

    def alive_at(self, t):
        return self.kill_time > t

    def killed_fraction(self, t=math.inf, reason=None):
        dead = np.isfinite(self.kill_time) & (self.kill_time <= t)
        if reason is not None:
            dead &= self.kill_reason == KillReason(reason).value
        return float(np.mean(dead))


def time_change_ensemble(rho, x0, dt, sample_times, n_paths, seed, domain=None,
                         drive_horizon=None, max_doublings=10, substeps=1, start=0):
    """Time-changed Brownian ensemble, one independent BM stream per path.

    The driving horizon doubles per path until ``F(T)`` covers the last
    sample time; a driving path that leaves ``domain`` before that is killed
    with ``LeftDomain`` at the Liouville clock time of its exit.
    """
    x0 = np.asarray(x0, dtype=float)
    dim = len(x0)
    sample_times = np.asarray(sample_times, dtype=float)
    t_max = float(sample_times.max())
    lo = hi = None
    if domain is not None:
        lo, hi = np.asarray(domain[0], dtype=float), np.asarray(domain[1], dtype=float)
    T0 = drive_horizon if drive_horizon is not None else max(2 * t_max, dt)

    states = np.full((n_paths, len(sample_times), dim), np.nan)
    kill_time = np.full(n_paths, np.inf)
    reason = np.full(n_paths, "", dtype=object)
    for p in range(n_paths):
        T = T0
        for _ in range(max_doublings + 1):
            bm = simulate_bm(dim, x0, dt, T, seed, index=start + p, substeps=substeps)
            exit_idx = None
            if lo is not None:
                outside = np.any((bm.states < lo) | (bm.states > hi), axis=1)
                if outside.any():
                    exit_idx = int(np.argmax(outside))
                    bm = Path(bm.times[:exit_idx], bm.states[:exit_idx], ALIVE, dt=dt)
            if len(bm.times) < 2:
                F_end = 0.0
            else:
                F_end = pcaf(bm, rho).values[-1]
            if F_end >= t_max or exit_idx is not None:
                break
            T *= 2
        if len(bm.times) >= 2:
            tc = time_changed_path(bm, rho, sample_times)
            states[p, :len(tc.times)] = tc.states
        if F_end < t_max:
            kill_time[p] = F_end
            reason[p] = (KillReason.LEFT_DOMAIN if exit_idx is not None
                         else KillReason.HORIZON_EXCEEDED).value
    return EnsembleResult(sample_times, states, kill_time, reason.astype(str))


def write_path_csv(path, filename, kill_state=None):
    """CSV with header ``t,x1..xd,status``.

    The row at the kill index is annotated ``killed:<reason>``. When the kill
    index lies past the stored states, ``kill_state = (t, x)`` supplies the row.
    """
    d = path.dim
    life = path.lifetime
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["status"])
        for k, (t, x) in enumerate(zip(path.times, path.states)):
            status = f"killed:{life.reason.value}" if life.killed and k == life.index else "alive"
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [status])
        if life.killed and life.index >= len(path.times) and kill_state is not None:
            t_kill, x_kill = kill_state
            w.writerow([repr(float(t_kill))] + [repr(float(v)) for v in x_kill]
                       + [f"killed:{life.reason.value}"])
