"""Monte Carlo verification of martingale identities, constructions and masses.

Every check returns a :class:`VerificationReport`; thresholds are in units of
the standard error. Statistics over several components (times, moment
entries) report the component with the largest standardized deviation, so
the pass flag stays recomputable from the stored numbers.
"""

import dataclasses
import math

import numpy as np

from . import paths
from .coefficients import Family
from .field import GridSpec, sample_values
from .generator import apply_generator, carre_du_champ
from .paths import KillReason
from .report import VerificationReport
from .sde import simulate_ensemble

__all__ = [
    "VerificationReport",
    "test_martingale",
    "test_quadratic_variation",
    "test_cross_construction",
    "test_liouville_mass",
    "test_non_explosion",
    "MAX_EXCLUDED",
    "DEFAULT_THRESHOLD",
]

DEFAULT_THRESHOLD = 4.0
MAX_EXCLUDED = 0.01


def _mean_se(values):
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def _worst(components):
    """Component with the largest ``|estimate| / se`` (zero-se deviations first)."""
    def key(c):
        est, se = abs(c["estimate"] - c.get("target", 0.0)), c["std_error"]
        if not math.isfinite(est):
            return math.inf
        if se == 0:
            return math.inf if est > 0 else 0.0
        return est / se

    return max(components, key=key)


def _lu(spec, u):
    def g(x):
        return apply_generator(spec, u, x)

    return g


def _gamma(spec, u, v):
    def g(x):
        return carre_du_champ(spec, u, v, x)

    return g


def _start(spec, x0):
    return np.asarray(spec.x0 if x0 is None else x0, dtype=float)


def test_martingale(spec, u, times, n_paths, dt, seed, threshold=DEFAULT_THRESHOLD, x0=None,
                    drop_integral=False, threads=1, substeps=1, localization_radii=()):
    """``E[u(X_t) - u(X_0) - int_0^t Lu(X_s) ds] = 0`` at each requested time.

    Paths killed by time ``t`` are excluded; the check is eligible only if the
    excluded fraction stays below 1%. ``drop_integral`` omits the drift
    integral (negative control).
    """
    x0 = _start(spec, x0)
    times = sorted(float(t) for t in times)
    ens = simulate_ensemble(spec, x0, dt, max(times), n_paths, seed, record_times=times,
                            integrands=[_lu(spec, u)], localization_radii=localization_radii,
                            substeps=substeps, threads=threads)
    u0 = float(u.value(x0[None])[0])
    comps = []
    for r, t in enumerate(times):
        alive = ens.alive_at(t)
        m = u.value(ens.states[alive, r]) - u0
        if not drop_integral:
            m = m - ens.integrals[alive, r, 0]
        mean, se = _mean_se(m)
        comps.append({"t": t, "estimate": mean, "std_error": se, "n": int(alive.sum()),
                      "excluded_fraction": 1.0 - float(alive.mean())})
    return _assemble(f"martingale[{spec.preset_name or spec.family.value}:{u.name}]", comps,
                     threshold, n_paths, dt=dt, seed=seed, drop_integral=drop_integral)


def test_quadratic_variation(spec, u, t, n_paths, dt, seed, v=None, threshold=DEFAULT_THRESHOLD,
                             x0=None, threads=1, substeps=1, localization_radii=()):
    """``E[M_t^u M_t^v - int_0^t Gamma(u, v)(X_s) ds] = 0`` (``v = u`` by default)."""
    x0 = _start(spec, x0)
    same = v is None
    v = u if same else v
    integrands = [_lu(spec, u), _gamma(spec, u, v)] + ([] if same else [_lu(spec, v)])
    ens = simulate_ensemble(spec, x0, dt, t, n_paths, seed, record_times=[t], integrands=integrands,
                            localization_radii=localization_radii, substeps=substeps, threads=threads)
    alive = ens.alive_at(t)
    xt, ints = ens.states[alive, 0], ens.integrals[alive, 0]
    mu = u.value(xt) - float(u.value(x0[None])[0]) - ints[:, 0]
    mv = mu if same else v.value(xt) - float(v.value(x0[None])[0]) - ints[:, 2]
    stat = mu * mv - ints[:, 1]
    mean, se = _mean_se(stat)
    comp = {"t": float(t), "estimate": mean, "std_error": se, "n": int(alive.sum()),
            "excluded_fraction": 1.0 - float(alive.mean()),
            "mean_product": float(np.mean(mu * mv)) if len(stat) else math.nan,
            "mean_gamma_integral": float(np.mean(ints[:, 1])) if len(stat) else math.nan}
    label = u.name if same else f"{u.name},{v.name}"
    return _assemble(f"quadratic_variation[{spec.preset_name or spec.family.value}:{label}]",
                     [comp], threshold, n_paths, dt=dt, seed=seed)


def _assemble(name, comps, threshold, n_paths, target=0.0, **details):
    worst = _worst(comps)
    excluded = max(c.get("excluded_fraction", 0.0) for c in comps)
    return VerificationReport.from_statistic(
        name, worst["estimate"], target, worst["std_error"], threshold, n_paths,
        eligible=excluded < MAX_EXCLUDED, excluded_fraction=excluded, components=comps, **details)


def _moment_samples(x):
    """Per-path contributions to the mean and covariance entries, with labels."""
    d = x.shape[1]
    centered = x - x.mean(axis=0)
    cols, labels = [], []
    for i in range(d):
        cols.append(x[:, i])
        labels.append(f"mean[{i}]")
    for i in range(d):
        for j in range(i, d):
            cols.append(centered[:, i] * centered[:, j])
            labels.append(f"cov[{i}][{j}]")
    return np.stack(cols, axis=1), labels


def test_cross_construction(spec, t, n_paths, dt, seed, threshold=DEFAULT_THRESHOLD, x0=None,
                            threads=1):
    """Time-changed Brownian motion against the SDE ``dX = rho^{-1/2} dW`` at time ``t``.

    Both ensembles use the same density and box; each mean and covariance
    entry must agree within ``threshold`` pooled standard errors.
    """
    if spec.family is not Family.LBM:
        raise ValueError("cross-construction compares LBM-family specs only")
    x0 = _start(spec, x0)
    rho = spec.coeffs.rho
    tc = paths.time_change_ensemble(rho, x0, dt, [t], n_paths, seed, domain=(spec.lo, spec.hi))
    sde = simulate_ensemble(spec, x0, dt, t, n_paths, seed, record_times=[t], threads=threads)
    a_alive, b_alive = tc.alive_at(t), sde.alive_at(t)
    xa, xb = tc.states[a_alive, 0], sde.states[b_alive, 0]
    sa, labels = _moment_samples(xa)
    sb, _ = _moment_samples(xb)
    comps = []
    for k, label in enumerate(labels):
        ma, mb = float(sa[:, k].mean()), float(sb[:, k].mean())
        se = math.sqrt(sa[:, k].var(ddof=1) / len(sa) + sb[:, k].var(ddof=1) / len(sb))
        comps.append({"component": label, "time_change": ma, "sde": mb,
                      "estimate": ma - mb, "std_error": se})
    excluded = max(1.0 - float(a_alive.mean()), 1.0 - float(b_alive.mean()))
    worst = _worst(comps)
    return VerificationReport.from_statistic(
        f"cross_construction[{spec.preset_name or spec.family.value}]", worst["estimate"], 0.0,
        worst["std_error"], threshold, 2 * n_paths, eligible=excluded < MAX_EXCLUDED,
        excluded_fraction=excluded, worst_component=worst["component"], components=comps,
        t=float(t), dt=dt, seed=seed,
        time_change_kills=int((~a_alive).sum()), sde_kills=int((~b_alive).sum()))


def _box_weights(grid, box):
    """Trapezoid weights on the grid nodes covering a node-aligned box."""
    (x_lo, y_lo), (x_hi, y_hi) = box
    axes = grid.axes()
    weights = []
    for ax, lo, hi, h in zip(axes, (x_lo, y_lo), (x_hi, y_hi), grid.spacing):
        i_lo, i_hi = ((float(v) - ax[0]) / h for v in (lo, hi))
        k_lo, k_hi = round(i_lo), round(i_hi)
        aligned = abs(i_lo - k_lo) < 1e-9 and abs(i_hi - k_hi) < 1e-9
        if not aligned or k_lo < 0 or k_hi > len(ax) - 1 or k_hi <= k_lo:
            raise ValueError(f"box {box} must be node-aligned and inside the grid")
        w = np.zeros(len(ax))
        w[k_lo:k_hi + 1] = h
        w[k_lo] = w[k_hi] = 0.5 * h
        weights.append(w)
    wx, wy = weights
    return np.outer(wy, wx).ravel()


def test_liouville_mass(params, grid, box, n_fields, seed, threshold=DEFAULT_THRESHOLD):
    """``E[int_box rho dz]`` over field draws against the box area.

    Uses the nodal trapezoid rule on a node-aligned box: at the nodes the
    density has unit mean exactly, so the target equals the area.
    """
    if not isinstance(grid, GridSpec):
        raise TypeError("grid must be a GridSpec")
    w = _box_weights(grid, box)
    area = float(np.prod(np.subtract(box[1], box[0])))
    var = params.field_variance
    g = params.gamma
    masses = np.empty(n_fields)
    chunk = 2000
    for s in range(0, n_fields, chunk):
        vals = sample_values(params, grid, seed, min(chunk, n_fields - s), start=s)
        masses[s:s + len(vals)] = np.exp(g * vals - 0.5 * g * g * var) @ w
    mean, se = _mean_se(masses)
    return VerificationReport.from_statistic(
        f"liouville_mass[n={params.n},gamma={g:g}]", mean, area, se, threshold, n_fields,
        area=area, box=[list(box[0]), list(box[1])], seed=seed)


def test_non_explosion(spec, horizon, n_paths, dt, seed, x0=None, threads=1):
    """Count floor kills up to ``horizon``; passes only with none.

    Domain exits are reported separately and do not count as explosion.
    """
    x0 = _start(spec, x0)
    ens = simulate_ensemble(spec, x0, dt, horizon, n_paths, seed, threads=threads)
    floor_kills = int(np.sum(ens.kill_reason == KillReason.RHO_FLOOR.value))
    exits = int(np.sum(ens.kill_reason == KillReason.LEFT_DOMAIN.value))
    return VerificationReport.from_statistic(
        f"non_explosion[{spec.preset_name or spec.family.value}]", floor_kills, 0.0, 0.0, 0.0,
        n_paths, floor_kill_fraction=floor_kills / n_paths, domain_exits=exits,
        rho_floor=spec.rho_floor, horizon=float(horizon), dt=dt, seed=seed)


def with_floor(spec, rho_floor):
    """Copy of ``spec`` with another floor (used for negative controls)."""
    return dataclasses.replace(spec, rho_floor=float(rho_floor))


# keep pytest from collecting the checks when test modules import them
for _f in (test_martingale, test_quadratic_variation, test_cross_construction,
           test_liouville_mass, test_non_explosion):
    _f.__test__ = False
