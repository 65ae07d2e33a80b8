"""Experiment configuration: JSON parsing, validation and round-trip serialization.

Canonical layout::

    {
      "model":  {"preset": "lbm", "family": "LBM", "params": {...},
                 "domain": {"lo": [...], "hi": [...]}, "rho_floor": 1e-8, "x0": [...]},
      "field":  {"m": 1.0, "gamma": 1.0, "n": 3, "cuts": [...], "quad_tol": 1e-10,
                 "grid": {"origin": [...], "extent": [...], "resolution": [nx, ny]}},
      "run":    {"dt": 0.001, "horizon": 1.0, "paths": 1000, "sample_times": [...]},
      "verify": {"suite": "smoke", "threshold": 4.0},
      "io":     {"out_dir": ".", "format": "csv"}
    }

A flat form with ``family``, ``preset``, ``params`` (which may carry the field
keys ``m``, ``gamma``, ``n``, ``cuts`` and ``grid``), ``domain`` and
``rho_floor`` at top level is accepted too.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .coefficients import DEFAULT_RHO_FLOOR, PRESET_FAMILIES, Family
from .errors import ParseError
from .field import MAX_NODES

FIELD_KEYS = ("m", "gamma", "n", "cuts", "quad_tol", "grid")
SUITES = ("smoke", "negative-control", "martingale", "quadratic-variation", "cross-construction",
          "liouville-mass", "non-explosion", "generator", "acceptance")
FORMATS = ("csv", "binary", "moments")


@dataclass(frozen=True)
class ModelConfig:
    preset: str
    family: str
    params: dict = field(default_factory=dict)
    domain: Optional[dict] = None
    rho_floor: float = DEFAULT_RHO_FLOOR
    x0: Optional[list] = None


@dataclass(frozen=True)
class GridConfig:
    origin: list
    extent: list
    resolution: list


@dataclass(frozen=True)
class FieldConfig:
    m: float
    gamma: float
    n: int
    grid: GridConfig
    cuts: Optional[list] = None
    quad_tol: float = 1e-10


@dataclass(frozen=True)
class RunConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    paths: int = 1000
    sample_times: Optional[list] = None


@dataclass(frozen=True)
class VerifyConfig:
    suite: str = "smoke"
    threshold: float = 4.0


@dataclass(frozen=True)
class IoConfig:
    out_dir: str = "."
    format: str = "csv"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    field: Optional[FieldConfig] = None
    run: RunConfig = RunConfig()
    verify: VerifyConfig = VerifyConfig()
    io: IoConfig = IoConfig()

    def to_dict(self):
        out = asdict(self)
        if self.field is None:
            del out["field"]
        return out

    def kernel_params(self):
        from .kernels import KernelParams

        f = self.field
        if f.cuts is None:
            return KernelParams.dyadic(f.m, f.n, f.gamma, quad_tol=f.quad_tol)
        return KernelParams(m=f.m, cuts=tuple(f.cuts), n=f.n, gamma=f.gamma, quad_tol=f.quad_tol)

    def grid_spec(self):
        from .field import GridSpec

        g = self.field.grid
        return GridSpec(tuple(g.origin), tuple(g.extent), tuple(g.resolution))


def serialize(config):
    """Canonical JSON text; ``parse_config(serialize(c)) == c``."""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)


# -- validation helpers ---------------------------------------------------------


def _obj(value, path):
    if not isinstance(value, dict):
        raise ParseError(path, "expected an object")
    return value


def _unknown(section, allowed, path):
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ParseError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _real(value, path, lo=None, hi=None, lo_open=False, hi_open=False, desc=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(path, "expected a number")
    v = float(value)
    if not math.isfinite(v):
        raise ParseError(path, "must be finite")
    bad_lo = lo is not None and (v <= lo if lo_open else v < lo)
    bad_hi = hi is not None and (v >= hi if hi_open else v > hi)
    if bad_lo or bad_hi:
        raise ParseError(path, f"{v} outside {desc}")
    return v


def _int(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(path, "expected an integer")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ParseError(path, f"{value} outside [{lo}, {'inf' if hi is None else hi}]")
    return value


def _vector(value, path, length=2, positive=False):
    if not isinstance(value, list) or len(value) != length:
        raise ParseError(path, f"expected a list of {length} numbers")
    out = []
    for i, v in enumerate(value):
        out.append(_real(v, f"{path}[{i}]", lo=0.0 if positive else None, lo_open=positive,
                         desc="(0, inf)"))
    return out


def _parse_domain(value, path):
    dom = _obj(value, path)
    _unknown(dom, ("lo", "hi"), path)
    if "lo" not in dom or "hi" not in dom:
        raise ParseError(path, "needs 'lo' and 'hi'")
    lo_raw, hi_raw = dom["lo"], dom["hi"]
    if not isinstance(lo_raw, list) or len(lo_raw) < 2:
        raise ParseError(f"{path}.lo", "expected a list of at least 2 numbers")
    lo = _vector(lo_raw, f"{path}.lo", len(lo_raw))
    hi = _vector(hi_raw, f"{path}.hi", len(lo_raw))
    for i, (a, b) in enumerate(zip(lo, hi)):
        if b <= a:
            raise ParseError(f"{path}.hi[{i}]", "must exceed the matching lo")
    return {"lo": lo, "hi": hi}


def _parse_grid(value, path):
    g = _obj(value, path)
    _unknown(g, ("origin", "extent", "resolution"), path)
    for key in ("origin", "extent", "resolution"):
        if key not in g:
            raise ParseError(f"{path}.{key}", "missing")
    res = g["resolution"]
    if not isinstance(res, list) or len(res) != 2:
        raise ParseError(f"{path}.resolution", "expected [nx, ny]")
    res = [_int(r, f"{path}.resolution[{i}]", lo=2) for i, r in enumerate(res)]
    if res[0] * res[1] > MAX_NODES:
        raise ParseError(f"{path}.resolution", f"{res[0] * res[1]} nodes exceeds the cap {MAX_NODES}")
    return GridConfig(_vector(g["origin"], f"{path}.origin"),
                      _vector(g["extent"], f"{path}.extent", positive=True), res)


def _parse_field(raw, path):
    _unknown(raw, FIELD_KEYS, path)
    for key in ("m", "gamma", "n", "grid"):
        if key not in raw:
            raise ParseError(f"{path}.{key}", "missing")
    m = _real(raw["m"], f"{path}.m", lo=0.0, lo_open=True, desc="(0, inf)")
    gamma = _real(raw["gamma"], f"{path}.gamma", lo=0.0, hi=2.0, lo_open=True, hi_open=True,
                  desc="the range (0,2)")
    quad_tol = _real(raw.get("quad_tol", 1e-10), f"{path}.quad_tol", lo=0.0, hi=1e-3,
                     lo_open=True, desc="(0, 1e-3]")
    cuts = raw.get("cuts")
    if cuts is not None:
        if not isinstance(cuts, list) or not cuts:
            raise ParseError(f"{path}.cuts", "expected a nonempty list")
        cuts = [_real(c, f"{path}.cuts[{i}]", lo=0.0, lo_open=True, desc="(0, inf)")
                for i, c in enumerate(cuts)]
        if cuts[0] != 1.0:
            raise ParseError(f"{path}.cuts[0]", "the first cut must equal 1")
        for i in range(1, len(cuts)):
            if cuts[i] <= cuts[i - 1]:
                raise ParseError(f"{path}.cuts[{i}]", "cuts must be strictly increasing")
    n = _int(raw["n"], f"{path}.n", lo=1, hi=None if cuts is None else len(cuts))
    return FieldConfig(m=m, gamma=gamma, n=n, grid=_parse_grid(raw["grid"], f"{path}.grid"),
                       cuts=cuts, quad_tol=quad_tol)


def _parse_model(raw, path):
    _unknown(raw, ("preset", "family", "params", "domain", "rho_floor", "x0"), path)
    prefix = f"{path}." if path else ""
    preset = raw.get("preset")
    if not isinstance(preset, str):
        raise ParseError(f"{prefix}preset", "expected a preset name")
    if preset not in PRESET_FAMILIES:
        raise ParseError(f"{prefix}preset", f"unknown preset; known: {sorted(PRESET_FAMILIES)}")
    expected = PRESET_FAMILIES[preset].value
    family = raw.get("family", expected)
    try:
        Family(family)
    except ValueError:
        raise ParseError(f"{prefix}family", f"unknown family {family!r}") from None
    if family != expected:
        raise ParseError(f"{prefix}family", f"preset {preset!r} belongs to family {expected}")
    params = dict(_obj(raw.get("params", {}), f"{prefix}params"))
    for key in FIELD_KEYS:
        params.pop(key, None)
    domain = _parse_domain(raw["domain"], f"{prefix}domain") if raw.get("domain") is not None else None
    rho_floor = _real(raw.get("rho_floor", DEFAULT_RHO_FLOOR), f"{prefix}rho_floor", lo=0.0,
                      lo_open=True, desc="(0, inf)")
    x0 = raw.get("x0")
    if x0 is not None:
        x0 = _vector(x0, f"{prefix}x0", len(domain["lo"]) if domain else len(x0))
    return ModelConfig(preset=preset, family=family, params=params, domain=domain,
                       rho_floor=rho_floor, x0=x0)


def _parse_run(raw):
    raw = _obj(raw, "run")
    _unknown(raw, ("dt", "horizon", "paths", "sample_times"), "run")
    dt = _real(raw.get("dt", 1e-3), "run.dt", lo=0.0, lo_open=True, desc="(0, inf)")
    horizon = _real(raw.get("horizon", 1.0), "run.horizon", lo=0.0, lo_open=True, desc="(0, inf)")
    if dt > horizon:
        raise ParseError("run.dt", "must not exceed run.horizon")
    paths = _int(raw.get("paths", 1000), "run.paths", lo=1)
    times = raw.get("sample_times")
    if times is not None:
        if not isinstance(times, list) or not times:
            raise ParseError("run.sample_times", "expected a nonempty list")
        times = [_real(t, f"run.sample_times[{i}]", lo=0.0, hi=horizon, desc=f"[0, {horizon}]")
                 for i, t in enumerate(times)]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParseError("run.sample_times", "must be strictly increasing")
    return RunConfig(dt=dt, horizon=horizon, paths=paths, sample_times=times)


def _parse_verify(raw):
    raw = _obj(raw, "verify")
    _unknown(raw, ("suite", "threshold"), "verify")
    suite = raw.get("suite", "smoke")
    if suite not in SUITES:
        raise ParseError("verify.suite", f"unknown suite {suite!r}; known: {list(SUITES)}")
    thr = _real(raw.get("threshold", 4.0), "verify.threshold", lo=0.0, lo_open=True, desc="(0, inf)")
    return VerifyConfig(suite=suite, threshold=thr)


def _parse_io(raw):
    raw = _obj(raw, "io")
    _unknown(raw, ("out_dir", "format"), "io")
    out_dir = raw.get("out_dir", ".")
    if not isinstance(out_dir, str):
        raise ParseError("io.out_dir", "expected a string")
    fmt = raw.get("format", "csv")
    if fmt not in FORMATS:
        raise ParseError("io.format", f"expected one of {list(FORMATS)}")
    return IoConfig(out_dir=out_dir, format=fmt)


def parse_config(text):
    """Parse and validate JSON configuration text.

    Raises :class:`ParseError` naming the offending key path.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    raw = _obj(raw, "$")
    if "model" in raw:
        _unknown(raw, ("model", "field", "run", "verify", "io"), "")
        model = _parse_model(_obj(raw["model"], "model"), "model")
        field_raw = raw.get("field")
        fld = None if field_raw is None else _parse_field(_obj(field_raw, "field"), "field")
    else:
        flat_model = {k: raw[k] for k in ("preset", "family", "params", "domain", "rho_floor", "x0")
                      if k in raw}
        _unknown(raw, tuple(flat_model) + ("field", "run", "verify", "io"), "")
        model = _parse_model(flat_model, "")
        params = _obj(raw.get("params", {}), "params")
        field_raw = {k: params[k] for k in FIELD_KEYS if k in params}
        if "field" in raw:
            field_raw.update(_obj(raw["field"], "field"))
        fld = _parse_field(field_raw, "field") if field_raw else None
    if model.preset == "lbm" and fld is None and "rho" not in model.params:
        raise ParseError("field", "the lbm preset needs a field section or a constant params.rho")
    return ExperimentConfig(
        model=model, field=fld,
        run=_parse_run(raw.get("run", {})),
        verify=_parse_verify(raw.get("verify", {})),
        io=_parse_io(raw.get("io", {})))


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def build_spec(config, seed):
    """The :class:`DiffusionSpec` of a config; field presets sample their field from ``seed``."""
    from . import rng
    from .coefficients import make_preset
    from .field import sample_field

    m = config.model
    params = dict(m.params)
    if m.domain is not None:
        params["domain"] = (tuple(m.domain["lo"]), tuple(m.domain["hi"]))
    params["rho_floor"] = m.rho_floor
    if m.x0 is not None:
        params["x0"] = tuple(m.x0)
    if m.preset == "lbm" and config.field is not None:
        params["field"] = sample_field(config.kernel_params(), config.grid_spec(),
                                       rng.derive_seed(seed, "model-field"))
    return make_preset(m.preset, params)
