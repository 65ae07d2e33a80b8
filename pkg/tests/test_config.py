import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmlab.config import build_spec, parse_config, serialize
from lbmlab.errors import ParseError

GRID = {"origin": [-2, -2], "extent": [4, 4], "resolution": [9, 9]}
FLAT = {"family": "LBM", "preset": "lbm", "params": {"m": 1.0, "gamma": 1.0, "n": 3, "grid": GRID},
        "domain": {"lo": [-2, -2], "hi": [2, 2]}, "rho_floor": 1e-8}


def with_change(base, path, value):
    doc = json.loads(json.dumps(base))
    node = doc
    keys = path.split(".")
    for k in keys[:-1]:
        node = node[k]
    node[keys[-1]] = value
    return json.dumps(doc)


class TestParse:
    def test_minimal_defaults(self):
        c = parse_config('{"model": {"preset": "bm"}}')
        assert c.model.family == "LBM" and c.model.rho_floor == 1e-8
        assert c.run.dt == 1e-3 and c.run.paths == 1000 and c.verify.threshold == 4.0
        assert c.io.format == "csv" and c.field is None

    def test_flat_lbm(self):
        c = parse_config(json.dumps(FLAT))
        assert c.field.gamma == 1.0 and c.field.grid.resolution == [9, 9]
        assert "grid" not in c.model.params
        assert c.kernel_params().field_variance == pytest.approx(2 * 0.6931471805599453)

    @pytest.mark.parametrize("path,value,where", [
        ("params.gamma", 2.5, "field.gamma"),
        ("params.gamma", 0, "field.gamma"),
        ("params.m", -1, "field.m"),
        ("params.n", 0, "field.n"),
        ("params.grid.resolution", [100, 100], "field.grid.resolution"),
        ("rho_floor", 0, "rho_floor"),
        ("preset", "nope", "preset"),
        ("family", "LocallyElliptic", "family"),
        ("domain", {"lo": [0, 0], "hi": [0, 1]}, "domain.hi[0]"),
    ])
    def test_errors_name_the_key(self, path, value, where):
        with pytest.raises(ParseError) as exc:
            parse_config(with_change(FLAT, path, value))
        assert exc.value.path == where

    def test_gamma_message(self):
        with pytest.raises(ParseError) as exc:
            parse_config(with_change(FLAT, "params.gamma", 2.5))
        assert "(0,2)" in exc.value.message

    def test_cuts_increasing(self):
        doc = with_change(FLAT, "params.cuts", [1, 3, 2])
        with pytest.raises(ParseError) as exc:
            parse_config(doc)
        assert exc.value.path == "field.cuts[2]"

    def test_n_bounded_by_cuts(self):
        with pytest.raises(ParseError):
            parse_config(with_change(with_change_dict(FLAT, "params.cuts", [1, 2]), "params.n", 3))

    @pytest.mark.parametrize("text,where", [
        ("{", "$"),
        ("[]", "$"),
        ('{"model": {"preset": "bm"}, "extra": 1}', "extra"),
        ('{"model": {"preset": "bm"}, "run": {"dt": 2, "horizon": 1}}', "run.dt"),
        ('{"model": {"preset": "bm"}, "run": {"sample_times": [0.5, 0.2]}}', "run.sample_times"),
        ('{"model": {"preset": "bm"}, "verify": {"suite": "x"}}', "verify.suite"),
        ('{"model": {"preset": "bm"}, "io": {"format": "xml"}}', "io.format"),
        ('{"model": {"preset": "lbm"}}', "field"),
    ])
    def test_other_errors(self, text, where):
        with pytest.raises(ParseError) as exc:
            parse_config(text)
        assert exc.value.path == where


def with_change_dict(base, path, value):
    return json.loads(with_change(base, path, value))


class TestRoundTrip:
    def test_flat(self):
        c = parse_config(json.dumps(FLAT))
        assert parse_config(serialize(c)) == c
        assert serialize(parse_config(serialize(c))) == serialize(c)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 1.99), st.integers(1, 6), st.floats(1e-4, 0.1), st.integers(1, 10**6),
           st.sampled_from(["smoke", "martingale", "acceptance"]), st.sampled_from(["csv", "moments"]))
    def test_generated(self, gamma, n, dt, paths, suite, fmt):
        doc = {"model": {"preset": "lbm", "params": {}}, "field": {"m": 1.0, "gamma": gamma, "n": n, "grid": GRID},
               "run": {"dt": dt, "horizon": 1.0, "paths": paths}, "verify": {"suite": suite},
               "io": {"format": fmt}}
        c = parse_config(json.dumps(doc))
        assert parse_config(serialize(c)) == c


class TestBuildSpec:
    def test_field_depends_on_seed(self):
        c = parse_config(json.dumps(FLAT))
        a, b = build_spec(c, 1), build_spec(c, 1)
        assert a.field.values.tobytes() == b.field.values.tobytes()
        assert build_spec(c, 2).field.values.tobytes() != a.field.values.tobytes()
        assert a.domain == ((-2.0, -2.0), (2.0, 2.0))

    def test_preset_params_pass_through(self):
        c = parse_config('{"model": {"preset": "distorted-bm", "params": {"amp": 0.0}, "x0": [1, 1]}}')
        spec = build_spec(c, 0)
        assert spec.x0 == (1.0, 1.0)
