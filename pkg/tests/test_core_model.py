import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trustcheck.core_model import (ModelParams, ParamError, PolicyField, StateSpace, ValueField, parse_kv,
                                   params_from_mapping, validate_params)


def test_defaults_validate():
    p = validate_params(ModelParams())
    assert p.delta == 0.9 and p.v_max == pytest.approx(12.0)


@pytest.mark.parametrize("kw", [{"delta": 1.0}, {"delta": 0.0}, {"C": -1}, {"B": 0}, {"lambda0": 1.5},
                                {"mu0": -0.1}, {"q": 2}, {"theta": -1}])
def test_invalid_params(kw):
    with pytest.raises(ParamError):
        validate_params(ModelParams(**kw))


def test_parse_kv_and_mapping():
    d = parse_kv("# comment\ndelta = 0.8\n\nC=0.1  # trailing\n")
    p = params_from_mapping(d)
    assert (p.delta, p.C) == (0.8, 0.1)
    with pytest.raises(ParamError):
        params_from_mapping({"nope": 1})


def test_state_indexing():
    sp = StateSpace.grid2d(5, 4, T=3)
    assert sp.n_normal == 20 and sp.size == 35
    assert sp.lam[sp.normal_index(2, 3)] == 0.5 and sp.mu[sp.normal_index(2, 3)] == 1.0
    assert sp.mode[sp.pun_index(2, 4)] == 2 and sp.lam[sp.pun_index(2, 4)] == 1.0
    one = StateSpace.grid1d(11, 0.3)
    assert one.n_mu == 1 and np.all(one.mu == 0.3)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_bilinear_exact_on_bilinear_functions(x, y, a, b, c):
    sp = StateSpace.grid2d(7, 5)
    f = lambda l, m: a * l + b * m + c * l * m
    vals = f(sp.lam, sp.mu)
    assert sp.interp(vals, x, y)[0] == pytest.approx(f(x, y), abs=1e-12)


def test_field_validation():
    sp = StateSpace.grid2d(3)
    with pytest.raises(ParamError):
        PolicyField(sp, np.full(sp.size, 1.5), np.zeros(sp.size))
    with pytest.raises(ParamError):
        ValueField(sp, np.full(sp.size, np.nan), np.zeros(sp.size))
