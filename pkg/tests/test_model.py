import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popapprox.errors import ConfigError, NoRoot, NonAttracting
from popapprox.model import (Jump, ModelSpec, build_skeleton, check_assumptions, drift,
                             drift_derivative, immigration_death, load_model_config, make_model,
                             random_walk, sis, superpose, three_jump, total_rate, variance_rate)


def test_drift_immigration_death():
    m = immigration_death()
    assert drift(m, 1.0) == 0.0
    assert drift(m, 0.0) == 1.0
    np.testing.assert_allclose(drift(m, np.linspace(0, 3, 7)), 1 - np.linspace(0, 3, 7))


def test_variance_and_total_rate():
    m = immigration_death()
    assert variance_rate(m, 1.0) == 2.0
    assert total_rate(m, 1.0) == 2.0
    assert total_rate(m, 0.0) == 1.0
    unit = ModelSpec((Jump(1, lambda z: np.ones_like(z), 1.0),))
    assert variance_rate(unit, np.array([0.1, 5.0])).tolist() == [1.0, 1.0]
    assert total_rate(ModelSpec(()), 0.3) == 0.0
    assert variance_rate(sis(2, 1), 0.5) == pytest.approx(1.0, abs=1e-15)


def test_skeleton_closed_forms():
    sk = build_skeleton(immigration_death(1, 1))
    assert sk.c == pytest.approx(1.0, abs=1e-12)
    assert sk.F_prime_c == pytest.approx(-1.0)
    assert sk.sigma2_c == pytest.approx(2.0)
    assert sk.v_c == pytest.approx(1.0)
    assert build_skeleton(immigration_death(2, 1)).v_c == pytest.approx(2.0)
    sk = build_skeleton(sis(2, 1))
    assert sk.c == pytest.approx(0.5, abs=1e-12)
    assert sk.v_c == pytest.approx(0.5, abs=1e-10)
    sk = build_skeleton(three_jump(1, 1, 0.5))
    assert (sk.c, sk.v_c) == (pytest.approx(2.0), pytest.approx(2.5))


def test_skeleton_invariants():
    for m in (immigration_death(), sis(), three_jump(), make_model("declining")):
        sk = build_skeleton(m)
        assert abs(drift(m, sk.c)) <= 1e-10
        assert sk.F_prime_c < 0
        assert sk.v_c == pytest.approx(sk.sigma2_c / (-2 * sk.F_prime_c), rel=1e-14)
        assert sk.U == max(1.0, 1 / (2 * sk.Lambda_star))
        assert sk.delta1_prime == pytest.approx(m.delta * math.exp(-sk.U * sk.F_prime_sup) / 4)
        assert build_skeleton(m) == sk  # deterministic


def test_skeleton_errors():
    with pytest.raises(NoRoot):
        build_skeleton(random_walk(2.0, 1.0))
    repelling = ModelSpec((Jump(1, lambda z: 1 + z, 1.0), Jump(-1, lambda z: 2 + 0 * z, 2.0)),
                          bracket=(0.0, 3.0))
    with pytest.raises(NonAttracting):
        build_skeleton(repelling)


def test_model_validation():
    one = lambda z: np.ones_like(z)
    with pytest.raises(ConfigError):
        ModelSpec((Jump(0, one, 1.0),))
    with pytest.raises(ConfigError):
        ModelSpec((Jump(1, one, 1.0), Jump(1, one, 1.0)))
    with pytest.raises(ConfigError):
        ModelSpec((Jump(1, one, 1.0),), alpha=1.5)
    with pytest.raises(ConfigError):
        make_model("nope")
    with pytest.raises(ConfigError):
        make_model("sis", {"beta": 1.0, "gamma": 2.0})


def test_assumptions_immigration_death():
    m = immigration_death()
    rep = check_assumptions(m, build_skeleton(m))
    assert rep.envelope_ok
    assert rep.envelope_ratio[1] == pytest.approx(1.0)
    assert rep.epsilon == pytest.approx(0.5)
    assert rep.ok


def test_assumptions_flags_quadratic_rate():
    m = ModelSpec((Jump(1, lambda z: z ** 2, 1.0), Jump(-1, lambda z: z ** 3, 10.0)), bracket=(0.5, 4.0))
    rep = check_assumptions(m, build_skeleton(m))
    assert not rep.envelope_ok
    assert rep.envelope_ratio[1] > 1
    assert any(v.startswith("A2") for v in rep.violations)


def test_assumptions_sis():
    m = sis()
    rep = check_assumptions(m, build_skeleton(m))
    assert 0 < rep.L1 < math.inf
    assert rep.L1 == pytest.approx(2.0, rel=1e-6)


def test_drift_derivative_fallback():
    m = sis()
    plain = ModelSpec(tuple(Jump(jp.j, jp.rate, jp.envelope) for jp in m.jumps))
    z = np.linspace(0.2, 0.8, 5)
    np.testing.assert_allclose(drift_derivative(plain, z), drift_derivative(m, z), atol=1e-8)


def test_load_model_config(tmp_path):
    text = '[model]\nname = "sis"\ndelta = 0.2\n[model.params]\nbeta = 3.0\ngamma = 1.0\n'
    m = load_model_config(text)
    assert m.delta == 0.2 and m.params["beta"] == 3.0
    p = tmp_path / "m.toml"
    p.write_text(text)
    assert load_model_config(str(p)).params == m.params
    assert load_model_config({"model": {"name": "immigration_death"}}).name == "immigration_death"
    with pytest.raises(ConfigError):
        load_model_config({"model": {}})


zs = st.floats(-5, 5, allow_nan=False)


@given(z=zs, a=st.floats(0.1, 5), b=st.floats(0.1, 5), k=st.floats(0, 3))
@settings(max_examples=200, deadline=None)
def test_linearity_under_superposition(z, a, b, k):
    m1, m2 = immigration_death(a, b), three_jump(b, a, k)
    both = superpose(m1, m2)
    for f in (drift, variance_rate, total_rate):
        assert f(both, z) == pytest.approx(f(m1, z) + f(m2, z), rel=1e-12, abs=1e-12)


@given(z=st.floats(-50, 50, allow_nan=False))
def test_rates_are_clamped(z):
    for m in (immigration_death(), sis(), three_jump(), make_model("declining")):
        assert np.all(m.rates(z) >= 0)
