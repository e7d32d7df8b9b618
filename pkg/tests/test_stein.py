import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popapprox.generator import LatticeDistribution
from popapprox.metrics import centred_equilibrium
from popapprox.model import Skeleton, build_skeleton, immigration_death, random_walk, sis, three_jump
from popapprox.stein import (TERMS, CentredPoisson, centred_pmf, jump_split, norm_bounds_check,
                             residual_sweep, shifted_stein, stein_residual_terms, stein_solution)

from .oracles import poisson_pmf_bruteforce, stein_by_definition


def test_centred_pmf_examples():
    cp = CentredPoisson(1.0)
    assert centred_pmf(cp, 0) == pytest.approx(math.exp(-1), rel=1e-15)
    assert centred_pmf(cp, -1) == pytest.approx(math.exp(-1), rel=1e-15)
    assert centred_pmf(cp, -2) == 0.0
    cp = CentredPoisson(7.3)
    for k in range(-7, 12):
        assert centred_pmf(cp, k) == pytest.approx(poisson_pmf_bruteforce(7.3, k + 7), rel=1e-13)


@pytest.mark.parametrize("mu", [0.4, 1.0, 10.0, 100.0, 1000.0, 12345.6])
def test_centred_pmf_total_and_peak(mu):
    cp = CentredPoisson(mu)
    d = cp.distribution()
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
    if mu >= 1:
        assert d.probs.max() <= 1 / (2 * math.sqrt(mu))


def test_g1_for_mu1_s0():
    sol = stein_solution(1.0, 0)
    assert sol(0) == 0.0
    assert sol(1) == pytest.approx(1 - math.exp(-1), rel=1e-15)


@pytest.mark.parametrize("mu,s", [(1.0, 0), (1.0, 1), (2.5, 4), (6.0, 0), (6.0, 6), (6.0, 18)])
def test_matches_exact_rational_closed_form(mu, s):
    top = s + 15
    sol = stein_solution(mu, s)
    np.testing.assert_allclose(sol.values[: top + 1], stein_by_definition(mu, s, top), rtol=1e-13, atol=1e-300)


@pytest.mark.parametrize("mu", [1.0, 10.0, 100.0, 1000.0])
def test_norm_lemma_grid(mu):
    fm = math.floor(mu)
    for s in sorted({0, fm, 3 * fm}):
        sol = stein_solution(mu, s)
        rep = norm_bounds_check(sol)
        assert rep.ok, [c for c in rep.checks if not c.ok]
        assert rep.max_residual <= 1e-12
        assert rep.monotone


def test_norm_examples():
    assert norm_bounds_check(stein_solution(50.0, 50))["2: ||dg||_1 <= 2/mu"].ok
    assert norm_bounds_check(stein_solution(10.0, 0))["4: ||h||_1 <= 3"].ok


@given(mu=st.floats(0.5, 3000.0), frac=st.floats(0.0, 4.0))
@settings(max_examples=60, deadline=None)
def test_norm_lemma_random(mu, frac):
    s = int(frac * mu)
    rep = norm_bounds_check(stein_solution(mu, s))
    assert rep.ok
    assert rep.max_residual <= 1e-12


def test_lazy_extension_keeps_residual():
    sol = stein_solution(20.0, 5, j_max=30)
    v = sol(200)
    assert sol.j_max >= 200 and v > 0
    assert np.max(np.abs(sol.residual())) <= 1e-12


def test_j_max_precondition():
    with pytest.raises(ValueError):
        stein_solution(3.0, 10, j_max=11)


def test_shifted_stein():
    cp = CentredPoisson(37.4)
    fm = cp.floor_mu
    gt = shifted_stein(cp, 3)
    assert gt(-fm - 1) == 0.0
    assert gt(-fm) == 0.0
    l = np.arange(-fm, 60)
    np.testing.assert_array_equal(gt(l), gt.solution(l + fm))
    g1 = shifted_stein(CentredPoisson(1.0), 0)
    assert g1(0) == stein_solution(1.0, 1)(1)
    with pytest.raises(ValueError):
        shifted_stein(cp, -fm - 1)


def _flat_pi(lo, hi):
    return LatticeDistribution(lo, np.full(hi - lo + 1, 1.0 / (hi - lo + 1)))


def test_constant_rate_terms_vanish():
    m = random_walk(1.0, 1.0, up2=0.3, down2=0.2)
    # rates do not depend on z; the drift is constant so no skeleton exists and one is supplied
    sk = Skeleton(c=1.0, F_prime_c=-1.0, sigma2_c=float(2.0 + 4 * 0.5), v_c=2.0, Lambda_star=2.5,
                  U=1.0, delta1_prime=0.05)
    n = 100
    b = stein_residual_terms(m, sk, n, 2, _flat_pi(-40, 40))
    assert b.terms["En1"] == 0.0 and b.terms["En3"] == 0.0 and b.terms["En6"] == 0.0
    assert b.terms["En2"] != 0.0 and b.terms["En5"] != 0.0


@pytest.mark.parametrize("model", [immigration_death(), sis()], ids=lambda m: m.name)
def test_unit_jump_terms_vanish(model):
    sk = build_skeleton(model)
    _, pi_hat = centred_equilibrium(model, sk, 100)
    b = stein_residual_terms(model, sk, 100, 0, pi_hat)
    for k in ("En2", "En4", "En5", "En7"):
        assert b.terms[k] == 0.0


def test_jump_split_no_double_count():
    assert jump_split(100) == 10 and jump_split(99) == 9 and jump_split(101) == 10


@pytest.mark.parametrize("model,n", [(sis(), 200), (three_jump(), 150), (immigration_death(), 100)],
                         ids=lambda x: getattr(x, "name", str(x)))
def test_identity_and_reconstruction(model, n):
    sk = build_skeleton(model)
    _, pi_hat = centred_equilibrium(model, sk, n)
    w = int(4 * math.sqrt(n * sk.v_c))
    out, sups = residual_sweep(model, sk, n, pi_hat, range(-w, w + 1))
    for b in out:
        assert abs(b.identity_gap) <= 1e-12
        assert b.direct_error <= b.reconstructed_bound + 1e-9
    assert sups["sup_direct"] <= sups["Rn1"] + sups["Rn2"] + sups["Rn3"] + 1e-9


def test_three_jump_uses_small_jump_terms():
    m = three_jump()
    sk = build_skeleton(m)
    _, pi_hat = centred_equilibrium(m, sk, 150)
    b = stein_residual_terms(m, sk, 150, 1, pi_hat)
    assert b.terms["En2"] != 0.0 and b.terms["En4"] == 0.0
    # at n = 3 the double jump exceeds floor(sqrt(3)) = 1 and moves to the tail term
    b3 = stein_residual_terms(m, sk, 3, 0, LatticeDistribution(-6, np.full(13, 1 / 13)))
    assert b3.terms["En2"] == 0.0 and b3.terms["En4"] != 0.0


def test_breakdown_json():
    m = sis()
    sk = build_skeleton(m)
    _, pi_hat = centred_equilibrium(m, sk, 80)
    rec = json.loads(stein_residual_terms(m, sk, 80, 0, pi_hat).to_json())
    assert set(rec) == {"n", "r", "terms", "reconstructed_bound", "direct_error"}
    assert set(rec["terms"]) == set(TERMS)
