import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trustcheck import bayes
from trustcheck.core_model import ModelParams, StateSpace
from trustcheck.variants import (alarm_kernel, cutoff_1d, leakage_hazard, make_kernel, noisy_kernel, q_sweep,
                                 sce_dvr_drho, sce_equilibrium, sce_sender_gain, sce_values)
from trustcheck.value_engine import BaselineKernel, solve_equilibrium


def _leaf_sums(k, lam, mu):
    lt = k.leaf_table_at(lam, mu, 0, 0.4, 0.6)
    out = []
    for a_s in (0, 1):
        for a_r in (0, 1):
            m = lt.valid & (lt.a_s == a_s) & (lt.a_r == a_r)
            out.append(np.where(m, lt.prob, 0).sum(axis=1))
    return np.array(out)


@pytest.mark.parametrize("name", ["noisy_a", "noisy_b", "silent", "leakage", "alarm"])
def test_branch_probabilities_sum_to_one(name):
    p = ModelParams(pi_T=0.9, pi_D=0.8, q=0.5)
    k = make_kernel(name, p, 5)
    lam = np.linspace(0, 1, 7)
    mu = p.mu0 if k.space.one_d else np.linspace(0, 1, 7)
    np.testing.assert_allclose(_leaf_sums(k, lam, mu), 1.0, atol=1e-12)


def test_unknown_variant():
    with pytest.raises(ValueError):
        make_kernel("bogus", ModelParams())


def test_noisy_exact_limit_recovers_baseline():
    p = ModelParams(R=1.0)
    base = solve_equilibrium(BaselineKernel(p, StateSpace.grid2d(9)))
    for reg in ("A", "B"):
        eq = solve_equilibrium(noisy_kernel(p.with_(pi_T=1.0, pi_D=1.0), StateSpace.grid2d(9), reg))
        np.testing.assert_allclose(eq.values.v_s, base.values.v_s, atol=1e-8)
        np.testing.assert_allclose(eq.policies.rho, base.policies.rho, atol=1e-6)


def test_alarm_kernel_posteriors_match_bayes():
    p = ModelParams(eps_alarm=0.1, kappa_alarm=2.0)
    k = alarm_kernel(p, 5)
    lt = k.leaf_table_at(0.5, p.mu0, 0, 1.0, 0.0)
    l1, l0 = bayes.alarm_posteriors(0.5, 1.0, 0.1, 2.0)
    post = set(np.round(lt.lam[lt.valid & (lt.mode == 0)], 12))
    assert round(l1, 12) in post and round(l0, 12) in post


def test_leakage_hazard_independent_of_q():
    p = ModelParams()
    assert leakage_hazard(0.4, 0.5, 0.3, p.with_(q=0.2)) == leakage_hazard(0.4, 0.5, 0.3, p.with_(q=1.0))


def test_q_sweep_small():
    pts, lam_dec, haz_dec = q_sweep(ModelParams(R=1.0), [0.5, 1.0], n_lam=51)
    assert all(pt.converged for pt in pts)
    assert isinstance(lam_dec, bool)


def test_cutoff_1d_no_checks():
    eq = solve_equilibrium(make_kernel("leakage", ModelParams(), 21))
    assert np.isnan(cutoff_1d(eq))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 0.99), st.floats(0.0, 1.0), st.floats(0.1, 3.0))
def test_sce_sender_gain_identity(d, r_hat, B):
    p = ModelParams(delta=d, B=B)
    gain = sce_sender_gain(1.0, r_hat, p)
    assert gain == pytest.approx(B * (1 - d) / (1 - d + d * r_hat), abs=1e-10)
    assert gain > 0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 0.95), st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.floats(0.0, 2.0), st.floats(0.05, 1.0))
def test_sce_derivative_exact(d, rho, theta, R, C):
    p = ModelParams(delta=d, theta=theta, R=R, C=C)
    s_hat = 1 - theta
    h = 1e-6
    fd = (sce_values(1.0, rho + h, p)[1] - sce_values(1.0, rho - h, p)[1]) / (2 * h)
    assert fd == pytest.approx(float(sce_dvr_drho(rho, s_hat, p)), abs=1e-6)


def test_sce_classification():
    p = ModelParams(theta=0.0, C=0.2, delta=0.9)
    assert sce_equilibrium(p.with_(R=0.3)).case == "check"
    assert sce_equilibrium(p.with_(R=0.1)).case == "trust"
    assert sce_equilibrium(p.with_(R=0.2)).case == "indifferent"
    r = sce_equilibrium(p.with_(R=0.1))
    assert r.sigma == 1.0 and r.v_s == pytest.approx(p.B / (1 - p.delta))
