import numpy as np
import pytest

from trustcheck.core_model import ModelParams, PolicyField, StateSpace
from trustcheck.simulator import (COLUMNS, InsufficientEvents, bunching_statistic, default_horizon, hazard_bins,
                                  simulate_paths, taper_statistic, welfare_estimate, welfare_hazard_gaps)
from trustcheck.value_engine import BaselineKernel, solve_equilibrium


@pytest.fixture(scope="module")
def small():
    k = BaselineKernel(ModelParams(), StateSpace.grid2d(21))
    return k, solve_equilibrium(k)


def test_default_horizon():
    p = ModelParams()
    H = default_horizon(p)
    assert p.v_max * p.delta ** H < 1e-6 <= p.v_max * p.delta ** (H - 1)


def test_determinism_and_chunking(small):
    k, eq = small
    a = simulate_paths(eq, k, horizon=30, n_paths=3000, seed=5, chunk=4096)
    b = simulate_paths(eq, k, horizon=30, n_paths=3000, seed=5, chunk=700)
    for name in ("lam", "mu", "a_s", "a_r", "terminal"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = simulate_paths(eq, k, horizon=30, n_paths=3000, seed=6)
    assert not np.array_equal(a.a_r, c.a_r)


def test_no_deception_no_termination(small):
    k, eq = small
    pol = PolicyField.constant(k.space, 0.0, 0.0)
    ens = simulate_paths(eq, k, horizon=20, n_paths=2000, seed=1, policies=pol)
    assert not ens.terminated.any()
    assert np.allclose(ens.lam[ens.valid], eq.params.lambda0)


def test_hazard_bins_within_3se(small):
    k, eq = small
    ens = simulate_paths(eq, k, horizon=20, n_paths=20000, seed=2)
    bins = hazard_bins(ens)
    assert bins
    assert max(abs(b.z) for b in bins) <= 4.0


def test_welfare(small):
    k, eq = small
    ens = simulate_paths(eq, k, horizon=default_horizon(eq.params), n_paths=5000, seed=3)
    w = welfare_estimate(ens, eq.params)
    assert abs(w.W_mc - w.W_formula) <= 4 * w.se_gap
    assert w.hazard_identity_corrected <= 1e-12
    assert w.dW_dC < 0 < w.dW_dB


def test_welfare_hazard_gap_oracle():
    rng = np.random.default_rng(0)
    lam, mu, s, r = (rng.uniform(size=100) for _ in range(4))
    printed, corrected = welfare_hazard_gaps(lam, mu, s, r, 2.0)
    assert corrected <= 1e-12
    assert printed > 0.1


def test_statistics_guards(small):
    k, eq = small
    ens = simulate_paths(eq, k, horizon=10, n_paths=500, seed=4)
    with pytest.raises(ValueError):
        bunching_statistic(ens)
    pol = PolicyField.constant(k.space, 0.0, 1.0)
    quiet = simulate_paths(eq, k, horizon=5, n_paths=2000, seed=4, policies=pol)
    with pytest.raises(InsufficientEvents):
        bunching_statistic(quiet)
    t = taper_statistic(quiet)
    assert t.n > 0


def test_write(tmp_path, small):
    k, eq = small
    ens = simulate_paths(eq, k, horizon=5, n_paths=10, seed=0)
    path = tmp_path / "paths.csv"
    ens.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert len(lines) == 1 + int(ens.valid.sum())
