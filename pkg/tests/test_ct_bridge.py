import numpy as np
import pytest

from trustcheck.core_model import ModelParams
from trustcheck.ct_bridge import (RateCapViolated, StepTooLarge, embedding_convergence, expected_alarms,
                                  filter_drift, foc_locus, generator_apply, jump_target, news_intensity,
                                  receiver_foc_residual, simulate_ct_path, simulate_ct_paths)

P = ModelParams(eps_alarm=0.1, kappa_alarm=2.0)


def test_jump_and_intensity():
    assert jump_target(0.5, 1.0, P) == pytest.approx(1 / 3)
    assert news_intensity(0.5, 1.0, P) == pytest.approx(0.15)


def test_generator_pieces():
    grid = np.linspace(0, 1, 2001)
    drift = filter_drift(0.5, 1.0, P)
    jump = news_intensity(0.5, 1.0, P) * (jump_target(0.5, 1.0, P) - 0.5)
    assert drift == pytest.approx(0.025) and jump == pytest.approx(-0.025)
    assert generator_apply(grid, grid, 0.5, 1.0, P) == pytest.approx(0.0, abs=1e-12)
    assert generator_apply(np.ones_like(grid), grid, 0.3, 0.7, P) == 0.0


def test_generator_on_square():
    grid = np.linspace(0, 1, 4001)
    lam, s = 0.4, 0.8
    l1 = jump_target(lam, s, P)
    exact = filter_drift(lam, s, P) * 2 * lam + news_intensity(lam, s, P) * (l1 ** 2 - lam ** 2)
    assert generator_apply(grid ** 2, grid, lam, s, P) == pytest.approx(exact, abs=1e-6)


def test_foc():
    assert receiver_foc_residual(0.5, 1.0, 0.0, ModelParams(C=0.2, R=2.4)) == pytest.approx(-1.0)
    roots = foc_locus(lambda x: 1.0, lambda x: 0.0, ModelParams(C=0.2, R=1.0))
    assert roots == [pytest.approx(0.8)]


def test_path_determinism():
    a = simulate_ct_path(P, lambda x: 1.0, lambda x: 0.5, 5.0, seed=1, path=3)
    b = simulate_ct_path(P, lambda x: 1.0, lambda x: 0.5, 5.0, seed=1, path=3)
    np.testing.assert_array_equal(a.beliefs, b.beliefs)
    assert a.event_types == b.event_types


def test_honest_type_never_terminates():
    recs = simulate_ct_paths(P.with_(lambda0=1.0), lambda x: 1.0, lambda x: 1.0, 5.0, 50)
    assert not any(r.terminated for r in recs)


def test_compensator_mean():
    recs = simulate_ct_paths(P, lambda x: 1.0, lambda x: 0.0, 5.0, 3000, seed=2)
    d = np.array([r.alarm_count() - expected_alarms(r, lambda x: 1.0, P) for r in recs])
    assert abs(d.mean()) <= 4 * d.std(ddof=1) / np.sqrt(d.size)


def test_errors():
    with pytest.raises(ValueError):
        simulate_ct_path(P, lambda x: 1.0, lambda x: 0.0, 0.0, seed=0)
    with pytest.raises(RateCapViolated):
        embedding_convergence(P, lambda x: 1.0, lambda x: 0.5, [2.0, 1.0])
    with pytest.raises(ValueError):
        embedding_convergence(P, lambda x: 1.0, lambda x: 0.5, [0.1, 0.2])
    wild = P.with_(eps_alarm=0.5, kappa_alarm=2.0)
    import trustcheck.ct_bridge as ct
    with pytest.raises(StepTooLarge):
        ct._euler(0.999, 1e3, 1.0, wild)


def test_embedding_order():
    rows, order = embedding_convergence(ModelParams(), lambda x: 1.0 - 0.5 * x, lambda x: 0.5,
                                        [0.1, 0.05, 0.025, 0.0125])
    assert order >= 0.9
    assert all(r.jump_error < 1e-12 for r in rows)
    assert rows[-1].sup_error_scaled_sigma > rows[-1].sup_error
