"""Continuous-time Poisson-news limit: belief filter paths, the generator, the
receiver's first-order condition, and the discrete-to-continuous embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .bayes import alarm_posteriors
from .core_model import ModelParams, StateSpace

ALARM, TERMINATION = "alarm", "termination"


class StepTooLarge(RuntimeError):
    pass


class RateCapViolated(ValueError):
    pass


def news_intensity(lam, sigma, params: ModelParams):
    """Observed alarm intensity eps (1 + (1 - lam) sigma (kappa - 1))."""
    return params.eps_alarm * (1 + (1 - np.asarray(lam)) * np.asarray(sigma) * (params.kappa_alarm - 1))


def jump_target(lam, sigma, params: ModelParams):
    """Post-alarm posterior lam / (1 + (1 - lam) sigma (kappa - 1))."""
    lam = np.asarray(lam, float)
    return lam / (1 + (1 - lam) * np.asarray(sigma) * (params.kappa_alarm - 1))


def filter_drift(lam, sigma, params: ModelParams):
    return params.eps_alarm * (params.kappa_alarm - 1) * np.asarray(sigma) * np.asarray(lam) * (1 - np.asarray(lam))


def termination_intensity(lam, sigma, r):
    """Public termination intensity r (1 - lam) sigma."""
    return np.asarray(r) * (1 - np.asarray(lam)) * np.asarray(sigma)


@dataclass
class CtPathRecord:
    """One path: samples (t, lam) at every integration step and jump, plus events."""

    horizon: float
    honest: bool
    times: np.ndarray
    beliefs: np.ndarray
    event_times: list = field(default_factory=list)
    event_types: list = field(default_factory=list)

    @property
    def terminated(self) -> bool:
        return TERMINATION in self.event_types

    @property
    def final_belief(self) -> float:
        return float(self.beliefs[-1])

    def alarm_count(self) -> int:
        return self.event_types.count(ALARM)


def _euler(lam, dt, s, params):
    nxt = lam + dt * float(filter_drift(lam, s, params))
    if not 0.0 <= nxt <= 1.0:
        raise StepTooLarge("step too large")
    return nxt


def simulate_ct_path(params: ModelParams, sigma_fn, r_fn, horizon: float, seed, path: int = 0,
                     lam0: float | None = None) -> CtPathRecord:
    """One path of the Poisson-news model by thinning.

    The type is drawn once. Candidate events arrive at the bound kappa eps + r_bar;
    a candidate is an alarm with probability (type alarm intensity)/bound and a
    termination with probability (r sigma for a strategic sender)/bound. Between
    candidates the public belief follows the filter ODE by explicit Euler with
    step at most 1e-3 / max drift.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(path)]))
    lam = params.lambda0 if lam0 is None else lam0
    eps, kap, rbar = params.eps_alarm, params.kappa_alarm, params.r_bar
    honest = bool(rng.random() < lam)
    bound = kap * eps + rbar
    dmax = eps * (kap - 1) / 4
    hmax = 1e-3 / dmax if dmax > 0 else horizon
    times, beliefs = [0.0], [lam]
    ev_t, ev_k = [], []
    t = 0.0
    while True:
        gap = rng.exponential(1.0 / bound)
        stop = min(t + gap, horizon)
        while t < stop:
            dt = min(hmax, stop - t)
            lam = _euler(lam, dt, float(sigma_fn(lam)), params)
            t += dt
            times.append(t)
            beliefs.append(lam)
        if t >= horizon:
            break
        s = float(sigma_fn(lam))
        r = float(r_fn(lam))
        if not (0 <= s <= 1 and 0 <= r <= rbar):
            raise ValueError("policy out of bounds")
        a_rate = eps if honest else eps * (1 + s * (kap - 1))
        d_rate = 0.0 if honest else r * s
        u = rng.random() * bound
        if u < a_rate:
            lam = float(jump_target(lam, s, params))
            ev_t.append(t)
            ev_k.append(ALARM)
            times.append(t)
            beliefs.append(lam)
        elif u < a_rate + d_rate:
            ev_t.append(t)
            ev_k.append(TERMINATION)
            break
    return CtPathRecord(horizon, honest, np.array(times), np.array(beliefs), ev_t, ev_k)


def simulate_ct_paths(params: ModelParams, sigma_fn, r_fn, horizon: float, n_paths: int, seed: int = 0):
    return [simulate_ct_path(params, sigma_fn, r_fn, horizon, seed, i) for i in range(n_paths)]


def expected_alarms(rec: CtPathRecord, sigma_fn, params: ModelParams) -> float:
    """Compensator of the alarm count along the path: integral of the observed intensity."""
    t, lam = rec.times, rec.beliefs
    keep = np.r_[np.diff(t) > 0, False]
    lb = news_intensity(lam[keep], np.array([sigma_fn(x) for x in lam[keep]]), params)
    dt = np.diff(t)[keep[:-1]]
    return float(np.sum(lb * dt))


def generator_apply(f_samples, grid, lam: float, sigma: float, params: ModelParams) -> float:
    """L f(lam) = eps (kappa - 1) sigma lam (1 - lam) f'(lam) + lbar [f(lam1) - f(lam)].

    f is given by samples on ``grid``; f' by central differences, f(lam1) by
    linear interpolation.
    """
    f_samples, grid = np.asarray(f_samples, float), np.asarray(grid, float)
    df = np.interp(lam, grid, np.gradient(f_samples, grid))
    f0 = np.interp(lam, grid, f_samples)
    f1 = np.interp(float(jump_target(lam, sigma, params)), grid, f_samples)
    return float(filter_drift(lam, sigma, params) * df + news_intensity(lam, sigma, params) * (f1 - f0))


def receiver_foc_residual(lam, sigma, vr_at, params: ModelParams):
    """C - (1 - lam) sigma (R - V_r); positive means inspect at rate 0, negative at r_bar."""
    return params.C - (1 - np.asarray(lam)) * np.asarray(sigma) * (params.R - np.asarray(vr_at))


def foc_locus(sigma_fn, vr_fn, params: ModelParams, n: int = 401) -> list[float]:
    """Beliefs where the receiver's coefficient changes sign, by scan and Brent refinement."""
    g = lambda x: float(receiver_foc_residual(x, sigma_fn(x), vr_fn(x), params))
    xs = np.linspace(0, 1, n)
    vals = np.array([g(x) for x in xs])
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa == 0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(float(brentq(g, a, b, xtol=1e-14)))
    if vals[-1] == 0:
        roots.append(1.0)
    return roots


def sender_index(lam, sigma, r, vs_samples, grid, params: ModelParams):
    """Diagnostic r (1 - lam) V_s - eps (kappa - 1) lam (1 - lam) (V_s(lam) - V_s(lam1))."""
    v = np.interp(lam, grid, vs_samples)
    v1 = np.interp(jump_target(lam, sigma, params), grid, vs_samples)
    return r * (1 - lam) * v - params.eps_alarm * (params.kappa_alarm - 1) * lam * (1 - lam) * (v - v1)


# ---------------------------------------------------------------------------
# discrete-time embedding


@dataclass
class EmbeddingRow:
    dt: float
    delta: float
    eps_period: float
    sup_error: float
    sup_error_scaled_sigma: float
    jump_error: float


def discrete_hazard(params: ModelParams, lam, sigma, p_check) -> np.ndarray:
    """Per-period termination probability of the discrete alarm model, read from its branch list."""
    from .variants import AlarmKernel
    from .value_engine import TERMINATED

    k = AlarmKernel(params.with_(mu0=0.0), StateSpace.grid1d(3, 0.0))
    lam = np.atleast_1d(np.asarray(lam, float))
    sigma = np.broadcast_to(np.asarray(sigma, float), lam.shape)
    p_check = np.broadcast_to(np.asarray(p_check, float), lam.shape)
    lt = k.leaf_table_at(lam, 0.0, 0, sigma, p_check)
    ps = np.where(lt.a_s == 1, (1 - lam[:, None]) * sigma[:, None], 1 - (1 - lam[:, None]) * sigma[:, None])
    pr = np.where(lt.a_r == 1, p_check[:, None], 1 - p_check[:, None])
    w = np.where(lt.valid & (lt.mode == TERMINATED), lt.prob * ps * pr, 0.0)
    return w.sum(axis=1)


def embedding_convergence(params: ModelParams, sigma_fn, r_fn, dt_list, n_lam: int = 201):
    """Per-period hazard over dt against the intensity r (1 - lam) sigma as dt halves.

    The period model has check probability 1 - exp(-r dt), alarm probability
    eps dt and delta = exp(-beta dt); the deception propensity sigma is not scaled.
    ``sup_error_scaled_sigma`` reports the variant that also scales sigma by dt.
    ``jump_error`` compares the period alarm posterior with the continuous jump.
    Returns (rows, fitted order of sup_error in dt).
    """
    dts = np.asarray(dt_list, float)
    if np.any(np.diff(dts) >= 0):
        raise ValueError("dt_list must be decreasing")
    lam = np.linspace(0, 1, n_lam)
    s = np.clip(np.array([sigma_fn(x) for x in lam], float), 0, 1)
    r = np.array([r_fn(x) for x in lam], float)
    target = termination_intensity(lam, s, r)
    rows = []
    for dt in dts:
        if params.r_bar * dt > 1 or np.any(r * dt > 1) or np.any(s * dt > 1):
            raise RateCapViolated("rate cap violated")
        eps_p = params.eps_alarm * dt
        p = params.with_(eps_alarm=eps_p, delta=math.exp(-params.beta_ct * dt))
        pc = 1 - np.exp(-r * dt)
        h = discrete_hazard(p, lam, s, pc)
        h2 = discrete_hazard(p, lam, s * dt, pc)
        l1, _ = alarm_posteriors(lam, s, eps_p, params.kappa_alarm)
        rows.append(EmbeddingRow(float(dt), float(p.delta), float(eps_p), float(np.max(np.abs(h / dt - target))),
                                 float(np.max(np.abs(h2 / dt - target))),
                                 float(np.max(np.abs(l1 - jump_target(lam, s, params))))))
    err = np.array([row.sup_error for row in rows])
    if np.all(err > 0) and len(rows) > 1:
        order = float(np.polyfit(np.log(dts), np.log(err), 1)[0])
    else:
        order = math.inf
    return rows, order
