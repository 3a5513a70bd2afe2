"""Model variants: noisy checks, silent audits (two-sided and with leakage),
epsilon-alarm monitoring and the self-confirming benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core_model import EquilibriumResult, ModelParams, PolicyField, StateSpace, validate_params
from .value_engine import (SolverConfig, TransitionKernel, q_values_at, solve_equilibrium)

VARIANTS = ("noisy_a", "noisy_b", "silent", "leakage", "alarm", "sce")


class NoisyKernel(TransitionKernel):
    """Checks return a good signal on truth with prob pi_T and a bad signal on
    deception with prob pi_D. Regime A: only a bad signal on deception ends the
    relationship (a bad signal on truth is overturned). Regime B: any bad signal ends it."""

    def __init__(self, params, space, regime="A", punish=False):
        validate_params(params, noisy=True)
        if regime not in ("A", "B"):
            raise ValueError("regime must be A or B")
        self.kind = K.NOISY_A if regime == "A" else K.NOISY_B
        self.name = f"noisy_{regime.lower()}"
        self.regime = regime
        super().__init__(params, space, punish)


class SilentKernel(TransitionKernel):
    """Two-sided silent audits: a truthful check moves vigilance but not honesty."""

    kind = K.SILENT
    name = "silent"


class LeakageKernel(TransitionKernel):
    """Silent audits with disclosure probability q on the 1-D honesty state.

    Both successors (disclosure lambda+, silence l0) lie weakly above lambda,
    so a single descending pass is exact.
    """

    kind = K.LEAKAGE
    name = "leakage"


class AlarmKernel(TransitionKernel):
    """Private checks with a public alarm of frequency eps and likelihood ratio kappa.

    The alarm posterior lies below lambda, so successors are not ordered and
    the sweep repeats until values settle.
    """

    kind = K.ALARM
    name = "alarm"
    ordered = False


def noisy_kernel(params: ModelParams, space: StateSpace, regime: str = "A") -> NoisyKernel:
    return NoisyKernel(params, space, regime)


def silent_two_sided_kernel(params: ModelParams, space: StateSpace) -> SilentKernel:
    return SilentKernel(params, space)


def leakage_kernel(params: ModelParams, n_lam: int = 401) -> LeakageKernel:
    if not 0 < params.q <= 1:
        raise ValueError("q out of (0,1]")
    return LeakageKernel(params, StateSpace.grid1d(n_lam, params.mu0))


def alarm_kernel(params: ModelParams, n_lam: int = 401) -> AlarmKernel:
    validate_params(params)
    return AlarmKernel(params, StateSpace.grid1d(n_lam, params.mu0))


def make_kernel(name: str, params: ModelParams, n: int = 201, regime: str | None = None):
    """Kernel for a variant name on its default state space."""
    if name in ("noisy", "noisy_a", "noisy_b"):
        reg = regime or ("B" if name == "noisy_b" else "A")
        return noisy_kernel(params, StateSpace.grid2d(n), reg)
    if name == "silent":
        return silent_two_sided_kernel(params, StateSpace.grid2d(n))
    if name == "leakage":
        return leakage_kernel(params, n)
    if name == "alarm":
        return alarm_kernel(params, n)
    raise ValueError(f"unknown variant {name!r}")


# ---------------------------------------------------------------------------
# one-dimensional cutoffs


def observed_check_prob(params: ModelParams, rho):
    """p-bar: the public's check probability mu0 + (1 - mu0) rho(lambda)."""
    return params.mu0 + (1 - params.mu0) * np.asarray(rho)


def leakage_hazard(lam, sigma, rho, params: ModelParams):
    """p-bar (1 - lambda) sigma, independent of q."""
    return observed_check_prob(params, rho) * (1 - np.asarray(lam)) * np.asarray(sigma)


def cutoff_1d(eq: EquilibriumResult, tol: float = 1e-6) -> float:
    """Largest lambda node at which the receiver still checks (NaN if never)."""
    sp = eq.space
    r = eq.policies.rho[: sp.n_normal] > tol
    if not r.any():
        return math.nan
    return float(sp.lam_axis[np.nonzero(r)[0].max()])


@dataclass
class SweepPoint:
    value: float
    lambda_star: float
    hazard_at_cutoff: float
    converged: bool
    residual: float


def _hazard_at(eq, lam_star, params):
    if not np.isfinite(lam_star):
        return math.nan
    sp = eq.space
    i = int(round(lam_star * (sp.n_lam - 1)))
    return float(leakage_hazard(sp.lam_axis[i], eq.policies.sigma[i], eq.policies.rho[i], params))


def q_sweep(params: ModelParams, q_grid, n_lam: int = 401, cfg: SolverConfig | None = None):
    """Leakage equilibrium at each q; returns (points, lambda* weakly decreasing, hazard weakly decreasing)."""
    pts = []
    for q in q_grid:
        p = params.with_(q=float(q))
        eq = solve_equilibrium(leakage_kernel(p, n_lam), cfg)
        ls = cutoff_1d(eq)
        pts.append(SweepPoint(float(q), ls, _hazard_at(eq, ls, p), eq.converged, eq.residual_sup))
    lam = np.array([p.lambda_star for p in pts])
    haz = np.array([p.hazard_at_cutoff for p in pts])
    return pts, bool(np.all(np.diff(lam) <= 1e-12)), bool(np.all(np.diff(haz) <= 1e-12))


def solve_alarm(params: ModelParams, n_lam: int = 401, cfg: SolverConfig | None = None) -> EquilibriumResult:
    """Alarm equilibrium by grid continuation: each level is seeded with the
    previous level's policies so node equilibria are followed rather than reselected."""
    levels = [n for n in (51, 101, 201) if n < n_lam] + [n_lam]
    eq = None
    for n in levels:
        k = alarm_kernel(params, n)
        init = None
        if eq is not None:
            s, r = eq.policies.at(k.space.lam)
            init = PolicyField(k.space, s, r)
        eq = solve_equilibrium(k, cfg, init=init)
    return eq


def epsilon_sweep(params: ModelParams, eps_grid, n_lam: int = 401, cfg: SolverConfig | None = None):
    """Alarm equilibrium cutoffs along eps; returns (points, successive |differences|)."""
    pts = []
    for e in eps_grid:
        p = params.with_(eps_alarm=float(e))
        eq = solve_alarm(p, n_lam, cfg)
        ls = cutoff_1d(eq)
        pts.append(SweepPoint(float(e), ls, _hazard_at(eq, ls, p), eq.converged, eq.residual_sup))
    lam = np.array([p.lambda_star for p in pts])
    return pts, np.abs(np.diff(lam))


def alarm_G(values: np.ndarray, space: StateSpace, lam, sigma, params: ModelParams):
    """(G_truth V, G_deceive V): expected next-state value after truth, and after
    unchecked deception, over the alarm/quiet split."""
    from .bayes import alarm_posteriors

    eps, kap = params.eps_alarm, params.kappa_alarm
    l1, l0 = alarm_posteriors(lam, sigma, eps, kap)
    v1, v0 = space.interp(values, l1), space.interp(values, l0)
    return eps * v1 + (1 - eps) * v0, kap * eps * v1 + (1 - kap * eps) * v0


def alarm_indifference(lam: float, eq: EquilibriumResult, kernel: AlarmKernel | None = None) -> tuple[float, float]:
    """(F_s, F_r) at belief lam on the alarm equilibrium (deceive minus truth, trust minus check)."""
    K_ = kernel or AlarmKernel(eq.params, eq.space)
    s, r = eq.policies.at(lam)
    qt, qd, qtr, qc = q_values_at(K_, eq.values, lam, K_.space.mu_fixed, s, r)
    return float(qd[0] - qt[0]), float(qtr[0] - qc[0])


# ---------------------------------------------------------------------------
# self-confirming benchmark


def sce_values(sigma, rho, params: ModelParams):
    """Stationary values under private actions and no public signal."""
    B, C, R, d = params.B, params.C, params.R, params.delta
    s = (1 - params.theta) * np.asarray(sigma, float)
    rho = np.asarray(rho, float)
    vs = np.asarray(sigma) * B / (1 - d + d * rho * np.asarray(sigma))
    vr = (B * (1 - s) + rho * (R * s - C)) / (1 - d + d * rho * s)
    return vs, vr


def sce_sender_gain(sigma, r_hat, params: ModelParams):
    """Deceive-minus-truth value given a conjectured check rate: B - delta r_hat V_s."""
    vs, _ = sce_values(sigma, r_hat, params)
    return params.B - params.delta * np.asarray(r_hat) * vs


def sce_dvr_drho(rho, s_hat, params: ModelParams):
    """Exact derivative of V_r in rho at conjectured deception frequency s_hat."""
    B, C, R, d = params.B, params.C, params.R, params.delta
    num = (1 - d) * (R * s_hat - C) - d * s_hat * B * (1 - s_hat)
    return num / (1 - d + d * rho * s_hat) ** 2


@dataclass
class SCEResult:
    sigma: float
    rho: float | tuple[float, float]
    hazard: float | tuple[float, float]
    v_s: float
    v_r: float
    case: str


def sce_equilibrium(params: ModelParams, rule: str = "exact") -> SCEResult:
    """Stationary SCE: sigma* = 1; rho* from the receiver's best response at s = 1 - theta.

    ``rule="exact"`` signs the derivative of V_r in rho, which carries the term
    -delta s B (1 - s) as well as (1 - delta)(R s - C); ``rule="threshold"``
    compares R (1 - theta) with C only. The two agree when theta is 0 or 1.
    """
    s = 1 - params.theta
    if rule == "exact":
        g = (1 - params.delta) * (params.R * s - params.C) - params.delta * s * params.B * (1 - s)
    elif rule == "threshold":
        g = params.R * s - params.C
    else:
        raise ValueError("rule must be exact or threshold")
    if g > 0:
        rho, case = 1.0, "check"
    elif g < 0:
        rho, case = 0.0, "trust"
    else:
        rho, case = (0.0, 1.0), "indifferent"
    r_eval = rho if isinstance(rho, float) else 0.0
    vs, vr = sce_values(1.0, r_eval, params)
    haz = rho * s if isinstance(rho, float) else (0.0, s)
    return SCEResult(1.0, rho, haz, float(vs), float(vr), case)
