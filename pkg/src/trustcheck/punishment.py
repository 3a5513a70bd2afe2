"""Finite punishment chains in place of termination, and the search for a chain
length that reproduces the termination cutoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .core_model import EquilibriumResult, ModelParams, StateSpace, ValueField
from .cutoff_solver import NoRootInBox, solve_mixing_point
from .value_engine import BaselineKernel, SolverConfig, q_values_at, solve_equilibrium


class NoTWithinCap(RuntimeError):
    pass


@dataclass(frozen=True)
class PunishmentSpec:
    """T periods of mandatory inspection after detection, then reset to (lambda, 0).

    ``T = math.inf`` stands for termination.
    """

    T: float = 5

    def __post_init__(self):
        if not (self.T >= 0 and (self.T == math.inf or float(self.T).is_integer())):
            raise ValueError("T must be a nonnegative integer or inf")


def punishment_entry_values(T, lam, params: ModelParams, normal_values: ValueField) -> tuple[float, float]:
    """Values on entering a T-period punishment at honesty belief ``lam``:
    delta^T V_s(lam, 0) and -C (1 - delta^T)/(1 - delta) + delta^T V_r(lam, 0)."""
    d = params.delta
    sp = normal_values.space
    vs, vr = normal_values.at(lam, None if sp.one_d else 0.0)
    dT = 0.0 if T == math.inf else d ** T
    return float(dT * vs[0]), float(-params.C * (1 - dT) / (1 - d) + dT * vr[0])


def punishment_kernel(params: ModelParams, spec: PunishmentSpec, n_lam: int = 201, n_mu: int | None = None):
    """Kernel on a grid augmented with the punishment chain (termination when T is inf)."""
    if spec.T == math.inf:
        return BaselineKernel(params, StateSpace.grid2d(n_lam, n_mu))
    return BaselineKernel(params, StateSpace.grid2d(n_lam, n_mu, T=int(spec.T)), punish=True)


def punishment_indifference_residuals(x, T, params: ModelParams, values: ValueField,
                                      sigma: float, rho: float) -> tuple[float, float]:
    """(F_s, F_r) at x when detection leads to a T-period punishment.

    If ``values`` lives on a space with the same chain length the punishment
    continuation is read from the chain; otherwise the entry values are taken
    from the closed forms applied to ``values`` at (lambda, 0).
    """
    lam, mu = float(x[0]), float(x[1])
    sp = values.space
    if sp.T == T and T > 0:
        K = BaselineKernel(params, sp, punish=True)
        qt, qd, qtr, qc = q_values_at(K, values, lam, mu, sigma, rho)
        return float(qd[0] - qt[0]), float(qtr[0] - qc[0])
    B, C, R, d = params.B, params.C, params.R, params.delta
    pc = mu + (1 - mu) * rho
    pt = lam + (1 - lam) * (1 - sigma)
    lp = lam / pt if pt > 0 else 0.0
    mp = mu / pc if pc > 0 else (1.0 if mu > 0 else 0.0)
    vs_p, vr_p = values.at(lp, mp)
    vs_0, vr_0 = values.at(lam, 0.0)
    ps, pr = punishment_entry_values(T, lam, params, values)
    F_s = B - d * pc * (vs_p[0] - ps)
    F_r = C - (1 - pt) * R - d * (pt * vr_p[0] + (1 - pt) * pr - vr_0[0])
    return float(F_s), float(F_r)


@dataclass
class EquivalenceReport:
    T: int
    bracket: tuple[int, int]
    x_star: tuple[float, float]
    base_mixes: tuple[float, float]
    adjusted_mixes: tuple[float, float]
    residuals: tuple[float, float]
    norms: list = field(default_factory=list)


def _adjust_mixes(x, T, params, values, s0, r0):
    def f(z):
        return punishment_indifference_residuals(x, T, params, values, z[0], z[1])

    best = None
    for seed in ((s0, r0), (0.5, 0.5), (0.1, 0.9), (0.9, 0.9), (0.5, 0.99)):
        sol = least_squares(f, np.clip(seed, 1e-6, 1 - 1e-6), bounds=([0, 0], [1, 1]),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        res = np.asarray(f(sol.x))
        if best is None or np.linalg.norm(res) < np.linalg.norm(best[1]):
            best = (sol.x, res)
    return best


def find_equivalent_T(params: ModelParams, termination_eq: EquilibriumResult, T_max: int = 50,
                      x_star=None, tol: float = 1e-6) -> EquivalenceReport:
    """Smallest integer T <= T_max at which the two mixes at x* can be re-solved so
    that both punishment indifference residuals vanish, holding the termination
    continuation values fixed.

    The bracket is (T - 1, T): the largest length that cannot be matched and the
    smallest that can.
    """
    x = x_star or termination_eq.mixing_point
    if x is None:
        raise NoRootInBox("termination equilibrium has no interior mixing point")
    s0, r0 = termination_eq.policies.at(x[0], x[1])
    s0, r0 = float(s0[0]), float(r0[0])
    vals = termination_eq.values
    norms = []
    for T in range(0, T_max + 1):
        z, res = _adjust_mixes(x, T, params, vals, s0, r0)
        nrm = float(np.linalg.norm(res))
        norms.append(nrm)
        if nrm <= tol:
            return EquivalenceReport(T, (T - 1, T), tuple(x), (s0, r0), (float(z[0]), float(z[1])),
                                     (float(res[0]), float(res[1])), norms)
    raise NoTWithinCap("no T within cap")


def implied_cutoffs(params: ModelParams, T: int, n_lam: int, cfg: SolverConfig | None = None,
                    x0=None) -> tuple[EquilibriumResult, tuple[float, float] | None]:
    """Solve the punishment equilibrium with chain length T and locate its mixing point."""
    K = punishment_kernel(params, PunishmentSpec(T), n_lam)
    eq = solve_equilibrium(K, cfg)
    try:
        ms = solve_mixing_point(params, eq, x0=x0, kernel=K)
        return eq, ms.x_star
    except NoRootInBox:
        return eq, None
