"""Indifference residuals, the joint mixing point, the closed-form benchmark,
comparative-statics sweeps and hazards."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_model import EquilibriumResult, ModelParams, StateSpace, ValueField, PolicyField, validate_params
from .value_engine import BaselineKernel, SolverConfig, TransitionKernel, q_values_at, solve_equilibrium


class NoRootInBox(RuntimeError):
    pass


def _kernel_for(params: ModelParams, space: StateSpace, kernel: TransitionKernel | None):
    if kernel is not None:
        return kernel
    return BaselineKernel(params, space, punish=space.T > 0)


def indifference_residuals(x, params: ModelParams, values: ValueField, policies: PolicyField,
                           kernel: TransitionKernel | None = None) -> tuple[float, float]:
    """(F_s, F_r) at a Normal state x = (lambda, mu), possibly off the grid.

    F_s is the sender's one-shot deception gain net of the continuation it
    forfeits (deceive minus truth); F_r is the check cost net of the
    continuation gain from checking (trust minus check). Policies at x are
    interpolated like values.
    """
    K = _kernel_for(params, values.space, kernel)
    lam, mu = float(x[0]), float(x[1]) if len(x) > 1 else K.space.mu_fixed
    s, r = policies.at(lam, None if K.space.one_d else mu)
    qt, qd, qtr, qc = q_values_at(K, values, lam, mu, s, r)
    return float(qd[0] - qt[0]), float(qtr[0] - qc[0])


def hazard_rate(p_check, lam, sigma):
    """Per-period termination probability p_check (1 - lambda) sigma."""
    return np.asarray(p_check) * (1.0 - np.asarray(lam)) * np.asarray(sigma)


def hazard(x, policies: PolicyField, params: ModelParams, kernel: TransitionKernel | None = None) -> float:
    """Termination hazard at x under the policies, read off the kernel's branches
    (so noisy detection scales it by pi_D)."""
    K = _kernel_for(params, policies.space, kernel)
    lam = float(x[0])
    mu = float(x[1]) if len(x) > 1 else K.space.mu_fixed
    s, r = policies.at(lam, None if K.space.one_d else mu)
    lt = K.leaf_table_at(lam, mu, 0, s, r)
    pc = mu + (1 - mu) * r
    pt = lam + (1 - lam) * (1 - s)
    w = lt.prob * np.where(lt.a_s == 1, 1 - pt, pt)[...] * np.where(lt.a_r == 1, pc, 1 - pc)
    return float(np.sum(np.where(lt.valid & (lt.mode == -1), w, 0.0)))


# ---------------------------------------------------------------------------
# joint mixing point


@dataclass
class MixingSolution:
    x_star: tuple[float, float]
    residuals: tuple[float, float]
    jacobian: np.ndarray
    det: float
    locally_unique: bool
    sign_conditions: dict = field(default_factory=dict)
    jacobian_stable: bool = True
    iterations: int = 0
    method: str = "newton"


def _jac(F, x, h, lo, hi):
    J = np.zeros((2, 2))
    for k in range(2):
        e = np.zeros(2)
        a = min(h, x[k] - lo[k], hi[k] - x[k])
        if a <= 0:
            a = h
        e[k] = a
        J[:, k] = (np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * a)
    return J


def solve_mixing_point(params: ModelParams, eq: EquilibriumResult, x0=None, kernel=None,
                       tol: float = 1e-8, h: float = 1e-4, tol_det: float = 1e-8,
                       max_iter: int = 60, mu_cap: bool = False) -> MixingSolution:
    """Joint root of (F_s, F_r) by damped Newton with a central-difference Jacobian.

    The search box is (0,1)^2. ``mu_cap`` narrows mu to (0, min(1, (1-delta)/delta)],
    which is valid only when the benchmark's continuation jump B/(1-delta)
    holds. When Newton stalls, the fallback alternates bisections along each
    indifference locus (lambda for F_r, then mu for F_s).
    """
    K = _kernel_for(params, eq.values.space, kernel)
    if x0 is None:
        x0 = eq.mixing_point or (params.lambda0, params.mu0)
    x0 = np.array(x0, float)
    if not (0 < x0[0] < 1 and 0 < x0[1] < 1):
        raise NoRootInBox("no root in box")
    mu_max = min(1.0 - 1e-9, (1 - params.delta) / params.delta) if mu_cap else 1.0 - 1e-9
    lo = np.array([1e-9, 1e-9])
    hi = np.array([1 - 1e-9, mu_max])
    x0[1] = min(x0[1], mu_max)

    def F(x):
        return np.array(indifference_residuals(x, params, eq.values, eq.policies, K))

    x = x0.copy()
    f = F(x)
    it = 0
    method = "newton"
    for it in range(1, max_iter + 1):
        if np.linalg.norm(f) <= tol:
            break
        J = _jac(F, x, h, lo, hi)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        while t > 1e-6:
            xn = np.clip(x + t * step, lo, hi)
            fn = F(xn)
            if np.linalg.norm(fn) < np.linalg.norm(f):
                break
            t *= 0.5
        else:
            break
        x, f = xn, fn
    if np.linalg.norm(f) > tol:
        x, f = _locus_bisection(F, x0, lo, hi, tol)
        method = "bisection"
    J = _jac(F, x, h, lo, hi)
    J2 = _jac(F, x, 1e-3, lo, hi)
    det = float(np.linalg.det(J))
    stable = bool(np.allclose(J, J2, rtol=0.1, atol=1e-6))
    signs = {"dF_s/dmu<0": bool(J[0, 1] < 0), "dF_r/dlambda<0": bool(J[1, 0] < 0)}
    return MixingSolution((float(x[0]), float(x[1])), (float(f[0]), float(f[1])), J, det,
                          abs(det) > tol_det, signs, stable, it, method)


def _bisect(g, a, b, ga, gb, tol=1e-13):
    for _ in range(200):
        m = 0.5 * (a + b)
        gm = g(m)
        if gm == 0 or b - a < tol:
            return m
        if (gm > 0) == (ga > 0):
            a, ga = m, gm
        else:
            b, gb = m, gm
    return 0.5 * (a + b)


def _scan_root(g, a, b, near, n=41):
    """Root of g on [a, b] from the sign change closest to ``near``."""
    xs = np.linspace(a, b, n)
    gs = np.array([g(v) for v in xs])
    best = None
    for k in range(n - 1):
        if gs[k] == 0 or (gs[k] > 0) != (gs[k + 1] > 0):
            c = 0.5 * (xs[k] + xs[k + 1])
            if best is None or abs(c - near) < abs(best[0] - near):
                best = (c, k)
    if best is None:
        return None
    k = best[1]
    if gs[k] == 0:
        return xs[k]
    return _bisect(g, xs[k], xs[k + 1], gs[k], gs[k + 1])


def _locus_bisection(F, x0, lo, hi, tol, rounds=40):
    x = x0.copy()
    f = F(x)
    for _ in range(rounds):
        lam = _scan_root(lambda v: F(np.array([v, x[1]]))[1], lo[0], hi[0], x[0])
        if lam is None:
            raise NoRootInBox("no root in box")
        x[0] = lam
        mu = _scan_root(lambda v: F(np.array([x[0], v]))[0], lo[1], hi[1], x[1])
        if mu is None:
            raise NoRootInBox("no root in box")
        x[1] = mu
        f = F(x)
        if np.linalg.norm(f) <= tol:
            return x, f
    if np.linalg.norm(f) > 1e3 * tol:
        raise NoRootInBox("no root in box")
    return x, f


def policy_cutoffs(eq: EquilibriumResult, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Cutoff curves of a 2-D equilibrium on the grid.

    lambda*(mu) per mu node: the largest lambda at which the receiver still
    checks (rho > tol), NaN if it never checks. mu*(lambda) per lambda node:
    the largest mu at which the sender still deceives (sigma > tol), NaN if never.
    """
    sp = eq.space
    r = sp.as_grid(eq.policies.rho) > tol
    s = sp.as_grid(eq.policies.sigma) > tol

    def top(mask, axis_vals, axis):
        m = np.moveaxis(mask, axis, -1)
        idx = m.shape[-1] - 1 - np.argmax(m[..., ::-1], axis=-1)
        return np.where(m.any(axis=-1), axis_vals[idx], np.nan)

    return top(r, sp.lam_axis, 0), top(s, sp.mu_axis, 1)


# ---------------------------------------------------------------------------
# closed-form benchmark


@dataclass
class Benchmark:
    p_star: float
    lambda_star: float
    p_bounds: tuple[float, float]
    lambda_bounds: tuple[float, float]
    lambda_in_unit: bool
    eps_band: float


def closed_form_benchmark(params: ModelParams, sigma_bar: float, sigma_bar_prime: float,
                          eps_band: float | None = None) -> Benchmark:
    """One-step deterrence benchmark and its epsilon-band bounds."""
    gap = sigma_bar - sigma_bar_prime
    if not gap > 0:
        raise ValueError("gap nonpositive")
    eps = params.eps_band if eps_band is None else eps_band
    if not 0 <= eps < 1:
        raise ValueError("eps_band out of [0,1)")
    d, B, C = params.delta, params.B, params.C
    p_star = (1 - d) / d
    k = C / (d * B * p_star * gap)
    lam = 1 - k
    alt = 1 - C / ((1 - d) * B * gap)
    assert abs(lam - alt) <= 1e-12 * max(1.0, abs(lam)), "closed-form identity failed"
    return Benchmark(p_star, lam, (p_star / (1 + eps), p_star / (1 - eps)),
                     (lam, 1 - k * (1 - eps) / (1 + eps)), 0 < lam < 1, eps)


def benchmark_from_jump(params: ModelParams, J_low: float, J_high: float) -> tuple[float, float]:
    """Inspection bounds B/(delta J_high) <= p_check <= B/(delta J_low) from a
    bracket on the truthful-check continuation jump."""
    if not 0 < J_low <= J_high:
        raise ValueError("need 0 < J_low <= J_high")
    return params.B / (params.delta * J_high), params.B / (params.delta * J_low)


# ---------------------------------------------------------------------------
# comparative statics

SWEEP_HEADER = "param,lambda_star,mu_star,p_check,hazard,flags"
PREDICTED = {"B": ("+", None), "C": ("-", None), "delta": ("ambiguous", "-")}


@dataclass
class SweepRow:
    value: float
    lambda_star: float
    mu_star: float
    p_check: float
    hazard: float
    flags: str = ""


def comparative_statics_sweep(params: ModelParams, target: str, grid, mode: str = "benchmark",
                              sigma_bar: float = 1.0, sigma_bar_prime: float = 0.5,
                              space: StateSpace | None = None, cfg: SolverConfig | None = None):
    """Sweep one of B, C, delta. Returns (rows, sign_report).

    ``benchmark`` mode uses the closed form (mu* reported as NaN; hazard at
    p_star with sigma_bar). ``full`` mode solves the equilibrium on ``space`` and
    the joint mixing point at each value.
    """
    if target not in ("B", "C", "delta"):
        raise ValueError("target must be one of B, C, delta")
    rows = []
    for v in grid:
        p = validate_params(params.with_(**{target: float(v)}))
        if mode == "benchmark":
            bm = closed_form_benchmark(p, sigma_bar, sigma_bar_prime)
            flags = "" if bm.lambda_in_unit else "lambda_star outside (0,1)"
            h = float(hazard_rate(bm.p_star, bm.lambda_star, sigma_bar))
            rows.append(SweepRow(float(v), bm.lambda_star, math.nan, bm.p_star, h, flags))
        elif mode == "full":
            sp = space or StateSpace.grid2d(21)
            K = BaselineKernel(p, sp)
            eq = solve_equilibrium(K, cfg)
            try:
                ms = solve_mixing_point(p, eq, kernel=K)
            except NoRootInBox:
                rows.append(SweepRow(float(v), math.nan, math.nan, math.nan, math.nan, "no interior mixing"))
                continue
            lam, mu = ms.x_star
            s, r = eq.policies.at(lam, mu)
            pc = float(mu + (1 - mu) * r[0])
            flags = "" if eq.converged else "not converged"
            rows.append(SweepRow(float(v), lam, mu, pc, float(hazard_rate(pc, lam, s[0])), flags))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return rows, sign_report(rows, target, mode)


def sign_report(rows, target: str, mode: str) -> dict:
    """Observed finite-difference signs of lambda* and mu* against the predictions."""
    lam = np.array([r.lambda_star for r in rows])
    mu = np.array([r.mu_star for r in rows])

    def sgn(a):
        d = np.diff(a)
        d = d[np.isfinite(d)]
        if d.size == 0:
            return "n/a"
        if np.all(d > 0):
            return "+"
        if np.all(d < 0):
            return "-"
        if np.all(d >= 0):
            return "0+"
        if np.all(d <= 0):
            return "0-"
        return "mixed"

    pred_lam = {"B": "+", "C": "-", "delta": "-" if mode == "benchmark" else "ambiguous"}[target]
    pred_mu = "-" if target == "delta" and mode == "full" else "n/a"
    obs_lam, obs_mu = sgn(lam), sgn(mu)
    ok_lam = pred_lam == "ambiguous" or obs_lam in (pred_lam, "0" + pred_lam)
    ok_mu = pred_mu == "n/a" or obs_mu in (pred_mu, "0" + pred_mu)
    return {"lambda_star": (obs_lam, pred_lam, ok_lam), "mu_star": (obs_mu, pred_mu, ok_mu)}


def format_sweep(rows, fmt=lambda v: f"{v:.9g}") -> str:
    out = [SWEEP_HEADER]
    for r in rows:
        out.append(",".join([fmt(r.value), fmt(r.lambda_star), fmt(r.mu_star), fmt(r.p_check),
                             fmt(r.hazard), r.flags]))
    return "\n".join(out) + "\n"
