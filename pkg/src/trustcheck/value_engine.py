"""Transition kernels, policy evaluation, action differences and equilibrium computation.

A kernel is a thin descriptor (variant code, parameter vector, punishment
chain, state space) over the compiled branch lists in ``_kernels``. Every
operator here is a sum over those branches, so action differences, node
solves, evaluation and simulation always agree with each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .core_model import (NORMAL, TERMINATED, EquilibriumResult, ModelParams, PolicyField,
                         StateSpace, ValueField)

TRUTH, DECEIVE = 0, 1
TRUST, CHECK = 0, 1
SCAN = np.linspace(0.0, 1.0, 17)


class NoConvergence(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


def param_vector(p: ModelParams) -> np.ndarray:
    v = np.zeros(K.NPAR)
    v[K.P_B], v[K.P_C], v[K.P_R], v[K.P_DELTA] = p.B, p.C, p.R, p.delta
    v[K.P_MU0], v[K.P_Q], v[K.P_PIT], v[K.P_PID] = p.mu0, p.q, p.pi_T, p.pi_D
    v[K.P_EPS], v[K.P_KAP] = p.eps_alarm, p.kappa_alarm
    return v


@dataclass
class LeafTable:
    """Padded branch lists for a batch of states (see ``_kernels`` column codes)."""

    prob: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    u_s: np.ndarray
    u_r: np.ndarray
    a_s: np.ndarray
    a_r: np.ndarray
    mode: np.ndarray
    event: np.ndarray
    count: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.prob.shape[1])[None, :] < self.count[:, None]


class TransitionKernel:
    """Branch structure of one model variant on a state space.

    ``pun`` switches detection from termination to the punishment chain of the
    space (``space.T`` periods of mandatory inspection, then reset to (lam, 0)).
    """

    kind = K.BASELINE
    name = "baseline"
    ordered = True

    def __init__(self, params: ModelParams, space: StateSpace, punish: bool = False):
        self.params = params
        self.space = space
        self.punish = bool(punish)
        if space.T > 0 and not punish:
            raise ValueError("punishment nodes need punish=True")
        self.par = param_vector(params)
        self._lam = space.lam
        self._mu = space.mu
        self._mode = space.mode
        self._geo = np.array([space.n_lam, space.n_mu, int(space.one_d), space.n_normal], dtype=np.int64)
        self._scratch = K.make_scratch()

    # -- structure ----------------------------------------------------------
    def all(self):
        return np.arange(self.space.size)

    def forced(self) -> tuple[np.ndarray, np.ndarray]:
        """Forced policies, NaN where free. Punishment nodes: truth and check."""
        n = self.space.size
        fs, fr = np.full(n, np.nan), np.full(n, np.nan)
        pun = self._mode >= 1
        fs[pun], fr[pun] = 0.0, 1.0
        return fs, fr

    def order(self) -> np.ndarray:
        """Node order for Gauss-Seidel passes."""
        sp_ = self.space
        n, m = sp_.n_lam, sp_.n_mu
        if sp_.one_d:
            normal = np.arange(n - 1, -1, -1)
        else:
            # mu = 0 slice by descending lambda, then anti-diagonals from the top corner
            parts = [sp_.normal_index(np.arange(n - 1, -1, -1), 0)]
            ii = np.arange(n)
            for s in range(n + m - 2, 0, -1):
                jj = s - ii
                ok = (jj >= 1) & (jj < m)
                if ok.any():
                    parts.append(sp_.normal_index(ii[ok], jj[ok]))
            normal = np.concatenate(parts)
        pun = np.arange(sp_.n_normal, sp_.size)[::-1]
        return np.concatenate([pun, normal]).astype(np.int64)

    @property
    def one_pass(self) -> bool:
        """True when successors always precede a node in ``order`` (self-loops aside)."""
        return self.ordered and self.space.T == 0

    # -- branch lists ---------------------------------------------------------
    def leaf_table(self, sel, sigma, rho) -> LeafTable:
        sel = np.atleast_1d(np.asarray(sel, dtype=np.int64))
        return self.leaf_table_at(self._lam[sel], self._mu[sel], self._mode[sel], sigma, rho)

    def leaf_table_at(self, lam, mu, mode, sigma, rho) -> LeafTable:
        """Branch lists at arbitrary (possibly off-grid) states."""
        lam = np.atleast_1d(np.asarray(lam, float))
        n = lam.size
        b = lambda a, dt=float: np.ascontiguousarray(np.broadcast_to(np.asarray(a, dt), (n,)))
        F, I, cnt = K.leaf_table(self.kind, self.par, int(self.punish), self.space.T, b(lam), b(mu),
                                 b(mode, np.int64), b(sigma), b(rho))
        return LeafTable(F[..., K.F_PROB], F[..., K.F_LAM], F[..., K.F_MU], F[..., K.F_US], F[..., K.F_UR],
                         I[..., K.I_AS], I[..., K.I_AR], I[..., K.I_MODE], I[..., K.I_EV], cnt)

    def check_weight(self, sel, rho):
        """Check probability faced by a strategic sender at nodes ``sel``."""
        mu = self._mu[sel]
        return mu + (1.0 - mu) * np.asarray(rho)

    def truth_weight(self, sel, sigma):
        lam = self._lam[sel]
        return lam + (1.0 - lam) * (1.0 - np.asarray(sigma))

    def joint_weights(self, sel, sigma, rho) -> tuple[LeafTable, np.ndarray]:
        """Leaf table and each leaf's unconditional probability under (sigma, rho)."""
        sel = np.atleast_1d(np.asarray(sel, dtype=np.int64))
        sigma = np.broadcast_to(np.asarray(sigma, float), sel.shape)
        rho = np.broadcast_to(np.asarray(rho, float), sel.shape)
        lt = self.leaf_table(sel, sigma, rho)
        pc = self.check_weight(sel, rho)[:, None]
        lam = self._lam[sel][:, None]
        ps = np.where(lt.a_s == DECEIVE, (1 - lam) * sigma[:, None], 1 - (1 - lam) * sigma[:, None])
        pr = np.where(lt.a_r == CHECK, pc, 1 - pc)
        return lt, np.where(lt.valid, lt.prob * ps * pr, 0.0)

    def hazard(self, sel, sigma, rho):
        """Per-period termination probability at nodes ``sel`` (honest and strategic senders)."""
        lt, w = self.joint_weights(sel, sigma, rho)
        return np.sum(np.where(lt.mode == TERMINATED, w, 0.0), axis=1)

    def detection_rate(self, sel, sigma, rho):
        """Per-period probability of a detected-deception branch."""
        lt, w = self.joint_weights(sel, sigma, rho)
        return np.sum(np.where(lt.event == K.EV_DETECT, w, 0.0), axis=1)

    # -- compiled calls -------------------------------------------------------
    def _args(self):
        return (self.kind, self.par, int(self.punish), self.space.T, self._geo, self._lam, self._mu, self._mode)


class BaselineKernel(TransitionKernel):
    """Public checks with perfect verification; detected deception terminates
    (or starts the punishment chain)."""


def monotone_blocks(space: StateSpace) -> list[np.ndarray]:
    """Sweep order of the Normal nodes as blocks of mutually independent nodes."""
    n, m = space.n_lam, space.n_mu
    if space.one_d:
        return [np.array([i]) for i in range(n - 1, -1, -1)]
    out = [np.array([space.normal_index(i, 0)]) for i in range(n - 1, -1, -1)]
    ii = np.arange(n)
    for s in range(n + m - 2, 0, -1):
        jj = s - ii
        ok = (jj >= 1) & (jj < m)
        if ok.any():
            out.append(space.normal_index(ii[ok], jj[ok]))
    return out


# ---------------------------------------------------------------------------
# evaluation


def bellman_system(kernel: TransitionKernel, policies: PolicyField):
    """Rewards and sparse transition matrices (r_s, P_s, r_r, P_r) for fixed policies."""
    fl, il, si, sw, _ = kernel._scratch
    rs, rr, rows, cols, ps, pr = K.bellman_coo(*kernel._args(), np.ascontiguousarray(policies.sigma),
                                               np.ascontiguousarray(policies.rho), fl, il, si, sw)
    n = kernel.space.size
    Ps = sp.csr_matrix((ps, (rows, cols)), shape=(n, n))
    Pr = sp.csr_matrix((pr, (rows, cols)), shape=(n, n))
    return rs, Ps, rr, Pr


def evaluate_policies(kernel: TransitionKernel, policies: PolicyField, tol: float = 1e-10,
                      v0: ValueField | None = None, max_iter: int | None = None) -> ValueField:
    """Fixed point of the policy-evaluation operator by successive approximation."""
    p = kernel.params
    d = p.delta
    rs, Ps, rr, Pr = bellman_system(kernel, policies)
    vs = np.zeros_like(rs) if v0 is None else v0.v_s.copy()
    vr = np.zeros_like(rr) if v0 is None else v0.v_r.copy()
    if max_iter is None:
        vmax = max(p.v_max, 1.0)
        max_iter = int(math.ceil(math.log(tol * (1 - d) / (10 * vmax)) / math.log(d))) + 50
    for _ in range(max_iter):
        ns = rs + d * (Ps @ vs)
        nr = rr + d * (Pr @ vr)
        gap = max(np.max(np.abs(ns - vs)), np.max(np.abs(nr - vr)))
        vs, vr = ns, nr
        # a posteriori bound on the distance to the fixed point
        if gap * d / (1 - d) <= tol:
            return ValueField(kernel.space, vs, vr)
    raise NoConvergence("no convergence in policy evaluation")


def apply_bellman(kernel: TransitionKernel, policies: PolicyField, values: ValueField) -> ValueField:
    """One application of the evaluation operator."""
    d = kernel.params.delta
    rs, Ps, rr, Pr = bellman_system(kernel, policies)
    return ValueField(kernel.space, rs + d * (Ps @ values.v_s), rr + d * (Pr @ values.v_r))


# ---------------------------------------------------------------------------
# action differences


@dataclass
class ActionDiffs:
    delta_s: np.ndarray
    delta_r: np.ndarray


def branch_values(kernel, values: ValueField, sel, sigma, rho):
    """Action values (Q_s truth, Q_s deceive, Q_r trust, Q_r check) at nodes ``sel``."""
    sel = np.atleast_1d(np.asarray(sel, dtype=np.int64))
    sigma = np.ascontiguousarray(np.broadcast_to(np.asarray(sigma, float), sel.shape))
    rho = np.ascontiguousarray(np.broadcast_to(np.asarray(rho, float), sel.shape))
    out = np.zeros((4, sel.size))
    K.action_diffs(*kernel._args(), sel, sigma, rho, values.v_s, values.v_r, *kernel._scratch, out)
    return out[0], out[1], out[2], out[3]


def action_differences(kernel, policies: PolicyField | None, values: ValueField, sel=None,
                       sigma=None, rho=None) -> ActionDiffs:
    """Deceive-minus-truth and check-minus-trust values at nodes ``sel``.

    ``sigma``/``rho`` override the policies at those nodes (own-mix probes).
    """
    sel = kernel.all() if sel is None else np.atleast_1d(np.asarray(sel))
    s = policies.sigma[sel] if sigma is None else sigma
    r = policies.rho[sel] if rho is None else rho
    qt, qd, qtr, qc = branch_values(kernel, values, sel, s, r)
    return ActionDiffs(qd - qt, qc - qtr)


def local_solve(kernel, values: ValueField, sel, sigma, rho):
    """Node values consistent with their own self-loops, plus both action differences.

    Successor weight that lands back on the node itself is solved out exactly;
    every other successor value is read from ``values``.
    """
    sel = np.atleast_1d(np.asarray(sel, dtype=np.int64))
    sigma = np.broadcast_to(np.asarray(sigma, float), sel.shape)
    rho = np.broadcast_to(np.asarray(rho, float), sel.shape)
    fl, il, si, sw, co = kernel._scratch
    out = np.zeros((4, sel.size))
    for a, n in enumerate(sel):
        K.coeffs(*kernel._args(), n, sigma[a], rho[a], values.v_s, values.v_r, fl, il, si, sw, co)
        out[:, a] = K.solve_node(sigma[a], rho[a], co)
    return out[0], out[1], out[2], out[3]


def node_residuals(kernel, policies: PolicyField, values: ValueField) -> tuple[np.ndarray, np.ndarray]:
    """Gain from a one-step deviation to the better pure action, per node and player."""
    diffs = action_differences(kernel, policies, values)
    s, r = policies.sigma, policies.rho
    es = np.maximum(diffs.delta_s, 0) * (1 - s) + np.maximum(-diffs.delta_s, 0) * s
    er = np.maximum(diffs.delta_r, 0) * (1 - r) + np.maximum(-diffs.delta_r, 0) * r
    fs, fr = kernel.forced()
    es[~np.isnan(fs)] = 0.0
    er[~np.isnan(fr)] = 0.0
    return es, er


def own_mix_root(kernel, policies: PolicyField, values: ValueField, sel, player: str,
                 iters: int = 60) -> np.ndarray:
    """Own mixing probability zeroing the player's own difference at nodes ``sel``.

    Bisection on [0, 1] with the own mix entering the branch weights and
    posteriors; where the difference does not change sign the endpoint with
    the smaller |difference| is returned.
    """
    sel = np.atleast_1d(np.asarray(sel, dtype=np.int64))

    def f(x):
        if player == "sender":
            return action_differences(kernel, policies, values, sel, sigma=x).delta_s
        return action_differences(kernel, policies, values, sel, rho=x).delta_r

    lo, hi = np.zeros(sel.size), np.ones(sel.size)
    flo, fhi = f(lo), f(hi)
    bracket = np.sign(flo) != np.sign(fhi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = np.sign(fm) == np.sign(flo)
        lo, flo = np.where(left, mid, lo), np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    end = np.where(np.abs(f(np.zeros(sel.size))) <= np.abs(f(np.ones(sel.size))), 0.0, 1.0)
    return np.where(bracket, 0.5 * (lo + hi), end)


def best_reply_update(kernel, policies: PolicyField, values: ValueField, damping: float = 0.3,
                      mix_band: float = 0.0) -> PolicyField:
    """Damped simultaneous best replies. Outside the band the target is the pure
    best action; inside it, the own mix that restores indifference."""
    diffs = action_differences(kernel, policies, values)
    fs, fr = kernel.forced()

    def target(d, cur, player, free):
        t = np.where(d > mix_band, 1.0, np.where(d < -mix_band, 0.0, cur))
        band = np.nonzero((np.abs(d) <= mix_band) & free)[0]
        if band.size and mix_band > 0:
            t[band] = own_mix_root(kernel, policies, values, band, player)
        return t

    ts = target(diffs.delta_s, policies.sigma, "sender", np.isnan(fs))
    tr = target(diffs.delta_r, policies.rho, "receiver", np.isnan(fr))
    ns = (1 - damping) * policies.sigma + damping * ts
    nr = (1 - damping) * policies.rho + damping * tr
    ns = np.where(np.isnan(fs), ns, fs)
    nr = np.where(np.isnan(fr), nr, fr)
    return PolicyField(policies.space, np.clip(ns, 0, 1), np.clip(nr, 0, 1))


# ---------------------------------------------------------------------------
# node-local equilibria and ordered sweeps


def local_equilibrium(kernel, values: ValueField, sel, selection: str = "lenient", scan=SCAN):
    """Equilibrium of the one-shot game at each node of ``sel`` given the other nodes' values.

    The sender's own difference falls in own sigma, so sigma_br(rho) is a
    function. Along it g(rho) = Delta_r(sigma_br(rho), rho), and rho is
    consistent when rho = 1 with g >= 0, rho = 0 with g <= 0, or g = 0.
    "deterrent" takes the consistent rho closest to 1, "lenient" the one
    closest to 0. Returns (sigma, rho, V_s, V_r).
    """
    sel = np.atleast_1d(np.asarray(sel, dtype=np.int64))
    vs, vr = values.v_s.copy(), values.v_r.copy()
    sig, rho = np.zeros(kernel.space.size), np.zeros(kernel.space.size)
    fs = np.full(kernel.space.size, np.nan)
    K.sweep_pass(*kernel._args(), sel, fs, fs, selection == "deterrent", np.asarray(scan, float),
                 sig, rho, vs, vr, *kernel._scratch)
    return sig[sel], rho[sel], vs[sel], vr[sel]


@dataclass
class SolverConfig:
    tol_V: float = 1e-10
    tol_eq: float = 1e-6
    method: str = "sweep"  # or "best_reply"
    selection: str = "deterrent"
    damping: float = 0.3
    mix_band: float = 0.0
    max_iter: int = 2000
    max_passes: int = 500
    seed_sigma: float = 0.5
    seed_rho: float = 0.5
    mix_tol: float = 1e-6
    polish_after: int = 60
    node_search: str = "reply"  # or "exhaustive"


def sweep_solve(kernel, cfg: SolverConfig, init: PolicyField | None = None):
    """Gauss-Seidel passes of node-local equilibria in the kernel's node order.

    When every successor precedes its node in that order one pass is exact;
    otherwise passes repeat until values and policies settle.
    """
    if cfg.node_search not in ("reply", "exhaustive"):
        raise ValueError(f"unknown node_search {cfg.node_search!r}")
    space = kernel.space
    fs, fr = kernel.forced()
    sig = np.where(np.isnan(fs), 1.0, fs) if init is None else init.sigma.copy()
    rho = np.where(np.isnan(fr), 0.0, fr) if init is None else init.rho.copy()
    vals = evaluate_policies(kernel, PolicyField(space, sig, rho), tol=cfg.tol_V)
    vs, vr = vals.v_s.copy(), vals.v_r.copy()
    order = kernel.order()
    det = cfg.selection == "deterrent"
    trace = []
    settled = kernel.one_pass
    for _ in range(min(cfg.max_passes, cfg.polish_after)):
        old_pol = np.concatenate([sig, rho])
        change = K.sweep_pass(*kernel._args(), order, fs, fr, det, SCAN, sig, rho, vs, vr, *kernel._scratch,
                               cfg.node_search == "exhaustive")
        trace.append(float(change))
        if kernel.one_pass:
            break
        if change <= cfg.tol_V * 1e-2 and np.max(np.abs(np.concatenate([sig, rho]) - old_pol)) <= 1e-12:
            settled = True
            break
    pol = PolicyField(space, np.clip(sig, 0, 1), np.clip(rho, 0, 1))
    if not settled:
        # passes can cycle when nodes switch between equilibria; solve the offenders jointly
        pol = block_polish(kernel, pol, cfg)
    return pol, trace


def block_polish(kernel, pol: PolicyField, cfg: SolverConfig, rounds: int = 4, max_block: int = 80) -> PolicyField:
    """Joint solve of the policies at nodes that are not node-consistent.

    Each round takes the offending nodes (plus two index neighbours on a 1-D
    space) and zeroes the projected fixed-point map z - clip(z + difference)
    by bounded least squares, re-evaluating all values exactly at every call.
    """
    from scipy.optimize import least_squares

    space = kernel.space
    fs, fr = kernel.forced()
    free = np.isnan(fs) & np.isnan(fr)
    for _ in range(rounds):
        vals = evaluate_policies(kernel, pol, tol=cfg.tol_V)
        es, er = node_residuals(kernel, pol, vals)
        bad = np.nonzero(np.maximum(es, er) > cfg.tol_eq * 1e-3)[0]
        if len(bad) == 0:
            break
        if space.one_d:
            bad = np.concatenate([bad + d for d in range(-2, 3)])
        blk = np.unique(bad[(bad >= 0) & (bad < space.n_normal)])
        blk = blk[free[blk]][:max_block]
        m = len(blk)

        def F(z, blk=blk, m=m):
            s, r = pol.sigma.copy(), pol.rho.copy()
            s[blk], r[blk] = z[:m], z[m:]
            P = PolicyField(space, s, r)
            d = action_differences(kernel, P, evaluate_policies(kernel, P, tol=cfg.tol_V * 1e-3), blk)
            return np.concatenate([z[:m] - np.clip(z[:m] + d.delta_s, 0, 1),
                                   z[m:] - np.clip(z[m:] + d.delta_r, 0, 1)])

        z0 = np.concatenate([pol.sigma[blk], pol.rho[blk]])
        sol = least_squares(F, z0, bounds=(0, 1), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * (2 * m + 1))
        s, r = pol.sigma.copy(), pol.rho.copy()
        s[blk], r[blk] = sol.x[:m], sol.x[m:]
        pol = PolicyField(space, s, r)
    return pol


def solve_equilibrium(kernel: TransitionKernel, cfg: SolverConfig | None = None,
                      init: PolicyField | None = None, raise_on_fail: bool = False) -> EquilibriumResult:
    """Stationary equilibrium on the kernel's state space.

    ``method="sweep"`` runs node-local equilibrium passes; ``method="best_reply"``
    runs damped simultaneous best replies. Either way the result is re-evaluated
    exactly and its one-step deviation residual reported.
    """
    cfg = cfg or SolverConfig()
    space = kernel.space
    fs, fr = kernel.forced()
    trace: list[float] = []
    if cfg.method == "sweep":
        pol, trace = sweep_solve(kernel, cfg, init)
        vals = evaluate_policies(kernel, pol, tol=cfg.tol_V)
        es, er = node_residuals(kernel, pol, vals)
        res = float(max(es.max(), er.max()))
        it = len(trace)
    elif cfg.method == "best_reply":
        pol = init or PolicyField.constant(space, cfg.seed_sigma, cfg.seed_rho)
        pol = PolicyField(space, np.where(np.isnan(fs), pol.sigma, fs), np.where(np.isnan(fr), pol.rho, fr))
        vals = None
        res = math.inf
        it = 0
        for it in range(1, cfg.max_iter + 1):
            vals = evaluate_policies(kernel, pol, tol=min(cfg.tol_V, cfg.tol_eq * 1e-2), v0=vals)
            es, er = node_residuals(kernel, pol, vals)
            res = float(max(es.max(), er.max()))
            trace.append(res)
            if res <= cfg.tol_eq:
                break
            pol = best_reply_update(kernel, pol, vals, cfg.damping, cfg.mix_band)
    else:
        raise ValueError(f"unknown method {cfg.method!r}")
    converged = res <= cfg.tol_eq
    if not converged and raise_on_fail:
        raise NoConvergence(f"not converged: residual {res:.3g}", trace)
    out = EquilibriumResult(kernel.params, pol, vals, res, it, converged, trace, kernel_name=kernel.name)
    out.mixing_nodes = mixing_region(kernel, out, cfg.mix_tol)
    out.mixing_point = nearest_mixing_point(space, out.mixing_nodes, kernel.params)
    out.diagnostics["monotonicity"] = monotonicity_report(vals, pol)
    out.diagnostics["method"] = cfg.method
    out.diagnostics["selection"] = cfg.selection
    return out


def mixing_region(kernel, eq: EquilibriumResult, tol: float = 1e-6) -> np.ndarray:
    """Normal nodes where both players mix and both action differences vanish."""
    diffs = action_differences(kernel, eq.policies, eq.values)
    s, r = eq.policies.sigma, eq.policies.rho
    slack = max(tol, eq.residual_sup) * 10
    m = ((s > tol) & (s < 1 - tol) & (r > tol) & (r < 1 - tol)
         & (np.abs(diffs.delta_s) <= slack) & (np.abs(diffs.delta_r) <= slack))
    m[kernel.space.n_normal:] = False
    return np.nonzero(m)[0]


def nearest_mixing_point(space: StateSpace, nodes: np.ndarray, params: ModelParams):
    """Coordinates of the mixing node closest to the prior (lambda0, mu0), or None.

    Discretized equilibria mix on a set of nodes rather than a single point;
    this picks a reproducible representative, preferring interior nodes.
    """
    if nodes is None or len(nodes) == 0:
        return None
    lam, mu = space.lam[nodes], space.mu[nodes]
    inner = (lam > 0) & (lam < 1) & ((mu > 0) & (mu < 1) if not space.one_d else True)
    if inner.any():
        nodes = nodes[inner]
    lam, mu = space.lam[nodes], space.mu[nodes]
    d = (lam - params.lambda0) ** 2 + (0.0 if space.one_d else (mu - params.mu0) ** 2)
    k = int(np.lexsort((nodes, np.round(d, 14)))[0])
    return float(lam[k]), float(mu[k])


# ---------------------------------------------------------------------------
# off-grid action values


def successor_values(space: StateSpace, field: np.ndarray, lam, mu, mode) -> np.ndarray:
    """Value at arbitrary successor states: 0 when terminated, interpolated otherwise
    (linearly in lambda along the punishment chain)."""
    lam = np.asarray(lam, float)
    mu = np.asarray(mu, float)
    mode = np.asarray(mode)
    out = np.zeros(lam.shape)
    nm = mode == NORMAL
    if nm.any():
        out[nm] = space.interp(field, lam[nm], None if space.one_d else mu[nm])
    for k in np.unique(mode[mode >= 1]):
        m = mode == k
        base = space.n_normal + (int(k) - 1) * space.n_lam
        out[m] = np.interp(lam[m], space.lam_axis, field[base:base + space.n_lam])
    return out


def q_values_at(kernel: TransitionKernel, values: ValueField, lam, mu, sigma, rho):
    """(Q_s truth, Q_s deceive, Q_r trust, Q_r check) at Normal states off the grid.

    Successor values are interpolated; no self-loop is solved out, so at grid
    nodes this agrees with ``branch_values`` only when ``values`` is a fixed point.
    """
    lam = np.atleast_1d(np.asarray(lam, float))
    n = lam.size
    mu = np.broadcast_to(np.asarray(mu, float), (n,))
    sigma = np.broadcast_to(np.asarray(sigma, float), (n,))
    rho = np.broadcast_to(np.asarray(rho, float), (n,))
    lt = kernel.leaf_table_at(lam, mu, np.zeros(n, np.int64), sigma, rho)
    d = kernel.params.delta
    sh = lt.prob.shape
    vs = successor_values(kernel.space, values.v_s, lt.lam.ravel(), lt.mu.ravel(), lt.mode.ravel()).reshape(sh)
    vr = successor_values(kernel.space, values.v_r, lt.lam.ravel(), lt.mu.ravel(), lt.mode.ravel()).reshape(sh)
    pc = (mu + (1 - mu) * rho)[:, None]
    pt = (lam + (1 - lam) * (1 - sigma))[:, None]
    w_s = np.where(lt.valid, lt.prob * np.where(lt.a_r == CHECK, pc, 1 - pc), 0.0)
    w_r = np.where(lt.valid, lt.prob * np.where(lt.a_s == TRUTH, pt, 1 - pt), 0.0)
    gs = w_s * (lt.u_s + d * vs)
    gr = w_r * (lt.u_r + d * vr)
    out = (np.sum(np.where(lt.a_s == TRUTH, gs, 0), 1), np.sum(np.where(lt.a_s == DECEIVE, gs, 0), 1),
           np.sum(np.where(lt.a_r == TRUST, gr, 0), 1), np.sum(np.where(lt.a_r == CHECK, gr, 0), 1))
    return out


# ---------------------------------------------------------------------------
# monotonicity diagnostics


@dataclass
class MonoCheck:
    name: str
    count: int
    max_violation: float
    locations: list = field(default_factory=list)


def _mono(a2: np.ndarray, axis: int, increasing: bool, slack: float, name: str) -> MonoCheck:
    d = np.diff(a2, axis=axis)
    viol = -d if increasing else d
    bad = viol > slack
    locs = [tuple(int(v) for v in ij) for ij in np.argwhere(bad)[:20]]
    return MonoCheck(name, int(bad.sum()), float(max(viol.max(initial=0.0), 0.0)), locs)


def monotonicity_report(values: ValueField, policies: PolicyField, slack: float = 1e-7) -> dict:
    """Violation counts for the value and policy monotonicity properties."""
    sp_ = values.space
    vs, vr = sp_.as_grid(values.v_s), sp_.as_grid(values.v_r)
    s, r = sp_.as_grid(policies.sigma), sp_.as_grid(policies.rho)
    checks = [
        _mono(vs, 0, True, slack, "V_s nondecreasing in lambda"),
        _mono(vr, 0, True, slack, "V_r nondecreasing in lambda"),
        _mono(r, 0, False, slack, "rho nonincreasing in lambda"),
    ]
    if not sp_.one_d:
        checks += [
            _mono(vs, 1, False, slack, "V_s nonincreasing in mu"),
            _mono(vr, 1, True, slack, "V_r nondecreasing in mu"),
            _mono(s, 1, False, slack, "sigma nonincreasing in mu"),
        ]
    return {c.name: c for c in checks}


def total_violations(report: dict) -> int:
    return sum(c.count for c in report.values())
