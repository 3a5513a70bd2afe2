"""Monte Carlo play of a stationary equilibrium: belief paths, inspections,
terminations, and the hazard, bunching, taper and welfare statistics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from . import _kernels as K
from .core_model import EquilibriumResult, ModelParams, PolicyField

EVENT_NAMES = ("trust", "check_truth", "check_deceive", "alarm", "disclosure", "false_alarm")
COLUMNS = ("path", "t", "lam", "mu", "mode", "sigma", "rho", "a_s", "a_r", "event", "terminal",
           "u_s", "u_r", "hazard")
UNIFORMS_PER_PERIOD = 4


class InsufficientEvents(RuntimeError):
    pass


@njit(cache=True)
def _terminal(cur_mode, nxt_mode):
    # ends the relationship, or opens a punishment phase
    return nxt_mode == K.TERMINATED or (cur_mode == K.NORMAL and nxt_mode >= 1)


@njit(cache=True)
def _simulate(kind, par, pun, T, geo, sig_f, rho_f, lam0, mu0, U, sched,
              o_lam, o_mu, o_mode, o_sig, o_rho, o_as, o_ar, o_ev, o_term, o_us, o_ur, o_h, length):
    n, H = o_lam.shape
    one_d = geo[2] == 1
    fl = np.zeros((K.MAXL, 5))
    il = np.zeros((K.MAXL, 4), dtype=np.int64)
    idx = np.zeros(4, dtype=np.int64)
    w = np.zeros(4)
    for p in range(n):
        honest = U[p, 0] < lam0
        vigilant = U[p, 1] < mu0
        lam, mu, mode = lam0, mu0, 0
        length[p] = H
        for t in range(H):
            base = 2 + UNIFORMS_PER_PERIOD * t
            if mode >= 1:
                s, r = 0.0, 1.0
            else:
                c = K.stencil(geo, lam, mu, 0, idx, w)
                s, r = 0.0, 0.0
                for j in range(c):
                    s += w[j] * sig_f[idx[j]]
                    r += w[j] * rho_f[idx[j]]
                r = min(1.0, r * sched[t])
            k = K.node_leaves(kind, par, pun, T, lam, mu, mode, s, r, fl, il)
            pd = (1.0 - lam) * s
            pc = mu + (1.0 - mu) * r
            h = 0.0
            for j in range(k):
                if _terminal(mode, il[j, K.I_MODE]):
                    h += (fl[j, K.F_PROB] * (pd if il[j, K.I_AS] == 1 else 1.0 - pd)
                          * (pc if il[j, K.I_AR] == 1 else 1.0 - pc))
            # vigilance on a 1-D space is a per-period check floor, as in its kernel
            vig = vigilant if not one_d else U[p, base + 3] < mu
            a_s = 0 if (honest or mode >= 1) else (1 if U[p, base] < s else 0)
            a_r = 1 if (vig or mode >= 1) else (1 if U[p, base + 1] < r else 0)
            tot = 0.0
            for j in range(k):
                if il[j, K.I_AS] == a_s and il[j, K.I_AR] == a_r:
                    tot += fl[j, K.F_PROB]
            u = U[p, base + 2] * tot
            pick = -1
            acc = 0.0
            for j in range(k):
                if il[j, K.I_AS] == a_s and il[j, K.I_AR] == a_r:
                    acc += fl[j, K.F_PROB]
                    pick = j
                    if u < acc:
                        break
            o_lam[p, t], o_mu[p, t], o_mode[p, t] = lam, mu, mode
            o_sig[p, t], o_rho[p, t], o_h[p, t] = s, r, h
            o_as[p, t], o_ar[p, t] = a_s, a_r
            o_us[p, t], o_ur[p, t] = fl[pick, K.F_US], fl[pick, K.F_UR]
            nxt = il[pick, K.I_MODE]
            o_term[p, t] = _terminal(mode, nxt)
            o_ev[p, t] = il[pick, K.I_EV]
            if nxt == K.TERMINATED:
                length[p] = t + 1
                break
            lam = fl[pick, K.F_LAM]
            mu = mu if one_d else fl[pick, K.F_MU]
            mode = nxt


@dataclass
class Ensemble:
    """Simulated paths as (n_paths, horizon) arrays; entries at t >= length are unused."""

    params: ModelParams
    kernel_name: str
    seed: int
    lam: np.ndarray
    mu: np.ndarray
    mode: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    a_s: np.ndarray
    a_r: np.ndarray
    event: np.ndarray
    terminal: np.ndarray
    u_s: np.ndarray
    u_r: np.ndarray
    hazard: np.ndarray
    length: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.lam.shape[0]

    @property
    def horizon(self) -> int:
        return self.lam.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.horizon)[None, :] < self.length[:, None]

    @property
    def terminated(self) -> np.ndarray:
        return self.terminal.any(axis=1)

    def public_event(self) -> np.ndarray:
        """Index into EVENT_NAMES for every entry."""
        ev = np.where(self.a_r == 1, np.where(self.a_s == 1, 2, 1), 0)
        ev = np.where(self.event == K.EV_ALARM, 3, ev)
        ev = np.where(self.event == K.EV_DISCLOSE, 4, ev)
        return np.where(self.event == K.EV_FALSE_ALARM, 5, ev)

    def write(self, path, digits: int = 9):
        """Columnar text, one row per (path, t), fixed header."""
        v = self.valid
        p, t = np.nonzero(v)
        cols = [p, t, self.lam[v], self.mu[v], self.mode[v], self.sigma[v], self.rho[v], self.a_s[v],
                self.a_r[v], self.public_event()[v], self.terminal[v].astype(int), self.u_s[v], self.u_r[v],
                self.hazard[v]]
        fmt = ["%d", "%d", f"%.{digits}g", f"%.{digits}g", "%d", f"%.{digits}g", f"%.{digits}g", "%d", "%d",
               "%d", "%d", f"%.{digits}g", f"%.{digits}g", f"%.{digits}g"]
        np.savetxt(path, np.column_stack(cols).astype(object), fmt=fmt, delimiter=",",
                   header=",".join(COLUMNS), comments="")


def default_horizon(params: ModelParams, tol: float = 1e-6) -> int:
    """Smallest horizon with truncation bound v_max * delta^H below tol."""
    return int(math.ceil(math.log(tol / params.v_max) / math.log(params.delta)))


def path_uniforms(seed: int, start: int, stop: int, horizon: int) -> np.ndarray:
    """Uniform draws for paths start..stop-1, each from its own stream keyed by (seed, path)."""
    out = np.empty((stop - start, 2 + UNIFORMS_PER_PERIOD * horizon))
    for i in range(start, stop):
        out[i - start] = np.random.default_rng(np.random.SeedSequence([seed, i])).random(out.shape[1])
    return out


def simulate_paths(eq: EquilibriumResult, kernel, horizon: int | None = None, n_paths: int = 10_000,
                   seed: int = 0, policies: PolicyField | None = None, rho_schedule=None,
                   chunk: int = 4096) -> Ensemble:
    """Play the stationary policies of ``eq`` (or ``policies``) from (lambda0, mu0).

    Types are drawn once per path; strategic actions come from the policies
    interpolated at the current public state; beliefs move by the kernel's
    branch list. ``rho_schedule[t]`` scales rho in period t (synthetic spurts).
    """
    if horizon is None:
        horizon = default_horizon(eq.params)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    pol = policies or eq.policies
    prm = kernel.params
    mu0 = kernel.space.mu_fixed if kernel.space.one_d else prm.mu0
    sched = np.ones(horizon) if rho_schedule is None else np.asarray(rho_schedule, float)[:horizon]
    n, H = n_paths, horizon
    arr = {k: np.zeros((n, H), dt) for k, dt in (("lam", float), ("mu", float), ("mode", np.int16),
                                                ("sigma", float), ("rho", float), ("a_s", np.int8),
                                                ("a_r", np.int8), ("event", np.int8), ("terminal", np.bool_),
                                                ("u_s", float), ("u_r", float), ("hazard", float))}
    length = np.zeros(n, dtype=np.int64)
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        U = path_uniforms(seed, a, b, H)
        sl = slice(a, b)
        _simulate(*kernel._args()[:5], np.ascontiguousarray(pol.sigma), np.ascontiguousarray(pol.rho),
                  prm.lambda0, mu0, U, sched, arr["lam"][sl], arr["mu"][sl], arr["mode"][sl], arr["sigma"][sl],
                  arr["rho"][sl], arr["a_s"][sl], arr["a_r"][sl], arr["event"][sl], arr["terminal"][sl],
                  arr["u_s"][sl], arr["u_r"][sl], arr["hazard"][sl], length[sl])
    return Ensemble(prm, kernel.name, seed, length=length, **arr)


# ---------------------------------------------------------------------------
# hazard


@dataclass
class HazardBin:
    i: int
    j: int
    visits: int
    observed: int
    expected: float
    se: float

    @property
    def z(self) -> float:
        return (self.observed - self.expected) / self.se if self.se > 0 else 0.0


def hazard_bins(ens: Ensemble, bins: int = 20, min_visits: int = 100) -> list[HazardBin]:
    """Observed terminal events per (lambda, mu) bin against the summed per-visit hazard.

    Only Normal-mode visits count. The standard error is sqrt(sum h (1 - h)).
    """
    v = ens.valid & (ens.mode == 0)
    lam, mu, h, term = ens.lam[v], ens.mu[v], ens.hazard[v], ens.terminal[v]
    bi = np.minimum((lam * bins).astype(int), bins - 1)
    bj = np.minimum((mu * bins).astype(int), bins - 1)
    key = bi * bins + bj
    cnt = np.bincount(key, minlength=bins * bins)
    obs = np.bincount(key, weights=term.astype(float), minlength=bins * bins)
    exp = np.bincount(key, weights=h, minlength=bins * bins)
    var = np.bincount(key, weights=h * (1 - h), minlength=bins * bins)
    out = []
    for k in np.nonzero(cnt >= min_visits)[0]:
        out.append(HazardBin(int(k // bins), int(k % bins), int(cnt[k]), int(round(obs[k])), float(exp[k]),
                             float(math.sqrt(var[k]))))
    return out


def hazard_formula(lam, mu, sigma, rho):
    """h = p_check (1 - lambda) sigma."""
    return (mu + (1 - mu) * rho) * (1 - lam) * sigma


# ---------------------------------------------------------------------------
# bunching and taper


@dataclass
class BunchingReport:
    ratio: float
    ci: tuple[float, float]
    threshold: float
    spurt_periods: int
    terminations: int


def _rolling_mean(x: np.ndarray, window: int) -> np.ndarray:
    c = np.cumsum(x, axis=1)
    out = c.copy()
    out[:, window:] = c[:, window:] - c[:, :-window]
    div = np.minimum(np.arange(1, x.shape[1] + 1), window)
    return out / div


def _bunching_counts(term, valid, post):
    return (term & post).sum(axis=1), (valid & post).sum(axis=1), term.sum(axis=1), valid.sum(axis=1)


def bunching_statistic(ens: Ensemble, window: int = 3, spurt_quantile: float = 0.9,
                       n_boot: int = 200, seed: int = 0) -> BunchingReport:
    """Termination frequency in the ``window`` periods from an inspection spurt, over the
    unconditional frequency.

    The inspection rate is the policy-implied check probability averaged over the
    last ``window`` periods; a spurt is a period where it reaches its
    ``spurt_quantile`` over all visited periods. When that marks no period or
    every period the ratio is 1.
    The interval is a path bootstrap percentile interval.
    """
    if ens.n_paths < 1000:
        raise ValueError("bunching needs at least 1000 paths")
    valid = ens.valid & (ens.mode == 0)
    term = ens.terminal & valid
    n_term = int(term.sum())
    if n_term < 30:
        raise InsufficientEvents("insufficient events")
    pc = np.where(valid, ens.mu + (1 - ens.mu) * ens.rho, 0.0)
    rate = _rolling_mean(pc, window)
    thr = float(np.quantile(rate[valid], spurt_quantile))
    spurt = valid & (rate >= thr - 1e-12)
    if not spurt.any() or spurt.sum() == valid.sum():
        return BunchingReport(1.0, (1.0, 1.0), thr, 0, n_term)
    # periods t..t+window-1 after a spurt at t
    post = spurt.copy()
    for d in range(1, window):
        post[:, d:] |= spurt[:, :-d]
    post &= valid
    a, b, c, d = _bunching_counts(term, valid, post)

    def ratio(ix):
        num, den = a[ix].sum() / max(b[ix].sum(), 1), c[ix].sum() / max(d[ix].sum(), 1)
        return num / den if den > 0 else math.nan

    r = ratio(slice(None))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    boots = np.array([ratio(rng.integers(0, ens.n_paths, ens.n_paths)) for _ in range(n_boot)])
    lo, hi = np.nanquantile(boots, [0.025, 0.975])
    return BunchingReport(float(r), (float(lo), float(hi)), thr, int(spurt.sum()), n_term)


@dataclass
class TaperReport:
    correlation: float
    ci: tuple[float, float]
    n: int


def taper_statistic(ens: Ensemble) -> TaperReport:
    """Spearman correlation between lambda_t and the realized check indicator over
    visited Normal-mode periods, with a Fisher-z interval (se 1.06 / sqrt(n - 3))."""
    v = ens.valid & (ens.mode == 0)
    x, y = ens.lam[v], ens.a_r[v].astype(float)
    n = x.size
    if n < 10 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return TaperReport(0.0, (0.0, 0.0), int(n))
    r = float(stats.spearmanr(x, y).statistic)
    z, se = math.atanh(max(min(r, 1 - 1e-15), -1 + 1e-15)), 1.06 / math.sqrt(n - 3)
    return TaperReport(r, (math.tanh(z - 1.96 * se), math.tanh(z + 1.96 * se)), int(n))


# ---------------------------------------------------------------------------
# welfare


@dataclass
class WelfareReport:
    W_mc: float
    W_formula: float
    identity_gap: float
    se: float
    se_gap: float
    hazard_identity_printed: float
    hazard_identity_corrected: float
    dW_dC: float
    dW_dB: float
    truncation_bound: float


def welfare_flows(ens: Ensemble, B: float, C: float):
    """(realized flow, expected flow S(x_t)) per entry; zero after the path ends.

    Realized: B on truthful trade in Normal mode minus C on every check.
    Expected: B p_T - C p_check, with p_T = 0 and p_check = 1 in punishment.
    """
    v = ens.valid
    normal = ens.mode == 0
    real = B * ((ens.a_s == 0) & normal) - C * (ens.a_r == 1)
    pT = np.where(normal, 1 - (1 - ens.lam) * ens.sigma, 0.0)
    pc = np.where(normal, ens.mu + (1 - ens.mu) * ens.rho, 1.0)
    return np.where(v, real, 0.0), np.where(v, B * pT - C * pc, 0.0)


def welfare_hazard_gaps(lam, mu, sigma, rho, B: float = 1.0):
    """Largest pointwise gaps between B p_T and the hazard forms of the flow's trade term.

    printed: B (1 - h - p_check lambda sigma); corrected: B (1 - h - (1 - p_check)(1 - lambda) sigma).
    """
    pc = mu + (1 - mu) * rho
    h = hazard_formula(lam, mu, sigma, rho)
    pT = 1 - (1 - lam) * sigma
    printed = B * (1 - h - pc * lam * sigma)
    corrected = B * (1 - h - (1 - pc) * (1 - lam) * sigma)
    return float(np.max(np.abs(B * pT - printed), initial=0.0)), float(np.max(np.abs(B * pT - corrected), initial=0.0))


def welfare_estimate(ens: Ensemble, params: ModelParams | None = None, h: float = 1e-3) -> WelfareReport:
    """Discounted Monte Carlo welfare against the expected-flow formula on the same paths.

    dW/dC and dW/dB re-price the same ensemble with policies frozen (central differences).
    """
    p = params or ens.params
    disc = p.delta ** np.arange(ens.horizon)

    def totals(B, C):
        real, form = welfare_flows(ens, B, C)
        return real @ disc, form @ disc

    wr, wf = totals(p.B, p.C)
    n = ens.n_paths
    v = ens.valid & (ens.mode == 0)
    gp, gc = welfare_hazard_gaps(ens.lam[v], ens.mu[v], ens.sigma[v], ens.rho[v], p.B)
    dC = (totals(p.B, p.C + h)[1].mean() - totals(p.B, p.C - h)[1].mean()) / (2 * h)
    dB = (totals(p.B + h, p.C)[1].mean() - totals(p.B - h, p.C)[1].mean()) / (2 * h)
    return WelfareReport(float(wr.mean()), float(wf.mean()), float(abs(wr.mean() - wf.mean())),
                         float(wr.std(ddof=1) / math.sqrt(n)), float((wr - wf).std(ddof=1) / math.sqrt(n)),
                         gp, gc, float(dC), float(dB), float(p.v_max * p.delta ** ens.horizon))
