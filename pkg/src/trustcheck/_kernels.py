"""Compiled per-node kernel layer.

Each model variant's branch list is written once here as a scalar function
(``node_leaves``). Evaluation, action differences, node-local equilibria and
the simulator's branch tables are all built on it.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

BASELINE, SILENT, NOISY_A, NOISY_B, LEAKAGE, ALARM = range(6)
P_B, P_C, P_R, P_DELTA, P_MU0, P_Q, P_PIT, P_PID, P_EPS, P_KAP = range(10)
NPAR = 10
MAXL = 8
NORMAL, TERMINATED = 0, -1
# leaf event codes
EV_NONE, EV_DETECT, EV_FALSE_ALARM, EV_DISCLOSE, EV_ALARM = 0, 1, 2, 3, 4

# float leaf columns
F_PROB, F_LAM, F_MU, F_US, F_UR = range(5)
# int leaf columns
I_AS, I_AR, I_MODE, I_EV = range(4)


@njit(cache=True)
def ratio(num, den, fb):
    return num / den if den > 0.0 else fb


@njit(cache=True)
def _put(fl, il, k, a_s, a_r, prob, lam, mu, mode, u_s, u_r, ev):
    fl[k, F_PROB] = prob
    fl[k, F_LAM] = lam
    fl[k, F_MU] = mu
    fl[k, F_US] = u_s
    fl[k, F_UR] = u_r
    il[k, I_AS] = a_s
    il[k, I_AR] = a_r
    il[k, I_MODE] = mode
    il[k, I_EV] = ev
    return k + 1


@njit(cache=True)
def _detect_to(pun, T):
    """Mode entered after detected deception."""
    if pun == 0:
        return TERMINATED
    return 1 if T >= 1 else NORMAL


@njit(cache=True)
def node_leaves(kind, par, pun, T, lam, mu, mode, sigma, rho, fl, il):
    """Fill the branch list of one state; returns the number of leaves.

    Actions: sender 0 truth / 1 deceive, receiver 0 trust / 1 check. Leaf
    probabilities are conditional on the action pair.
    """
    B, C, R = par[P_B], par[P_C], par[P_R]
    if mode >= 1:
        # mandatory inspection; the sender earns nothing and the receiver pays C
        nxt = mode + 1 if mode < T else NORMAL
        k = 0
        for a_s in range(2):
            for a_r in range(2):
                k = _put(fl, il, k, a_s, a_r, 1.0, lam, 0.0, nxt, 0.0, -C, EV_NONE)
        return k
    pt = lam + (1.0 - lam) * (1.0 - sigma)
    pc = mu + (1.0 - mu) * rho
    dmode = _detect_to(pun, T)
    k = 0
    if kind == BASELINE or kind == SILENT:
        lp = ratio(lam, pt, 0.0) if kind == BASELINE else lam
        mp = ratio(mu, pc, 1.0 if mu > 0 else 0.0)
        k = _put(fl, il, k, 0, 1, 1.0, lp, mp, NORMAL, 0.0, B - C, EV_NONE)
        k = _put(fl, il, k, 0, 0, 1.0, lam, 0.0, NORMAL, 0.0, B, EV_NONE)
        k = _put(fl, il, k, 1, 1, 1.0, lam, 0.0, dmode, B, R - C, EV_DETECT)
        k = _put(fl, il, k, 1, 0, 1.0, lam, 0.0, NORMAL, B, 0.0, EV_NONE)
    elif kind == NOISY_A or kind == NOISY_B:
        pT, pD = par[P_PIT], par[P_PID]
        lg = ratio(pT * lam, pT * pt + (1.0 - pD) * (1.0 - lam) * sigma, lam)
        mp = ratio(mu, pc, 1.0 if mu > 0 else 0.0)
        k = _put(fl, il, k, 0, 1, pT, lg, mp, NORMAL, 0.0, B - C, EV_NONE)
        if kind == NOISY_A:
            # a bad signal on truth is overturned on review, revealing truth
            k = _put(fl, il, k, 0, 1, 1.0 - pT, ratio(lam, pt, 0.0), mp, NORMAL, 0.0, B - C, EV_NONE)
        else:
            k = _put(fl, il, k, 0, 1, 1.0 - pT, lam, 0.0, dmode, 0.0, B - C + R, EV_FALSE_ALARM)
        k = _put(fl, il, k, 1, 1, pD, lam, 0.0, dmode, B, R - C, EV_DETECT)
        k = _put(fl, il, k, 1, 1, 1.0 - pD, lg, mp, NORMAL, B, -C, EV_NONE)
        k = _put(fl, il, k, 0, 0, 1.0, lam, 0.0, NORMAL, 0.0, B, EV_NONE)
        k = _put(fl, il, k, 1, 0, 1.0, lam, 0.0, NORMAL, B, 0.0, EV_NONE)
    elif kind == LEAKAGE:
        q = par[P_Q]
        l1 = ratio(lam, pt, 0.0)
        hon = lam * (1.0 - q * pc)
        l0 = ratio(hon, hon + (1.0 - lam) * (sigma * (1.0 - pc) + (1.0 - sigma) * (1.0 - q * pc)), lam)
        k = _put(fl, il, k, 0, 1, q, l1, 0.0, NORMAL, 0.0, B - C, EV_DISCLOSE)
        k = _put(fl, il, k, 0, 1, 1.0 - q, l0, 0.0, NORMAL, 0.0, B - C, EV_NONE)
        k = _put(fl, il, k, 0, 0, 1.0, l0, 0.0, NORMAL, 0.0, B, EV_NONE)
        k = _put(fl, il, k, 1, 1, 1.0, lam, 0.0, TERMINATED, B, R - C, EV_DETECT)
        k = _put(fl, il, k, 1, 0, 1.0, l0, 0.0, NORMAL, B, 0.0, EV_NONE)
    else:  # ALARM
        eps, kap = par[P_EPS], par[P_KAP]
        l1 = ratio(lam, lam + (1.0 - lam) * (kap * sigma + 1.0 - sigma), lam)
        a = (1.0 - eps) * lam
        l0 = ratio(a, a + (1.0 - lam) * (1.0 - kap * eps * sigma - eps * (1.0 - sigma)), lam)
        for a_r in range(2):
            u = B - C if a_r == 1 else B
            k = _put(fl, il, k, 0, a_r, eps, l1, 0.0, NORMAL, 0.0, u, EV_ALARM)
            k = _put(fl, il, k, 0, a_r, 1.0 - eps, l0, 0.0, NORMAL, 0.0, u, EV_NONE)
        k = _put(fl, il, k, 1, 1, 1.0, lam, 0.0, TERMINATED, B, R - C, EV_DETECT)
        k = _put(fl, il, k, 1, 0, kap * eps, l1, 0.0, NORMAL, B, 0.0, EV_ALARM)
        k = _put(fl, il, k, 1, 0, 1.0 - kap * eps, l0, 0.0, NORMAL, B, 0.0, EV_NONE)
    return k


# ---------------------------------------------------------------------------
# geometry: geo = [n_lam, n_mu, one_d, n_normal]


@njit(cache=True)
def _axis(x, n):
    s = min(max(x, 0.0), 1.0) * (n - 1)
    i = min(int(s), n - 2)
    t = s - i
    if abs(t) < 1e-13:
        t = 0.0
    elif abs(t - 1.0) < 1e-13:
        t = 1.0
    return i, t


@njit(cache=True)
def stencil(geo, lam, mu, mode, idx, w):
    """Successor indices and weights; returns the count (0 for Terminated)."""
    n_lam, n_mu = geo[0], geo[1]
    if mode == TERMINATED:
        return 0
    if mode >= 1:
        i = int(round(lam * (n_lam - 1)))
        idx[0] = geo[3] + (mode - 1) * n_lam + i
        w[0] = 1.0
        return 1
    il, tl = _axis(lam, n_lam)
    if geo[2] == 1:
        idx[0] = il
        idx[1] = il + 1
        w[0] = 1.0 - tl
        w[1] = tl
        return 2
    im, tm = _axis(mu, n_mu)
    base = il * n_mu + im
    idx[0] = base
    idx[1] = base + 1
    idx[2] = base + n_mu
    idx[3] = base + n_mu + 1
    w[0] = (1.0 - tl) * (1.0 - tm)
    w[1] = (1.0 - tl) * tm
    w[2] = tl * (1.0 - tm)
    w[3] = tl * tm
    return 4


@njit(cache=True)
def coeffs(kind, par, pun, T, geo, lam_a, mu_a, mode_a, node, sigma, rho, vs, vr, fl, il, si, sw, co):
    """Action-value coefficients at ``node`` with the self-loop split out.

    Q_s[a] = co[a] + co[2 + a] * V_s(node), Q_r[a] = co[4 + a] + co[6 + a] * V_r(node).
    """
    d = par[P_DELTA]
    lam, mu, mode = lam_a[node], mu_a[node], mode_a[node]
    pc = mu + (1.0 - mu) * rho
    pt = lam + (1.0 - lam) * (1.0 - sigma)
    for j in range(8):
        co[j] = 0.0
    nl = node_leaves(kind, par, pun, T, lam, mu, mode, sigma, rho, fl, il)
    for k in range(nl):
        a_s, a_r = il[k, I_AS], il[k, I_AR]
        ns = stencil(geo, fl[k, F_LAM], fl[k, F_MU], il[k, I_MODE], si, sw)
        cs = 0.0
        cr = 0.0
        own = 0.0
        for j in range(ns):
            if si[j] == node:
                own += sw[j]
            else:
                cs += sw[j] * vs[si[j]]
                cr += sw[j] * vr[si[j]]
        p = fl[k, F_PROB]
        ws = p * (pc if a_r == 1 else 1.0 - pc)
        wr = p * (pt if a_s == 0 else 1.0 - pt)
        co[a_s] += ws * (fl[k, F_US] + d * cs)
        co[2 + a_s] += ws * d * own
        co[4 + a_r] += wr * (fl[k, F_UR] + d * cr)
        co[6 + a_r] += wr * d * own
    return nl


@njit(cache=True)
def solve_node(sigma, rho, co):
    """(V_s, V_r, Delta_s, Delta_r) at the node with its self-loop solved out."""
    v_s = (sigma * co[1] + (1.0 - sigma) * co[0]) / (1.0 - sigma * co[3] - (1.0 - sigma) * co[2])
    v_r = (rho * co[5] + (1.0 - rho) * co[4]) / (1.0 - rho * co[7] - (1.0 - rho) * co[6])
    return v_s, v_r, co[1] - co[0] + (co[3] - co[2]) * v_s, co[5] - co[4] + (co[7] - co[6]) * v_r


# ---------------------------------------------------------------------------
# node-local equilibrium


@njit(cache=True)
def _local(ctx, node, sigma, rho):
    kind, par, pun, T, geo, lam_a, mu_a, mode_a, vs, vr, fl, il, si, sw, co = ctx
    coeffs(kind, par, pun, T, geo, lam_a, mu_a, mode_a, node, sigma, rho, vs, vr, fl, il, si, sw, co)
    return solve_node(sigma, rho, co)


@njit(cache=True)
def _diff(ctx, node, which, fixed, x):
    """which 0: Delta_s(sigma=x, rho=fixed); 1: Delta_r(sigma=x, rho=fixed);
    2: Delta_s(sigma=fixed, rho=x); 3: Delta_r(sigma=fixed, rho=x)."""
    if which == 0:
        return _local(ctx, node, x, fixed)[2]
    if which == 1:
        return _local(ctx, node, x, fixed)[3]
    if which == 2:
        return _local(ctx, node, fixed, x)[2]
    return _local(ctx, node, fixed, x)[3]


@njit(cache=True)
def _root(ctx, node, which, fixed, sgn, lo, hi, flo, fhi, xtol, ftol):
    """Root of sgn * diff on [lo, hi] with positive value at lo, negative at hi.

    Illinois regula falsi, bisecting when three steps failed to halve the bracket.
    """
    side = 0
    ref = hi - lo
    steps = 0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        slow = steps >= 3 and hi - lo > 0.5 * ref
        c = (lo * fhi - hi * flo) / (fhi - flo)
        bis = slow or not math.isfinite(c) or c <= lo or c >= hi
        if bis:
            c = 0.5 * (lo + hi)
        fc = sgn * _diff(ctx, node, which, fixed, c)
        x = c
        if fc > 0:
            lo, flo = c, fc
            if side == 1:
                fhi *= 0.5
            side = 1
        else:
            hi, fhi = c, fc
            if side == -1:
                flo *= 0.5
            side = -1
        steps += 1
        if bis or (steps >= 3 and hi - lo <= 0.5 * ref):
            ref = hi - lo
            steps = 0
        if abs(fc) <= ftol or hi - lo <= xtol:
            break
    return x


@njit(cache=True)
def _own_reply(ctx, node, rho):
    """Sender's best reply to rho; ties go to truth."""
    d0 = _diff(ctx, node, 0, rho, 0.0)
    if d0 <= 0:
        return 0.0
    d1 = _diff(ctx, node, 0, rho, 1.0)
    if d1 >= 0:
        return 1.0
    return _root(ctx, node, 0, rho, 1.0, 0.0, 1.0, d0, d1, 1e-12, 1e-13)


@njit(cache=True)
def _reply_between(ctx, node, rho, s_a, s_b):
    """Sender reply searched between replies at the ends of a rho bracket first."""
    lo, hi = min(s_a, s_b), max(s_a, s_b)
    flo = _diff(ctx, node, 0, rho, lo)
    fhi = _diff(ctx, node, 0, rho, hi)
    if lo == 0.0 and flo <= 0:
        return 0.0
    if hi == 1.0 and fhi >= 0:
        return 1.0
    if flo > 0 and fhi < 0:
        return _root(ctx, node, 0, rho, 1.0, lo, hi, flo, fhi, 1e-12, 1e-13)
    return _own_reply(ctx, node, rho)


@njit(cache=True)
def _solve_on(ctx, node, which, fixed, lo, hi, x0, xtol):
    flo = _diff(ctx, node, which, fixed, lo)
    fhi = _diff(ctx, node, which, fixed, hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        return x0
    sgn = -1.0 if flo < 0 else 1.0
    return _root(ctx, node, which, fixed, sgn, lo, hi, sgn * flo, sgn * fhi, xtol, 1e-13)


@njit(cache=True)
def _refine_jump(ctx, node, sig, rho, r_lo, r_hi, s_lo, s_hi):
    """Both-indifference point where the sender's reply jumps in rho.

    The sender's condition pins rho on [r_lo, r_hi], the receiver's pins
    sigma inside the jump [s_lo, s_hi]; the two solves alternate.
    """
    for _ in range(12):
        nr = _solve_on(ctx, node, 2, sig, r_lo, r_hi, rho, 1e-15)
        ns = _solve_on(ctx, node, 1, nr, s_lo, s_hi, sig, 1e-15)
        step = max(abs(ns - sig), abs(nr - rho))
        sig, rho = ns, nr
        if step <= 1e-14:
            break
    return sig, rho


@njit(cache=True)
def local_equilibrium(ctx, node, det, scan):
    """Equilibrium of the one-shot game at ``node`` given successor values.

    sigma_br(rho) is single valued; rho is consistent when rho = 1 with
    g >= 0, rho = 0 with g <= 0, or g(rho) = 0, where g = Delta_r along the
    reply. ``det`` picks the consistent rho closest to 1, else closest to 0.
    """
    K = scan.shape[0]
    G = np.empty(K)
    S = np.empty(K)
    P = np.empty(K)
    for k in range(K):
        r = scan[K - 1 - k] if det else scan[k]
        s = _own_reply(ctx, node, r)
        P[k] = r
        S[k] = s
        G[k] = _local(ctx, node, s, r)[3]
    if (det and G[0] >= 0) or (not det and G[0] <= 0):
        return S[0], P[0]
    kk = -1
    for k in range(1, K):
        if G[k] == 0 or (G[k] > 0) != (G[k - 1] > 0):
            kk = k
            break
    if kk < 0:
        return S[K - 1], P[K - 1]
    if G[kk] == 0:
        return S[kk], P[kk]
    if det:
        lo, hi, g_lo, g_hi, s_lo, s_hi = P[kk], P[kk - 1], G[kk], G[kk - 1], S[kk], S[kk - 1]
    else:
        lo, hi, g_lo, g_hi, s_lo, s_hi = P[kk - 1], P[kk], G[kk - 1], G[kk], S[kk - 1], S[kk]
    sgn = -1.0 if g_lo < 0 else 1.0
    lo0, hi0 = lo, hi
    # outer root on rho; sigma brackets follow the rho bracket
    flo, fhi = sgn * g_lo, sgn * g_hi
    side = 0
    ref = hi - lo
    steps = 0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        slow = steps >= 3 and hi - lo > 0.5 * ref
        c = (lo * fhi - hi * flo) / (fhi - flo)
        bis = slow or not math.isfinite(c) or c <= lo or c >= hi
        if bis:
            c = 0.5 * (lo + hi)
        s_c = _reply_between(ctx, node, c, s_lo, s_hi)
        fc = sgn * _local(ctx, node, s_c, c)[3]
        x = c
        if fc > 0:
            lo, flo, s_lo = c, fc, s_c
            if side == 1:
                fhi *= 0.5
            side = 1
        else:
            hi, fhi, s_hi = c, fc, s_c
            if side == -1:
                flo *= 0.5
            side = -1
        steps += 1
        if bis or (steps >= 3 and hi - lo <= 0.5 * ref):
            ref = hi - lo
            steps = 0
        if abs(fc) <= 1e-13 or hi - lo <= 1e-13:
            break
    rho = x
    sig = _reply_between(ctx, node, rho, s_lo, s_hi)
    s_a = _reply_between(ctx, node, max(rho - 1e-11, 0.0), s_lo, s_hi)
    s_b = _reply_between(ctx, node, min(rho + 1e-11, 1.0), s_lo, s_hi)
    if abs(s_a - s_b) > 1e-9:
        sig, rho = _refine_jump(ctx, node, sig, rho, lo0, hi0, min(s_a, s_b), max(s_a, s_b))
    return sig, rho


@njit(cache=True)
def node_residual(ctx, node, sig, rho):
    """Largest one-step deviation gain of either player at the node."""
    ds, dr = _local(ctx, node, sig, rho)[2:]
    es = max(ds, 0.0) * (1.0 - sig) + max(-ds, 0.0) * sig
    er = max(dr, 0.0) * (1.0 - rho) + max(-dr, 0.0) * rho
    return max(es, er)


@njit(cache=True)
def _edge_roots(ctx, node, which, fixed, ax, out, m):
    """Append all roots in x of a one-variable difference scanned on the points ``ax``."""
    prev_x = ax[0]
    prev_f = _diff(ctx, node, which, fixed, prev_x)
    if prev_f == 0.0:
        out[m] = prev_x
        m += 1
    for j in range(1, ax.shape[0]):
        if m >= out.shape[0]:
            break
        x = ax[j]
        f = _diff(ctx, node, which, fixed, x)
        if f == 0.0:
            out[m] = x
            m += 1
        elif prev_f != 0.0 and (f > 0) != (prev_f > 0):
            sgn = 1.0 if prev_f > 0 else -1.0
            out[m] = _root(ctx, node, which, fixed, sgn, prev_x, x, sgn * prev_f, sgn * f, 1e-14, 1e-15)
            m += 1
        prev_x, prev_f = x, f
    return m


@njit(cache=True)
def _newton2(ctx, node, s, r):
    """Joint zero of (Delta_s, Delta_r) by damped Newton with a difference Jacobian."""
    h = 1e-7
    for _ in range(60):
        a = _local(ctx, node, s, r)
        fs, fr = a[2], a[3]
        if abs(fs) < 1e-13 and abs(fr) < 1e-13:
            return s, r, True
        b = _local(ctx, node, min(s + h, 1.0), r)
        c = _local(ctx, node, s, min(r + h, 1.0))
        hs = min(s + h, 1.0) - s
        hr = min(r + h, 1.0) - r
        if hs <= 0.0 or hr <= 0.0:
            hs = -h
            hr = -h
            b = _local(ctx, node, s - h, r)
            c = _local(ctx, node, s, r - h)
        j11 = (b[2] - fs) / hs
        j12 = (c[2] - fs) / hr
        j21 = (b[3] - fr) / hs
        j22 = (c[3] - fr) / hr
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not math.isfinite(det):
            return s, r, False
        ds = (j22 * fs - j12 * fr) / det
        dr = (-j21 * fs + j11 * fr) / det
        t = 1.0
        while t > 1e-3 and (s - t * ds < 0.0 or s - t * ds > 1.0 or r - t * dr < 0.0 or r - t * dr > 1.0):
            t *= 0.5
        s -= t * ds
        r -= t * dr
        s = min(max(s, 0.0), 1.0)
        r = min(max(r, 0.0), 1.0)
    a = _local(ctx, node, s, r)
    return s, r, abs(a[2]) < 1e-10 and abs(a[3]) < 1e-10


@njit(cache=True)
def _straddles(a, b, c, d):
    return min(min(a, b), min(c, d)) <= 0.0 <= max(max(a, b), max(c, d))


@njit(cache=True)
def _cell_search(ctx, node, s0, s1, r0, r1, tol):
    """Depth-first quartering of a cell while both differences straddle zero at
    the corners; Newton is tried once a cell is small. Returns (found, s, r)."""
    cap = 4096
    st = np.empty((cap, 4))
    st[0, 0], st[0, 1], st[0, 2], st[0, 3] = s0, s1, r0, r1
    top = 1
    visits = 0
    while top > 0 and visits < 20000:
        top -= 1
        a0, a1, b0, b1 = st[top, 0], st[top, 1], st[top, 2], st[top, 3]
        visits += 1
        sm, rm = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
        if a1 - a0 < 1e-3:
            s, r, conv = _newton2(ctx, node, sm, rm)
            if conv and node_residual(ctx, node, s, r) <= tol:
                return True, s, r
            if node_residual(ctx, node, sm, rm) <= tol:
                return True, sm, rm
            if a1 - a0 < 1e-13:
                continue
        # children, pushed so the lower-left is explored first
        for q in range(3, -1, -1):
            c0 = a0 if q % 2 == 0 else sm
            c1 = sm if q % 2 == 0 else a1
            d0 = b0 if q < 2 else rm
            d1 = rm if q < 2 else b1
            e00 = _local(ctx, node, c0, d0)
            e10 = _local(ctx, node, c1, d0)
            e01 = _local(ctx, node, c0, d1)
            e11 = _local(ctx, node, c1, d1)
            if (_straddles(e00[2], e10[2], e01[2], e11[2]) and _straddles(e00[3], e10[3], e01[3], e11[3])
                    and top < cap):
                st[top, 0], st[top, 1], st[top, 2], st[top, 3] = c0, c1, d0, d1
                top += 1
    return False, 0.0, 0.0


@njit(cache=True)
def uniform_axis(M):
    return np.linspace(0.0, 1.0, M)


@njit(cache=True)
def _posterior_axis(x0, n, M):
    """Mix levels at which the Bayes successor x0 / (x0 + (1 - x0)(1 - a)) steps
    through half-cells of an n-point axis, merged with M uniform levels. Between
    consecutive levels the interpolated continuation is close to smooth."""
    base = np.linspace(0.0, 1.0, M)
    if x0 <= 0.0 or x0 >= 1.0 or n < 2:
        return base
    h = 0.5 / (n - 1)
    k = int((1.0 - x0) / h) + 1
    ax = np.empty(M + k)
    ax[:M] = base
    for j in range(k):
        u = min(x0 + j * h, 1.0)
        ax[M + j] = min(max(1.0 - x0 * (1.0 - u) / (u * (1.0 - x0)), 0.0), 1.0)
    ax = np.unique(ax)
    return ax


@njit(cache=True)
def node_axes(ctx, node, M):
    """(sigma levels, rho levels) for the fine node lattice."""
    geo, lam_a, mu_a, mode_a = ctx[4], ctx[5], ctx[6], ctx[7]
    sax = _posterior_axis(lam_a[node], int(geo[0]), M)
    if geo[2] == 0 and mode_a[node] == 0:
        rax = _posterior_axis(mu_a[node], int(geo[1]), M)
    else:
        rax = uniform_axis(M)
    return sax, rax


@njit(cache=True)
def enumerate_equilibria(ctx, node, sax, rax, tol, cand_s, cand_r):
    """Consistent (sigma, rho) pairs at the node: pure corners, one player mixing on an
    edge, and interior joint zeros seeded from sign changes on the sax x rax lattice."""
    n = 0
    roots = np.empty(max(sax.shape[0], rax.shape[0]) + 1)
    for a in range(2):
        for b in range(2):
            if node_residual(ctx, node, float(a), float(b)) <= tol:
                cand_s[n], cand_r[n] = a, b
                n += 1
    for b in range(2):
        m = _edge_roots(ctx, node, 0, float(b), sax, roots, 0)
        for j in range(m):
            if node_residual(ctx, node, roots[j], float(b)) <= tol and n < cand_s.shape[0]:
                cand_s[n], cand_r[n] = roots[j], b
                n += 1
    for a in range(2):
        m = _edge_roots(ctx, node, 3, float(a), rax, roots, 0)
        for j in range(m):
            if node_residual(ctx, node, float(a), roots[j]) <= tol and n < cand_s.shape[0]:
                cand_s[n], cand_r[n] = a, roots[j]
                n += 1
    P, Q = sax.shape[0], rax.shape[0]
    G = np.empty((P, Q, 2))
    for i in range(P):
        for j in range(Q):
            d = _local(ctx, node, sax[i], rax[j])
            G[i, j, 0], G[i, j, 1] = d[2], d[3]
    for i in range(P - 1):
        for j in range(Q - 1):
            if n >= cand_s.shape[0]:
                return n
            if not (_straddles(G[i, j, 0], G[i + 1, j, 0], G[i, j + 1, 0], G[i + 1, j + 1, 0])
                    and _straddles(G[i, j, 1], G[i + 1, j, 1], G[i, j + 1, 1], G[i + 1, j + 1, 1])):
                continue
            ok, s, r = _cell_search(ctx, node, sax[i], sax[i + 1], rax[j], rax[j + 1], tol)
            if ok:
                cand_s[n], cand_r[n] = s, r
                n += 1
    return n


def make_scratch():
    return (np.zeros((MAXL, 5)), np.zeros((MAXL, 4), dtype=np.int64), np.zeros(4, dtype=np.int64),
            np.zeros(4), np.zeros(8))


@njit(cache=True)
def _fallback(ctx, node, det, s0, r0):
    """Exhaustive node solve when the reply-curve search fails (own differences
    not monotone): a coarse uniform lattice first, then one aligned with the
    grid cells the Bayes successors cross. Same selection rule; the
    least-residual lattice pair if nothing is consistent."""
    cs = np.empty(256)
    cr = np.empty(256)
    u = uniform_axis(33)
    n = enumerate_equilibria(ctx, node, u, u, 1e-9, cs, cr)
    if n == 0:
        sax, rax = node_axes(ctx, node, 33)
        n = enumerate_equilibria(ctx, node, sax, rax, 1e-9, cs, cr)
        if n == 0:
            best = node_residual(ctx, node, s0, r0)
            bs, br = s0, r0
            for i in range(sax.shape[0]):
                for j in range(rax.shape[0]):
                    e = node_residual(ctx, node, sax[i], rax[j])
                    if e < best:
                        best, bs, br = e, sax[i], rax[j]
            return bs, br
    k = 0
    for a in range(1, n):
        if (det and cr[a] > cr[k]) or (not det and cr[a] < cr[k]):
            k = a
    return cs[k], cr[k]


@njit(cache=True)
def _exhaustive(ctx, node, det, scan):
    """Every consistent pair on the node's fine lattice, then the selection rule."""
    cs = np.empty(256)
    cr = np.empty(256)
    sax, rax = node_axes(ctx, node, 33)
    n = enumerate_equilibria(ctx, node, sax, rax, 1e-9, cs, cr)
    if n == 0:
        s, r = local_equilibrium(ctx, node, det, scan)
        if node_residual(ctx, node, s, r) > 1e-9:
            s, r = _fallback(ctx, node, det, s, r)
        return s, r
    k = 0
    for a in range(1, n):
        if (det and cr[a] > cr[k]) or (not det and cr[a] < cr[k]):
            k = a
    return cs[k], cr[k]


@njit(cache=True)
def sweep_pass(kind, par, pun, T, geo, lam_a, mu_a, mode_a, order, fs, fr, det, scan,
               sig, rho, vs, vr, fl, il, si, sw, co, exhaustive=False):
    """One Gauss-Seidel pass of node-local equilibria in ``order``; returns the
    largest value change. NaN entries of fs/fr mark free policies."""
    ctx = (kind, par, pun, T, geo, lam_a, mu_a, mode_a, vs, vr, fl, il, si, sw, co)
    change = 0.0
    for node in order:
        if math.isnan(fs[node]) and math.isnan(fr[node]):
            if exhaustive:
                s, r = _exhaustive(ctx, node, det, scan)
            else:
                s, r = local_equilibrium(ctx, node, det, scan)
                if node_residual(ctx, node, s, r) > 1e-9:
                    s, r = _fallback(ctx, node, det, s, r)
        else:
            s, r = fs[node], fr[node]
        v1, v2, _, _ = _local(ctx, node, s, r)
        change = max(change, abs(v1 - vs[node]), abs(v2 - vr[node]))
        sig[node], rho[node], vs[node], vr[node] = s, r, v1, v2
    return change


@njit(cache=True)
def action_diffs(kind, par, pun, T, geo, lam_a, mu_a, mode_a, nodes, sigma, rho, vs, vr,
                 fl, il, si, sw, co, out):
    """Rows of out: Q_s truth, Q_s deceive, Q_r trust, Q_r check at each node."""
    for a in range(nodes.shape[0]):
        n = nodes[a]
        coeffs(kind, par, pun, T, geo, lam_a, mu_a, mode_a, n, sigma[a], rho[a], vs, vr, fl, il, si, sw, co)
        out[0, a] = co[0] + co[2] * vs[n]
        out[1, a] = co[1] + co[3] * vs[n]
        out[2, a] = co[4] + co[6] * vr[n]
        out[3, a] = co[5] + co[7] * vr[n]


@njit(cache=True)
def bellman_coo(kind, par, pun, T, geo, lam_a, mu_a, mode_a, sigma, rho, fl, il, si, sw):
    """Rewards and COO triplets of both players' transition matrices."""
    n = lam_a.shape[0]
    cap = n * MAXL * 4
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.int64)
    ps = np.empty(cap)
    pr = np.empty(cap)
    rs = np.zeros(n)
    rr = np.zeros(n)
    m = 0
    for node in range(n):
        lam, mu, mode = lam_a[node], mu_a[node], mode_a[node]
        s, r = sigma[node], rho[node]
        pc = mu + (1.0 - mu) * r
        pt = lam + (1.0 - lam) * (1.0 - s)
        nl = node_leaves(kind, par, pun, T, lam, mu, mode, s, r, fl, il)
        for k in range(nl):
            a_s, a_r = il[k, I_AS], il[k, I_AR]
            p = fl[k, F_PROB]
            cs = p * (s if a_s == 1 else 1.0 - s) * (pc if a_r == 1 else 1.0 - pc)
            cr = p * (r if a_r == 1 else 1.0 - r) * (pt if a_s == 0 else 1.0 - pt)
            rs[node] += cs * fl[k, F_US]
            rr[node] += cr * fl[k, F_UR]
            ns = stencil(geo, fl[k, F_LAM], fl[k, F_MU], il[k, I_MODE], si, sw)
            for j in range(ns):
                rows[m] = node
                cols[m] = si[j]
                ps[m] = sw[j] * cs
                pr[m] = sw[j] * cr
                m += 1
    return rs, rr, rows[:m], cols[:m], ps[:m], pr[:m]


@njit(cache=True)
def leaf_table(kind, par, pun, T, lam, mu, mode, sigma, rho):
    """Branch lists of a batch of states as padded arrays plus counts."""
    n = lam.shape[0]
    F = np.zeros((n, MAXL, 5))
    I = np.zeros((n, MAXL, 4), dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    fl = np.zeros((MAXL, 5))
    il = np.zeros((MAXL, 4), dtype=np.int64)
    for a in range(n):
        k = node_leaves(kind, par, pun, T, lam[a], mu[a], mode[a], sigma[a], rho[a], fl, il)
        cnt[a] = k
        F[a, :k] = fl[:k]
        I[a, :k] = il[:k]
    return F, I, cnt
