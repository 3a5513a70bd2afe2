"""Independent reference computations used by the tests. Nothing here imports
the solver; only ModelParams is shared."""

from __future__ import annotations

import numpy as np

LEVELS = np.linspace(0.0, 1.0, 21)


def _weights(x, n):
    """Linear interpolation weights on a uniform axis of n points: (lower index, upper weight)."""
    s = np.clip(x, 0.0, 1.0) * (n - 1)
    i = np.minimum(np.floor(s).astype(int), n - 2)
    t = s - i
    t = np.where(np.abs(t) < 1e-13, 0.0, np.where(np.abs(t - 1) < 1e-13, 1.0, t))
    return i, t


def _interp_split(V, node, lam, mu):
    """Bilinear value at (lam, mu) split as (contribution of other nodes, weight on ``node``).
    ``node=None`` puts everything in the first part."""
    n = V.shape[0]
    i, t = _weights(lam, n)
    j, u = _weights(mu, n)
    rest = np.zeros(np.shape(lam))
    own = np.zeros(np.shape(lam))
    for di, wi in ((0, 1 - t), (1, t)):
        for dj, wj in ((0, 1 - u), (1, u)):
            w = wi * wj
            ii, jj = i + di, j + dj
            hit = (ii == node[0]) & (jj == node[1]) if node is not None else np.zeros(np.shape(ii), bool)
            own += np.where(hit, w, 0.0)
            rest += np.where(hit, 0.0, w * V[ii, jj])
    return rest, own


def baseline_node(p, Vs, Vr, node, S, Rh, solve_self: bool = True):
    """(V_s, V_r, Delta_s, Delta_r) at ``node`` for every (sigma, rho) in S, Rh, with the
    node's own value solved out of its self-references (or read from Vs, Vr when
    ``solve_self`` is false). Termination regime."""
    n = Vs.shape[0]
    lam, mu = node[0] / (n - 1), node[1] / (n - 1)
    B, C, R, d = p.B, p.C, p.R, p.delta
    pc = mu + (1 - mu) * Rh
    pt = lam + (1 - lam) * (1 - S)
    lp = np.where(pt > 0, lam / np.where(pt > 0, pt, 1), 0.0)
    mp = np.where(pc > 0, mu / np.where(pc > 0, pc, 1), 1.0 if mu > 0 else 0.0)
    own = node if solve_self else None
    s_up, w_up = _interp_split(Vs, own, lp, mp)
    r_up, _ = _interp_split(Vr, own, lp, mp)
    s0, w0 = _interp_split(Vs, own, np.full_like(S, lam), np.zeros_like(S))
    r0, _ = _interp_split(Vr, own, np.full_like(S, lam), np.zeros_like(S))
    # Q = a + b * V(node)
    qt_a, qt_b = pc * d * s_up + (1 - pc) * d * s0, pc * d * w_up + (1 - pc) * d * w0
    qd_a, qd_b = B + (1 - pc) * d * s0, (1 - pc) * d * w0
    vs = (S * qd_a + (1 - S) * qt_a) / (1 - S * qd_b - (1 - S) * qt_b)
    ds = (qd_a + qd_b * vs) - (qt_a + qt_b * vs)
    qn_a, qn_b = pt * B + d * r0, d * w0
    qc_a, qc_b = pt * (B - C + d * r_up) + (1 - pt) * (R - C), pt * d * w_up
    vr = (Rh * qc_a + (1 - Rh) * qn_a) / (1 - Rh * qc_b - (1 - Rh) * qn_b)
    dr = (qc_a + qc_b * vr) - (qn_a + qn_b * vr)
    return vs, vr, ds, dr


def _sign_change(a, tol=1e-12):
    return a.min() <= tol and a.max() >= -tol


def _refine(f, box, depth=26, sub=2, keep=32, tol=1e-5):
    """Confirm a joint zero of f = (ds, dr) in box = (s0, s1, r0, r1) by subdivision.

    Every subcell where both differences change sign is kept (the ``keep``
    smallest by corner residual). Returns (sigma, rho) or None."""
    boxes = [box]
    for _ in range(depth):
        nxt = []
        for s0, s1, r0, r1 in boxes:
            S, Rh = np.meshgrid(np.linspace(s0, s1, sub + 1), np.linspace(r0, r1, sub + 1), indexing="ij")
            ds, dr = f(S, Rh)
            for a in range(sub):
                for b in range(sub):
                    cs, cr = ds[a:a + 2, b:b + 2], dr[a:a + 2, b:b + 2]
                    if _sign_change(cs) and _sign_change(cr):
                        e = float(np.max(np.maximum(np.abs(cs), np.abs(cr))))
                        nxt.append((e, (S[a, 0], S[a + 1, 0], Rh[0, b], Rh[0, b + 1])))
        if not nxt:
            return None
        nxt.sort(key=lambda t: t[0])
        boxes = [b for _, b in nxt[:keep]]
    s0, s1, r0, r1 = boxes[0]
    sm, rm = 0.5 * (s0 + s1), 0.5 * (r0 + r1)
    ds, dr = f(np.array([[sm]]), np.array([[rm]]))
    return (sm, rm) if max(abs(ds[0, 0]), abs(dr[0, 0])) <= tol else None


def kink_levels(x, n):
    """Own-mix levels at which the Bayes successor x / (x + (1 - x)(1 - a)) lands on a
    node of the n-point axis; the interpolated continuation is smooth in between."""
    if not 0 < x < 1:
        return np.empty(0)
    u = np.linspace(0, 1, n)
    u = u[u > x]
    return 1 - x * (1 - u) / (u * (1 - x))


def _candidates(f, levels, tol=1e-12, s_extra=(), r_extra=()):
    """Node equilibria found by exhaustive search on the action lattice: exact pure
    pairs, then edge and interior lattice cells with sign changes, each confirmed
    by subdivision. Returns (sigma, rho) pairs."""
    s_lv = np.unique(np.r_[levels, s_extra])
    r_lv = np.unique(np.r_[levels, r_extra])
    S, Rh = np.meshgrid(s_lv, r_lv, indexing="ij")
    ds, dr = f(S, Rh)
    m, q = s_lv.size, r_lv.size
    out = []
    pos = lambda x: x >= -tol
    neg = lambda x: x <= tol
    for k in (0, m - 1):
        for l in (0, q - 1):
            ok_s = pos(ds[k, l]) if k == m - 1 else neg(ds[k, l])
            ok_r = pos(dr[k, l]) if l == q - 1 else neg(dr[k, l])
            if ok_s and ok_r:
                out.append((s_lv[k], r_lv[l]))
    # edges: one player pure, the other indifferent; the pure player's condition
    # is checked at the confirmed point
    for k in (0, m - 1):
        ok = pos if k == m - 1 else neg
        sk = s_lv[k]
        for l in range(q - 1):
            if _sign_change(dr[k, l:l + 2]):
                g = lambda S_, R_: (np.zeros_like(S_), f(np.full_like(S_, sk), R_)[1])
                z = _refine(g, (sk, sk, r_lv[l], r_lv[l + 1]))
                if z is not None and ok(f(np.array([[sk]]), np.array([[z[1]]]))[0][0, 0]):
                    out.append((sk, z[1]))
    for l in (0, q - 1):
        ok = pos if l == q - 1 else neg
        rl = r_lv[l]
        for k in range(m - 1):
            if _sign_change(ds[k:k + 2, l]):
                g = lambda S_, R_: (f(S_, np.full_like(S_, rl))[0], np.zeros_like(S_))
                z = _refine(g, (s_lv[k], s_lv[k + 1], rl, rl))
                if z is not None and ok(f(np.array([[z[0]]]), np.array([[rl]]))[1][0, 0]):
                    out.append((z[0], rl))
    for k in range(m - 1):
        for l in range(q - 1):
            if _sign_change(ds[k:k + 2, l:l + 2]) and _sign_change(dr[k:k + 2, l:l + 2]):
                z = _refine(f, (s_lv[k], s_lv[k + 1], r_lv[l], r_lv[l + 1]))
                if z is not None:
                    out.append(z)
    return out


def brute_force_baseline(p, n: int, levels=LEVELS):
    """Equilibrium policies on an n x n grid by exhaustive lattice search at every node.

    Nodes are visited so that every successor is done first: the mu = 0 column
    from the top of lambda down, then the remaining nodes by descending lambda and
    mu. The lattice is ``levels`` plus the kink levels of both Bayes successors.
    At each node the largest-rho equilibrium is kept."""
    Vs, Vr = np.zeros((n, n)), np.zeros((n, n))
    sig, rho = np.zeros((n, n)), np.zeros((n, n))
    S, Rh = np.meshgrid(levels, levels, indexing="ij")
    order = [(i, 0) for i in range(n - 1, -1, -1)]
    order += [(i, j) for i in range(n - 1, -1, -1) for j in range(n - 1, 0, -1)]
    for node in order:
        f = lambda S_, R_: baseline_node(p, Vs, Vr, node, S_, R_)[2:]
        lam, mu = node[0] / (n - 1), node[1] / (n - 1)
        cand = _candidates(f, levels, s_extra=kink_levels(lam, n), r_extra=kink_levels(mu, n))
        if cand:
            s, r = max(cand, key=lambda c: (c[1], c[0]))
        else:
            vs, vr, ds, dr = baseline_node(p, Vs, Vr, node, S, Rh)
            es = np.maximum(ds, 0) * (1 - S) + np.maximum(-ds, 0) * S
            er = np.maximum(dr, 0) * (1 - Rh) + np.maximum(-dr, 0) * Rh
            k, l = np.unravel_index(np.argmin(np.maximum(es, er)), es.shape)
            s, r = levels[k], levels[l]
        vs, vr, _, _ = baseline_node(p, Vs, Vr, node, np.array([[s]]), np.array([[r]]))
        sig[node], rho[node] = s, r
        Vs[node], Vr[node] = vs[0, 0], vr[0, 0]
    return sig, rho, Vs, Vr


def value_iteration(p, sig, rho, iters: int = 5000, tol: float = 1e-13):
    """Values of fixed baseline policies on the grid by plain successive approximation."""
    n = sig.shape[0]
    Vs, Vr = np.zeros((n, n)), np.zeros((n, n))
    for _ in range(iters):
        ns, nr = np.empty_like(Vs), np.empty_like(Vr)
        for i in range(n):
            for j in range(n):
                s, r = np.array([[sig[i, j]]]), np.array([[rho[i, j]]])
                vs, vr, _, _ = baseline_node(p, Vs, Vr, (i, j), s, r, solve_self=False)
                ns[i, j], nr[i, j] = vs[0, 0], vr[0, 0]
        done = max(np.max(np.abs(ns - Vs)), np.max(np.abs(nr - Vr)))
        Vs, Vr = ns, nr
        if done < tol:
            break
    return Vs, Vr
