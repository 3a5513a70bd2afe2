"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line at the
criterion's tolerance; the lines are repeated in the session summary.

Criteria that fail for analysed reasons (see the decisions ledger) are marked
strict xfail, so the suite notices if they ever start passing.
"""

import math
import time

import numpy as np
import pytest

from oracles import brute_force_baseline
from trustcheck import bayes, cli
from trustcheck.core_model import ModelParams, StateSpace
from trustcheck.cutoff_solver import closed_form_benchmark, policy_cutoffs
from trustcheck.ct_bridge import embedding_convergence, simulate_ct_paths
from trustcheck.punishment import find_equivalent_T, implied_cutoffs
from trustcheck.simulator import (default_horizon, hazard_bins, simulate_paths, welfare_estimate,
                                  welfare_hazard_gaps)
from trustcheck.value_engine import (BaselineKernel, SolverConfig, monotonicity_report, solve_equilibrium,
                                     total_violations)
from trustcheck.variants import noisy_kernel, q_sweep, sce_dvr_drho, sce_equilibrium, sce_sender_gain, sce_values


def test_1_closed_form_benchmark(report, tmp_path):
    t0 = time.perf_counter()
    worst_p = worst_l = 0.0
    nest = True
    for d in (0.8, 0.9, 0.95):
        p = ModelParams(delta=d, C=0.01)
        for eps in (0.0, 0.1, 0.3):
            bm = closed_form_benchmark(p, 1.0, 0.5, eps)
            p_star = (1 - d) / d
            lam = 1 - p.C / (d * p.B * p_star * 0.5)
            worst_p = max(worst_p, abs(bm.p_star - p_star))
            worst_l = max(worst_l, abs(bm.lambda_star - lam))
            nest &= bm.p_bounds[0] <= bm.p_star <= bm.p_bounds[1]
            nest &= bm.lambda_bounds[0] <= bm.lambda_star <= bm.lambda_bounds[1]
        assert cli.run(["bench", "--delta", str(d), "--out-dir", str(tmp_path)]) == 0
    dt = time.perf_counter() - t0
    ok = worst_p <= 1e-12 and worst_l <= 1e-12 and nest and dt < 1.0
    report(1, ok, f"closed-form benchmark: max |dp*|={worst_p:.2g}, max |dlambda*|={worst_l:.2g}, "
                  f"bounds nest={nest}, {dt:.2f}s")
    assert ok


def test_2_brute_force(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    sups, reply_ok = [], 0
    for _ in range(20):
        n = int(rng.integers(5, 8))
        p = ModelParams(C=float(rng.uniform(0.05, 0.5)), R=float(rng.uniform(0, 2)), delta=float(rng.uniform(0.7, 0.95)))
        s, r, _, _ = brute_force_baseline(p, n)
        k = BaselineKernel(p, StateSpace.grid2d(n))
        eq = solve_equilibrium(k, SolverConfig(node_search="exhaustive"))
        sup = max(np.max(np.abs(eq.policies.sigma.reshape(n, n) - s)), np.max(np.abs(eq.policies.rho.reshape(n, n) - r)))
        sups.append(sup)
        fast = solve_equilibrium(k)
        reply_ok += max(np.max(np.abs(fast.policies.sigma.reshape(n, n) - s)),
                        np.max(np.abs(fast.policies.rho.reshape(n, n) - r))) <= 0.05
    dt = time.perf_counter() - t0
    ok = max(sups) <= 0.05 and dt < 300
    report(2, ok, f"brute force, 20 draws on 5-7 grids: max sup-norm {max(sups):.3g} (exhaustive node search); "
                  f"default node search within 0.05 on {reply_ok}/20; {dt:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="mu-monotonicity of V_r and sigma fails on computed equilibria; see ledger")
def test_3_monotonicity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    draws = [ModelParams()] + [ModelParams(C=float(rng.uniform(0.05, 0.5)), R=float(rng.uniform(0, 2)),
                                           delta=float(rng.uniform(0.7, 0.95))) for _ in range(10)]
    counts = {}
    for p in draws:
        eq = solve_equilibrium(BaselineKernel(p, StateSpace.grid2d(21)))
        rep = monotonicity_report(eq.values, eq.policies, slack=1e-7)
        for key, chk in rep.items():
            counts[key] = counts.get(key, 0) + chk.count
    dt = time.perf_counter() - t0
    total = sum(counts.values())
    ok = total == 0 and dt < 120
    detail = ", ".join(f"{k}={v}" for k, v in counts.items())
    report(3, ok, f"monotonicity at 21x21, defaults + 10 draws: {total} violations ({detail}); {dt:.0f}s")
    assert ok


def test_4_punishment_equivalence(report, default_eq41):
    t0 = time.perf_counter()
    k, eq = default_eq41
    p = eq.params
    rep = find_equivalent_T(p, eq, T_max=60)
    peq, _ = implied_cutoffs(p, rep.T, 41, x0=rep.x_star)
    lam_t, mu_t = policy_cutoffs(eq)
    lam_p, mu_p = policy_cutoffs(peq)
    h = eq.space.cell_width()
    j0 = int(round(p.mu0 * 40))
    i0 = int(round(rep.x_star[0] * 40))
    cells_lam = abs(lam_t[j0] - lam_p[j0]) / h
    cells_mu = abs(mu_t[i0] - mu_p[i0]) / h
    norm = float(np.linalg.norm(rep.residuals))
    dt = time.perf_counter() - t0
    ok = norm <= 1e-6 and cells_lam <= 2 + 1e-9 and cells_mu <= 2 + 1e-9 and dt < 120
    report(4, ok, f"punishment equivalence at 41x41: T={rep.T} bracket={rep.bracket} residual {norm:.2g}; "
                  f"lambda* {lam_t[j0]:.3f} vs {lam_p[j0]:.3f} ({cells_lam:.0f} cells), "
                  f"mu* {mu_t[i0]:.3f} vs {mu_p[i0]:.3f} ({cells_mu:.0f} cells); {dt:.0f}s")
    assert ok


def test_5_hazard_consistency(report, default_eq41):
    t0 = time.perf_counter()
    k, eq = default_eq41
    ens = simulate_paths(eq, k, horizon=25, n_paths=100_000, seed=5)
    bins = hazard_bins(ens)
    zmax = max(abs(b.z) for b in bins)
    dt = time.perf_counter() - t0
    ok = bool(bins) and zmax <= 3 and dt < 120
    report(5, ok, f"hazard per bin, 1e5 paths: {len(bins)} populated bins, max |z| {zmax:.2f}; {dt:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="the printed welfare-hazard identity is algebraically wrong; see ledger")
def test_6_welfare(report, default_eq41):
    t0 = time.perf_counter()
    k, eq = default_eq41
    ens = simulate_paths(eq, k, horizon=default_horizon(eq.params), n_paths=20_000, seed=6)
    w = welfare_estimate(ens, eq.params)
    rng = np.random.default_rng(6)
    pts = [rng.uniform(size=10_000) for _ in range(4)]
    printed, corrected = welfare_hazard_gaps(*pts, eq.params.B)
    dt = time.perf_counter() - t0
    mc_ok = abs(w.W_mc - w.W_formula) <= 3 * w.se_gap
    signs = w.dW_dC < 0 < w.dW_dB
    ok = mc_ok and printed <= 1e-12 and signs and dt < 120
    report(6, ok, f"welfare: |W_mc - W_formula|={abs(w.W_mc - w.W_formula):.3g} (3 SE {3 * w.se_gap:.3g}) "
                  f"ok={mc_ok}; printed identity gap {printed:.3g} (corrected form {corrected:.2g}); "
                  f"dW/dC={w.dW_dC:.3g}, dW/dB={w.dW_dB:.3g}; {dt:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="lambda*(q) increases in q on the computed leakage equilibria; see ledger")
def test_7_transparency(report):
    t0 = time.perf_counter()
    pts, lam_dec, _ = q_sweep(ModelParams(R=1.0), [0.2, 0.5, 0.8, 1.0], n_lam=201)
    lams = [pt.lambda_star for pt in pts]
    # noisy checks as kappa -> 1: posteriors and equilibrium hazards approach the exact-check model
    p = ModelParams(R=1.0)
    sp = StateSpace.grid2d(9)
    base = solve_equilibrium(BaselineKernel(p, sp))
    sel = np.arange(sp.n_normal)
    h0 = BaselineKernel(p, sp).hazard(sel, base.policies.sigma[sel], base.policies.rho[sel])
    lam, s = np.meshgrid(np.linspace(0, 1, 51), np.linspace(0, 1, 51))
    post_gap = haz_gap = 0.0
    for eta in (1e-3, 1e-5, 1e-7):
        post_gap = float(np.max(np.abs(bayes.noisy_good_posterior(lam, s, 1 - eta, 1 - eta)
                                       - bayes.posterior_truthful_check(lam, s))))
        k = noisy_kernel(p.with_(pi_T=1 - eta, pi_D=1 - eta), sp, "A")
        eq = solve_equilibrium(k)
        haz_gap = float(np.max(np.abs(k.hazard(sel, eq.policies.sigma[sel], eq.policies.rho[sel]) - h0)))
    noisy_ok = post_gap <= 1e-6 and haz_gap <= 1e-6
    dt = time.perf_counter() - t0
    ok = lam_dec and noisy_ok and dt < 300
    report(7, ok, f"lambda*(q) at R=1, n=201: {', '.join(f'{x:.4g}' for x in lams)} weakly decreasing={lam_dec}; "
                  f"noisy kappa->1: posterior gap {post_gap:.2g}, hazard gap {haz_gap:.2g}; {dt:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="the printed receiver derivative drops a term; flip not at R(1-theta)=C; see ledger")
def test_8_sce(report):
    rng = np.random.default_rng(8)
    worst_id = 0.0
    sigma_ok = True
    for _ in range(100):
        d, r_hat = rng.uniform(0.5, 0.99), rng.uniform(0, 1)
        p = ModelParams(delta=d)
        g = float(sce_sender_gain(1.0, r_hat, p))
        worst_id = max(worst_id, abs(g - p.B * (1 - d) / (1 - d + d * r_hat)))
        sigma_ok &= g > 0 and sce_equilibrium(p).sigma == 1.0
    # classification flip: just above and below R (1 - theta) = C
    flips = 0
    thetas = np.linspace(0, 1, 11)
    for th in thetas:
        p = ModelParams(theta=float(th), C=0.2)
        if th == 1:
            flips += 1
            continue
        R0 = p.C / (1 - th)
        lo = sce_equilibrium(p.with_(R=R0 * (1 - 1e-6))).case
        hi = sce_equilibrium(p.with_(R=R0 * (1 + 1e-6))).case
        flips += lo == "trust" and hi == "check"
    # closed-form values and the printed derivative
    vals_gap = der_printed = der_exact = 0.0
    for _ in range(100):
        d, rho, th, R, C = rng.uniform(0.5, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0, 1), rng.uniform(0, 2), rng.uniform(0.05, 1)
        p = ModelParams(delta=d, theta=th, R=R, C=C)
        s = 1 - th
        vs, vr = sce_values(1.0, rho, p)
        vals_gap = max(vals_gap, abs(vs - p.B / (1 - d + d * rho)),
                       abs(vr - (p.B * (1 - s) + rho * (R * s - C)) / (1 - d + d * rho * s)))
        h = 1e-6
        fd = (sce_values(1.0, rho + h, p)[1] - sce_values(1.0, rho - h, p)[1]) / (2 * h)
        der_printed = max(der_printed, abs(fd - (1 - d) * (R * s - C) / (1 - d + d * rho * s) ** 2))
        der_exact = max(der_exact, abs(fd - float(sce_dvr_drho(rho, s, p))))
    ok = worst_id <= 1e-10 and sigma_ok and flips == len(thetas) and vals_gap <= 1e-10 and der_printed <= 1e-6
    report(8, ok, f"SCE: sigma*=1 on 100 draws={sigma_ok}, identity gap {worst_id:.2g}; flip at R(1-theta)=C for "
                  f"{flips}/{len(thetas)} theta values; closed forms gap {vals_gap:.2g}; derivative vs printed form "
                  f"{der_printed:.3g}, vs exact form {der_exact:.2g}")
    assert ok


def test_9_ct_embedding(report):
    t0 = time.perf_counter()
    p = ModelParams()
    _, order = embedding_convergence(p, lambda x: 1.0 - 0.5 * x, lambda x: 0.5, [0.1, 0.05, 0.025, 0.0125, 0.00625])
    recs = simulate_ct_paths(p.with_(eps_alarm=0.1), lambda x: 1.0, lambda x: 0.0, 10.0, 10_000, seed=9)
    fin = np.array([r.final_belief for r in recs])
    se = fin.std(ddof=1) / math.sqrt(fin.size)
    z = (fin.mean() - p.lambda0) / se
    dt = time.perf_counter() - t0
    ok = order >= 0.9 and abs(z) <= 3 and dt < 180
    report(9, ok, f"CT embedding: fitted order {order:.3f}; belief martingale over 1e4 paths mean "
                  f"{fin.mean():.4f} (z={z:.2f}); {dt:.0f}s")
    assert ok


COMMANDS = [
    ["bench"],
    ["eq", "--grid-n", "9", "--R", "1"],
    ["cutoffs", "--grid-n", "21"],
    ["sweep", "--target", "B", "--values", "1,1.5,2"],
    ["punish", "--grid-n", "21"],
    ["variant", "--variant", "sce"],
    ["variant", "--variant", "noisy_b", "--grid-n", "9", "--pi_T", "0.9", "--pi_D", "0.8"],
    ["variant", "--variant", "leakage", "--grid-n", "41", "--R", "1", "--q_grid", "0.5,1"],
    ["simulate", "--grid-n", "11", "--n-paths", "3000", "--horizon", "30", "--seed", "4"],
    ["ct", "--n-paths", "300"],
    ["check"],
]


def test_10_determinism(report, tmp_path):
    import json

    bad = []
    for i, cmd in enumerate(COMMANDS):
        outs = []
        for rep in ("a", "b"):
            d = tmp_path / f"{i}{rep}"
            rc = cli.run([*cmd, "--out-dir", str(d)])
            files = {f.name: f.read_bytes() for f in sorted(d.iterdir()) if not f.name.endswith("_manifest.json")}
            man = json.loads((d / f"{cmd[0]}_manifest.json").read_text())
            man.pop("wall_clock_s")
            outs.append((rc, files, man))
        if outs[0] != outs[1]:
            bad.append(cmd[0])
    ok = not bad
    report(10, ok, f"determinism: {len(COMMANDS)} command runs repeated, byte-identical outputs"
                   + (f"; differing: {bad}" if bad else ""))
    assert ok
