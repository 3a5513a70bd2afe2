"""Command-line entry point: ``trustcheck <command> [--config F] [--key value ...]``.

Exit codes: 0 ok, 1 config error, 2 non-convergence, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import bayes
from .core_model import PARAM_KEYS, ModelParams, ParamError, StateSpace, parse_kv, params_from_mapping, validate_params

COMMANDS = ("eq", "cutoffs", "bench", "sweep", "punish", "variant", "simulate", "ct", "check")
EXIT_CONFIG, EXIT_NOCONV, EXIT_INVARIANT = 1, 2, 3

# run options and their defaults; everything else is a model parameter
RUN_DEFAULTS = {
    "grid_n": None,
    "tol": 1e-6,
    "threads": 1,
    "seed": 0,
    "selection": "deterrent",
    "node_search": "reply",
    "sigma_bar": 1.0,
    "sigma_bar_prime": 0.5,
    "target": "C",
    "values": "0.05,0.1,0.15,0.2",
    "mode": "benchmark",
    "variant": "leakage",
    "q_grid": "0.2,0.5,0.8,1.0",
    "eps_grid": "0.1,0.05,0.01",
    "T_max": 50,
    "n_paths": 10000,
    "horizon": None,
    "ct_horizon": 10.0,
    "ct_sigma": 1.0,
    "ct_r": 0.5,
    "dt_list": "0.1,0.05,0.025,0.0125",
}


class ConfigError(Exception):
    pass


class NotConverged(Exception):
    pass


def g9(x) -> str:
    """Nine significant digits; integers and strings as they are."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    if isinstance(x, (tuple, list, np.ndarray)):
        return "[" + " ".join(g9(v) for v in x) + "]"
    return str(x)


def kv(d: dict) -> str:
    return "".join(f"{k}={g9(v)}\n" for k, v in d.items())


def table(header, rows) -> str:
    return ",".join(header) + "\n" + "".join(",".join(g9(v) for v in r) + "\n" for r in rows)


def floats(s) -> list[float]:
    try:
        return [float(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"not a number list: {s!r}") from None


# ---------------------------------------------------------------------------
# configuration


def _coerce(key, value):
    default = RUN_DEFAULTS[key]
    if value is None and default is None:
        return None
    if key in ("grid_n", "threads", "seed", "T_max", "n_paths", "horizon"):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: not an integer: {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: not a number: {value!r}") from None
    return str(value)


def _from_manifest(path, command) -> dict:
    try:
        m = json.loads(Path(path).read_text())
        if m["command"] != command:
            raise ConfigError(f"manifest is for {m['command']!r}, not {command!r}")
        return {**m["params"], **m["run"]}
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"bad manifest {path}: {e}") from None


def resolve_config(config_path, overrides: dict, base: dict | None = None) -> tuple[ModelParams, dict]:
    raw = dict(base or {})
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        raw.update(parse_kv(p.read_text()))
    raw.update(overrides)
    run = dict(RUN_DEFAULTS)
    prm = {}
    for k, v in raw.items():
        if k in RUN_DEFAULTS:
            run[k] = _coerce(k, v)
        elif k in PARAM_KEYS:
            prm[k] = v
        else:
            raise ConfigError(f"unknown key: {k}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = validate_params(params_from_mapping(prm))
    if run["selection"] not in ("deterrent", "lenient"):
        raise ConfigError("selection must be deterrent or lenient")
    if run["node_search"] not in ("reply", "exhaustive"):
        raise ConfigError("node_search must be reply or exhaustive")
    return params, run


def _cfg(run):
    from .value_engine import SolverConfig
    return SolverConfig(tol_eq=run["tol"], selection=run["selection"], node_search=run["node_search"])


def _grid(run, default):
    n = run["grid_n"] or default
    if n < 3:
        raise ConfigError("grid_n must be at least 3")
    return n


# ---------------------------------------------------------------------------
# commands; each returns {file name: text}


def _policy_table(kernel, eq):
    from .value_engine import node_residuals
    sp = eq.space
    es, er = node_residuals(kernel, eq.policies, eq.values)
    n = sp.n_normal
    cols = [sp.lam[:n], sp.mu[:n], eq.policies.sigma[:n], eq.policies.rho[:n], eq.values.v_s[:n],
            eq.values.v_r[:n], es[:n], er[:n]]
    return table(("lam", "mu", "sigma", "rho", "V_s", "V_r", "res_s", "res_r"), zip(*cols))


def _eq_summary(eq):
    from .value_engine import total_violations
    return {"kernel": eq.kernel_name, "converged": eq.converged, "residual": eq.residual_sup,
            "iterations": eq.iterations, "mixing_nodes": len(eq.mixing_nodes),
            "mixing_point": eq.mixing_point if eq.mixing_point else "none",
            "monotonicity_violations": total_violations(eq.diagnostics["monotonicity"])}


def _solve_baseline(params, run, default_n=41):
    from .value_engine import BaselineKernel, solve_equilibrium
    k = BaselineKernel(params, StateSpace.grid2d(_grid(run, default_n)))
    return k, solve_equilibrium(k, _cfg(run))


def cmd_eq(params, run):
    k, eq = _solve_baseline(params, run)
    files = {"eq_policies.csv": _policy_table(k, eq), "eq_summary.txt": kv(_eq_summary(eq))}
    return files, eq.converged


def cmd_cutoffs(params, run):
    from .cutoff_solver import NoRootInBox, hazard, policy_cutoffs, solve_mixing_point
    k, eq = _solve_baseline(params, run)
    lam_c, mu_c = policy_cutoffs(eq)
    sp = eq.space
    files = {"cutoffs_curves.csv": table(("mu", "lambda_star_of_mu"), zip(sp.mu_axis, lam_c))
             + "\n" + table(("lam", "mu_star_of_lambda"), zip(sp.lam_axis, mu_c))}
    summ = dict(_eq_summary(eq))
    ok = eq.converged
    try:
        ms = solve_mixing_point(params, eq, kernel=k, tol=run["tol"] * 1e-2)
        summ.update(x_star=ms.x_star, residuals=ms.residuals, jacobian=ms.jacobian.ravel(), det=ms.det,
                    locally_unique=ms.locally_unique, jacobian_stable=ms.jacobian_stable, method=ms.method,
                    hazard=hazard(ms.x_star, eq.policies, params, kernel=k))
    except NoRootInBox as e:
        summ.update(x_star="none", status=str(e))
        ok = False
    files["cutoffs_summary.txt"] = kv(summ)
    return files, ok


def cmd_bench(params, run):
    from .cutoff_solver import closed_form_benchmark
    bm = closed_form_benchmark(params, run["sigma_bar"], run["sigma_bar_prime"])
    d = {"delta": params.delta, "B": params.B, "C": params.C, "sigma_bar": run["sigma_bar"],
         "sigma_bar_prime": run["sigma_bar_prime"], **asdict(bm)}
    return {"bench.txt": kv(d)}, True


def cmd_sweep(params, run):
    from .cutoff_solver import comparative_statics_sweep, format_sweep
    sp = StateSpace.grid2d(_grid(run, 21)) if run["mode"] == "full" else None
    try:
        rows, signs = comparative_statics_sweep(params, run["target"], floats(run["values"]), mode=run["mode"],
                                                sigma_bar=run["sigma_bar"], sigma_bar_prime=run["sigma_bar_prime"],
                                                space=sp, cfg=_cfg(run))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return {"sweep.csv": format_sweep(rows), "sweep_signs.txt": kv(signs)}, True


def cmd_punish(params, run):
    from .cutoff_solver import policy_cutoffs
    from .punishment import NoTWithinCap, find_equivalent_T, implied_cutoffs
    from .cutoff_solver import NoRootInBox
    n = _grid(run, 41)
    k, eq = _solve_baseline(params, run)
    summ = {"termination_converged": eq.converged, "termination_mixing_point": eq.mixing_point or "none"}
    try:
        rep = find_equivalent_T(params, eq, T_max=run["T_max"], tol=run["tol"])
    except (NoTWithinCap, NoRootInBox) as e:
        summ["status"] = str(e)
        return {"punish_summary.txt": kv(summ)}, False
    peq, x_p = implied_cutoffs(params, rep.T, n, cfg=_cfg(run), x0=rep.x_star)
    lam_t, _ = policy_cutoffs(eq)
    lam_p, _ = policy_cutoffs(peq)
    h = eq.space.cell_width()
    j0 = int(round(params.mu0 * (eq.space.n_mu - 1)))
    dev = np.abs(lam_t - lam_p)
    summ.update(T=rep.T, bracket=rep.bracket, x_star=rep.x_star, base_mixes=rep.base_mixes,
                adjusted_mixes=rep.adjusted_mixes, residuals=rep.residuals,
                residual_norm=float(np.linalg.norm(rep.residuals)), punishment_converged=peq.converged,
                lambda_star_term_at_mu0=lam_t[j0], lambda_star_pun_at_mu0=lam_p[j0],
                cells_at_mu0=float(abs(lam_t[j0] - lam_p[j0]) / h),
                cells_sup=float(np.nanmax(dev) / h) if np.isfinite(dev).any() else math.nan,
                punishment_mixing_point=x_p or "none")
    files = {"punish_summary.txt": kv(summ),
             "punish_norms.csv": table(("T", "residual_norm"), enumerate(rep.norms)),
             "punish_curves.csv": table(("mu", "lambda_star_term", "lambda_star_pun"),
                                        zip(eq.space.mu_axis, lam_t, lam_p))}
    return files, eq.converged and peq.converged


def cmd_variant(params, run):
    from . import variants as V
    from .value_engine import solve_equilibrium
    name = run["variant"]
    if name == "sce":
        r = V.sce_equilibrium(params)
        return {"variant_sce.txt": kv(asdict(r))}, True
    if name == "leakage":
        pts, lam_mono, haz_mono = V.q_sweep(params, floats(run["q_grid"]), _grid(run, 401), _cfg(run))
        rows = [(p.value, p.lambda_star, p.hazard_at_cutoff, p.converged, p.residual) for p in pts]
        summ = {"lambda_star_weakly_decreasing": lam_mono, "hazard_weakly_decreasing": haz_mono}
        return ({"variant_leakage.csv": table(("q", "lambda_star", "hazard", "converged", "residual"), rows),
                 "variant_leakage_summary.txt": kv(summ)}, all(p.converged for p in pts))
    if name == "alarm":
        pts, diffs = V.epsilon_sweep(params, floats(run["eps_grid"]), _grid(run, 401), _cfg(run))
        rows = [(p.value, p.lambda_star, p.hazard_at_cutoff, p.converged, p.residual) for p in pts]
        return ({"variant_alarm.csv": table(("eps", "lambda_star", "hazard", "converged", "residual"), rows),
                 "variant_alarm_summary.txt": kv({"successive_differences": diffs})},
                all(p.converged for p in pts))
    if name in ("noisy_a", "noisy_b", "silent"):
        try:
            k = V.make_kernel(name, params, _grid(run, 41))
        except (ParamError, ValueError) as e:
            raise ConfigError(str(e)) from None
        eq = solve_equilibrium(k, _cfg(run))
        return {f"variant_{name}_policies.csv": _policy_table(k, eq),
                f"variant_{name}_summary.txt": kv(_eq_summary(eq))}, eq.converged
    raise ConfigError(f"unknown variant {name!r}")


def cmd_simulate(params, run):
    from . import simulator as S
    k, eq = _solve_baseline(params, run)
    if not eq.converged:
        return {"simulate_summary.txt": kv(_eq_summary(eq))}, False
    H = run["horizon"] or S.default_horizon(params)
    ens = S.simulate_paths(eq, k, horizon=H, n_paths=run["n_paths"], seed=run["seed"])
    summ = {"n_paths": ens.n_paths, "horizon": H, "terminated_share": float(ens.terminated.mean())}
    w = S.welfare_estimate(ens)
    summ.update({f"welfare_{k_}": v for k_, v in asdict(w).items()})
    t = S.taper_statistic(ens)
    summ.update(taper_correlation=t.correlation, taper_ci=t.ci)
    try:
        b = S.bunching_statistic(ens, seed=run["seed"])
        summ.update(bunching_ratio=b.ratio, bunching_ci=b.ci, bunching_spurt_periods=b.spurt_periods)
    except (S.InsufficientEvents, ValueError) as e:
        summ.update(bunching_status=str(e))
    bins = S.hazard_bins(ens)
    hb = table(("lam_bin", "mu_bin", "visits", "observed", "expected", "se", "z"),
               [(b_.i, b_.j, b_.visits, b_.observed, b_.expected, b_.se, b_.z) for b_ in bins])
    out = Path(run["_out_dir"]) / "simulate_paths.csv"
    ens.write(out)
    return {"simulate_summary.txt": kv(summ), "simulate_hazard_bins.csv": hb, "simulate_paths.csv": None}, True


def cmd_ct(params, run):
    from . import ct_bridge as CT
    s0, r0 = run["ct_sigma"], run["ct_r"]
    sf, rf = (lambda x: s0), (lambda x: r0)
    try:
        rows, order = CT.embedding_convergence(params, sf, rf, floats(run["dt_list"]))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    emb = table(("dt", "delta", "eps_period", "sup_error", "sup_error_scaled_sigma", "jump_error"),
                [tuple(asdict(r).values()) for r in rows])
    recs = CT.simulate_ct_paths(params, sf, lambda x: 0.0, run["ct_horizon"], run["n_paths"], run["seed"])
    fin = np.array([r.final_belief for r in recs])
    se = fin.std(ddof=1) / math.sqrt(len(fin))
    summ = {"fitted_order": order, "martingale_mean": fin.mean(), "martingale_se": se,
            "martingale_z": (fin.mean() - params.lambda0) / se if se > 0 else 0.0,
            "alarms_per_path": float(np.mean([r.alarm_count() for r in recs]))}
    return {"ct_embedding.csv": emb, "ct_summary.txt": kv(summ)}, True


# ---------------------------------------------------------------------------
# invariant suite


def invariant_suite(params: ModelParams | None = None) -> list[tuple[str, bool, str]]:
    """Fast checks of identities that hold for any correct implementation."""
    from . import ct_bridge as CT
    from . import variants as V
    from .cutoff_solver import closed_form_benchmark
    from .simulator import welfare_hazard_gaps
    from .value_engine import BaselineKernel, solve_equilibrium

    p = params or ModelParams()
    rng = np.random.default_rng(12345)
    lam, mu, sig, rho = (rng.uniform(0.01, 0.99, 500) for _ in range(4))
    out = []

    def add(name, ok, detail=""):
        out.append((name, bool(ok), detail))

    lp = bayes.posterior_truthful_check(lam, sig)
    e = np.max(np.abs(bayes.truth_prob(lam, sig) * lp - lam))
    add("honesty_martingale", e <= 1e-12, g9(e))
    mp = bayes.posterior_vigilance(mu, rho)
    e = np.max(np.abs(bayes.check_prob(mu, rho) * mp - mu))
    add("vigilance_martingale", e <= 1e-12, g9(e))
    add("honesty_up_after_truth", np.all(lp >= lam - 1e-15))
    eps, kap = 0.05, 2.0
    l1, l0 = bayes.alarm_posteriors(lam, sig, eps, kap)
    a = bayes.alarm_rate(lam, sig, eps, kap)
    e = np.max(np.abs(a * l1 + (1 - a) * l0 - lam))
    add("alarm_martingale", e <= 1e-12, g9(e))
    q = 0.6
    pc = bayes.check_prob(mu, rho)
    d1, d0 = bayes.silent_leakage_posteriors(lam, sig, pc, q)
    surv = 1 - q * pc * bayes.truth_prob(lam, sig) - pc * (1 - lam) * sig
    e = np.max(np.abs(q * pc * bayes.truth_prob(lam, sig) * d1 + surv * d0 - lam))
    add("leakage_martingale", e <= 1e-12, g9(e))
    e = np.max(np.abs(bayes.noisy_good_posterior(lam, sig, 1.0, 1.0) - lp))
    add("noisy_exact_limit", e <= 1e-12, g9(e))
    for d in (0.8, 0.9, 0.95):
        bm = closed_form_benchmark(p.with_(delta=d, C=0.01), 1.0, 0.5, 0.1)
        ok = abs(bm.p_star - (1 - d) / d) <= 1e-12 and bm.p_bounds[0] <= bm.p_star <= bm.p_bounds[1]
        add(f"benchmark_delta_{d}", ok and bm.lambda_bounds[0] <= bm.lambda_star <= bm.lambda_bounds[1])
    noisy = p.with_(pi_T=0.9, pi_D=0.8)
    kern = [BaselineKernel(p, StateSpace.grid2d(5)), V.silent_two_sided_kernel(p, StateSpace.grid2d(5)),
            V.noisy_kernel(noisy, StateSpace.grid2d(5), "A"), V.noisy_kernel(noisy, StateSpace.grid2d(5), "B"),
            V.leakage_kernel(p.with_(q=0.5), 5), V.alarm_kernel(p, 5)]
    for k in kern:
        lt = k.leaf_table_at(lam[:50], mu[:50] if not k.space.one_d else k.space.mu_fixed, 0, sig[:50], rho[:50])
        worst = 0.0
        for a_s in (0, 1):
            for a_r in (0, 1):
                m = lt.valid & (lt.a_s == a_s) & (lt.a_r == a_r)
                worst = max(worst, float(np.max(np.abs(np.where(m, lt.prob, 0).sum(axis=1) - 1))))
        add(f"branch_probs_{k.name}", worst <= 1e-12, g9(worst))
    for R in (0.0, 1.0):
        eq = solve_equilibrium(BaselineKernel(p.with_(R=R), StateSpace.grid2d(11)))
        add(f"equilibrium_residual_R{g9(R)}", eq.converged, g9(eq.residual_sup))
    _, gc = welfare_hazard_gaps(lam, mu, sig, rho, p.B)
    add("welfare_hazard_decomposition", gc <= 1e-12, g9(gc))
    cl1, _ = bayes.alarm_posteriors(lam, sig, p.eps_alarm, p.kappa_alarm)
    e = np.max(np.abs(CT.jump_target(lam, sig, p) - cl1))
    add("ct_jump_consistency", e <= 1e-12, g9(e))
    grid = np.linspace(0, 1, 201)
    e = max(abs(CT.generator_apply(np.ones_like(grid), grid, x, 1.0, p)) +
            abs(CT.generator_apply(grid, grid, x, s, p)) for x, s in zip(lam[:50], sig[:50]))
    add("ct_generator_martingale", e <= 1e-10, g9(e))
    gain = V.sce_sender_gain(1.0, rho, p)
    add("sce_deception_dominant", np.all(gain > 0), g9(np.min(gain)))
    return out


def cmd_check(params, run):
    res = invariant_suite(params)
    text = "".join(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip() + "\n" for name, ok, detail in res)
    return {"check.txt": text}, all(ok for _, ok, _ in res)


HANDLERS = {"eq": cmd_eq, "cutoffs": cmd_cutoffs, "bench": cmd_bench, "sweep": cmd_sweep, "punish": cmd_punish,
            "variant": cmd_variant, "simulate": cmd_simulate, "ct": cmd_ct, "check": cmd_check}


# ---------------------------------------------------------------------------


def _parse(argv):
    ap = argparse.ArgumentParser(prog="trustcheck", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config")
    ap.add_argument("--manifest", help="replay the params and run options of a manifest")
    ap.add_argument("--out-dir", default="out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--grid-n", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--threads", type=int)
    ns, rest = ap.parse_known_args(argv)
    extra = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or i + 1 >= len(rest):
            raise ConfigError(f"expected --key value, got {tok!r}")
        extra[tok[2:].replace("-", "_") if tok[2:].replace("-", "_") in RUN_DEFAULTS else tok[2:]] = rest[i + 1]
        i += 2
    for k in ("seed", "grid_n", "tol", "threads"):
        if getattr(ns, k) is not None:
            extra[k] = getattr(ns, k)
    return ns, extra


def run(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        ns, extra = _parse(sys.argv[1:] if argv is None else argv)
        base = _from_manifest(ns.manifest, ns.command) if ns.manifest else None
        params, cfg = resolve_config(ns.config, extra, base)
    except (ConfigError, ParamError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg["_out_dir"] = str(out)
    try:
        files, ok = HANDLERS[ns.command](params, cfg)
    except (ConfigError, ParamError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    digests = {}
    for name, text in files.items():
        path = out / name
        if text is not None:
            path.write_text(text)
        digests[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    cfg.pop("_out_dir")
    manifest = {"command": ns.command, "params": {f.name: getattr(params, f.name) for f in fields(params)},
                "run": cfg, "seed": cfg["seed"], "version": __version__, "outputs": digests,
                "wall_clock_s": round(time.perf_counter() - t0, 3)}
    (out / f"{ns.command}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name in files:
        print(out / name)
    if not ok:
        return EXIT_INVARIANT if ns.command == "check" else EXIT_NOCONV
    return 0


def main():
    sys.exit(run())
