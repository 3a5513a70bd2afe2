"""Posterior maps and branch probabilities.

Every function accepts scalars or numpy arrays and broadcasts. Zero denominators
resolve to the tremble-limit posterior named in each docstring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _ratio(num, den, fallback):
    num, den, fallback = np.broadcast_arrays(
        np.asarray(num, float), np.asarray(den, float), np.asarray(fallback, float))
    out = np.array(fallback, dtype=float, copy=True)
    ok = den > 0
    np.divide(num, den, out=out, where=ok)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BranchProbs:
    p_check: float | np.ndarray
    p_truth_given_check: float | np.ndarray
    p_detect: float | np.ndarray


def check_prob(mu, rho):
    return np.asarray(mu) + (1.0 - np.asarray(mu)) * np.asarray(rho)


def truth_prob(lam, sigma):
    return np.asarray(lam) + (1.0 - np.asarray(lam)) * (1.0 - np.asarray(sigma))


def branch_probabilities(lam, mu, sigma, rho) -> BranchProbs:
    pc = check_prob(mu, rho)
    pt = truth_prob(lam, sigma)
    pd = pc * (1.0 - np.asarray(lam)) * np.asarray(sigma)
    return BranchProbs(pc, pt, pd)


def posterior_truthful_check(lam, sigma):
    """Honesty belief after a public truthful check. (lam=0, sigma=1) maps to 0."""
    lam = np.asarray(lam, float)
    return _ratio(lam, truth_prob(lam, sigma), 0.0)


def posterior_vigilance(mu, rho):
    """Vigilance belief after a public check. A check at rho=0 reveals the vigilant
    type when mu > 0 and is read as a strategic tremble when mu = 0."""
    mu = np.asarray(mu, float)
    return _ratio(mu, check_prob(mu, rho), np.where(mu > 0, 1.0, 0.0))


def noisy_good_posterior(lam, sigma, pi_T, pi_D):
    """Honesty belief after a good signal from a noisy check (uninformative limit: lam).

    The honest type produces a good signal with probability pi_T, a strategic
    sender with pi_T (1 - sigma) + (1 - pi_D) sigma.
    """
    lam = np.asarray(lam, float)
    sigma = np.asarray(sigma, float)
    pi_T = np.asarray(pi_T, float)
    den = pi_T * truth_prob(lam, sigma) + (1.0 - np.asarray(pi_D)) * (1.0 - lam) * sigma
    return _ratio(pi_T * lam, den, lam)


def silent_leakage_posteriors(lam, sigma, p_check, q):
    """(after disclosure, after silence and survival) under silent audits with leakage q.

    The disclosure posterior under sigma=1 is the limit 0 from the truthful-check map.
    """
    lam = np.asarray(lam, float)
    sigma = np.asarray(sigma, float)
    p_check = np.asarray(p_check, float)
    lam1 = posterior_truthful_check(lam, sigma)
    honest = lam * (1.0 - q * p_check)
    strat = (1.0 - lam) * (sigma * (1.0 - p_check) + (1.0 - sigma) * (1.0 - q * p_check))
    lam0 = _ratio(honest, honest + strat, lam)
    return lam1, lam0


def alarm_rate(lam, sigma, eps, kappa):
    """Observer's probability of an alarm: eps * (1 + (1-lam) sigma (kappa-1))."""
    return eps * (1.0 + (1.0 - np.asarray(lam)) * np.asarray(sigma) * (kappa - 1.0))


def alarm_posteriors(lam, sigma, eps, kappa):
    """(after alarm, after quiet) honesty beliefs under the eps-alarm signal."""
    lam = np.asarray(lam, float)
    sigma = np.asarray(sigma, float)
    lam1 = _ratio(lam, lam + (1.0 - lam) * (kappa * sigma + 1.0 - sigma), lam)
    a = (1.0 - eps) * lam
    lam0 = _ratio(a, a + (1.0 - lam) * (1.0 - kappa * eps * sigma - eps * (1.0 - sigma)), lam)
    return lam1, lam0
