"""Parameters, belief states, grids and field containers shared by every module."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np


class ParamError(ValueError):
    """A model parameter violates one of its invariants."""


@dataclass(frozen=True)
class ModelParams:
    B: float = 1.0
    C: float = 0.2
    R: float = 0.0
    delta: float = 0.9
    lambda0: float = 0.5
    mu0: float = 0.2
    theta: float = 0.5
    # variant knobs
    q: float = 1.0
    pi_T: float = 1.0
    pi_D: float = 1.0
    eps_alarm: float = 0.05
    kappa_alarm: float = 2.0
    eps_band: float = 0.1
    T_pun: int = 5
    beta_ct: float = 1.0
    r_bar: float = 1.0

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    @property
    def kappa_noise(self) -> float:
        """Precision of a noisy check, pi_T + pi_D - 1."""
        return self.pi_T + self.pi_D - 1.0

    @property
    def v_max(self) -> float:
        return (self.B + self.R + self.C) / (1.0 - self.delta)


PARAM_KEYS = tuple(f.name for f in fields(ModelParams))


def _finite(p: ModelParams) -> str | None:
    for f in fields(p):
        v = getattr(p, f.name)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            return f"{f.name} is not a finite number"
    return None


def validate_params(p: ModelParams, noisy: bool = False) -> ModelParams:
    """Return ``p`` unchanged or raise ParamError naming the first broken invariant."""
    checks = [
        (lambda: _finite(p) is None, _finite(p) or ""),
        (lambda: p.B > 0, "B must be positive"),
        (lambda: p.C > 0, "C must be positive"),
        (lambda: p.R >= 0, "R must be nonnegative"),
        (lambda: 0 < p.delta < 1, "delta out of (0,1)"),
        (lambda: 0 < p.lambda0 < 1, "lambda0 out of (0,1)"),
        (lambda: 0 <= p.mu0 < 1, "mu0 out of [0,1)"),
        (lambda: 0 <= p.theta <= 1, "theta out of [0,1]"),
        (lambda: 0 <= p.q <= 1, "q out of [0,1]"),
        (lambda: 0 <= p.pi_T <= 1, "pi_T out of [0,1]"),
        (lambda: 0 <= p.pi_D <= 1, "pi_D out of [0,1]"),
        (lambda: 0 < p.eps_alarm < 1, "eps_alarm out of (0,1)"),
        (lambda: p.kappa_alarm > 1, "kappa_alarm must exceed 1"),
        (lambda: p.kappa_alarm * p.eps_alarm <= 1, "kappa*eps exceeds 1"),
        (lambda: 0 <= p.eps_band < 1, "eps_band out of [0,1)"),
        (lambda: float(p.T_pun).is_integer() and p.T_pun >= 0, "T_pun must be a nonnegative integer"),
        (lambda: p.beta_ct > 0, "beta_ct must be positive"),
        (lambda: p.r_bar > 0, "r_bar must be positive"),
    ]
    if noisy:
        checks.append((lambda: 0 <= p.kappa_noise <= 1, "pi_T+pi_D-1 out of [0,1]"))
    for ok, msg in checks:
        if not ok():
            raise ParamError(msg)
    if p.C >= p.B:
        warnings.warn("C >= B: outside the main-text parameter region", stacklevel=2)
    return p


def parse_kv(text: str) -> dict[str, str]:
    """Parse a flat ``key = value`` config. Blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ParamError(f"line {lineno}: empty key")
        out[k] = v
    return out


def params_from_mapping(d: Mapping[str, object], base: ModelParams | None = None) -> ModelParams:
    """Build params from string or numeric values. Unknown keys are an error."""
    base = base or ModelParams()
    kw = {}
    for k, v in d.items():
        if k not in PARAM_KEYS:
            raise ParamError(f"unknown key: {k}")
        try:
            kw[k] = int(v) if k == "T_pun" else float(v)
        except (TypeError, ValueError):
            raise ParamError(f"{k}: not a number: {v!r}") from None
    return replace(base, **kw)


# ---------------------------------------------------------------------------
# belief states

NORMAL = 0
TERMINATED = -1


@dataclass(frozen=True)
class BeliefState:
    """Public state. ``mode`` is NORMAL, TERMINATED, or k >= 1 for punishment period k."""

    lam: float
    mu: float = 0.0
    mode: int = NORMAL

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0 and 0.0 <= self.mu <= 1.0):
            raise ParamError("belief out of [0,1]")
        if self.mode < TERMINATED:
            raise ParamError("bad mode")

    @property
    def terminated(self) -> bool:
        return self.mode == TERMINATED


# ---------------------------------------------------------------------------
# grids and state spaces


def uniform_axis(n: int) -> np.ndarray:
    if n < 2:
        raise ParamError("grid needs at least 2 nodes")
    a = np.linspace(0.0, 1.0, n)
    a[0], a[-1] = 0.0, 1.0
    return a


def _axis_stencil(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Left node index and right weight for linear interpolation on a uniform [0,1] axis."""
    s = np.clip(x, 0.0, 1.0) * (n - 1)
    i = np.minimum(s.astype(np.int64), n - 2)
    t = s - i
    # snap tiny offsets so node values come back exactly
    t[np.abs(t) < 1e-13] = 0.0
    t[np.abs(t - 1.0) < 1e-13] = 1.0
    return i, t


@dataclass(frozen=True)
class StateSpace:
    """Flat index over Normal nodes followed by punishment chain nodes.

    Normal node (i, j) has index ``i * n_mu + j``. With ``one_d`` the mu axis is
    dropped and ``mu_fixed`` is carried for check probabilities. Punishment node
    (k, i), k = 1..T, has index ``n_normal + (k - 1) * n_lam + i``.
    """

    n_lam: int
    n_mu: int = 1
    one_d: bool = False
    mu_fixed: float = 0.0
    T: int = 0
    lam_axis: np.ndarray = field(init=False, repr=False, compare=False)
    mu_axis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lam_axis", uniform_axis(self.n_lam))
        if self.one_d:
            object.__setattr__(self, "n_mu", 1)
            object.__setattr__(self, "mu_axis", np.array([self.mu_fixed]))
        else:
            object.__setattr__(self, "mu_axis", uniform_axis(self.n_mu))

    @classmethod
    def grid2d(cls, n_lam: int, n_mu: int | None = None, T: int = 0) -> "StateSpace":
        return cls(n_lam=n_lam, n_mu=n_mu or n_lam, T=T)

    @classmethod
    def grid1d(cls, n_lam: int, mu_fixed: float) -> "StateSpace":
        return cls(n_lam=n_lam, one_d=True, mu_fixed=mu_fixed)

    @property
    def n_normal(self) -> int:
        return self.n_lam * self.n_mu

    @property
    def size(self) -> int:
        return self.n_normal + self.T * self.n_lam

    @property
    def lam(self) -> np.ndarray:
        """Lambda coordinate of every state."""
        ln = np.repeat(self.lam_axis, self.n_mu)
        return np.concatenate([ln, np.tile(self.lam_axis, self.T)])

    @property
    def mu(self) -> np.ndarray:
        mn = np.tile(self.mu_axis, self.n_lam)
        return np.concatenate([mn, np.zeros(self.T * self.n_lam)])

    @property
    def mode(self) -> np.ndarray:
        m = np.zeros(self.size, dtype=np.int64)
        for k in range(1, self.T + 1):
            a = self.n_normal + (k - 1) * self.n_lam
            m[a:a + self.n_lam] = k
        return m

    def lam_index(self) -> np.ndarray:
        """Lambda node index of every state."""
        ln = np.repeat(np.arange(self.n_lam), self.n_mu)
        return np.concatenate([ln, np.tile(np.arange(self.n_lam), self.T)])

    def normal_index(self, i, j=0):
        return np.asarray(i) * self.n_mu + np.asarray(j)

    def pun_index(self, k, i):
        return self.n_normal + (np.asarray(k) - 1) * self.n_lam + np.asarray(i)

    def stencil(self, lam, mu=None) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation stencil (flat indices, weights) for Normal-mode points."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        il, tl = _axis_stencil(lam, self.n_lam)
        if self.one_d:
            idx = np.empty(lam.shape + (2,), dtype=np.int64)
            w = np.empty(lam.shape + (2,))
            idx[..., 0] = il; idx[..., 1] = il + 1
            w[..., 0] = 1.0 - tl; w[..., 1] = tl
            return idx, w
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.shape != lam.shape:
            mu = np.broadcast_to(mu, lam.shape)
        im, tm = _axis_stencil(mu, self.n_mu)
        n = self.n_mu
        base = il * n + im
        idx = np.empty(lam.shape + (4,), dtype=np.int64)
        idx[..., 0] = base; idx[..., 1] = base + 1
        idx[..., 2] = base + n; idx[..., 3] = base + n + 1
        w = np.empty(lam.shape + (4,))
        w[..., 0] = (1 - tl) * (1 - tm); w[..., 1] = (1 - tl) * tm
        w[..., 2] = tl * (1 - tm); w[..., 3] = tl * tm
        return idx, w

    def interp(self, values: np.ndarray, lam, mu=None) -> np.ndarray:
        idx, w = self.stencil(lam, mu)
        return np.sum(values[idx] * w, axis=-1)

    def as_grid(self, arr: np.ndarray) -> np.ndarray:
        """Normal-mode slice reshaped to (n_lam, n_mu)."""
        return np.asarray(arr)[: self.n_normal].reshape(self.n_lam, self.n_mu)

    def cell_width(self) -> float:
        return 1.0 / (self.n_lam - 1)


@dataclass(frozen=True)
class PolicyField:
    space: StateSpace
    sigma: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for a in (self.sigma, self.rho):
            if a.shape != (self.space.size,):
                raise ParamError("policy shape mismatch")
            if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
                raise ParamError("policy entry out of [0,1]")

    @classmethod
    def constant(cls, space: StateSpace, sigma: float, rho: float) -> "PolicyField":
        return cls(space, np.full(space.size, float(sigma)), np.full(space.size, float(rho)))

    def at(self, lam, mu=None) -> tuple[np.ndarray, np.ndarray]:
        """Policies at off-grid Normal points by the same interpolation as values."""
        return self.space.interp(self.sigma, lam, mu), self.space.interp(self.rho, lam, mu)


@dataclass(frozen=True)
class ValueField:
    space: StateSpace
    v_s: np.ndarray
    v_r: np.ndarray
    rule: str = "bilinear"

    def __post_init__(self):
        if not (np.all(np.isfinite(self.v_s)) and np.all(np.isfinite(self.v_r))):
            raise ParamError("non-finite value")

    @classmethod
    def zeros(cls, space: StateSpace) -> "ValueField":
        return cls(space, np.zeros(space.size), np.zeros(space.size))

    def at(self, lam, mu=None) -> tuple[np.ndarray, np.ndarray]:
        return self.space.interp(self.v_s, lam, mu), self.space.interp(self.v_r, lam, mu)

    def sup(self) -> float:
        return float(max(np.max(np.abs(self.v_s)), np.max(np.abs(self.v_r))))


@dataclass
class EquilibriumResult:
    params: ModelParams
    policies: PolicyField
    values: ValueField
    residual_sup: float
    iterations: int
    converged: bool
    residual_trace: list[float] = field(default_factory=list)
    mixing_nodes: np.ndarray | None = None
    mixing_point: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)
    kernel_name: str = "baseline"

    @property
    def space(self) -> StateSpace:
        return self.policies.space

