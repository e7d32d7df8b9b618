"""Centred Poisson law, Stein-Chen solutions for point sets, and the residual split.

For ``A = {s}`` the Stein-Chen equation

    mu g(j+1) - j g(j) = 1{j = s} - Po(mu){s},   j >= 0,

has, with ``g(0) = 0``, the closed form

    g(j+1) = -Po{s} P(X <= j) / (mu Po{j})   for j < s,
    g(j+1) =  Po{s} P(X >  j) / (mu Po{j})   for j >= s.

The table is filled by running the recursion forwards below ``s`` and
backwards (from a series value far in the tail) above it; in those directions
every step adds positive terms, so relative errors do not grow.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from scipy.special import logsumexp

from .errors import SteinOverflow
from .generator import LatticeDistribution, a_binomial, a_telescoped, b_binomial, b_telescoped
from .model import ModelSpec, Skeleton, drift, variance_rate

__all__ = [
    "CentredPoisson", "SteinSolution", "poisson_pmf", "BoundReport", "ResidualBreakdown",
    "centred_pmf", "stein_solution", "shifted_stein", "norm_bounds_check",
    "stein_residual_terms", "residual_sweep",
]


_STIRLING = (1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188)


def _stirlerr(k: np.ndarray) -> np.ndarray:
    """``log(k!) - (k + 1/2) log k + k - log sqrt(2 pi)`` for ``k >= 1``."""
    k = k.astype(float)
    small = k <= 15
    out = np.empty_like(k)
    ks = k[small]
    out[small] = special.gammaln(ks + 1) - (ks + 0.5) * np.log(ks) + ks - 0.5 * math.log(2 * math.pi)
    kb = k[~small]
    k2 = 1.0 / (kb * kb)
    s0, s1, s2, s3, s4 = _STIRLING
    out[~small] = (s0 - (s1 - (s2 - (s3 - s4 * k2) * k2) * k2) * k2) / kb
    return out


def _bd0(x: np.ndarray, m: float) -> np.ndarray:
    """``x log(x/m) + m - x`` without cancellation when ``x`` is close to ``m``."""
    x = x.astype(float)
    out = x * np.log(x / m) + m - x
    near = np.abs(x - m) < 0.1 * (x + m)
    if np.any(near):
        xn = x[near]
        v = (xn - m) / (xn + m)
        acc = (xn - m) * v
        term = 2 * xn * v
        v2 = v * v
        for j in range(1, 200):
            term = term * v2
            nxt = acc + term / (2 * j + 1)
            if np.array_equal(nxt, acc):
                break
            acc = nxt
        out[near] = acc
    return out


def poisson_pmf(k, mu: float):
    """``Po(mu){k}`` via the saddle-point form, accurate to a few ulps for large ``mu``."""
    k = np.asarray(k, dtype=np.int64)
    flat = k.ravel()
    out = np.zeros(flat.shape)
    pos = flat >= 1
    kp = flat[pos]
    out[pos] = np.exp(-_stirlerr(kp) - _bd0(kp, mu)) / np.sqrt(2 * math.pi * kp)
    out[flat == 0] = math.exp(-mu)
    out = out.reshape(k.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CentredPoisson:
    """``Po(mu)`` shifted left by ``floor(mu)``."""

    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def floor_mu(self) -> int:
        return int(math.floor(self.mu))

    @property
    def frac_mu(self) -> float:
        return self.mu - self.floor_mu

    def pmf(self, k):
        k = np.asarray(k)
        return poisson_pmf(k + self.floor_mu, self.mu)

    def window(self, tail: float = 1e-16) -> tuple[int, int]:
        """Range of ``k`` outside which the mass is below ``tail`` on each side."""
        lo = int(stats.poisson.ppf(tail, self.mu)) - self.floor_mu
        hi = int(stats.poisson.isf(tail, self.mu)) + 1 - self.floor_mu
        return max(lo, -self.floor_mu), hi

    def distribution(self, lo: int | None = None, hi: int | None = None) -> LatticeDistribution:
        wlo, whi = self.window()
        lo = wlo if lo is None else max(lo, -self.floor_mu)
        hi = whi if hi is None else hi
        return LatticeDistribution(lo, self.pmf(np.arange(lo, hi + 1)))


def centred_pmf(cp: CentredPoisson, k):
    out = cp.pmf(k)
    return float(out) if np.ndim(out) == 0 else out


def _upper_ratio_series(mu: float, m: int) -> float:
    """``P(X > m) / Po{m}`` by its series; converges fast for ``m >= 2 mu``."""
    t = np.arange(1, 400)
    return float(np.exp(logsumexp(np.cumsum(np.log(mu) - np.log(m + t)))))


def _lower_ratios(mu: float, s: int):
    """``L(m) = P(X <= m) / Po{m}`` for ``m = 0..s`` as (mantissa, exponent) pairs."""
    mant = np.empty(s + 1)
    expo = np.empty(s + 1, dtype=np.int64)
    x, e = 0.5, 1
    mant[0], expo[0] = x, e
    for m in range(1, s + 1):
        x = x * (m / mu) + math.ldexp(1.0, -e)
        f, k = math.frexp(x)
        x, e = f, e + k
        mant[m], expo[m] = x, e
    return mant, expo


def _upper_ratios(mu: float, s: int, top: int):
    """``U(m) = P(X > m) / Po{m}`` for ``m = s..top`` as (mantissa, exponent) pairs."""
    size = top - s + 1
    mant = np.empty(size)
    expo = np.empty(size, dtype=np.int64)
    x, e = math.frexp(_upper_ratio_series(mu, top))
    mant[-1], expo[-1] = x, e
    for m in range(top - 1, s - 1, -1):
        x = (mu / (m + 1)) * (x + math.ldexp(1.0, -e))
        f, k = math.frexp(x)
        x, e = f, e + k
        mant[m - s], expo[m - s] = x, e
    return mant, expo


@dataclass
class SteinSolution:
    """Solution ``g_{mu,{s}}`` tabulated on ``0..j_max`` and extended on demand."""

    mu: float
    s: int
    values: np.ndarray
    norms: dict = field(default_factory=dict)

    @property
    def j_max(self) -> int:
        return self.values.size - 1

    @property
    def po_s(self) -> float:
        return poisson_pmf(self.s, self.mu)

    def __call__(self, j):
        """``g(j)`` for integer ``j >= 0`` (``g(j) = 0`` for ``j < 0`` as well, by convention)."""
        j = np.asarray(j, dtype=np.int64)
        top = int(j.max()) if j.size else 0
        if top > self.j_max:
            self.extend(max(top, 2 * self.j_max))
        out = np.where(j >= 0, self.values[np.clip(j, 0, self.j_max)], 0.0)
        return float(out) if out.ndim == 0 else out

    def extend(self, j_max: int) -> None:
        self.values = _stein_table(self.mu, self.s, j_max)
        self.norms = _norms(self)

    def residual(self) -> np.ndarray:
        """Plug-back residual of the Stein-Chen equation at ``j = 0..j_max-1``."""
        g = self.values
        j = np.arange(g.size - 1)
        return self.mu * g[1:] - j * g[:-1] - (j == self.s) + self.po_s


def _stein_table(mu: float, s: int, j_max: int) -> np.ndarray:
    # g(j+1) = -Po{s} L(j) / mu below s and Po{s} U(j) / mu from s on.  Taking
    # Po{s} = 1 / (L(s) + U(s)) makes the equation at j = s hold to rounding.
    top = max(j_max - 1, int(math.ceil(2 * mu)) + 2, s)
    lm, le = _lower_ratios(mu, s)
    um, ue = _upper_ratios(mu, s, top)
    shift = max(le[s], ue[0])
    total = math.ldexp(lm[s], int(le[s] - shift)) + math.ldexp(um[0], int(ue[0] - shift))
    pm, pe = math.frexp(1.0 / total)
    pe -= shift
    g = np.zeros(j_max + 1)
    hi_low = min(s, j_max)
    if hi_low >= 1:
        m = np.arange(hi_low)
        g[1:hi_low + 1] = -np.ldexp(pm * lm[m] / mu, (pe + le[m]).astype(np.int32))
    if j_max >= s + 1:
        m = np.arange(s, j_max)
        g[s + 1:] = np.ldexp(pm * um[m - s] / mu, (pe + ue[m - s]).astype(np.int32))
    if not np.all(np.isfinite(g)):
        raise SteinOverflow(f"Stein solution overflowed for mu={mu}, s={s}")
    return g


def _norms(sol: SteinSolution) -> dict:
    # pad two zeros on the left so differences at the origin are included
    g = np.concatenate([[0.0, 0.0], sol.values])
    d1 = np.diff(g)
    d2 = np.diff(g, 2)
    # beyond j_max, g is positive, decreasing and convex, so the tails telescope
    tail1 = abs(sol.values[-1])
    tail2 = abs(d1[-1])
    return {
        "sup_g": float(np.max(np.abs(g))),
        "sup_dg": float(np.max(np.abs(d1))),
        "l1_dg": float(np.sum(np.abs(d1)) + tail1),
        "l1_d2g": float(np.sum(np.abs(d2)) + tail2),
    }


def default_j_max(mu: float, s: int) -> int:
    return int(math.ceil(max(s, mu) + 20 * math.sqrt(mu) + 40))


def stein_solution(mu: float, s: int, j_max: int | None = None) -> SteinSolution:
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s}")
    j_max = default_j_max(mu, s) if j_max is None else j_max
    if j_max < s + 2:
        raise ValueError(f"j_max={j_max} must be at least s + 2 = {s + 2}")
    sol = SteinSolution(mu, s, _stein_table(mu, s, j_max))
    sol.norms = _norms(sol)
    return sol


def shifted_stein(cp: CentredPoisson, r: int, j_max: int | None = None):
    """``l -> g_{mu,{r + floor(mu)}}(l + floor(mu))``, zero for ``l < -floor(mu)``."""
    s = r + cp.floor_mu
    if s < 0:
        raise ValueError(f"r={r} lies below the support start {-cp.floor_mu}")
    sol = stein_solution(cp.mu, s, j_max)
    fm = cp.floor_mu

    def g_tilde(l):
        l = np.asarray(l, dtype=np.int64)
        return sol(l + fm)

    g_tilde.solution = sol
    return g_tilde


# ---------------------------------------------------------------------------
# norm estimates
# ---------------------------------------------------------------------------

@dataclass
class BoundCheck:
    name: str
    measured: float
    bound: float
    slack: float = 1e-15

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound * (1 + 1e-12) + self.slack


@dataclass
class BoundReport:
    mu: float
    s: int
    checks: list[BoundCheck]
    monotone: bool
    max_residual: float

    @property
    def ok(self) -> bool:
        return self.monotone and all(c.ok for c in self.checks)

    def __getitem__(self, name: str) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _monotone_pattern(sol: SteinSolution) -> bool:
    # underflowed and subnormal values carry no order information
    g = sol.values
    s = sol.s
    neg = g[1:s + 1]
    tiny = np.finfo(float).tiny
    neg = neg[np.abs(neg) >= tiny]
    pos = g[s + 1:]
    pos = pos[pos >= tiny]
    ok = bool(np.all(neg < 0) and np.all(np.diff(neg) < 0))
    ok &= bool(np.all(pos > 0))
    # deep in the tail neighbouring values may round to the same float
    ok &= bool(np.all(np.diff(pos) <= 0))
    return ok


def norm_bounds_check(sol: SteinSolution) -> BoundReport:
    """Measure the five Stein-solution estimates against their bounds.

    Parts 4 and 5 use ``h(j) = mu |g(j+1) - g(j)| + 1{j = s}``.
    """
    mu, s = sol.mu, sol.s
    nm = sol.norms
    g = sol.values
    j = np.arange(g.size - 1)
    dg = np.diff(g)
    h = mu * np.abs(dg) + (j == s)
    po_s = sol.po_s
    l1_h = float(mu * nm["l1_dg"] + 1.0)
    lhs4 = np.abs((j - mu) * g[:-1])
    jj = j[:-1]
    lhs5 = np.abs((jj - mu) * dg[:-1])
    rhs5 = h[1:] + h[:-1] + 1.0 / mu
    checks = [
        BoundCheck("1a: sup|g| <= sup|dg|", nm["sup_g"], nm["sup_dg"]),
        BoundCheck("1b: sup|dg| <= 1/mu", nm["sup_dg"], 1.0 / mu),
        BoundCheck("2: ||dg||_1 <= 2/mu", nm["l1_dg"], 2.0 / mu),
        BoundCheck("3: ||d2g||_1 <= 4/mu", nm["l1_d2g"], 4.0 / mu),
        BoundCheck("4: |(j-mu) g(j)| - h(j) <= Po{s}", float(np.max(lhs4 - h - po_s)) + po_s, po_s,
                   slack=1e-12 * float(np.max(h))),
        BoundCheck("4: ||h||_1 <= 3", l1_h, 3.0),
        BoundCheck("5: |(j-mu) dg(j)| - h(j+1) - h(j) <= 1/mu", float(np.max(lhs5 - rhs5)) + 1.0 / mu, 1.0 / mu,
                   slack=1e-12 * float(np.max(h))),
    ]
    return BoundReport(mu, s, checks, _monotone_pattern(sol), float(np.max(np.abs(sol.residual()))))


# ---------------------------------------------------------------------------
# residual decomposition
# ---------------------------------------------------------------------------

TERMS = ("R_sigma", "R_Ftaylor", "R_frac", "En1", "En2", "En3", "En4", "En5", "En6", "En7", "Rn2", "Rn3")


@dataclass
class ResidualBreakdown:
    """Expectations of the residual terms for one target point ``r``.

    ``signed_error`` is ``Pi_hat(r) - Po_hat{r}`` and ``identity_gap`` is its
    difference from ``mu E nabla^2 g(Y+1) - E R / (-F'(c)) - Po_hat{r} P(Y < -floor(mu))``,
    which vanishes whenever the Dynkin identity holds exactly.
    """

    n: int
    r: int
    terms: dict
    ER: float
    reconstructed_bound: float
    direct_error: float
    signed_error: float
    identity_gap: float

    def to_record(self) -> dict:
        return {"n": self.n, "r": self.r, "terms": dict(self.terms),
                "reconstructed_bound": self.reconstructed_bound, "direct_error": self.direct_error}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def jump_split(n: int) -> int:
    """Largest jump size handled by the 'small jump' terms: ``floor(sqrt(n))``."""
    return math.isqrt(n)


def stein_residual_terms(model: ModelSpec, skeleton: Skeleton, n: int, r: int,
                         pi_hat: LatticeDistribution, g_tilde=None) -> ResidualBreakdown:
    """Exact expectations under ``pi_hat`` (the law of ``Y_n = Z_n - floor(nc)``).

    Jumps ``2 <= |j| <= floor(sqrt(n))`` go to the small-jump terms and
    ``|j| > floor(sqrt(n))`` to the tail terms.
    """
    c, fpc, s2c = skeleton.c, skeleton.F_prime_c, skeleton.sigma2_c
    mu = n * skeleton.v_c
    cp = CentredPoisson(mu)
    gt = shifted_stein(cp, r) if g_tilde is None else g_tilde
    fnc = int(math.floor(n * c))
    Y = pi_hat.states
    p = pi_hat.probs
    z = (Y + fnc) / n
    Fc = drift(model, c)
    lam_c = {jp.j: float(jp(c)) for jp in model.jumps}
    lam_z = {jp.j: jp(z) for jp in model.jumps}

    g0 = gt(Y)
    ng = g0 - gt(Y - 1)
    E = lambda v: float(np.dot(p, v))

    terms = {
        "R_sigma": E(0.5 * n * (variance_rate(model, z) - s2c) * ng),
        "R_Ftaylor": E(n * (drift(model, z) - Fc - Y / n * fpc) * g0),
        "R_frac": fpc * cp.frac_mu * E(g0),
        "En1": E(-0.5 * n * (drift(model, z) - Fc) * ng),
    }
    split = jump_split(n)
    small_up = [j for j in lam_c if 2 <= j <= split]
    big_up = [j for j in lam_c if j > split and j >= 2]
    small_dn = [-j for j in lam_c if 2 <= -j <= split]
    big_dn = [-j for j in lam_c if -j > split and -j >= 2]
    zero = np.zeros_like(ng)
    terms["En2"] = E(sum((a_binomial(gt, Y, j) * n * lam_c[j] for j in small_up), zero))
    terms["En3"] = E(sum((a_telescoped(gt, Y, j) * n * (lam_z[j] - lam_c[j]) for j in small_up), zero))
    terms["En4"] = E(sum((a_telescoped(gt, Y, j) * n * lam_z[j] for j in big_up), zero))
    terms["En5"] = E(-sum((b_binomial(gt, Y, j) * n * lam_c[-j] for j in small_dn), zero))
    terms["En6"] = E(-sum((b_telescoped(gt, Y, j) * n * (lam_z[-j] - lam_c[-j]) for j in small_dn), zero))
    terms["En7"] = E(-sum((b_telescoped(gt, Y, j) * n * lam_z[-j] for j in big_dn), zero))

    ER = sum(terms[k] for k in TERMS[:10])
    second = E(gt(Y + 1) - 2 * g0 + gt(Y - 1))
    below = float(p[Y < -cp.floor_mu].sum())
    po_r = float(cp.pmf(r))
    terms["Rn2"] = mu * abs(second)
    terms["Rn3"] = po_r * below

    signed = float(pi_hat.pmf(r)) - po_r
    predicted = mu * second - ER / (-fpc) - po_r * below
    bound = abs(ER) / (-fpc) + terms["Rn2"] + terms["Rn3"]
    return ResidualBreakdown(n=n, r=r, terms=terms, ER=ER, reconstructed_bound=bound,
                             direct_error=abs(signed), signed_error=signed,
                             identity_gap=signed - predicted)


def residual_sweep(model: ModelSpec, skeleton: Skeleton, n: int, pi_hat: LatticeDistribution,
                   rs) -> tuple[list[ResidualBreakdown], dict]:
    """Breakdowns for every ``r`` in ``rs`` and the suprema ``R_n1, R_n2, R_n3``."""
    out = [stein_residual_terms(model, skeleton, n, int(r), pi_hat) for r in rs]
    fpc = -skeleton.F_prime_c
    sups = {
        "Rn1": max(abs(b.ER) / fpc for b in out),
        "Rn2": max(b.terms["Rn2"] for b in out),
        "Rn3": max(b.terms["Rn3"] for b in out),
        "sup_direct": max(b.direct_error for b in out),
    }
    return out, sups
