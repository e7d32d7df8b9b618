"""Gillespie simulation and the likelihood-ratio coupling of adjacent starts.

Replicates are simulated in lockstep: a batch of paths is advanced one jump
at a time with vectorized rate evaluations.  Every batch of ``BATCH`` replicates
draws from its own child of ``SeedSequence(seed)``, so results depend only on
``(model, n, arguments, seed)`` and not on how the work is scheduled.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .generator import LatticeDistribution
from .model import ModelSpec, Skeleton, check_assumptions

__all__ = [
    "BATCH", "PathSample", "Estimate", "LikelihoodStats", "simulate_path",
    "empirical_transient_pmf", "exit_probability", "likelihood_ratio_experiment",
    "coupled_point_difference", "stopped_likelihood_ratio", "lr_threshold", "m_of_n",
]

BATCH = 2048
Z95 = 1.959963984540054


def _streams(reps: int, seed: int):
    """Yield ``(start, size, Generator)`` for each fixed-size batch."""
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    kids = np.random.SeedSequence(seed).spawn(-(-reps // BATCH))
    for b, kid in enumerate(kids):
        start = b * BATCH
        yield start, min(BATCH, reps - start), np.random.Generator(np.random.PCG64(kid))


def _pick(rates: np.ndarray, total: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the jump chosen with probability proportional to ``rates[:, r]``."""
    cum = np.cumsum(rates, axis=0)
    idx = np.sum(cum < (u * total)[None, :], axis=0)
    return np.minimum(idx, rates.shape[0] - 1)


@dataclass
class PathSample:
    """One realized path: jump times ``times[l]``, states ``states[l]`` and marks.

    ``marks[l - 1]`` is the jump made at ``times[l]``; ``times[0] = 0``.
    ``exposures[l - 1]`` is ``E_l = n Lambda(Z_{l-1}/n) (tau_l - tau_{l-1})``.
    """

    times: np.ndarray
    states: np.ndarray
    marks: np.ndarray
    seed: int
    n: int
    horizon: float
    absorbed: bool = False
    exposures: np.ndarray | None = None

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.times, t, side="right") - 1])

    def time_average(self, f=lambda z: z) -> float:
        """Time average of ``f(Z/n)`` over ``[0, horizon]``."""
        ends = np.append(self.times[1:], self.horizon)
        vals = f(self.states / self.n)
        return float(np.dot(vals, ends - self.times) / self.horizon)


def simulate_path(model: ModelSpec, n: int, init: int, horizon: float, seed: int) -> PathSample:
    """Exact SSA path of ``Z_n`` from ``init`` on ``[0, horizon]``.

    A state with zero total rate ends the path and sets ``absorbed``.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    sizes = model.sizes
    times, states, marks, exposures = [0.0], [int(init)], [], []
    t, z, absorbed = 0.0, int(init), False
    while True:
        rates = model.rates(np.array([z / n]))[:, 0] * n
        total = float(rates.sum())
        if total <= 0.0:
            absorbed = True
            break
        e = rng.standard_exponential()
        t_next = t + e / total
        if t_next > horizon:
            break
        j = int(sizes[_pick(rates[:, None], np.array([total]), rng.random(1))[0]])
        t, z = t_next, z + j
        times.append(t)
        states.append(z)
        marks.append(j)
        exposures.append(e)
    return PathSample(np.array(times), np.array(states, dtype=np.int64), np.array(marks, dtype=np.int64),
                      seed=seed, n=n, horizon=horizon, absorbed=absorbed, exposures=np.array(exposures))


def _advance_to(model: ModelSpec, n: int, z: np.ndarray, horizon: float, rng,
                band: tuple[float, float] | None = None):
    """Run a batch to ``horizon``; optionally record exits from ``[lo, hi]``."""
    sizes = model.sizes
    t = np.zeros(z.size)
    exited = np.zeros(z.size, dtype=bool)
    if band is not None:
        exited |= (z < band[0]) | (z > band[1])
    active = np.ones(z.size, dtype=bool)
    while np.any(active):
        idx = np.flatnonzero(active)
        rates = model.rates(z[idx] / n) * n
        total = rates.sum(axis=0)
        dead = total <= 0.0
        dt = rng.standard_exponential(idx.size) / np.where(dead, 1.0, total)
        u = rng.random(idx.size)
        move = ~dead & (t[idx] + dt <= horizon)
        active[idx[~move]] = False
        k = idx[move]
        if k.size == 0:
            break
        t[k] += dt[move]
        z[k] += sizes[_pick(rates[:, move], total[move], u[move])]
        if band is not None:
            exited[k] |= (z[k] < band[0]) | (z[k] > band[1])
    return z, exited


def empirical_transient_pmf(model: ModelSpec, n: int, init: int, U: float, reps: int,
                            seed: int) -> LatticeDistribution:
    """Empirical law of ``Z_n(U)`` from ``init``; ``stderr`` holds per-bin standard errors."""
    finals = np.empty(reps, dtype=np.int64)
    for start, size, rng in _streams(reps, seed):
        z, _ = _advance_to(model, n, np.full(size, int(init), dtype=np.int64), U, rng)
        finals[start:start + size] = z
    lo = int(finals.min())
    p = np.bincount(finals - lo) / reps
    return LatticeDistribution(lo, p, n=n, model=model.name, stderr=np.sqrt(p * (1 - p) / reps))


@dataclass
class Estimate:
    estimate: float
    stderr: float
    reps: int
    seed: int
    stop_counts: dict | None = None

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.estimate - Z95 * self.stderr, self.estimate + Z95 * self.stderr)

    def to_record(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "ci95": list(self.ci95),
                "reps": self.reps, "seed": self.seed, "stop_counts": self.stop_counts}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _mean_estimate(x: np.ndarray, seed: int, stop_counts=None) -> Estimate:
    reps = x.size
    sd = float(np.std(x, ddof=1)) if reps > 1 else 0.0
    return Estimate(float(np.mean(x)), sd / math.sqrt(reps), reps, seed, stop_counts)


def exit_probability(model: ModelSpec, skeleton: Skeleton, n: int, init: int, U: float,
                     eta: float, reps: int, seed: int) -> Estimate:
    """Fraction of paths with ``sup_{t <= U} |Z_n(t) - nc| > n eta``."""
    c = skeleton.c
    limit = 0.5 * n * eta * math.exp(-skeleton.F_prime_sup * U)
    if abs(init - n * c) > limit + 1e-9:
        raise ConfigError(f"|init - nc| = {abs(init - n * c):.3g} exceeds {limit:.3g}")
    band = (n * (c - eta), n * (c + eta))
    hits = np.empty(reps)
    for start, size, rng in _streams(reps, seed):
        _, ex = _advance_to(model, n, np.full(size, int(init), dtype=np.int64), U, rng, band=band)
        hits[start:start + size] = ex
    return _mean_estimate(hits, seed)


# likelihood ratio -----------------------------------------------------------

def m_of_n(n: int, skeleton: Skeleton) -> int:
    return int(math.ceil(2 * n * skeleton.Lambda_star * skeleton.U))


def lr_threshold(n: int, m: int, L1: float, epsilon: float, C: float = 928.0) -> float:
    return C * L1 * math.sqrt(m * math.log(m)) / (n * epsilon)


def stopped_likelihood_ratio(V: np.ndarray, lam_here: np.ndarray, lam_up: np.ndarray,
                             exposure_gap: np.ndarray, dev: np.ndarray, half_delta: float):
    """Compute ``S`` and the stopped, modified ``S~`` along one recorded path.

    Parameters
    ----------
    V : ndarray
        ``V_0, ..., V_{m-1}``.
    lam_here, lam_up : ndarray
        ``Lambda(z_l)`` and ``Lambda(z_l + 1/n)`` for ``l = 0..m-1``.
    exposure_gap : ndarray
        ``n |Lambda(z_{l-1} + 1/n) - Lambda(z_{l-1})| (tau_l - tau_{l-1})`` for ``l = 1..m``.
    dev : ndarray
        ``|z_l - c|`` for ``l = 0..m``.

    Returns
    -------
    S, S_tilde : ndarray
        Arrays of length ``m + 1`` starting at 1.
    sigma : tuple of int
        ``(sigma_1, sigma_2, sigma_3)``; ``m + 1`` stands for "not reached".
    """
    m = V.size
    S = np.concatenate([[1.0], np.cumprod(V)])
    never = m + 1

    def first(mask, offset=0):
        hit = np.flatnonzero(mask)
        return int(hit[0]) + offset if hit.size else never

    s1 = first(exposure_gap > 1.0, offset=1)
    s2 = first(S > 2.0)
    s3 = first(dev > half_delta)
    sig = min(s1, s2, s3)
    St = S[np.minimum(np.arange(m + 1), sig)].copy()
    if s1 <= min(s2, s3) and s1 <= m and lam_here[s1 - 1] > lam_up[s1 - 1]:
        St[s1:] *= math.e / V[s1 - 1]
    return S, St, (s1, s2, s3)


@dataclass
class LikelihoodStats:
    """Summary of the likelihood-ratio experiment; ``mean_S`` refers to ``S~_{m(n)}``."""

    reps: int
    mean_S: float
    sd_S: float
    exceed_prob: float
    stop_counts: dict
    m: int
    U: float
    threshold: float
    mean_S_M: float = float("nan")
    sd_S_M: float = float("nan")
    max_increment_ratio: float = 0.0
    increment_violations: int = 0
    seed: int = 0
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def stderr_S(self) -> float:
        return self.sd_S / math.sqrt(self.reps)

    def to_record(self) -> dict:
        return {"estimate": self.mean_S, "stderr": self.stderr_S,
                "ci95": [self.mean_S - Z95 * self.stderr_S, self.mean_S + Z95 * self.stderr_S],
                "reps": self.reps, "seed": self.seed, "stop_counts": self.stop_counts,
                "exceed_prob": self.exceed_prob, "threshold": self.threshold, "m": self.m,
                "max_increment_ratio": self.max_increment_ratio,
                "increment_violations": self.increment_violations}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _lr_batch(model, skeleton, n, i, size, rng, U, m_n, bound_scale, half_delta):
    """Lockstep simulation from ``i - 1`` collecting the likelihood-ratio statistics."""
    sizes = model.sizes
    c = skeleton.c
    never = np.iinfo(np.int64).max
    z = np.full(size, i - 1, dtype=np.int64)
    t = np.zeros(size)
    l = np.zeros(size, dtype=np.int64)
    S = np.ones(size)
    St = np.ones(size)
    stopped = np.zeros(size, dtype=bool)
    sig = np.full((3, size), never, dtype=np.int64)
    sig[2, np.abs(z / n - c) > half_delta] = 0
    stopped |= sig[2] == 0
    St_m = np.full(size, np.nan)
    S_M = np.full(size, np.nan)
    M = np.full(size, never, dtype=np.int64)
    Z_U = np.zeros(size, dtype=np.int64)
    same_M = np.zeros(size, dtype=bool)
    discarded = np.zeros(size, dtype=bool)
    absorbed = np.zeros(size, dtype=bool)
    worst = np.zeros(size)
    if m_n == 0:
        St_m[:] = 1.0
    active = np.ones(size, dtype=bool)
    while np.any(active):
        k = np.flatnonzero(active)
        zk = z[k]
        rc = model.rates(zk / n)
        rp = model.rates((zk + 1) / n)
        Lc, Lp = rc.sum(axis=0), rp.sum(axis=0)
        dead = Lc <= 0.0
        e = rng.standard_exponential(k.size)
        u = rng.random(k.size)
        if np.any(dead):
            d = k[dead]
            pre_u = t[d] <= U
            surv = np.exp(-n * (Lp[dead] - Lc[dead]) * np.maximum(U - t[d], 0.0))
            S_M[d[pre_u]] = (S[d] * surv)[pre_u]
            Z_U[d[pre_u]] = z[d[pre_u]]
            same_M[d[pre_u]] = (St[d] == S[d])[pre_u]
            St_m[d] = np.where(np.isnan(St_m[d]), St[d], St_m[d])
            absorbed[d] = True
            active[d] = False
            live = ~dead
            k, rc, rp, Lc, Lp, e, u, zk = k[live], rc[:, live], rp[:, live], Lc[live], Lp[live], e[live], u[live], zk[live]
            if k.size == 0:
                break
        dt = e / (n * Lc)
        idx = _pick(rc, Lc, u)
        cols = np.arange(k.size)
        lam_c, lam_p = rc[idx, cols], rp[idx, cols]
        zero = lam_c <= 0.0
        if np.any(zero):
            discarded[k[zero]] = True
            active[k[zero]] = False
        V = np.where(zero, 1.0, lam_p / np.where(zero, 1.0, lam_c)) * np.exp(-n * (Lp - Lc) * dt)
        l_new = l[k] + 1
        S_new = S[k] * V
        z_new = zk + sizes[idx]
        t_new = t[k] + dt
        hit1 = n * np.abs(Lp - Lc) * dt > 1.0
        hit2 = S_new > 2.0
        hit3 = np.abs(z_new / n - c) > half_delta
        for r, hit in enumerate((hit1, hit2, hit3)):
            first = hit & (sig[r, k] == never)
            sig[r, k[first]] = l_new[first]
        was_stopped = stopped[k]
        modify = ~was_stopped & hit1 & (sig[1, k] >= l_new) & (sig[2, k] >= l_new) & (Lc > Lp)
        St_new = np.where(was_stopped, St[k], np.where(modify, St[k] * math.e, S_new))
        bound = bound_scale * (3.0 + 2.0 * e)
        ratio = np.abs(St_new - St[k]) / bound
        worst[k] = np.maximum(worst[k], np.where(zero, 0.0, ratio))
        stopped[k] = was_stopped | hit1 | hit2 | hit3
        crossing = (t[k] <= U) & (t_new > U)
        cr = k[crossing]
        M[cr] = l_new[crossing]
        S_M[cr] = S_new[crossing]
        Z_U[cr] = zk[crossing]
        same_M[cr] = St_new[crossing] == S_new[crossing]
        at_m = l_new == m_n
        St_m[k[at_m]] = St_new[at_m]
        S[k], St[k], z[k], t[k], l[k] = S_new, St_new, z_new, t_new, l_new
        finished = (t_new > U) & (l_new >= m_n)
        active[k[finished]] = False
    return dict(St_m=St_m, S_M=S_M, M=M, Z_U=Z_U, sig=sig, same_M=same_M,
                discarded=discarded, absorbed=absorbed, worst=worst)


def _lr_run(model, skeleton, n, i, reps, seed, U, constants):
    if constants is None:
        rep = check_assumptions(model, skeleton)
        constants = (rep.L1, rep.epsilon)
    L1, eps = constants
    U = skeleton.U if U is None else U
    m_n = m_of_n(n, skeleton)
    half_delta = model.delta / 2
    bound_scale = 2 * L1 / (n * eps)
    parts = [_lr_batch(model, skeleton, n, i, size, rng, U, m_n, bound_scale, half_delta)
             for _, size, rng in _streams(reps, seed)]
    out = {k: np.concatenate([p[k] for p in parts], axis=-1) for k in parts[0]}
    return out, m_n, U, L1, eps


def _stop_counts(out, m_n):
    keep = ~out["discarded"]
    sig, M = out["sig"][:, keep], out["M"][keep]
    return {"sigma1": int(np.sum(sig[0] <= M)), "sigma2": int(np.sum(sig[1] <= M)),
            "sigma3": int(np.sum(sig[2] < M)), "M_gt_m": int(np.sum(M > m_n)),
            "discarded": int(np.sum(out["discarded"])), "absorbed": int(np.sum(out["absorbed"][keep]))}


def _check_start(skeleton: Skeleton, n: int, i: int, delta: float) -> None:
    if abs(i - n * skeleton.c) > n * skeleton.delta1_prime + 1e-9:
        raise ConfigError(f"|i - nc| = {abs(i - n * skeleton.c):.3g} exceeds n delta1' = "
                          f"{n * skeleton.delta1_prime:.3g}")


def likelihood_ratio_experiment(model: ModelSpec, skeleton: Skeleton, n: int, i: int, reps: int,
                                seed: int, U: float | None = None, C: float = 928.0,
                                constants: tuple[float, float] | None = None,
                                check_start: bool = True) -> LikelihoodStats:
    """Monte Carlo study of ``S`` and ``S~`` for paths started at ``i - 1``.

    ``constants`` is ``(L1, epsilon)``; by default they come from
    :func:`check_assumptions`.  Increments of ``S~`` are compared with
    ``(2 L1 / (n epsilon)) (3 + 2 E)`` on every step of every kept path.
    """
    if check_start:
        _check_start(skeleton, n, i, model.delta)
    out, m_n, U, L1, eps = _lr_run(model, skeleton, n, i, reps, seed, U, constants)
    keep = ~out["discarded"]
    St_m = out["St_m"][keep]
    thr = lr_threshold(n, m_n, L1, eps, C) if m_n > 1 else math.inf
    worst = out["worst"][keep]
    S_M = out["S_M"][keep]
    return LikelihoodStats(
        reps=int(keep.sum()), mean_S=float(St_m.mean()), sd_S=float(St_m.std(ddof=1)),
        exceed_prob=float(np.mean(np.abs(St_m - 1.0) > thr)), stop_counts=_stop_counts(out, m_n),
        m=m_n, U=U, threshold=thr, mean_S_M=float(np.nanmean(S_M)), sd_S_M=float(np.nanstd(S_M, ddof=1)),
        max_increment_ratio=float(worst.max()) if worst.size else 0.0,
        increment_violations=int(np.sum(worst > 1.0 + 1e-12)), seed=seed,
        samples={"S_tilde_m": St_m, "S_M": S_M, "Z_U": out["Z_U"][keep]},
    )


def coupled_point_difference(model: ModelSpec, skeleton: Skeleton, n: int, i: int, k: int,
                             reps: int, seed: int, U: float | None = None,
                             check_start: bool = True) -> Estimate:
    """Estimate ``P_i[Z(U) = k + 1] - P_{i-1}[Z(U) = k]`` as ``E_{i-1}[(S_M - 1) 1(Z(U) = k)]``.

    ``M = M_n(U)`` is the index of the first jump after ``U``.
    """
    if check_start:
        _check_start(skeleton, n, i, model.delta)
    out, m_n, *_ = _lr_run(model, skeleton, n, i, reps, seed, U, constants=(1.0, 1.0))
    keep = ~out["discarded"]
    w = (out["S_M"][keep] - 1.0) * (out["Z_U"][keep] == k)
    return _mean_estimate(w, seed, _stop_counts(out, m_n))
