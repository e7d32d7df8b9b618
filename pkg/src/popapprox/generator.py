"""Truncated generator of ``Z_n`` and exact stationary / transient laws.

The lattice is truncated to a window ``[lo, hi]`` around ``floor(n c)``.
Jumps that would leave the window are dropped, diagonal included, so every
row of the generator still sums to zero.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse, stats
from scipy.sparse import csgraph
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .errors import NotConverged, SingularSystem, WindowTooSmall
from .model import ModelSpec, Skeleton, drift, variance_rate

__all__ = [
    "LatticeDistribution", "TruncatedGenerator", "AUTO",
    "build_generator", "auto_halfwidth", "apply_generator", "apply_generator_decomposed",
    "nabla", "nabla2", "a_telescoped", "a_binomial", "b_telescoped", "b_binomial", "error_term",
    "stationary_distribution", "transient_distribution", "dynkin_residual", "solve_equilibrium",
]

AUTO = "auto"
BOUNDARY_MASS = 1e-12
GROWTH = 1.5

IntFn = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# distributions on a lattice window
# ---------------------------------------------------------------------------

@dataclass
class LatticeDistribution:
    """Probability vector ``probs`` where ``probs[k]`` is the mass of state ``offset + k``."""

    offset: int
    probs: np.ndarray
    n: int | None = None
    model: str | None = None
    stderr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.offset = int(self.offset)
        self.probs = np.asarray(self.probs, dtype=float)

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.probs.size)

    @property
    def lo(self) -> int:
        return self.offset

    @property
    def hi(self) -> int:
        return self.offset + self.probs.size - 1

    def pmf(self, k):
        k = np.asarray(k)
        idx = k - self.offset
        inside = (idx >= 0) & (idx < self.probs.size)
        out = np.where(inside, self.probs[np.clip(idx, 0, self.probs.size - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def on(self, lo: int, hi: int) -> np.ndarray:
        """Masses of states ``lo..hi`` with zeros outside the support."""
        return self.pmf(np.arange(lo, hi + 1))

    def shift(self, d: int) -> "LatticeDistribution":
        """Law of ``X + d``."""
        return LatticeDistribution(self.offset + d, self.probs.copy(), self.n, self.model,
                                   None if self.stderr is None else self.stderr.copy())

    def expect(self, f: IntFn) -> float:
        return float(np.dot(self.probs, f(self.states)))

    def to_record(self) -> dict:
        return {"offset": self.offset, "probs": self.probs.tolist(), "n": self.n, "model": self.model}

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_json(cls, text: str) -> "LatticeDistribution":
        rec = json.loads(text)
        return cls(rec["offset"], np.array(rec["probs"], dtype=float), rec.get("n"), rec.get("model"))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "prob"])
            for s, p in zip(self.states, self.probs):
                w.writerow([int(s), repr(float(p))])

    @classmethod
    def from_csv(cls, path, **meta) -> "LatticeDistribution":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        states = data[:, 0].astype(np.int64)
        if states.size and np.any(np.diff(states) != 1):
            raise ValueError(f"{path}: states must be consecutive")
        return cls(int(states[0]) if states.size else 0, data[:, 1], **meta)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedGenerator:
    """Sparse rate matrix of ``Z_n`` on the absolute states ``lo..hi``.

    ``hard_lo`` / ``hard_hi`` mark window ends set by irreducibility rather than
    by the requested half-width (states beyond them are transient or absorbing).
    """

    n: int
    lo: int
    hi: int
    Q: sparse.csr_matrix
    model: str = "custom"
    hard_lo: bool = False
    hard_hi: bool = False

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def exit_rates(self) -> np.ndarray:
        return -self.Q.diagonal()

    def rate(self, i: int, k: int) -> float:
        """Off-diagonal rate ``q(i -> k)`` for absolute states."""
        return float(self.Q[i - self.lo, k - self.lo])


def _assemble(model: ModelSpec, n: int, lo: int, hi: int) -> sparse.csr_matrix:
    states = np.arange(lo, hi + 1)
    size = states.size
    rates = n * model.rates(states / n)
    rows, cols, vals = [], [], []
    for jp, r in zip(model.jumps, rates):
        keep = (states + jp.j >= lo) & (states + jp.j <= hi) & (r > 0)
        idx = np.nonzero(keep)[0]
        rows.append(idx)
        cols.append(idx + jp.j)
        vals.append(r[keep])
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sparse.diags(diag)).tocsr()


def auto_halfwidth(n: int, skeleton: Skeleton) -> int:
    return int(math.ceil(12.0 * math.sqrt(n * skeleton.v_c * math.log(max(n, 3)))))


def _build_fixed(model: ModelSpec, skeleton: Skeleton, n: int, w: int) -> TruncatedGenerator:
    if w < model.max_jump:
        raise WindowTooSmall(f"half-width {w} is smaller than the largest jump {model.max_jump}")
    center = int(math.floor(n * skeleton.c))
    lo, hi = center - w, center + w
    Q = _assemble(model, n, lo, hi)
    # restrict to the communicating class of floor(nc)
    _, labels = csgraph.connected_components(Q, directed=True, connection="strong")
    same = labels == labels[center - lo]
    a = b = center - lo
    while a > 0 and same[a - 1]:
        a -= 1
    while b < same.size - 1 and same[b + 1]:
        b += 1
    hard_lo, hard_hi = a > 0, b < same.size - 1
    if hard_lo or hard_hi:
        lo, hi = lo + a, lo + b
        Q = _assemble(model, n, lo, hi)
    return TruncatedGenerator(n, lo, hi, Q, model.name, hard_lo, hard_hi)


def build_generator(model: ModelSpec, skeleton: Skeleton, n: int, halfwidth=AUTO,
                    tol: float = 1e-10) -> TruncatedGenerator:
    """Generator on ``[floor(nc) - w, floor(nc) + w]`` (clipped to the irreducible class).

    With ``halfwidth=AUTO`` the window starts at ``auto_halfwidth`` and grows by
    half until the stationary mass at every soft boundary is below 1e-12.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if halfwidth != AUTO:
        return _build_fixed(model, skeleton, n, int(halfwidth))
    gen, _ = solve_equilibrium(model, skeleton, n, tol=tol)
    return gen


def solve_equilibrium(model: ModelSpec, skeleton: Skeleton, n: int, tol: float = 1e-10,
                      max_expansions: int = 12):
    """Adaptive window plus stationary solve; returns ``(generator, pi)``."""
    w = max(auto_halfwidth(n, skeleton), model.max_jump, 2)
    for _ in range(max_expansions):
        gen = _build_fixed(model, skeleton, n, w)
        pi = stationary_distribution(gen, tol)
        edge = max(model.max_jump, 1)
        lo_mass = 0.0 if gen.hard_lo else pi.probs[:edge].sum()
        hi_mass = 0.0 if gen.hard_hi else pi.probs[-edge:].sum()
        if max(lo_mass, hi_mass) < BOUNDARY_MASS:
            pi.model = model.name
            return gen, pi
        w = int(math.ceil(GROWTH * w))
    raise NotConverged(f"window for n={n} still carries boundary mass after {max_expansions} expansions")


# ---------------------------------------------------------------------------
# generator action and its decomposition
# ---------------------------------------------------------------------------

def apply_generator(model: ModelSpec, n: int, h: IntFn, i):
    """``(A_n h)(i) = sum_j n lambda_j(i/n) [h(i+j) - h(i)]`` on the full lattice."""
    i = np.asarray(i, dtype=np.int64)
    rates = n * model.rates(i / n)
    hi_ = h(i)
    out = sum(r * (h(i + jp.j) - hi_) for jp, r in zip(model.jumps, rates)) if model.jumps else 0.0 * i
    return float(out) if np.ndim(out) == 0 else out


def nabla(g: IntFn, x):
    """Backward difference ``g(x) - g(x-1)``."""
    return g(x) - g(x - 1)


def nabla2(g: IntFn, x):
    return g(x) - 2 * g(x - 1) + g(x - 2)


def a_telescoped(g: IntFn, i, j: int):
    i = np.asarray(i)
    out = -math.comb(j, 2) * nabla(g, i)
    for k in range(1, j):
        out = out + k * nabla(g, i + j - k)
    return out


def a_binomial(g: IntFn, i, j: int):
    i = np.asarray(i)
    out = 0.0 * np.asarray(g(i), dtype=float)
    for k in range(2, j + 1):
        out = out + math.comb(k, 2) * nabla2(g, i + j - k + 1)
    return out


def b_telescoped(g: IntFn, i, j: int):
    i = np.asarray(i)
    out = math.comb(j, 2) * nabla(g, i)
    for k in range(1, j):
        out = out - k * nabla(g, i - j + k)
    return out


def b_binomial(g: IntFn, i, j: int):
    i = np.asarray(i)
    out = 0.0 * np.asarray(g(i), dtype=float)
    for k in range(2, j + 1):
        out = out + math.comb(k, 2) * nabla2(g, i - j + k)
    return out


def error_term(model: ModelSpec, n: int, g: IntFn, i, form: str = "binomial"):
    """``E_n(g, i)``: the remainder of the generator after the drift and variance parts."""
    a_fn, b_fn = {"binomial": (a_binomial, b_binomial),
                  "telescoped": (a_telescoped, b_telescoped)}[form]
    i = np.asarray(i, dtype=np.int64)
    z = i / n
    out = -0.5 * n * drift(model, z) * nabla(g, i)
    for jp in model.jumps:
        if jp.j >= 2:
            out = out + a_fn(g, i, jp.j) * n * jp(z)
        elif jp.j <= -2:
            out = out - b_fn(g, i, -jp.j) * n * jp(z)
    return out


def apply_generator_decomposed(model: ModelSpec, n: int, h: IntFn, i, form: str = "binomial"):
    """Generator action rebuilt from ``g_h(i) = h(i+1) - h(i)``::

        (n/2) sigma^2(i/n) nabla g_h(i) + n F(i/n) g_h(i) + E_n(g_h, i)
    """
    i = np.asarray(i, dtype=np.int64)
    g = lambda x: h(x + 1) - h(x)
    z = i / n
    out = 0.5 * n * variance_rate(model, z) * nabla(g, i) + n * drift(model, z) * g(i) \
        + error_term(model, n, g, i, form)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _power_iteration(gen: TruncatedGenerator, tol: float, max_iter: int = 2_000_000) -> np.ndarray:
    qmax = float(np.max(gen.exit_rates))
    PT = (sparse.identity(gen.size, format="csr") + gen.Q / qmax).T.tocsr()
    pi = np.full(gen.size, 1.0 / gen.size)
    QT = gen.Q.T.tocsr()
    for it in range(max_iter):
        pi = PT @ pi
        pi /= pi.sum()
        if it % 100 == 0 and np.max(np.abs(QT @ pi)) <= tol:
            return pi
    raise NotConverged(f"power iteration did not reach residual {tol} in {max_iter} steps")


def stationary_distribution(gen: TruncatedGenerator, tol: float = 1e-10) -> LatticeDistribution:
    """Solve ``pi Q = 0, sum(pi) = 1`` on the window.

    One balance equation (at the window centre) is replaced by the
    normalisation and the sparse system is solved directly; power iteration on
    the uniformised kernel is the fallback when the direct residual exceeds ``tol``.
    """
    size = gen.size
    if size == 1:
        return LatticeDistribution(gen.lo, np.ones(1), gen.n, gen.model)
    A = gen.Q.T.tolil()
    k = size // 2
    A[k, :] = np.ones(size)
    rhs = np.zeros(size)
    rhs[k] = 1.0
    QT = gen.Q.T.tocsr()
    pi = None
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            pi = spsolve(A.tocsc(), rhs)
        except (MatrixRankWarning, RuntimeError):
            pi = None
    if pi is not None and np.all(np.isfinite(pi)):
        pi = np.maximum(pi, 0.0)
        pi /= pi.sum()
        if np.max(np.abs(QT @ pi)) > tol:
            pi = None
    else:
        pi = None
    if pi is None:
        try:
            pi = _power_iteration(gen, tol)
        except NotConverged as exc:
            raise SingularSystem(f"stationary solve failed for n={gen.n}: {exc}") from exc
    return LatticeDistribution(gen.lo, pi, gen.n, gen.model)


def transient_distribution(gen: TruncatedGenerator, init: int, t: float,
                           tol: float = 1e-10) -> LatticeDistribution:
    """Law of ``Z_n(t)`` given ``Z_n(0) = init`` by uniformisation.

    The Poisson-weighted series is cut on both sides so that the dropped weight
    is at most ``tol``.
    """
    if not gen.lo <= init <= gen.hi:
        raise ValueError(f"init {init} outside window [{gen.lo}, {gen.hi}]")
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.zeros(gen.size)
    v[init - gen.lo] = 1.0
    q = float(np.max(gen.exit_rates))
    if t == 0 or q == 0:
        return LatticeDistribution(gen.lo, v, gen.n, gen.model)
    lam = q * t
    left = int(stats.poisson.ppf(tol / 2, lam))
    right = int(stats.poisson.isf(tol / 2, lam)) + 1
    weights = stats.poisson.pmf(np.arange(left, right + 1), lam)
    QT = (gen.Q / q).T.tocsr()
    out = np.zeros(gen.size)
    for step in range(right + 1):
        if step >= left:
            out += weights[step - left] * v
        v = v + QT @ v
    out = np.maximum(out, 0.0)
    out /= out.sum()
    return LatticeDistribution(gen.lo, out, gen.n, gen.model)


def dynkin_residual(gen: TruncatedGenerator, pi: LatticeDistribution, h: IntFn) -> float:
    """``|sum_i pi(i) (Q h)(i)|`` for the truncated generator."""
    hv = np.asarray(h(gen.states), dtype=float)
    p = pi.on(gen.lo, gen.hi)
    # sum q(i,k) (h(k) - h(i)) over off-diagonal entries, so constants give exactly 0
    Q = gen.Q.tocoo()
    off = Q.row != Q.col
    rows, cols = Q.row[off], Q.col[off]
    Qh = np.bincount(rows, weights=Q.data[off] * (hv[cols] - hv[rows]), minlength=gen.size)
    return float(abs(np.dot(p, Qh)))
