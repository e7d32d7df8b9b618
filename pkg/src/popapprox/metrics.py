"""Distances between lattice distributions and the equilibrium error report."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .generator import LatticeDistribution, solve_equilibrium
from .model import ModelSpec, Skeleton
from .stein import CentredPoisson

__all__ = [
    "DistanceReport", "total_variation", "sup_point_distance", "translate_tv",
    "max_adjacent_diff", "local_limit_error", "centred_equilibrium", "tail_moments",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("n", "tv", "sup_point", "translate_tv", "max_adjacent_diff",
               "tv_norm", "sup_point_norm", "translate_tv_norm", "max_adjacent_diff_norm")


def _aligned(p: LatticeDistribution, q: LatticeDistribution):
    lo, hi = min(p.lo, q.lo), max(p.hi, q.hi)
    return p.on(lo, hi), q.on(lo, hi)


def total_variation(p: LatticeDistribution, q: LatticeDistribution) -> float:
    a, b = _aligned(p, q)
    return float(0.5 * np.sum(np.abs(a - b)))


def sup_point_distance(p: LatticeDistribution, q: LatticeDistribution) -> float:
    a, b = _aligned(p, q)
    return float(np.max(np.abs(a - b)))


def _padded(p: LatticeDistribution) -> np.ndarray:
    return np.concatenate([[0.0], p.probs, [0.0]])


def translate_tv(p: LatticeDistribution) -> float:
    """``d_TV(p, p * delta_1) = (1/2) sum_k |p(k) - p(k-1)|``."""
    return float(0.5 * np.sum(np.abs(np.diff(_padded(p)))))


def max_adjacent_diff(p: LatticeDistribution) -> float:
    """``sup_k |p(k) - p(k+1)|``."""
    return float(np.max(np.abs(np.diff(_padded(p)))))


@dataclass
class DistanceReport:
    n: int
    tv: float
    sup_point: float
    translate_tv: float
    max_adjacent_diff: float
    alpha: float = 1.0

    def normalized(self) -> dict:
        """Each metric divided by the rate the corresponding theorem allows."""
        n, a = self.n, self.alpha
        logn = math.log(n) if n > 1 else float("nan")
        return {
            "tv_norm": self.tv * n ** (a / 2),
            "sup_point_norm": self.sup_point * n ** ((a + 1) / 2) / math.sqrt(logn),
            "translate_tv_norm": self.translate_tv * math.sqrt(n),
            "max_adjacent_diff_norm": self.max_adjacent_diff * n / math.sqrt(logn),
        }

    def row(self) -> dict:
        out = {k: getattr(self, k) for k in CSV_COLUMNS[:5]}
        out.update(self.normalized())
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def centred_equilibrium(model: ModelSpec, skeleton: Skeleton, n: int, tol: float = 1e-10):
    """``(Pi_n, Pi_n shifted by -floor(nc))`` on an adaptive window."""
    _, pi = solve_equilibrium(model, skeleton, n, tol=tol)
    return pi, pi.shift(-int(math.floor(n * skeleton.c)))


def local_limit_error(model: ModelSpec, skeleton: Skeleton, n: int, tol: float = 1e-10,
                      pi: LatticeDistribution | None = None) -> DistanceReport:
    """Compare the centred equilibrium with the centred Poisson law ``Po_hat(n v_c)``."""
    if pi is None:
        pi, pi_hat = centred_equilibrium(model, skeleton, n, tol)
    else:
        pi_hat = pi.shift(-int(math.floor(n * skeleton.c)))
    cp = CentredPoisson(n * skeleton.v_c)
    wlo, whi = cp.window()
    po = cp.distribution(min(wlo, pi_hat.lo), max(whi, pi_hat.hi))
    return DistanceReport(n=n, tv=total_variation(pi_hat, po), sup_point=sup_point_distance(pi_hat, po),
                          translate_tv=translate_tv(pi), max_adjacent_diff=max_adjacent_diff(pi),
                          alpha=model.alpha)


def tail_moments(pi: LatticeDistribution, c: float, delta: float, n: int) -> tuple[float, float]:
    """``E|Z/n - c| 1(|Z/n - c| > delta)`` and ``E (Z/n - c)^2 1(|Z/n - c| <= delta)``."""
    dev = pi.states / n - c
    out = np.abs(dev) > delta
    m_out = float(np.dot(pi.probs, np.where(out, np.abs(dev), 0.0)))
    m2_in = float(np.dot(pi.probs, np.where(out, 0.0, dev ** 2)))
    return m_out, m2_in
