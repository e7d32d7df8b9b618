"""Independent reference computations shared by the tests."""
import math

import numpy as np


def random_bounded_h(rng, span: int = 4000):
    """A random integer function with bounded differences, defined on a wide range."""
    steps = rng.uniform(-1.0, 1.0, size=2 * span + 1)
    table = np.cumsum(steps)
    table -= table[span]

    def h(x):
        x = np.asarray(x, dtype=np.int64)
        return table[np.clip(x + span, 0, 2 * span)]

    return h


def poisson_pmf_bruteforce(mu: float, k: int) -> float:
    """``e^-mu mu^k / k!`` from a running product, no special functions."""
    if k < 0:
        return 0.0
    p = math.exp(-mu)
    for m in range(1, k + 1):
        p *= mu / m
    return p


def stein_by_definition(mu: float, s: int, top: int):
    """Closed-form ``g_{mu,{s}}`` on ``0..top`` via exact rational sums of pmf values."""
    from fractions import Fraction

    # works for small mu only; everything is exact up to the final float conversion
    m = Fraction(mu).limit_denominator(10 ** 6)
    terms = 200
    pmf = [Fraction(1)]
    for k in range(1, terms):
        pmf.append(pmf[-1] * m / k)
    total = sum(pmf)
    po = [p / total for p in pmf]
    g = [Fraction(0)]
    for j in range(top):
        if j < s:
            g.append(-po[s] * sum(po[: j + 1]) / (m * po[j]))
        else:
            g.append(po[s] * (1 - sum(po[: j + 1])) / (m * po[j]))
    return np.array([float(x) for x in g])
