"""Stein solutions for the Poisson law and the size of their norms.

For a few means the solution for the point indicator at s is computed and
its sup-norms are compared with the standard bounds.
"""
import math

from popapprox.stein import norm_bounds_check, stein_solution


def main():
    for mu in (1.0, 10.0, 100.0, 1000.0):
        fm = math.floor(mu)
        for s in sorted({0, fm, 3 * fm}):
            rep = norm_bounds_check(stein_solution(mu, s))
            worst = max(rep.checks, key=lambda c: c.measured / (c.bound + c.slack))
            print(f"mu={mu:7.1f} s={s:5d} residual={rep.max_residual:.1e} "
                  f"tightest: {worst.name} ({worst.measured:.3e} vs {worst.bound:.3e})")


if __name__ == "__main__":
    main()
