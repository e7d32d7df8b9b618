"""Coupling two SIS chains through a likelihood ratio.

A chain started at i-1 is reweighted so that it mimics the chain started
at i shifted by one.  The stopped ratio has mean one, and the weighted
estimate of P_i(k+1) - P_{i-1}(k) is checked against uniformization.
"""
import math

from popapprox.generator import build_generator, transient_distribution
from popapprox.model import build_skeleton, sis
from popapprox.montecarlo import coupled_point_difference, likelihood_ratio_experiment


def main():
    m = sis()
    sk = build_skeleton(m)
    n = 200
    i = round(n * sk.c)
    st = likelihood_ratio_experiment(m, sk, n, i, 10000, seed=1)
    print(f"m(n) = {st.m}, U = {st.U:.3f}")
    print(f"mean stopped ratio {st.mean_S:.4f} +/- {st.stderr_S:.4f}")
    print(f"stopping events: {st.stop_counts}")

    k = math.floor(n * sk.c)
    est = coupled_point_difference(m, sk, n, i, k, 10000, seed=2)
    gen = build_generator(m, sk, n)
    exact = transient_distribution(gen, i, sk.U).pmf(k + 1) - transient_distribution(gen, i - 1, sk.U).pmf(k)
    print(f"P_i(k+1) - P_(i-1)(k): estimate {est.estimate:.5f} +/- {est.stderr:.5f}, exact {exact:.5f}")


if __name__ == "__main__":
    main()
