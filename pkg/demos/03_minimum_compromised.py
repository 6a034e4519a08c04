"""How many compromised clients does a round need?

The closed form (2 - s) / (a + b + 2 - s) * N, s = sigma^2 + mu^2, comes from
a second-order expansion of the benign projections. The Monte-Carlo column
samples psi and the benign angles directly and finds the smallest |C| whose
worst-case condition holds in half the draws.
"""
import numpy as np

from fedpois import theory

N, a, b = 1000, 0.9, 1.0
print(" mu  sigma  closed  monte-carlo  rel.err")
for mu, sigma in [(1.2, 0.4), (1.0, 0.3), (0.6, 0.2), (0.3, 0.1)]:
    err, closed, mc = theory.regime_approx_error(mu, sigma, a, b, N, 10_000, np.random.default_rng(0))
    print(f"{mu:4.1f} {sigma:5.1f} {closed:7d} {mc:12d} {err:8.2%}")

# the expansion error is bounded by the fourth-order term
beta = np.random.default_rng(1).uniform(0, np.pi / 2, 500)
exact, approx, gap = theory.maclaurin_cos_sum(beta)
print(f"\nsum cos = {exact:.3f}, quadratic = {approx:.3f}, gap {gap:.3f} <= {np.sum(beta ** 4) / 24:.3f}")
