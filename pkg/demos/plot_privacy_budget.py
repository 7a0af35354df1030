"""
Randomized response and the privacy budget
==========================================

Fair training releases each sample's sensitive value through randomized
response: the true value with probability p, otherwise a uniformly chosen
other value.  The budget gamma sets p, and is chosen so that the expected
update of sensitive-invariant neurons stays invariant.
"""

import math

import numpy as np

from certfair import (InitConfig, NetworkSpec, RRConfig, SensitiveDomain, SensitiveFrontier,
                      bernoulli_init, chebyshev_report, keep_probability, sample, solve_gamma)

# %%
# Keep probability as a function of gamma for a binary and a four-valued
# attribute.  gamma = 0 is uniform, larger gamma keeps the truth more often.
for gamma in (0.0, 0.5, math.log(3), 3.0):
    print(f"gamma {gamma:5.3f}: p(2) = {keep_probability(gamma, 2):.4f}"
          f"  p(4) = {keep_probability(gamma, 4):.4f}")

rng = np.random.default_rng(0)
four = SensitiveDomain(("a", "b", "c", "d"))
drawn = sample(RRConfig(math.log(3), four), np.zeros(100_000, dtype=int), rng)
print("empirical release frequencies for true value 'a':",
      np.round(np.bincount(drawn, minlength=4) / drawn.size, 4))

# %%
# Solving for gamma.  Each row holds one monitored weight's gradient with the
# sensitive value forced to each alternative.  Rows (1, -3) balance at
# p = 3/4, that is gamma = ln 3; an antisymmetric row balances at gamma = 0;
# equal entries can never cancel.
binary = SensitiveDomain(("no", "yes"))
for rows in ([[1.0, -3.0]], [[2.0, -2.0]], [[1.0, 1.0]]):
    table = np.array(rows)
    sol = solve_gamma(SensitiveFrontier([(1, 0)], table, np.zeros(1, dtype=int), binary))
    print(f"{rows}: gamma {sol.gamma:.6f}, residual {sol.residual:.2e}, feasible {sol.feasible}")

# %%
# How far can a stochastic update, averaged over delta samples, stray from
# its expectation?  Chebyshev bounds the probability of a deviation above tau
# by variance / (delta tau^2); Monte Carlo shows the bound is respected.
rng = np.random.default_rng(10)
x = rng.random((200, 2))
s = rng.integers(0, 2, 200)
y = np.where(x[:, 0] - x[:, 1] + rng.normal(0, 0.2, 200) > 0, 2, 1)


class Toy:
    def __init__(self):
        self.x, self.s, self.y, self.sensitive = x, s, y, binary

    def __len__(self):
        return len(self.y)


spec = NetworkSpec.for_features(2, [6], 1, 2)
params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=10))
for delta in (8, 64, 512):
    rep = chebyshev_report(spec, params, Toy(), 0.0, delta, 1e-2, lr=1.0, trials=2000)
    worst = np.argmax(rep.frequency)
    print(f"delta {delta:3d}: largest exceedance {rep.frequency.flat[worst]:.4f}"
          f" <= bound {rep.bound.flat[worst]:.4f}  holds everywhere: {rep.holds}")
