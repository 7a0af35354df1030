"""
Fair initialisation and global verification
===========================================

A network is individually fair when changing only the sensitive attribute
never changes its prediction, anywhere in the input domain.  This demo
builds a few small networks and asks the verifier for a verdict.
"""

import numpy as np

from certfair import (InitConfig, InputDomain, NetworkSpec, Parameters, SensitiveDomain,
                      bernoulli_init, init_until_verified, predict, structural_certificate,
                      verify, zero_init)

# %%
# Two continuous features in [0, 1] and a three-valued sensitive attribute,
# appended to the input as a one-hot block.
sensitive = SensitiveDomain(("group_a", "group_b", "group_c"))
domain = InputDomain(np.zeros(2), np.ones(2), sensitive, names=["income", "tenure"])
spec = NetworkSpec.for_features(2, [16, 8], 2, len(sensitive))
print(spec)

# %%
# All-zero weights make every logit a constant, so the network is fair in
# one partition.
verdict = verify(spec, zero_init(spec, 0.1), domain)
print("zero init:", verdict.tag, "partitions:", verdict.partitions)

# %%
# Random +/- e^phi weights are fair when each first-layer neuron uses a single
# draw for the whole sensitive block.  The structural certificate sees this
# without searching the domain.
params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=0))
print("certificate spread:", structural_certificate(spec, params).spread)
print("tied bernoulli:", verify(spec, params, domain).tag)

# %%
# The draw-then-verify loop is what training uses before its first step.
result = init_until_verified(spec, InitConfig(phi=-1.0), domain)
print("verified after", result.attempts, "attempt(s) via", result.verdict.method)

# %%
# Without tying, the sensitive columns differ and the verifier hunts for a
# counterexample by splitting the domain.
untied = bernoulli_init(spec, InitConfig(phi=0.0, seed=3, tie_groups=False))
verdict = verify(spec, untied, domain)
print("untied:", verdict.tag, "after", verdict.partitions, "partitions")
if verdict.counterexample is not None:
    cx = verdict.counterexample
    print("  x =", np.round(cx.x, 4), " labels", cx.labels, "for groups",
          sensitive.values[cx.s1], "and", sensitive.values[cx.s2])
    assert predict(spec, untied, cx.x, cx.s1) != predict(spec, untied, cx.x, cx.s2)

# %%
# A network can be fair without passing the certificate; then only interval
# refinement can prove it.  Here the sensitive weights differ by 0.05.
rng = np.random.default_rng(15)
small = NetworkSpec.for_features(2, [8], 1, 2)
binary = InputDomain(np.zeros(2), np.ones(2), SensitiveDomain(("no", "yes")))
weights = [rng.normal(size=(8, 4)), rng.normal(size=(1, 8))]
biases = [rng.normal(size=8), rng.normal(size=1)]
weights[0][:, 3] = weights[0][:, 2] + 0.05 * rng.normal(size=8)
near_tied = Parameters(weights, biases)
verdict = verify(small, near_tied, binary, use_certificate=False)
print("near-tied:", verdict.tag, "after", verdict.partitions, "partitions")
