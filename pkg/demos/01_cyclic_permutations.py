# coding: utf-8

# # Cyclic permutations and the permutation divergence
#
# Each view of a sample gets one latent estimate per target view. During
# training the estimates in a column are shuffled by a cyclic permutation, so
# every view is pulled towards another view's estimate and no view is left
# paired with itself. This script walks through the pieces.

import numpy as np

from mvpvae.divergence import permutation_divergence, symmetric_permutation_divergence
from mvpvae.gaussian import DiagonalGaussian
from mvpvae.permutation import is_cyclic, make_bundle, sattolo
from mvpvae.rng import ScriptedChoices, Xoshiro256


# ## Sattolo's shuffle
#
# Sattolo's variant of Fisher-Yates only swaps slot i with a slot j < i, so
# the result is always a single n-cycle. With the swap sequence 3, 1, 2, 1
# (1-based) we get the cycle 1 -> 5 -> 3 -> 2 -> 4 -> 1.

sigma = sattolo(5, ScriptedChoices([2, 0, 1, 0]))
print("map:", sigma.map)
print("inverse:", sigma.inverse().map)

rng = Xoshiro256(0)
draws = [sattolo(6, rng) for _ in range(1000)]
print("all cyclic:", all(is_cyclic(p.map, set(range(1, 7))) for p in draws))


# ## Missing views stay fixed
#
# For a sample with views 2 and 4 missing, each of the L permutations cycles
# the observed views and leaves the missing ones in place.

bundle = make_bundle(5, {1, 3, 5}, Xoshiro256(1))
for l, m in enumerate(bundle.as_lists(), start=1):
    print(f"sigma_{l} =", m)


# ## The divergence
#
# Sum of KL[P_i || P_sigma(i)]. It is zero only when every member of the
# tuple is the same distribution, and positive otherwise.

g = np.random.default_rng(2)
ps = [DiagonalGaussian(g.normal(size=3), g.normal(scale=0.5, size=3)) for _ in range(4)]
cyc = sattolo(4, Xoshiro256(3))
print("d(ps; sigma) =", permutation_divergence(ps, cyc).total)
print("symmetric    =", symmetric_permutation_divergence(ps, cyc).total)
print("identical    =", permutation_divergence([ps[0]] * 4, cyc).total)
