"""Why one factorized head cannot copy a rotating state.

The quarter-turn system maps an impulse at lag 0 to the identity and at
lag 1 to a 90 degree rotation. A single head has one value matrix, so it
can only scale that matrix across lags; the two lag operators are
orthogonal, and no scaling of one matrix fits both. Two heads fit exactly.
"""

from seqkernel.kernel import impulse_family
from seqkernel.rank import (interaction_rank, projection_error, single_head_best_fit,
                            single_head_gap_oracle, rotation_witness)

sys = rotation_witness()
family = impulse_family(sys, 8)
print("W(0) =\n", family[0])
print("W(1) =\n", family[1])
print("interaction rank:", interaction_rank(family).rank)

best, theta = single_head_gap_oracle(3600)
print(f"closed-form squared error minimised over unit value directions: {best:.6f} "
      f"(every direction gives 1; grid argmin theta = {theta:.4f})")

for n in (2, 8, 32):
    one = single_head_best_fit(sys, n).error
    two = single_head_best_fit(sys, n, heads=2).error
    print(f"n={n:>2}: best one-head probe error {one:.6f}, two heads {two:.2e}")

print(f"projection floor with one head on the length-8 family: {projection_error(family, 1):.6f}")
