"""Long-range sensitivity: stable recurrences forget, attention need not.

The Jacobian of a stable linear recurrence from position j to i is
C A^(i-j) B, so its norm shrinks like |A|^(i-j). For softmax attention
there is an input that routes almost all weight from i to j, and on it
the Jacobian norm stays near |V| at any distance.
"""

import numpy as np

from seqkernel.dynamics import LTISystem
from seqkernel.gradients import AttentionParams, adversarial_input, decay_sweep, log_slope
from seqkernel.linalg import make_rng, random_orthogonal, spectral_norm
from seqkernel.plotting import write_svg

sys = LTISystem(0.95 * random_orthogonal(4, make_rng(0, 11)), np.eye(4), np.eye(4))
attn = AttentionParams.random(4, 4, 4, seed=0)
distances = [1, 2, 4, 8, 16, 32, 64, 128, 256]
rows = decay_sweep(sys, attn, distances)

print(" dist    ssm |J|    attn adversarial   attn random (mean)")
for r in rows:
    print(f"{r['distance']:>5}  {r['ssm_norm']:.3e}   {r['attn_adversarial_norm']:.6f}"
          f"           {r['attn_random_mean']:.3e}")
print(f"log-norm slope {log_slope(distances, [r['ssm_norm'] for r in rows]):.6f}, ln 0.95 = {np.log(0.95):.6f}")
print(f"|V|_2 = {spectral_norm(attn.V):.6f}")

adv = adversarial_input(attn.W_Q, attn.W_K, attn.V, 250, 0, epsilon=1e-6)
print(f"distance 250, eps 1e-6: gamma {adv.gamma:g}, alpha {adv.alpha:.12f}, |J| {adv.achieved_norm:.9f}")

write_svg("gradient_highway.svg",
          [("SSM |J|", distances, [r["ssm_norm"] for r in rows]),
           ("attention adversarial |J|", distances, [r["attn_adversarial_norm"] for r in rows])],
          title="Jacobian norm vs distance", x_label="distance", y_label="spectral norm", log_y=True)
print("wrote gradient_highway.svg")
