"""Top-p sampling on a toy next-token distribution."""
import numpy as np

from coopdct.decode import nucleus_distribution, nucleus_sample_step

probs = np.array([0.5, 0.3, 0.2])
logits = np.log(probs)
for p in (0.4, 0.6, 0.9, 1.0):
    print(f"p={p}: kept distribution {np.round(nucleus_distribution(logits, p), 4)}")

rng = np.random.default_rng(0)
draws = np.bincount([nucleus_sample_step(logits, 0.6, 1.0, rng) for _ in range(10_000)], minlength=3)
print("10,000 draws at p=0.6:", draws, "->", draws / draws.sum())

# temperature reshapes the distribution before the nucleus is cut
for t in (0.5, 1.0, 2.0):
    print(f"T={t}: {np.round(nucleus_distribution(logits, 0.9, t), 4)}")
