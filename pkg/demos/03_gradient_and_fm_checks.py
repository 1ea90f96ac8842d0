"""Sanity checks that back the training code: tape gradients and the FM identity."""
import numpy as np

from aph.model import VARIANTS, check_gradients, fm_pairwise_fast, fm_pairwise_naive

# %% finite differences on small random graphs, every variant
for v in VARIANTS:
    errs = [check_gradients(seed, variant=v) for seed in range(5)]
    print(f"{v:>10}  max rel err {max(errs):.2e}")

# %% the square-of-sums trick for the FM pairwise term
rng = np.random.default_rng(0)
z, V = rng.normal(size=32), rng.normal(size=(32, 8))
print(fm_pairwise_fast(z, V), fm_pairwise_naive(z, V))
