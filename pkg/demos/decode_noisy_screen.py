"""Rank clones after a noisy pooled screen and pick candidates to confirm.

Ten positives are planted in a 33,000-clone library screened on 330 random
10-set pools with 10% false negatives and 1% false positives. A Gibbs
sampler estimates each clone's posterior probability of being positive.

    python3 demos/decode_noisy_screen.py
"""

import numpy as np

from poolkit import (
    ErrorModel,
    LibraryModel,
    assay_pools,
    classify_observed,
    generate_random_ksets,
    posterior_gibbs,
    rank_for_confirmation,
)

model = LibraryModel(33_000, 10)
errors = ErrorModel(fp=0.01, fn=0.1)
design = generate_random_ksets(model.n, 330, 10, seed=4)

planted = np.random.default_rng(5).choice(model.n, 10, replace=False)
outcome = assay_pools(design, planted, errors, seed=6)
print(f"{outcome.V.sum()} of {design.v} pools positive")

# the naive rule (every pool positive) loses any positive hit by a false negative
naive = classify_observed(design, outcome).candidates
print(f"naive candidates: {len(naive)}, containing {np.isin(planted, naive).sum()} planted")

ranking = posterior_gibbs(design, outcome, errors, model, sweeps=1000, chains=2, seed=7)
top = rank_for_confirmation(ranking, 10)
print(f"planted clones in the top ten: {len(set(top) & set(planted.tolist()))}")
for clone in top:
    mark = "*" if clone in planted else " "
    print(f"  {mark} clone {clone:>5}  posterior {ranking.posterior[clone]:.3f}"
          f" +/- {ranking.stderr[clone]:.3f}")
