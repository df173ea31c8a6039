"""
Semantic IDs from embeddings
============================

Train a two-stage residual k-means codebook on clustered vectors, look at
how much each stage explains, and compare prefix coherence against random
hyperplane hashing with the same code budget.
"""

import numpy as np

from sidkit.quantizer import (
    KMeansConfig,
    assign_lsh_sids,
    assign_sids,
    collision_rate,
    prefix_coherence,
    stage_residual_norms,
    train_lsh,
    train_residual_kmeans,
)
from sidkit.synth import gaussian_fixture, stage1_purity

# 5000 points around 16 Gaussian centers in 32 dimensions
X, labels = gaussian_fixture(seed=0)
print(X.shape, np.bincount(labels))

# two stages of 16 centroids each: 256 possible tuples, so most tuples are shared
cb = train_residual_kmeans(X, M=2, K=16, config=KMeansConfig(seed=0))
codes = assign_sids(cb, X)
print("first five SIDs:", [tuple(int(c) for c in row) for row in codes[:5]])

# mean squared residual before any stage, after stage 1, after stage 2
norms = stage_residual_norms(cb, X)
print("residual by stage:", np.round(norms, 4))

# stage 1 should line up with the hidden clusters
print("stage-1 purity: %.3f" % stage1_purity(codes[:, 0], labels))

# %%
# Hashing baseline: 8 hyperplanes packed into two 4-bit codes.
planes = train_lsh(32, 8, seed=0)
lsh_codes = assign_lsh_sids(planes, X, M=2, K=16)

tuples = {"rkmeans": [tuple(r) for r in codes], "lsh": [tuple(r) for r in lsh_codes]}
for name, tups in tuples.items():
    print(
        "%-8s collisions=%.3f coherence@1=%.3f coherence@2=%.3f"
        % (name, collision_rate(tups), prefix_coherence(X, tups, 1), prefix_coherence(X, tups, 2))
    )
