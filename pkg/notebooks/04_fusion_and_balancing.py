# %% [markdown]
# # Fusion, pooling and class balancing
#
# The full model encodes the spatial graph, the learned temporal graph and
# the tumor patch, then fuses the two graph views with semantic attention.
# Here we look at cached features and the recombination step that tops up
# the minority class before the classifier is refit.

# %%
import numpy as np

from perfgat.model import ModelConfig, extract_features, init_params, prepare
from perfgat.synthdata import CohortConfig, generate_cohort
from perfgat.trainer import balance_features

vols = generate_cohort(CohortConfig(n_subjects=30, n_regions=8, n_timepoints=16,
                                    minority_fraction=0.2, seed=5))
mcfg = ModelConfig(k=3, hidden_dim=8, embed_dim=8, local_dim=4, local_hidden=8)
samples = prepare(vols, mcfg)
params = init_params(mcfg, 16, vols[0].tumor_patch.shape[0], seed=0)
print(len(params), "parameter arrays")

feats = extract_features(params, samples, mcfg)
f = feats[0]
print("u_I", f.u_I.shape, "z_spatial", f.z_spatial.shape, "z_temporal", f.z_temporal.shape)

# %% [markdown]
# Balancing pairs up minority samples and swaps their local and graph
# halves, so the synthetic samples reuse real feature blocks.

# %%
balanced, added = balance_features(feats, seed=0)
counts = np.bincount([s.label for s in balanced])
print("synthetic samples:", added, "class counts after:", counts)
