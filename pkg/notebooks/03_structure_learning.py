# %% [markdown]
# # Graph structure learning
#
# Each layer scores existing edges with attention, drops the `alpha`
# weakest pairs, adds the `beta` strongest missing pairs, re-scores on the
# edited graph and aggregates node features.

# %%
import numpy as np

from perfgat.graphgen import build_graphs
from perfgat.structlearn import GslConfig, init_layer, layer_dims, run_structure_learning
from perfgat.synthdata import CohortConfig, generate_cohort

v = generate_cohort(CohortConfig(n_subjects=10, n_regions=8, n_timepoints=16,
                                 minority_fraction=0.2, seed=3))[0]
g = build_graphs(v, tau=0.5, k=3)

cfg = GslConfig(alpha=2, beta=3, max_layer=2, hidden_dim=8)
rng = np.random.default_rng(0)
layers = [init_layer(rng, d_in, d_out) for d_in, d_out in layer_dims(g.x.shape[1], 8, 8, 2)]
res = run_structure_learning(g, layers, cfg)

# %%
for i, rec in enumerate(res.history):
    print(f"layer {i}: pairs {rec.pairs_before} -> {rec.pairs_after}, "
          f"deleted {rec.deleted}, added {rec.added}, clipped={rec.clipped}")
print("embedding", res.z.shape)

# %% [markdown]
# Each layer changes the pair count by `beta - alpha` unless a selection
# gets clipped (too few edges to delete, or too few gaps to fill).

# %%
changed = np.argwhere(res.adjacency != g.a_temporal)
print("entries that differ from the input graph:", len(changed))
