# %% [markdown]
# # Reverse-mode autodiff in `perfgat.numcore`
#
# Every trainable path in the package runs on a small tensor type with a
# gradient tape. This script builds a masked attention score by hand,
# differentiates it and checks the result against central differences.

# %%
import numpy as np

from perfgat import numcore as nc

rng = np.random.default_rng(0)
params = {"W": rng.normal(size=(4, 3)), "w": rng.normal(size=6)}
x = rng.normal(size=(5, 4))
mask = (rng.random((5, 5)) < 0.6).astype(float)
np.fill_diagonal(mask, 1.0)

# %%
def score(p):
    h = nc.matmul(nc.constant(x), p["W"])                   # (5, 3)
    left = nc.matmul(h, nc.reshape(nc.getitem(p["w"], slice(0, 3)), (3, 1)))
    right = nc.matmul(h, nc.reshape(nc.getitem(p["w"], slice(3, 6)), (3, 1)))
    logits = nc.leaky_relu(left + nc.swapaxes(right, 0, 1))
    att = nc.softmax(logits, axis=-1, mask=mask)
    return nc.tsum(nc.matmul(att, h) * 0.1)


value, grads = nc.value_and_grad(score, params)
print("loss", round(value, 6))
print("dL/dW shape", grads["W"].shape)

# %% [markdown]
# `finite_diff_check` perturbs each entry by `eps` and reports the worst
# relative gap. Anything around 1e-6 or below means the backward pass agrees.

# %%
print("max relative error", nc.finite_diff_check(score, params))

# %% [markdown]
# Non-finite values never pass silently: an overflowing `exp` raises.

# %%
from perfgat.errors import NumericError

try:
    nc.exp(nc.constant(np.array([800.0])))
except NumericError as exc:
    print("caught:", exc)
