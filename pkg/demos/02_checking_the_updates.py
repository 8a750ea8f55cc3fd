# %% [markdown]
# # Checking the per-event updates against brute force
#
# The engine's Gaussian updates use closed forms on diagonal covariances.
# Here they are compared with a dense complete-the-square posterior, and
# the coupled topic sampler is compared with exhaustive enumeration of
# every topic assignment of a tiny document.

# %%
import itertools

import numpy as np

from obctr._kernels import gibbs_trace
from obctr.core import GaussianFactor, HyperParams, TopicState
from obctr.engine import update_item, update_user
from obctr.synth import gaussian_posterior_oracle, gibbs_enumeration_oracle

rng = np.random.default_rng(0)
hp = HyperParams(K=4, sigma_eps2=0.3, sigma_r2=0.5)
u = GaussianFactor(rng.normal(size=4), rng.uniform(0.2, 2, 4))
v = GaussianFactor(rng.normal(size=4), rng.uniform(0.2, 2, 4))
r = 1.3

# %% [markdown]
# ## User factor

# %%
fast = update_user(u, v, r, hp)
mean, cov = gaussian_posterior_oracle(u.mean, np.diag(u.var), [v.mean], [r], [hp.sigma_r2])
print("mean  ", np.round(fast.mean, 6), "\noracle", np.round(mean, 6))
print("largest variance difference:", np.abs(fast.var - np.diag(cov)).max())

# %% [markdown]
# ## Item factor
#
# The topic tether acts like K extra observations of v at the document's
# topic frequencies.

# %%
zbar = np.array([0.5, 0.25, 0.125, 0.125])
fast = update_item(v, fast, zbar, r, hp)
obs = np.vstack([np.eye(4), update_user(u, v, r, hp).mean])
mean, cov = gaussian_posterior_oracle(v.mean, np.diag(v.var), obs, np.append(zbar, r),
                                      np.append(np.full(4, hp.sigma_eps2), hp.sigma_r2))
print("largest mean difference:", np.abs(fast.mean - mean).max())

# %% [markdown]
# ## Topic sampler
#
# A 4-token document with 2 topics has 16 assignments. We run a million
# sweeps and compare visit frequencies with the exact target.

# %%
tokens = np.array([0, 1, 1, 2])
counts = np.array([[6, 2, 1], [1, 3, 5]])
m_v, alpha, beta, s2 = np.array([0.7, 0.35]), 0.5, 0.1, 0.2
exact = gibbs_enumeration_oracle(tokens, m_v, counts, alpha, beta, s2)
lam = np.ascontiguousarray(TopicState(2, 3, beta, counts).log_phi[:, tokens])
S = 1_000_000
trace = np.empty((S, 4), dtype=np.int64)
z = np.zeros(4, dtype=np.int64)
gibbs_trace(lam, z, np.bincount(z, minlength=2), m_v, alpha, 1 / (2 * s2 * 4), rng.random((S, 4)), trace)
visits = np.bincount(trace @ np.array([8, 4, 2, 1]), minlength=16) / S
for state, p, q in zip(itertools.product((0, 1), repeat=4), exact, visits):
    print(state, f"exact {p:.4f}  chain {q:.4f}")
print("total variation:", 0.5 * np.abs(visits - exact).sum())
