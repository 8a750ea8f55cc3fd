# %% [markdown]
# # One pass over a synthetic rating stream
#
# We sample users, items, item texts and ratings from the collaborative
# topic regression generative model, shuffle the ratings, and let each
# algorithm see every training rating exactly once. Rating noise has
# standard deviation 0.3, so no method can do much better than RMSE 0.3.

# %%
import numpy as np

from obctr.core import HyperParams
from obctr.evaluation import run_stream
from obctr.ingestion import split_stream
from obctr.models import make_model
from obctr.synth import generate_synthetic

truth_hp = HyperParams(K=5, alpha=0.2, beta=0.05, sigma_u2=1.0, sigma_eps2=0.01, sigma_r2=0.09)
corpus, events, truth = generate_synthetic(truth_hp, I=200, J=100, docs_len=60, ratings_count=20_000,
                                           seed=5, vocab_size=400)
split = split_stream(events, seed=0)
print(f"{len(split.train)} training ratings, {len(split.test)} test ratings, vocabulary {corpus.D}")
print(f"rating std {np.std([e.rating for e in events]):.3f}")

# %% [markdown]
# Settings below were picked by validation RMSE on other synthetic draws.

# %%
configs = {
    "obctr": dict(K=5, sigma_eps2=1.0, sigma_r2=0.09),
    "octr": dict(K=5, eta=0.2, lam_u=0.01, lam_v=0.04),
    "sgd-pmf": dict(K=5, eta=0.2, lam_u=0.01, lam_v=0.01),
    "pa-i": dict(K=5, c=0.1),
}
traces = {}
for name, params in configs.items():
    model = make_model(name, params, corpus)
    traces[name] = run_stream(model, split.train, split.test, eval_every=2000)

# %% [markdown]
# Test RMSE as the stream is consumed.

# %%
checkpoints = [p.events_seen for p in traces["obctr"].points]
print("events".rjust(8), *(n.rjust(8) for n in configs))
for row, seen in enumerate(checkpoints):
    print(str(seen).rjust(8), *(f"{traces[n].points[row].rmse_test:8.3f}" for n in configs))

# %% [markdown]
# The progressive RMSE scores each rating before the model learns from it,
# so it also reflects the cold start at the head of the stream.

# %%
for name, tr in traces.items():
    print(f"{name:8s} progressive {tr.final.rmse_progressive:.3f}   final test {tr.final.rmse_test:.3f}")
