# %% [markdown]
# # Do ratings help the topic model?
#
# OBCTR samples topic assignments with a pull towards the item's latent
# vector, so ratings feed back into the topics. Online variational LDA
# sees only the text. We compare per-word log likelihood on held-out
# documents, scoring the second half of each after reading the first.

# %%
import numpy as np

from obctr.core import HyperParams
from obctr.evaluation import run_stream
from obctr.ingestion import split_stream
from obctr.models import make_model
from obctr.synth import generate_synthetic

truth_hp = HyperParams(K=5, alpha=0.2, beta=0.05, sigma_eps2=0.01, sigma_r2=0.09)
corpus, events, truth = generate_synthetic(truth_hp, 200, 100, 60, 20_000, seed=8, vocab_size=400,
                                           n_heldout_docs=50)
split = split_stream(events, seed=1)

# %%
obctr = make_model("obctr", dict(K=5, sigma_eps2=1.0, sigma_r2=0.09), corpus)
lda = make_model("online-lda", dict(K=5), corpus)
for model in (obctr, lda):
    trace = run_stream(model, split.train, eval_every=None, heldout_docs=truth.heldout_docs)
    print(f"{model.name:10s} held-out per-word log likelihood {trace.final.pred_ll:.4f}")

# %% [markdown]
# ## Matching learned topics to the true ones
#
# Each learned topic is paired with the true topic it overlaps most
# (Hellinger affinity).

# %%
def affinity(a, b):
    return np.sqrt(a) @ np.sqrt(b).T

for model in (obctr, lda):
    aff = affinity(model.topic_word(), truth.phi)
    print(model.name, "best match per learned topic:", np.round(aff.max(axis=1), 3))

# %%
vocab = corpus.vocabulary
for k, row in enumerate(obctr.topic_word()):
    print(f"topic {k}:", " ".join(vocab[w] for w in np.argsort(row)[::-1][:8]))
