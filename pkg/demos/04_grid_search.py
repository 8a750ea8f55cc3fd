# %% [markdown]
# # Choosing hyperparameters on a validation split
#
# Every grid cell trains a fresh model on one pass of the training stream
# and is scored on the held-back validation ratings. The lowest score wins;
# ties go to the configuration that sorts first.

# %%
from obctr.core import HyperParams
from obctr.evaluation import grid_cells, grid_search, reference_grid
from obctr.ingestion import split_stream
from obctr.synth import generate_synthetic

corpus, events, _ = generate_synthetic(HyperParams(K=5, alpha=0.2, beta=0.05, sigma_eps2=0.01, sigma_r2=0.09),
                                       100, 60, 40, 6000, seed=3, vocab_size=300)
split = split_stream(events, seed=0)

# %% [markdown]
# The full published ranges are available too; for OBCTR they span 147 cells.

# %%
print("full OBCTR grid:", len(grid_cells(reference_grid("obctr"))), "cells")

# %% [markdown]
# A smaller slice keeps this demo quick.

# %%
grid = {"sigma_eps2": [0.01, 0.04, 0.25], "sigma_r2": [0.09, 0.25, 1.0]}
result = grid_search("obctr", grid, split, corpus, params={"K": 5})
for row in sorted(result.table, key=lambda r: r["validation_rmse"]):
    print(row["config"], f"validation {row['validation_rmse']:.3f}  test {row['test_rmse']:.3f}")
print("chosen:", result.best)

# %%
pa = grid_search("pa-i", {"c": [0.01, 0.1, 0.2, 0.5, 1]}, split, params={"K": 5})
print("PA-I chosen:", pa.best)
