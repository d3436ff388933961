"""
A low-rank, non-negative view of LIBS-like spectra
==================================================

Each synthetic spectrum is a baseline plus a weighted sum of per-oxide
emission templates, plus noise. NMF should find a handful of non-negative
components that reconstruct the spectra well. Sizes here are reduced so the
script runs in seconds; set ``N, M = 426, 5606`` for the full-scale setting.
"""

import numpy as np

from libsflow import nmf, spectra

N, M = 200, 1200

# %%
# Synthetic data
# --------------
# Compositions are drawn uniformly on the simplex (wt.% summing to 100).

cfg = spectra.SynthConfig(n_samples=N, n_channels=M, seed=0)
Y, C = spectra.synth_dataset(cfg)
print("spectra", Y.values.shape, "compositions", C.values.shape)
print("wt.% row sums:", C.values.sum(axis=1)[:3])

# %%
# Choosing the rank
# -----------------
# Five-fold out-of-sample reconstruction error. Ranks within ``tie_tol`` of
# the best count as tied, and the smallest of those wins.

sel = nmf.select_rank(Y, [4, 8, 12, 16], k_folds=5, seed=0, max_iter=200, tol=1e-6)
for r, e in zip(sel.candidate_ranks, sel.cv_errors):
    print(f"rank {r:2d}: held-out relative error {e:.4f}")
print("chosen:", sel.chosen_rank)

# %%
# Fit and look at the objective
# -----------------------------

model = nmf.fit(Y, sel.chosen_rank, max_iter=400, tol=1e-6, seed=0)
print(f"{model.n_iter} sweeps, relative error {model.fit_error:.4f}")
print("objective never rose:", bool(np.all(np.diff(model.objective) <= 0)))

# %%
# New spectra map into the same latent space with the components fixed.

X_new = nmf.transform(model, Y.values[:3])
recon = nmf.inverse_transform(model, X_new)
print("row-wise relative errors:",
      np.linalg.norm(recon.values - Y.values[:3], axis=1) / np.linalg.norm(Y.values[:3], axis=1))
