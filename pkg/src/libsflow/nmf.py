"""Non-negative matrix factorization ``Y ~= X @ V`` under the Frobenius loss.

Naming follows the factorization as written: ``basis`` is the per-sample
coefficient block ``X`` (N x L) and ``components`` is the spectral
dictionary ``V`` (L x M). Each spectrum is a non-negative combination of
the rows of ``V`` with weights given by its row of ``X``.

The solver is the Lee-Seung multiplicative update, which keeps every
entry non-negative and never increases ``||Y - XV||_F``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AllZeroInput,
    ChannelMismatch,
    NegativeLatent,
    RankMismatch,
    RankOutOfBounds,
    ValidationError,
)
from .spectra import SpectraMatrix

EPS = 1e-12


@dataclass(frozen=True, eq=False)
class NmfModel:
    basis: np.ndarray  # (N_train, L), "X"
    components: np.ndarray  # (L, M), "V"
    channel_grid: np.ndarray
    fit_error: float
    n_iter: int
    seed: int = 0
    objective: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def rank(self):
        return self.components.shape[0]

    @property
    def n_channels(self):
        return self.components.shape[1]


@dataclass(frozen=True)
class RankSelection:
    candidate_ranks: tuple
    cv_errors: tuple  # mean held-out relative error per candidate
    fold_errors: tuple  # per candidate, per fold
    chosen_rank: int
    tie_tol: float

    def to_dict(self):
        return {
            "candidate_ranks": list(self.candidate_ranks),
            "cv_errors": list(self.cv_errors),
            "fold_errors": [list(f) for f in self.fold_errors],
            "chosen_rank": self.chosen_rank,
            "tie_tol": self.tie_tol,
        }


def _as_values(Y):
    if isinstance(Y, SpectraMatrix):
        return Y.values, Y.channel_grid
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[None, :]
    if np.any(Y < 0):
        raise ValidationError("NMF input must be non-negative")
    return Y, np.arange(Y.shape[1], dtype=np.float64)


def objective(Y, X, V):
    """Frobenius norm ``||Y - XV||_F``."""
    return float(np.linalg.norm(Y - X @ V))


def fit(Y, rank, max_iter=1000, tol=1e-7, seed=0, check_nonneg=False):
    """Factor ``Y`` with ``rank`` components by multiplicative updates.

    Iteration stops after ``max_iter`` sweeps or once the relative decrease
    of the objective falls below ``tol``. The objective after every sweep is
    kept on ``model.objective`` (entry 0 is the initial value).

    Args:
        Y: SpectraMatrix or (N, M) non-negative array.
        rank: number of components L, 1 <= L <= min(N, M).
        check_nonneg: assert non-negativity of both factors every sweep.
    """
    values, grid = _as_values(Y)
    n, m = values.shape
    if not 1 <= rank <= min(n, m):
        raise RankOutOfBounds(f"rank {rank} outside [1, {min(n, m)}]")
    if max_iter < 1 or not tol > 0:
        raise ValidationError("need max_iter >= 1 and tol > 0")
    mean = values.mean()
    if mean == 0:
        raise AllZeroInput("cannot factor an all-zero matrix")

    rng = np.random.default_rng(seed)
    scale = np.sqrt(mean / rank)
    X = rng.uniform(0.0, 1.0, size=(n, rank)) * scale
    V = rng.uniform(0.0, 1.0, size=(rank, m)) * scale

    norm_y = np.linalg.norm(values)
    obj = [objective(values, X, V)]
    it = 0
    for it in range(1, max_iter + 1):
        V *= (X.T @ values) / (X.T @ X @ V + EPS)
        X *= (values @ V.T) / (X @ (V @ V.T) + EPS)
        if check_nonneg:
            assert X.min() >= 0 and V.min() >= 0
        obj.append(objective(values, X, V))
        prev, cur = obj[-2], obj[-1]
        if prev == 0 or (prev - cur) / prev < tol:
            break

    X.flags.writeable = False
    V.flags.writeable = False
    return NmfModel(
        basis=X,
        components=V,
        channel_grid=np.asarray(grid, dtype=np.float64),
        fit_error=obj[-1] / norm_y,
        n_iter=it,
        seed=seed,
        objective=np.array(obj),
    )


def transform(model, Y_new, max_iter=5000, tol=1e-12):
    """Non-negative coefficients of new spectra with the components held fixed.

    Each row solves ``min_x ||y - x V||_2`` subject to ``x >= 0`` by
    multiplicative updates started from a row of ones. An all-zero spectrum
    maps to the zero vector.
    """
    values, _ = _as_values(Y_new)
    V = model.components
    if values.shape[1] != V.shape[1]:
        raise ChannelMismatch(f"spectra have {values.shape[1]} channels, model expects {V.shape[1]}")
    YVt = values @ V.T
    VVt = V @ V.T
    X = np.ones((values.shape[0], V.shape[0]))
    for _ in range(max_iter):
        X_new = X * YVt / (X @ VVt + EPS)
        delta = np.abs(X_new - X).max()
        X = X_new
        if delta <= tol * max(1.0, X.max()):
            break
    return X


def inverse_transform(model, X):
    """Map non-negative latent coefficients back to spectra, ``X @ V``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.rank:
        raise RankMismatch(f"latent has {X.shape[1]} columns, model rank is {model.rank}")
    if np.any(X < 0):
        raise NegativeLatent("latent coefficients must be non-negative; clamp flow samples first")
    return SpectraMatrix(X @ model.components, model.channel_grid)


def relative_error(Y, Y_hat):
    Y = np.asarray(Y)
    den = np.linalg.norm(Y)
    return float(np.linalg.norm(Y - Y_hat) / den) if den > 0 else float(np.linalg.norm(Y_hat))


def kfold_indices(n, k, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def select_rank(Y, candidate_ranks, k_folds=5, seed=0, max_iter=1000, tol=1e-7, tie_tol=1e-3):
    """Choose the NMF rank by k-fold out-of-sample reconstruction error.

    For every (rank, fold) the components are fitted on the other folds, the
    held-out spectra are projected with :func:`transform` and reconstructed,
    and the relative Frobenius error is recorded. Candidates whose mean error
    lies within ``tie_tol`` of the best are treated as tied and the smallest
    such rank wins.
    """
    values, grid = _as_values(Y)
    n, m = values.shape
    ranks = sorted({int(r) for r in candidate_ranks})
    if not ranks:
        raise RankOutOfBounds("no candidate ranks")
    if k_folds < 2 or k_folds > n:
        raise ValidationError(f"k_folds must lie in [2, {n}]")
    folds = kfold_indices(n, k_folds, seed)
    min_train = n - max(len(f) for f in folds)
    for r in ranks:
        if not 1 <= r <= min(min_train, m):
            raise RankOutOfBounds(f"rank {r} outside [1, {min(min_train, m)}] for {k_folds}-fold CV")

    fold_errors = []
    for r in ranks:
        errs = []
        for i, test in enumerate(folds):
            train = np.setdiff1d(np.arange(n), test)
            model = fit(values[train], r, max_iter=max_iter, tol=tol, seed=seed + i)
            coef = transform(model, values[test])
            errs.append(relative_error(values[test], coef @ model.components))
        fold_errors.append(tuple(errs))
    means = [float(np.mean(e)) for e in fold_errors]
    best = min(means)
    chosen = next(r for r, e in zip(ranks, means) if e <= best + tie_tol)
    return RankSelection(tuple(ranks), tuple(means), tuple(fold_errors), chosen, tie_tol)


# ----------------------------------------------------------------- persistence


def save(model, directory):
    """Write ``nmf.json`` plus one ``.npy`` file per factor into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "rank": model.rank,
        "n_train": int(model.basis.shape[0]),
        "n_channels": model.n_channels,
        "seed": model.seed,
        "fit_error": model.fit_error,
        "n_iter": model.n_iter,
    }
    (d / "nmf.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    np.save(d / "nmf_basis.npy", np.ascontiguousarray(model.basis))
    np.save(d / "nmf_components.npy", np.ascontiguousarray(model.components))
    np.save(d / "nmf_grid.npy", model.channel_grid)
    np.save(d / "nmf_objective.npy", model.objective)


def load(directory):
    d = Path(directory)
    header = json.loads((d / "nmf.json").read_text())
    return NmfModel(
        basis=np.load(d / "nmf_basis.npy"),
        components=np.load(d / "nmf_components.npy"),
        channel_grid=np.load(d / "nmf_grid.npy"),
        fit_error=header["fit_error"],
        n_iter=header["n_iter"],
        seed=header["seed"],
        objective=np.load(d / "nmf_objective.npy"),
    )
