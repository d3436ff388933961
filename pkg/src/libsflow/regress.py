"""Per-oxide shallow regressors: one ReLU hidden layer, linear output, MSE loss, SGD.

Every oxide gets its own independent network. Internally the networks of
one suite are trained side by side with batched matrix products; they
share the mini-batch order but not weights or loss terms.

Inputs are standardized per feature and targets per oxide before
training; predictions are returned in wt.% and are never clipped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateVariance,
    DimMismatch,
    EmptyDataset,
    NonFiniteInput,
    NumericError,
    SizeMismatch,
    ValidationError,
)

INPUT_MODES = ("latent", "raw")

# upper bound on floats materialized per training chunk (~400 MB)
_CHUNK_FLOATS = 5e7


@dataclass(frozen=True)
class RegressConfig:
    hidden_width: int = 16
    epochs: int = 500
    lr: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    input_mode: str = "latent"

    def validate(self):
        if self.hidden_width < 1 or self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValidationError(f"invalid regression config {self}")
        if self.input_mode not in INPUT_MODES:
            raise ValidationError(f"input_mode must be one of {INPUT_MODES}")
        return self


def r2_score(y_true, y_pred):
    """Coefficient of determination ``1 - RSS / TSS``.

    Raises:
        DegenerateVariance: if ``y_true`` is constant.
    """
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise SizeMismatch("y_true and y_pred differ in length")
    if y_true.size < 2:
        raise ValidationError("r2_score needs at least two samples")
    rss = np.sum((y_true - y_pred) ** 2)
    tss = np.sum((y_true - y_true.mean()) ** 2)
    if tss == 0:
        raise DegenerateVariance("total sum of squares is zero")
    return float(1.0 - rss / tss)


def r2_or_nan(y_true, y_pred):
    try:
        return r2_score(y_true, y_pred), False
    except DegenerateVariance:
        return math.nan, True


@dataclass(frozen=True, eq=False)
class CompositionModel:
    """One oxide's network together with the suite's feature scaling."""

    oxide_name: str
    x_loc: np.ndarray
    x_scale: np.ndarray
    W1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float
    y_loc: float
    y_scale: float

    @property
    def hidden_width(self):
        return self.W1.shape[1]

    def predict(self, features):
        Z = (_features(features) - self.x_loc) / self.x_scale
        h = np.maximum(Z @ self.W1 + self.b1, 0.0)
        return (h @ self.w2 + self.b2) * self.y_scale + self.y_loc


@dataclass(eq=False)
class RegressionSuite:
    """``t`` per-oxide networks sharing an input mode and feature scaling.

    Network parameters are stacked with a leading oxide axis.
    """

    oxide_names: tuple
    input_mode: str
    x_loc: np.ndarray
    x_scale: np.ndarray
    W1: np.ndarray  # (t, D, H)
    b1: np.ndarray  # (t, H)
    w2: np.ndarray  # (t, H)
    b2: np.ndarray  # (t,)
    y_loc: np.ndarray  # (t,)
    y_scale: np.ndarray  # (t,)
    seed: int = 0
    train_r2: dict = field(default_factory=dict)
    degenerate: tuple = ()
    train_mse: tuple = ()  # (initial, final) standardized MSE per oxide

    @property
    def n_features(self):
        return self.x_loc.shape[0]

    @property
    def models(self):
        return [
            CompositionModel(o, self.x_loc, self.x_scale, self.W1[i], self.b1[i], self.w2[i], float(self.b2[i]),
                             float(self.y_loc[i]), float(self.y_scale[i]))
            for i, o in enumerate(self.oxide_names)
        ]

    def predict(self, features):
        """Predicted wt.%, shape (N, t)."""
        F = _features(features)
        if F.shape[1] != self.n_features:
            raise DimMismatch(f"suite expects {self.n_features} {self.input_mode} features, got {F.shape[1]}")
        Z = (F - self.x_loc) / self.x_scale
        h = np.maximum(np.einsum("nd,tdh->tnh", Z, self.W1) + self.b1[:, None, :], 0.0)
        out = np.einsum("tnh,th->tn", h, self.w2) + self.b2[:, None]
        return (out * self.y_scale[:, None] + self.y_loc[:, None]).T


def _features(features):
    F = getattr(features, "values", features)
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if not np.all(np.isfinite(F)):
        raise NonFiniteInput("features contain NaN or inf")
    return F


def _targets(compositions):
    if hasattr(compositions, "oxide_names"):
        return np.asarray(compositions.values, dtype=np.float64), tuple(compositions.oxide_names)
    T = np.atleast_2d(np.asarray(compositions, dtype=np.float64))
    if T.shape[0] == 1 and T.shape[1] > 1 and np.ndim(compositions) == 1:
        T = T.T
    return T, tuple(f"oxide_{i}" for i in range(T.shape[1]))


def _scaling(A, axis):
    loc = A.mean(axis=axis)
    sd = A.std(axis=axis)
    return loc, np.where(sd > 0, sd, 1.0)


def _fit_stack(F, T, row_sets, suite_seeds, cfg):
    """Train ``len(row_sets) * t`` networks; returns stacked parameter arrays.

    ``row_sets`` is an (R, n) integer array: suite ``r`` trains on rows
    ``F[row_sets[r]]`` and takes its batch order from
    ``default_rng(suite_seeds[r])``.
    """
    R, n = row_sets.shape
    t = T.shape[1]
    D = F.shape[1]
    H = cfg.hidden_width

    x_loc = np.empty((R, D))
    x_scale = np.empty((R, D))
    y_loc = np.empty((R, t))
    y_scale = np.empty((R, t))
    for r in range(R):
        x_loc[r], x_scale[r] = _scaling(F[row_sets[r]], 0)
        y_loc[r], y_scale[r] = _scaling(T[row_sets[r]], 0)

    W1 = np.empty((R, t, D, H))
    b1 = np.zeros((R, t, H))
    w2 = np.empty((R, t, H))
    b2 = np.zeros((R, t))
    mse0 = np.empty((R, t))
    mse1 = np.empty((R, t))

    per_suite = n * D + n * t
    chunk = max(1, int(_CHUNK_FLOATS // max(per_suite, 1)))
    for lo in range(0, R, chunk):
        hi = min(R, lo + chunk)
        sl = slice(lo, hi)
        X = (F[row_sets[sl]] - x_loc[sl, None, :]) / x_scale[sl, None, :]  # (r, n, D)
        Y = (T[row_sets[sl]] - y_loc[sl, None, :]) / y_scale[sl, None, :]  # (r, n, t)
        res = _sgd(X, Y, [int(s) for s in suite_seeds[sl]], cfg)
        W1[sl], b1[sl], w2[sl], b2[sl], mse0[sl], mse1[sl] = res
    return dict(x_loc=x_loc, x_scale=x_scale, y_loc=y_loc, y_scale=y_scale,
                W1=W1, b1=b1, w2=w2, b2=b2, mse0=mse0, mse1=mse1)


def _sgd(X, Y, seeds, cfg):
    """Mini-batch SGD for r suites of t networks each.

    The t networks of a suite see the same mini-batch order (drawn from
    ``default_rng(suite_seed)``) but are otherwise independent: each has its
    own initialization from ``default_rng([suite_seed, oxide])`` and its own
    loss, so they are evaluated as one block-diagonal layer per suite.
    """
    r, n, D = X.shape
    t = Y.shape[2]
    H = cfg.hidden_width
    W1 = np.empty((r, D, t, H))
    w2 = np.empty((r, t, H))
    for a, s in enumerate(seeds):
        for i in range(t):
            g = np.random.default_rng([s, i])
            W1[a, :, i, :] = g.normal(0.0, math.sqrt(2.0 / D), size=(D, H))
            w2[a, i] = g.normal(0.0, math.sqrt(1.0 / H), size=H)
    W1f = W1.reshape(r, D, t * H)  # view
    b1 = np.zeros((r, t * H))
    b2 = np.zeros((r, t))
    shufflers = [np.random.default_rng(s) for s in seeds]

    def forward(xb):
        pre = np.matmul(xb, W1f) + b1[:, None, :]
        h = np.maximum(pre, 0.0).reshape(pre.shape[:2] + (t, H))
        return pre, h, np.einsum("rbth,rth->rbt", h, w2) + b2[:, None, :]

    def mse():
        return np.mean((forward(X)[2] - Y) ** 2, axis=1)

    before = mse()
    ridx = np.arange(r)[:, None]
    bs = cfg.batch_size
    for _ in range(cfg.epochs):
        perms = np.stack([g.permutation(n) for g in shufflers])
        for start in range(0, n, bs):
            idx = perms[:, start:start + bs]
            m = idx.shape[1]
            xb = X[ridx, idx]  # (r, m, D)
            pre, h, out = forward(xb)
            g_out = (2.0 / m) * (out - Y[ridx, idx])  # (r, m, t)
            dh = (g_out[..., None] * w2[:, None]).reshape(r, m, t * H)
            dh *= pre > 0
            w2 -= cfg.lr * np.einsum("rbth,rbt->rth", h, g_out)
            b2 -= cfg.lr * g_out.sum(axis=1)
            W1f -= cfg.lr * np.matmul(xb.transpose(0, 2, 1), dh)
            b1 -= cfg.lr * dh.sum(axis=1)
    after = mse()
    if not np.all(np.isfinite(after)):
        raise NumericError("regression training diverged (non-finite loss)")
    return (W1.transpose(0, 2, 1, 3).copy(), b1.reshape(r, t, H), w2, b2, before, after)


def _suite_from_stack(stack, r, names, cfg, seed):
    return RegressionSuite(
        oxide_names=names,
        input_mode=cfg.input_mode,
        x_loc=stack["x_loc"][r],
        x_scale=stack["x_scale"][r],
        W1=stack["W1"][r],
        b1=stack["b1"][r],
        w2=stack["w2"][r],
        b2=stack["b2"][r],
        y_loc=stack["y_loc"][r],
        y_scale=stack["y_scale"][r],
        seed=seed,
        train_mse=tuple(zip(stack["mse0"][r].tolist(), stack["mse1"][r].tolist())),
    )


def _check_pair(features, compositions):
    F = _features(features)
    T, names = _targets(compositions)
    if F.shape[0] != T.shape[0]:
        raise SizeMismatch(f"{F.shape[0]} feature rows vs {T.shape[0]} composition rows")
    if F.shape[0] == 0 or T.shape[1] == 0:
        raise EmptyDataset("nothing to train on")
    return F, T, names


def train_suite(features, compositions, cfg=RegressConfig()):
    """Train one network per oxide on all rows; returns a :class:`RegressionSuite`.

    ``train_r2`` holds the training R^2 per oxide; oxides whose targets are
    constant get NaN and are listed in ``degenerate``.
    """
    cfg.validate()
    F, T, names = _check_pair(features, compositions)
    rows = np.arange(F.shape[0])[None, :]
    stack = _fit_stack(F, T, rows, np.array([cfg.seed]), cfg)
    suite = _suite_from_stack(stack, 0, names, cfg, cfg.seed)
    pred = suite.predict(F)
    degenerate = []
    for i, o in enumerate(names):
        r2, bad = r2_or_nan(T[:, i], pred[:, i])
        suite.train_r2[o] = r2
        if bad:
            degenerate.append(o)
    suite.degenerate = tuple(degenerate)
    return suite


def predict(suite, features):
    return suite.predict(features)


# ----------------------------------------------------------------- persistence

_ARRAYS = ("x_loc", "x_scale", "W1", "b1", "w2", "b2", "y_loc", "y_scale")


def save(suite, directory, name="regress"):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "oxide_names": list(suite.oxide_names),
        "input_mode": suite.input_mode,
        "n_features": suite.n_features,
        "hidden_width": int(suite.W1.shape[2]),
        "activation": "relu",
        "seed": suite.seed,
        "train_r2": {k: (None if math.isnan(v) else v) for k, v in suite.train_r2.items()},
        "degenerate": list(suite.degenerate),
    }
    (d / f"{name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for a in _ARRAYS:
        np.save(d / f"{name}_{a}.npy", np.ascontiguousarray(getattr(suite, a)))


def load(directory, name="regress"):
    d = Path(directory)
    m = json.loads((d / f"{name}.json").read_text())
    arrays = {a: np.load(d / f"{name}_{a}.npy") for a in _ARRAYS}
    return RegressionSuite(
        oxide_names=tuple(m["oxide_names"]),
        input_mode=m["input_mode"],
        seed=m["seed"],
        train_r2={k: (math.nan if v is None else v) for k, v in m["train_r2"].items()},
        degenerate=tuple(m["degenerate"]),
        **arrays,
    )
