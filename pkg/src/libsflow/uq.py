"""Bootstrap prediction intervals for the per-oxide regressors.

A new observation's composition is modelled as the estimate of a
bootstrap replicate plus a residual:

    v0 = v_hat_n(y0) + r(y0)

The replicate estimates carry model uncertainty. The residual term is
drawn from out-of-bag (OOB) residuals collected on the training set,
which carry data uncertainty. Intervals are percentiles of the combined
draws ``{v_hat_n(y0) + r_k}`` over every replicate ``n`` and stored
residual ``k``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BTooSmall, DimMismatch, SizeMismatch, ValidationError
from . import regress
from .regress import RegressConfig, RegressionSuite, _check_pair, _features, _fit_stack, _suite_from_stack

RESIDUAL_MODELS = ("oob", "scaled")


@dataclass(frozen=True)
class PredictionInterval:
    oxide: str
    point: float
    lower: float
    upper: float
    level: float


@dataclass(eq=False)
class IntervalTable:
    """Intervals for many samples at once; arrays are (N, t)."""

    lower: np.ndarray
    point: np.ndarray
    upper: np.ndarray
    level: float
    oxide_names: tuple
    sample_ids: tuple = ()

    def __len__(self):
        return self.point.shape[0]

    def row(self, i):
        return [
            PredictionInterval(o, float(self.point[i, j]), float(self.lower[i, j]), float(self.upper[i, j]), self.level)
            for j, o in enumerate(self.oxide_names)
        ]

    @property
    def width(self):
        return self.upper - self.lower


@dataclass(eq=False)
class BootstrapEnsemble:
    """``B`` regression suites, each fitted on its own resample, plus OOB residuals.

    Replicate parameters are stacked with leading axes ``(B, t)``.
    ``residuals`` has one column per oxide; under the ``"scaled"`` residual
    model the columns are residuals divided by the fitted scale
    ``scale_suite`` predicts for that training row.
    """

    oxide_names: tuple
    input_mode: str
    stack: dict
    resamples: np.ndarray  # (B, N_train) row indices
    residuals: np.ndarray  # (N_train, t)
    oob_counts: np.ndarray  # (N_train,) replicates that left each row out
    base_seed: int
    regress_cfg: RegressConfig
    residual_model: str = "oob"
    scale_suite: RegressionSuite | None = None
    scale_floor: np.ndarray | None = None

    @property
    def B(self):
        return self.resamples.shape[0]

    @property
    def n_features(self):
        return self.stack["x_loc"].shape[1]

    @property
    def replicates(self):
        return [_suite_from_stack(self.stack, n, self.oxide_names, self.regress_cfg, self.base_seed + n)
                for n in range(self.B)]

    def replicate_predictions(self, features):
        """Every replicate's estimate, shape (B, N, t)."""
        F = _features(features)
        if F.shape[1] != self.n_features:
            raise DimMismatch(f"ensemble expects {self.n_features} features, got {F.shape[1]}")
        s = self.stack
        out = np.empty((self.B, F.shape[0], len(self.oxide_names)))
        for n in range(self.B):
            Z = (F - s["x_loc"][n]) / s["x_scale"][n]
            h = np.maximum(np.einsum("nd,tdh->tnh", Z, s["W1"][n]) + s["b1"][n][:, None, :], 0.0)
            y = np.einsum("tnh,th->tn", h, s["w2"][n]) + s["b2"][n][:, None]
            out[n] = (y * s["y_scale"][n][:, None] + s["y_loc"][n][:, None]).T
        return out

    def residual_scale(self, features):
        """Per-sample residual scale, (N, t); ones for the homoscedastic model."""
        F = _features(features)
        if self.residual_model == "oob":
            return np.ones((F.shape[0], len(self.oxide_names)))
        return np.maximum(self.scale_suite.predict(F), self.scale_floor)


def bootstrap_resamples(n_rows, B, seed):
    """Row indices for each replicate; replicate ``n`` uses ``default_rng(seed + n)``."""
    return np.stack([np.random.default_rng(seed + n).integers(0, n_rows, size=n_rows) for n in range(B)])


def bootstrap_fit(features, compositions, B=100, regress_cfg=RegressConfig(), seed=0, residual_model="oob"):
    """Train ``B`` bootstrap replicates and collect out-of-bag residuals.

    For each training row the residual is the truth minus the mean
    prediction of the replicates whose resample excluded that row. Rows
    that no replicate left out fall back to the residual of replicate 0.

    ``residual_model="scaled"`` additionally fits a regression suite to
    ``|residual|`` and stores residuals in units of that fitted scale, so
    interval width can vary with the input.
    """
    regress_cfg.validate()
    if B < 2:
        raise BTooSmall("bootstrap needs B >= 2")
    if residual_model not in RESIDUAL_MODELS:
        raise ValidationError(f"residual_model must be one of {RESIDUAL_MODELS}")
    F, T, names = _check_pair(features, compositions)
    n_rows = F.shape[0]

    rows = bootstrap_resamples(n_rows, B, seed)
    stack = _fit_stack(F, T, rows, np.arange(B) + seed, regress_cfg)
    ens = BootstrapEnsemble(names, regress_cfg.input_mode, stack, rows, np.zeros((n_rows, len(names))),
                            np.zeros(n_rows, dtype=int), seed, regress_cfg)

    P = ens.replicate_predictions(F)  # (B, N, t)
    oob = np.ones((B, n_rows), dtype=bool)
    oob[np.arange(B)[:, None], rows] = False
    counts = oob.sum(axis=0)
    oob_mean = np.einsum("bn,bnt->nt", oob.astype(float), P) / np.maximum(counts, 1)[:, None]
    never = counts == 0
    oob_mean[never] = P[0, never]
    resid = T - oob_mean
    ens.oob_counts = counts

    if residual_model == "scaled":
        cfg = RegressConfig(**{**regress_cfg.__dict__, "seed": seed + B})
        ens.scale_suite = regress.train_suite(F, np.abs(resid), cfg)
        ens.scale_floor = 0.1 * np.mean(np.abs(resid), axis=0)
        ens.residual_model = "scaled"
        resid = resid / ens.residual_scale(F)
    ens.residuals = resid
    return ens


def predict_intervals(ensemble, features, level=0.95, sample_ids=()):
    """Percentile intervals for every row of ``features``.

    The point estimate is the median of the replicate estimates; the
    bounds are the ``(1 - level) / 2`` and ``(1 + level) / 2`` quantiles of
    all ``B * N_train`` sums of a replicate estimate and a stored residual.
    Bounds are widened if needed so that each interval contains its point.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    P = ensemble.replicate_predictions(features)  # (B, N, t)
    scale = ensemble.residual_scale(features)  # (N, t)
    B, N, t = P.shape
    q = [(1.0 - level) / 2.0, (1.0 + level) / 2.0]
    lower = np.empty((N, t))
    upper = np.empty((N, t))
    point = np.median(P, axis=0)
    for j in range(t):
        r = ensemble.residuals[:, j]
        for i in range(N):
            draws = (P[:, i, j][:, None] + scale[i, j] * r[None, :]).ravel()
            lower[i, j], upper[i, j] = np.quantile(draws, q)
    lower = np.minimum(lower, point)
    upper = np.maximum(upper, point)
    ids = tuple(getattr(features, "sample_ids", ())) or tuple(sample_ids)
    return IntervalTable(lower, point, upper, level, ensemble.oxide_names, ids)


def predict_interval(ensemble, y0, level=0.95):
    """Intervals for a single feature vector, one :class:`PredictionInterval` per oxide."""
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.ndim != 1:
        raise DimMismatch("predict_interval takes one feature vector; use predict_intervals for batches")
    return predict_intervals(ensemble, y0[None, :], level).row(0)


def coverage(intervals, truths):
    """Percent of truths inside ``[lower, upper]`` (inclusive), per oxide."""
    T = np.atleast_2d(np.asarray(getattr(truths, "values", truths), dtype=np.float64))
    if T.shape != intervals.point.shape:
        raise SizeMismatch(f"truths {T.shape} vs intervals {intervals.point.shape}")
    inside = (T >= intervals.lower) & (T <= intervals.upper)
    pct = 100.0 * inside.sum(axis=0) / T.shape[0]
    return {o: float(p) for o, p in zip(intervals.oxide_names, pct)}


# ------------------------------------------------------------------------ I/O


def write_intervals(table, path):
    ids = table.sample_ids or tuple(str(i) for i in range(len(table)))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "oxide", "level", "lower", "point", "upper"])
        for i, sid in enumerate(ids):
            for j, o in enumerate(table.oxide_names):
                w.writerow([sid, o, repr(table.level), repr(float(table.lower[i, j])),
                            repr(float(table.point[i, j])), repr(float(table.upper[i, j]))])


def read_intervals(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = list(dict.fromkeys(r["sample_id"] for r in rows))
    oxides = list(dict.fromkeys(r["oxide"] for r in rows))
    shape = (len(ids), len(oxides))
    arrs = {k: np.empty(shape) for k in ("lower", "point", "upper")}
    for r in rows:
        i, j = ids.index(r["sample_id"]), oxides.index(r["oxide"])
        for k in arrs:
            arrs[k][i, j] = float(r[k])
    return IntervalTable(arrs["lower"], arrs["point"], arrs["upper"], float(rows[0]["level"]), tuple(oxides), tuple(ids))


def coverage_report(intervals, truths, B, seed, r2=None):
    report = {
        "coverage_percent": coverage(intervals, truths),
        "level": intervals.level,
        "N": len(intervals),
        "B": B,
        "seed": seed,
    }
    if r2 is not None:
        report["r2"] = {k: (None if math.isnan(v) else v) for k, v in r2.items()}
    return report


_STACK_KEYS = ("x_loc", "x_scale", "y_loc", "y_scale", "W1", "b1", "w2", "b2")


def save(ensemble, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "B": ensemble.B,
        "oxide_names": list(ensemble.oxide_names),
        "input_mode": ensemble.input_mode,
        "base_seed": ensemble.base_seed,
        "residual_model": ensemble.residual_model,
        "regress_cfg": dict(ensemble.regress_cfg.__dict__),
        "scale_floor": None if ensemble.scale_floor is None else ensemble.scale_floor.tolist(),
    }
    (d / "bootstrap.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for k in _STACK_KEYS:
        np.save(d / f"bootstrap_{k}.npy", np.ascontiguousarray(ensemble.stack[k]))
    np.save(d / "bootstrap_resamples.npy", ensemble.resamples)
    np.save(d / "bootstrap_residuals.npy", ensemble.residuals)
    np.save(d / "bootstrap_oob_counts.npy", ensemble.oob_counts)
    if ensemble.scale_suite is not None:
        regress.save(ensemble.scale_suite, d, name="bootstrap_scale")


def load(directory):
    d = Path(directory)
    m = json.loads((d / "bootstrap.json").read_text())
    stack = {k: np.load(d / f"bootstrap_{k}.npy") for k in _STACK_KEYS}
    scale_suite = None
    if m["residual_model"] == "scaled":
        scale_suite = regress.load(d, name="bootstrap_scale")
    return BootstrapEnsemble(
        oxide_names=tuple(m["oxide_names"]),
        input_mode=m["input_mode"],
        stack=stack,
        resamples=np.load(d / "bootstrap_resamples.npy"),
        residuals=np.load(d / "bootstrap_residuals.npy"),
        oob_counts=np.load(d / "bootstrap_oob_counts.npy"),
        base_seed=m["base_seed"],
        regress_cfg=RegressConfig(**m["regress_cfg"]),
        residual_model=m["residual_model"],
        scale_suite=scale_suite,
        scale_floor=None if m["scale_floor"] is None else np.array(m["scale_floor"]),
    )
