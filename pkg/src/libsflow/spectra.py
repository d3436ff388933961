"""Spectral data containers with CSV interchange, plus a synthetic LIBS-like generator.

Intensities are ingested as-is: the package applies no normalization or
continuum removal.

CSV layouts
-----------
spectra::

    wavelength,<g_1>,...,<g_M>
    <id>,<y_1>,...,<y_M>

compositions::

    sample_id,<oxide_1>,...,<oxide_C>
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import (
    InvalidConfig,
    MissingSample,
    NegativeConcentration,
    NegativeIntensity,
    NonMonotoneGrid,
    RaggedRow,
    SizeMismatch,
    ValidationError,
)

OXIDES = ("SiO2", "TiO2", "Al2O3", "FeOT", "MgO", "CaO", "Na2O", "K2O")

# ChemCam's three spectrometers span roughly this range.
GRID_START_NM = 240.0
GRID_STOP_NM = 850.0

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


def _fmt(v):
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(v))


@dataclass(frozen=True, eq=False)
class SpectraMatrix:
    """N spectra sampled on a shared, strictly increasing wavelength grid.

    Attributes:
        values: (N, M) non-negative intensities.
        channel_grid: (M,) wavelengths in nm.
        sample_ids: N string identifiers.
    """

    values: np.ndarray
    channel_grid: np.ndarray
    sample_ids: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        grid = np.array(self.channel_grid, dtype=np.float64).ravel()
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"spectra must be a non-empty 2-D matrix, got shape {values.shape}")
        n, m = values.shape
        if grid.shape[0] != m:
            raise SizeMismatch(f"channel grid has {grid.shape[0]} entries for {m} columns")
        if m > 1 and not np.all(np.diff(grid) > 0):
            raise NonMonotoneGrid("channel grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError("spectra contain non-finite values")
        neg = np.argwhere(values < 0)
        if neg.size:
            raise NegativeIntensity(int(neg[0, 0]), int(neg[0, 1]))
        ids = tuple(str(s) for s in self.sample_ids) if len(self.sample_ids) else _default_ids(n)
        if len(ids) != n:
            raise SizeMismatch(f"{len(ids)} sample ids for {n} spectra")
        values.flags.writeable = False
        grid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_grid", grid)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return SpectraMatrix(self.values[idx], self.channel_grid, [self.sample_ids[i] for i in idx])

    def __eq__(self, other):
        if not isinstance(other, SpectraMatrix):
            return NotImplemented
        return (
            self.sample_ids == other.sample_ids
            and np.array_equal(self.channel_grid, other.channel_grid)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class CompositionMatrix:
    """Oxide weight-percentages, one row per sample."""

    values: np.ndarray
    oxide_names: tuple = OXIDES
    sample_ids: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        names = tuple(str(o) for o in self.oxide_names)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValidationError(f"compositions must be a non-empty 2-D matrix, got shape {values.shape}")
        if len(names) == 0:
            raise MissingSample("composition table has no oxide columns")
        if values.shape[1] != len(names):
            raise SizeMismatch(f"{values.shape[1]} composition columns for {len(names)} oxide names")
        if not np.all(np.isfinite(values)):
            raise ValidationError("compositions contain non-finite values")
        if np.any(values < 0):
            r, c = np.argwhere(values < 0)[0]
            raise NegativeConcentration(f"negative concentration at row {r}, oxide {names[c]}")
        n = values.shape[0]
        ids = tuple(str(s) for s in self.sample_ids) if len(self.sample_ids) else _default_ids(n)
        if len(ids) != n:
            raise SizeMismatch(f"{len(ids)} sample ids for {n} composition rows")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "oxide_names", names)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_oxides(self):
        return self.values.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return CompositionMatrix(self.values[idx], self.oxide_names, [self.sample_ids[i] for i in idx])

    def __eq__(self, other):
        if not isinstance(other, CompositionMatrix):
            return NotImplemented
        return (
            self.sample_ids == other.sample_ids
            and self.oxide_names == other.oxide_names
            and np.array_equal(self.values, other.values)
        )


def _default_ids(n):
    width = max(4, len(str(n - 1)))
    return tuple(f"s{i:0{width}d}" for i in range(n))


# --------------------------------------------------------------------------- I/O


def write_spectra(spectra, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("wavelength," + ",".join(_fmt(g) for g in spectra.channel_grid) + "\n")
        for sid, row in zip(spectra.sample_ids, spectra.values):
            fh.write(sid + "," + ",".join(_fmt(v) for v in row) + "\n")
    return path


def load_spectra(path, format="csv"):
    """Read a spectra CSV (grid row first, then one row per sample).

    Raises:
        NegativeIntensity, NonMonotoneGrid, RaggedRow: on malformed content.
        OSError: if the file cannot be read.
    """
    if format != "csv":
        raise ValidationError(f"unsupported spectra format {format!r}")
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: empty spectra file")
    head = rows[0]
    if head[0].strip().lower() != "wavelength":
        raise ValidationError(f"{path}: first row must start with 'wavelength'")
    grid = np.array([float(g) for g in head[1:]])
    m = grid.size
    if m < 1:
        raise ValidationError(f"{path}: channel grid is empty")
    if m > 1 and not np.all(np.diff(grid) > 0):
        raise NonMonotoneGrid(f"{path}: channel grid is not strictly increasing")
    if len(rows) < 2:
        raise ValidationError(f"{path}: no spectra rows")
    ids = []
    values = np.empty((len(rows) - 1, m))
    for i, row in enumerate(rows[1:]):
        if len(row) != m + 1:
            raise RaggedRow(i, m + 1, len(row))
        ids.append(row[0].strip())
        values[i] = [float(v) for v in row[1:]]
    return SpectraMatrix(values, grid, ids)


def write_compositions(comps, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("sample_id," + ",".join(comps.oxide_names) + "\n")
        for sid, row in zip(comps.sample_ids, comps.values):
            fh.write(sid + "," + ",".join(_fmt(v) for v in row) + "\n")
    return path


def load_compositions(path, sample_ids=None):
    """Read a composition CSV with header ``sample_id,<oxide names>``.

    If ``sample_ids`` is given the rows are reordered to match it, and any
    id without a composition row raises :class:`MissingSample`.
    """
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: empty composition file")
    names = [h.strip() for h in rows[0][1:]]
    if not names:
        raise MissingSample(f"{path}: no oxide columns in header")
    table = {}
    for i, row in enumerate(rows[1:]):
        if len(row) != len(names) + 1:
            raise RaggedRow(i, len(names) + 1, len(row))
        table[row[0].strip()] = [float(v) for v in row[1:]]
    if not table:
        raise MissingSample(f"{path}: no composition rows")
    if sample_ids is None:
        ids = list(table)
    else:
        ids = [str(s) for s in sample_ids]
        missing = [s for s in ids if s not in table]
        if missing:
            raise MissingSample(f"no composition for sample(s) {missing[:5]}")
    return CompositionMatrix(np.array([table[s] for s in ids]), names, ids)


# --------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic LIBS-style generator.

    ``peak_width`` is the Gaussian line FWHM measured in channels.
    """

    n_samples: int = 426
    n_channels: int = 5606
    lines_per_oxide: int = 6
    peak_width: float = 6.0
    baseline_level: float = 0.02
    noise_sigma: float = 0.08
    seed: int = 0
    oxide_names: tuple = OXIDES

    def validate(self):
        for name in ("n_samples", "n_channels", "lines_per_oxide"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if not self.peak_width > 0:
            raise InvalidConfig("peak_width must be > 0")
        if self.baseline_level < 0:
            raise InvalidConfig("baseline_level must be >= 0")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be >= 0")
        if len(self.oxide_names) < 1:
            raise InvalidConfig("need at least one oxide")
        return self


def channel_grid(n_channels):
    return np.linspace(GRID_START_NM, GRID_STOP_NM, n_channels)


def line_centers(cfg):
    """Line centers (in channel units), shape (C, lines_per_oxide)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(0.0, cfg.n_channels - 1, size=(len(cfg.oxide_names), cfg.lines_per_oxide))


def line_templates(cfg):
    """Per-oxide emission templates, shape (C, M).

    Each template is a sum of unit-height Gaussian lines. A sample made of a
    single oxide at 100 wt.% (with no baseline or noise) is exactly its
    template.
    """
    centers = line_centers(cfg)
    sigma = cfg.peak_width * FWHM_TO_SIGMA
    ch = np.arange(cfg.n_channels, dtype=np.float64)
    d = (ch[None, None, :] - centers[:, :, None]) / sigma
    return np.exp(-0.5 * d * d).sum(axis=1)


def synthesize(weight_percent, cfg, noise=None):
    """Map compositions (N, C) in wt.% to noiseless spectra (N, M) plus optional noise.

    ``noise`` is added before truncation at zero.
    """
    w = np.atleast_2d(np.asarray(weight_percent, dtype=np.float64))
    y = cfg.baseline_level + (w / 100.0) @ line_templates(cfg)
    if noise is not None:
        y = np.maximum(y + noise, 0.0)
    return y


def synth_dataset(cfg):
    """Draw a synthetic (spectra, compositions) pair.

    Compositions are uniform on the simplex scaled to 100 wt.%. Output is a
    deterministic function of ``cfg`` (including its seed).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, m, c = cfg.n_samples, cfg.n_channels, len(cfg.oxide_names)
    # same leading draws as line_centers(); keep the order
    rng.uniform(0.0, m - 1, size=(c, cfg.lines_per_oxide))
    wt = 100.0 * rng.dirichlet(np.ones(c), size=n)
    noise = rng.normal(0.0, cfg.noise_sigma, size=(n, m)) if cfg.noise_sigma > 0 else None
    y = synthesize(wt, cfg, noise)
    ids = _default_ids(n)
    return (
        SpectraMatrix(y, channel_grid(m), ids),
        CompositionMatrix(wt, cfg.oxide_names, ids),
    )


def synth_metadata(cfg):
    centers = line_centers(cfg)
    meta = asdict(cfg)
    meta["oxide_names"] = list(cfg.oxide_names)
    meta["line_centers_channel"] = {o: centers[i].tolist() for i, o in enumerate(cfg.oxide_names)}
    meta["line_fwhm_channels"] = cfg.peak_width
    meta["grid_nm"] = [GRID_START_NM, GRID_STOP_NM]
    return meta


def write_synth(cfg, out_dir):
    """Write spectra.csv, compositions.csv and synth_meta.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spectra, comps = synth_dataset(cfg)
    paths = {
        "spectra": write_spectra(spectra, out / "spectra.csv"),
        "compositions": write_compositions(comps, out / "compositions.csv"),
        "metadata": out / "synth_meta.json",
    }
    paths["metadata"].write_text(json.dumps(synth_metadata(cfg), indent=2, sort_keys=True) + "\n")
    return paths


# ------------------------------------------------------------------------- split


def split_indices(n, holdout_fraction, seed):
    """Seeded (train, holdout) index partition with ``round(n * fraction)`` held out."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValidationError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")
    n_hold = int(round(n * holdout_fraction))
    if n_hold < 1 or n_hold > n - 1:
        raise ValidationError(f"holdout of {n_hold} rows out of {n} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def split(spectra, compositions, holdout_fraction, seed):
    """Partition paired data into ``((train_spectra, train_comps), (hold_spectra, hold_comps))``."""
    if spectra.n_samples != compositions.n_samples:
        raise SizeMismatch(f"{spectra.n_samples} spectra vs {compositions.n_samples} compositions")
    train, hold = split_indices(spectra.n_samples, holdout_fraction, seed)
    return (
        (spectra.subset(train), compositions.subset(train)),
        (spectra.subset(hold), compositions.subset(hold)),
    )
