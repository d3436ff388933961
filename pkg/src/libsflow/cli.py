"""Command-line driver: ``libsflow {synth,fit,sample,predict,logprob}``.

A run is configured by one JSON file (``--config``) whose keys mirror
:class:`PipelineConfig`; ``--seed`` and ``--out`` override the file.
Every output is a plain text table or JSON document, with arrays stored as ``.npy``.

Exit codes: 0 ok, 1 validation error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, flow, nmf, regress, spectra, uq
from .errors import ChannelMismatch, InvalidConfig, MissingArtifact, NumericError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

OUTLIER_PERCENTILE = 1.0


@dataclass
class NmfSection:
    rank: int | None = 15
    rank_candidates: list | None = None
    max_iter: int = 400
    tol: float = 1e-6
    k_folds: int = 5


@dataclass
class FlowSection:
    n_layers: int = 5
    hidden_width: int = 32
    epochs: int = 500
    lr: float = 1e-3
    batch: int = 64
    clip_norm: float | None = None


@dataclass
class RegressSection:
    input_mode: str = "latent"
    hidden_width: int = 16
    epochs: int = 500
    lr: float = 1e-2
    batch: int = 32


@dataclass
class UqSection:
    B: int = 100
    level: float = 0.95
    residual_model: str = "oob"


@dataclass
class PipelineConfig:
    spectra: str | None = None
    compositions: str | None = None
    out: str | None = None
    seed: int = 0
    holdout: int = 140
    nmf: NmfSection = field(default_factory=NmfSection)
    flow: FlowSection = field(default_factory=FlowSection)
    regress: RegressSection = field(default_factory=RegressSection)
    uq: UqSection = field(default_factory=UqSection)
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sections = {"nmf": NmfSection, "flow": FlowSection, "regress": RegressSection, "uq": UqSection}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        for key, kind in sections.items():
            sub = d.get(key) or {}
            bad = set(sub) - {f.name for f in fields(kind)}
            if bad:
                raise InvalidConfig(f"unknown keys in {key!r}: {sorted(bad)}")
            d[key] = kind(**sub)
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def synth_config(self):
        s = dict(self.synth)
        if "oxide_names" in s:
            s["oxide_names"] = tuple(s["oxide_names"])
        try:
            cfg = spectra.SynthConfig(**{"seed": self.seed, **s})
        except TypeError as exc:
            raise InvalidConfig(f"bad synth section: {exc}") from None
        return cfg.validate()

    def validate_fit(self):
        if not 0.0 < self.uq.level < 1.0:
            raise InvalidConfig(f"uq.level must lie in (0, 1), got {self.uq.level}")
        if self.nmf.rank is None and not self.nmf.rank_candidates:
            raise InvalidConfig("set nmf.rank or nmf.rank_candidates")
        if self.holdout < 1:
            raise InvalidConfig("holdout must be >= 1")
        for name in ("spectra", "compositions"):
            p = getattr(self, name)
            if p is None:
                raise InvalidConfig(f"config needs a {name!r} path")
            if not Path(p).is_file():
                raise FileNotFoundError(f"{name} file not found: {p}")
        if self.out is None:
            raise InvalidConfig("no output directory: pass --out or set 'out'")
        return self

    def regress_config(self):
        r = self.regress
        return regress.RegressConfig(hidden_width=r.hidden_width, epochs=r.epochs, lr=r.lr,
                                     batch_size=r.batch, seed=self.seed, input_mode=r.input_mode)


def load_config(path=None, seed=None, out=None):
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: not valid JSON ({exc})") from None
        base = Path(path).resolve().parent
        for key in ("spectra", "compositions", "out"):
            if d.get(key) is not None and not Path(d[key]).is_absolute():
                d[key] = str(base / d[key])
    cfg = PipelineConfig.from_dict(d)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = str(out)
    return cfg


# ---------------------------------------------------------------- utilities


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_hashes(run_dir):
    run_dir = Path(run_dir)
    return {
        p.relative_to(run_dir).as_posix(): sha256(p)
        for p in sorted(run_dir.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


def digest(hashes):
    return hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(run_dir, *names):
    run_dir = Path(run_dir)
    for name in names:
        if not (run_dir / name).exists():
            raise MissingArtifact(f"{run_dir / name} is missing; run 'fit' first")


# ----------------------------------------------------------------- commands


def cmd_synth(cfg):
    """Write a synthetic dataset (spectra, compositions, metadata) into ``cfg.out``."""
    if cfg.out is None:
        raise InvalidConfig("no output directory: pass --out")
    paths = spectra.write_synth(cfg.synth_config(), cfg.out)
    return {k: str(v) for k, v in paths.items()}


def cmd_fit(cfg, force=False, log=print):
    """Run the whole fitting pipeline on the configured data and write every artifact.

    Writes every model plus ``manifest.json`` (seeds, versions, per-stage
    wall-clock and a SHA-256 per artifact) into ``cfg.out``.
    """
    cfg.validate_fit()
    run = Path(cfg.out)
    if run.exists() and any(run.iterdir()):
        if not force:
            raise FileExistsError(f"{run} already exists and is not empty; use --force to replace it")
        shutil.rmtree(run)
    run.mkdir(parents=True, exist_ok=True)
    timings = {}

    def stage(name):
        timings[name] = time.perf_counter()

    def done(name):
        timings[name] = time.perf_counter() - timings[name]
        log(f"[{name}] {timings[name]:.2f} s")

    Y = spectra.load_spectra(cfg.spectra)
    C = spectra.load_compositions(cfg.compositions, sample_ids=Y.sample_ids)
    if not 1 <= cfg.holdout <= Y.n_samples - 1:
        raise InvalidConfig(f"holdout {cfg.holdout} must lie in [1, {Y.n_samples - 1}]")
    (Ytr, Ctr), (Yho, Cho) = spectra.split(Y, C, cfg.holdout / Y.n_samples, cfg.seed)
    _dump({"seed": cfg.seed, "train": list(Ytr.sample_ids), "holdout": list(Yho.sample_ids)}, run / "split.json")
    spectra.write_spectra(Yho, run / "holdout_spectra.csv")
    spectra.write_compositions(Cho, run / "holdout_compositions.csv")
    resolved = cfg.to_dict()
    resolved.pop("out")  # keeps artifacts independent of where the run lives
    _dump(resolved, run / "config.json")

    stage("nmf")
    rank = cfg.nmf.rank
    if cfg.nmf.rank_candidates:
        sel = nmf.select_rank(Ytr, cfg.nmf.rank_candidates, k_folds=cfg.nmf.k_folds, seed=cfg.seed,
                              max_iter=cfg.nmf.max_iter, tol=cfg.nmf.tol)
        _dump(sel.to_dict(), run / "rank_selection.json")
        rank = sel.chosen_rank
    model = nmf.fit(Ytr, rank, max_iter=cfg.nmf.max_iter, tol=cfg.nmf.tol, seed=cfg.seed)
    nmf.save(model, run / "nmf")
    done("nmf")

    X = model.basis
    # regressors see the same projection that new spectra go through at predict time
    features = Ytr.values if cfg.regress.input_mode == "raw" else nmf.transform(model, Ytr)

    stage("flow")
    f = cfg.flow
    fl, report = flow.train(flow.new_flow(rank, f.n_layers, f.hidden_width, seed=cfg.seed), X,
                            epochs=f.epochs, lr=f.lr, batch_size=f.batch, seed=cfg.seed, clip_norm=f.clip_norm)
    flow.save(fl, run / "flow")
    train_report = report.to_dict()
    train_report.pop("seconds")
    lp = fl.log_prob(X)
    qs = (OUTLIER_PERCENTILE, 5.0, 50.0, 95.0, 99.0)
    train_report["train_log_prob_percentiles"] = {repr(q): float(v) for q, v in zip(qs, np.percentile(lp, qs))}
    _dump(train_report, run / "flow" / "train_report.json")
    done("flow")

    stage("regress")
    rcfg = cfg.regress_config()
    suite = regress.train_suite(features, Ctr, rcfg)
    regress.save(suite, run / "regress")
    done("regress")

    stage("bootstrap")
    ens = uq.bootstrap_fit(features, Ctr, B=cfg.uq.B, regress_cfg=rcfg, seed=cfg.seed,
                           residual_model=cfg.uq.residual_model)
    uq.save(ens, run / "bootstrap")
    done("bootstrap")

    hashes = artifact_hashes(run)
    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "rank": rank,
        "n_train": Ytr.n_samples,
        "n_holdout": Yho.n_samples,
        "timings_seconds": timings,
        "artifacts": hashes,
        "artifact_digest": digest(hashes),
    }
    _dump(manifest, run / "manifest.json")
    return manifest


def cmd_sample(run_dir, n, seed, out=None):
    """Draw ``n`` latent vectors from the flow and map them to spectra.

    Negative latent draws are set to zero before the NMF inverse map; the
    fraction of clamped coordinates is returned as ``clamp_rate``.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    run = Path(run_dir)
    _require(run, "flow/flow.json", "nmf/nmf.json")
    fl = flow.load(run / "flow")
    model = nmf.load(run / "nmf")
    z = fl.sample(n, seed)
    neg = z < 0
    latent = np.where(neg, 0.0, z)
    S = nmf.inverse_transform(model, latent)
    width = max(4, len(str(n - 1)))
    S = spectra.SpectraMatrix(S.values, S.channel_grid, [f"gen{i:0{width}d}" for i in range(n)])
    out = Path(out) if out is not None else run / "samples"
    out.mkdir(parents=True, exist_ok=True)
    spectra.write_spectra(S, out / "samples.csv")
    diag = {"n": n, "seed": seed, "clamp_rate": float(neg.mean()), "clamped_per_dim": neg.mean(axis=0).tolist()}
    _dump(diag, out / "sample_diagnostics.json")
    return diag


def cmd_predict(run_dir, spectra_path, level=0.95, truths_path=None, out=None):
    """Interval predictions for every spectrum; coverage and R^2 when truths are given."""
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    run = Path(run_dir)
    _require(run, "nmf/nmf.json", "bootstrap/bootstrap.json")
    model = nmf.load(run / "nmf")
    ens = uq.load(run / "bootstrap")
    Y = spectra.load_spectra(spectra_path)
    if Y.n_channels != model.n_channels:
        raise ChannelMismatch(f"spectra have {Y.n_channels} channels, model expects {model.n_channels}")
    features = Y.values if ens.input_mode == "raw" else nmf.transform(model, Y)
    table = uq.predict_intervals(ens, features, level, sample_ids=Y.sample_ids)
    out = Path(out) if out is not None else run / "predict"
    out.mkdir(parents=True, exist_ok=True)
    uq.write_intervals(table, out / "intervals.csv")
    with (out / "predictions.csv").open("w") as fh:
        fh.write("sample_id," + ",".join(table.oxide_names) + "\n")
        for sid, row in zip(Y.sample_ids, table.point):
            fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    result = {"intervals": str(out / "intervals.csv"), "predictions": str(out / "predictions.csv")}
    if truths_path is not None:
        C = spectra.load_compositions(truths_path, sample_ids=Y.sample_ids)
        r2 = {o: regress.r2_or_nan(C.values[:, j], table.point[:, j])[0] for j, o in enumerate(C.oxide_names)}
        report = uq.coverage_report(table, C, ens.B, ens.base_seed, r2=r2)
        _dump(report, out / "coverage.json")
        result["coverage"] = report
    return result


def cmd_logprob(run_dir, spectra_path, out=None):
    """Latent log-density of each spectrum, flagged against the training 1st percentile."""
    run = Path(run_dir)
    _require(run, "nmf/nmf.json", "flow/flow.json", "flow/train_report.json")
    model = nmf.load(run / "nmf")
    fl = flow.load(run / "flow")
    threshold = json.loads((run / "flow" / "train_report.json").read_text())["train_log_prob_percentiles"][repr(OUTLIER_PERCENTILE)]
    Y = spectra.load_spectra(spectra_path)
    if Y.n_channels != model.n_channels:
        raise ChannelMismatch(f"spectra have {Y.n_channels} channels, model expects {model.n_channels}")
    lp = fl.log_prob(nmf.transform(model, Y))
    out = Path(out) if out is not None else run / "logprob"
    out.mkdir(parents=True, exist_ok=True)
    with (out / "logprob.csv").open("w") as fh:
        fh.write("sample_id,log_prob,outlier\n")
        for sid, v in zip(Y.sample_ids, lp):
            fh.write(f"{sid},{float(v)!r},{int(v < threshold)}\n")
    return {"threshold": threshold, "log_prob": lp, "outlier": lp < threshold}


# ---------------------------------------------------------------------- argv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--force", action="store_true", help="replace an existing run directory")

    p = _Parser(prog="libsflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    sub.add_parser("fit", parents=[common], help="fit the full pipeline")

    s = sub.add_parser("sample", parents=[common], help="generate spectra from the flow")
    s.add_argument("run", help="fitted run directory")
    s.add_argument("-n", type=int, default=1, help="number of spectra")

    s = sub.add_parser("predict", parents=[common], help="interval predictions")
    s.add_argument("run")
    s.add_argument("spectra", help="spectra CSV")
    s.add_argument("--truths", help="composition CSV for coverage and R^2")
    s.add_argument("--level", type=float, help="interval level (default: config uq.level)")

    s = sub.add_parser("logprob", parents=[common], help="latent log-densities")
    s.add_argument("run")
    s.add_argument("spectra")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "synth":
            for k, v in cmd_synth(cfg).items():
                print(f"{k}: {v}")
        elif args.command == "fit":
            m = cmd_fit(cfg, force=args.force)
            print(f"artifact digest {m['artifact_digest']}")
        elif args.command == "sample":
            d = cmd_sample(args.run, args.n, cfg.seed, out=args.out)
            print(f"clamp rate {d['clamp_rate']:.4f}")
        elif args.command == "predict":
            level = cfg.uq.level if args.level is None else args.level
            res = cmd_predict(args.run, args.spectra, level, args.truths, out=args.out)
            if "coverage" in res:
                print(json.dumps(res["coverage"]["coverage_percent"], indent=2))
        elif args.command == "logprob":
            res = cmd_logprob(args.run, args.spectra, out=args.out)
            print(f"{int(res['outlier'].sum())} of {res['outlier'].size} below threshold {res['threshold']:.3f}")
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, MissingArtifact) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
