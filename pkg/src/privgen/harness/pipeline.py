"""End-to-end run: train privately, sample, de-embed, evaluate, report.

Everything written into the output directory is derived from the trained
model or aggregate metrics; raw private features never land there. A
manifest lists every file the run produced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import privacy as pv
from .. import sampler as hmc
from .. import scoremodel as sm
from .. import training as tr
from . import datasets, figures, formats
from .classifier import accuracy, train_classifier
from .config import RunConfig, config_hash, config_text
from .metrics import mmd2_rbf


@dataclass(frozen=True)
class EvalReport:
    downstream_accuracy: float
    baseline_accuracy: float
    mmd2_raw: float
    mmd2: float  # clamped at zero
    class_counts: tuple
    epsilon: float
    delta: float
    config_sha256: str
    n_generated: int

    def to_mapping(self):
        out = {
            "downstream_accuracy": repr(float(self.downstream_accuracy)),
            "baseline_accuracy": repr(float(self.baseline_accuracy)),
            "mmd2_raw": repr(float(self.mmd2_raw)),
            "mmd2": repr(float(self.mmd2)),
            "epsilon": repr(float(self.epsilon)),
            "delta": repr(float(self.delta)),
            "n_generated": self.n_generated,
            "config_sha256": self.config_sha256,
        }
        for i, c in enumerate(self.class_counts):
            out[f"class_count_{i}"] = int(c)
        return out

    def csv_header_row(self):
        mapping = self.to_mapping()
        keys = sorted(mapping)
        return keys, [mapping[k] for k in keys]


def feature_scale(cfg: RunConfig, ds: datasets.Dataset) -> float:
    """Divisor mapping features into [-1, 1]; from declared range only."""
    if not cfg.normalize_features:
        return 1.0
    lo, hi = ds.value_range
    return max(abs(lo), abs(hi), 1e-12)


def _embedded_bounds(cfg: RunConfig, ds: datasets.Dataset, embedding: sm.EmbeddingMatrix):
    scale = feature_scale(cfg, ds)
    lo_feat, hi_feat = ds.value_range[0] / scale, ds.value_range[1] / scale
    lo = np.concatenate([
        np.full(ds.dim, lo_feat),
        np.full(embedding.embed_dim, float(embedding.matrix.min())),
    ])
    hi = np.concatenate([
        np.full(ds.dim, hi_feat),
        np.full(embedding.embed_dim, float(embedding.matrix.max())),
    ])
    return lo, hi


def _resolve_dataset(cfg: RunConfig) -> datasets.Dataset:
    path = Path(cfg.dataset)
    if path.exists():
        return datasets.load_dataset(path)
    return datasets.gen_toy_dataset(cfg.dataset, cfg.n_train + cfg.n_test, seed=cfg.seed)


def train_model(cfg: RunConfig, train_ds: datasets.Dataset, out_dir: Path | None = None,
                manifest=None):
    """Train the score network for a run; optionally write checkpoints."""
    embedding = sm.make_embedding(train_ds.n_classes, cfg.embed_dim, seed=cfg.seed)
    spec = cfg.mlp_spec(train_ds.dim)

    checkpoint_cb = None
    if out_dir is not None and cfg.checkpoint_interval > 0:
        def checkpoint_cb(iteration, params):
            if iteration % cfg.checkpoint_interval == 0:
                p = out_dir / f"checkpoint_{iteration:06d}.bin"
                sm.save_params(p, params, spec)
                if manifest is not None:
                    manifest.append(p)

    scale = feature_scale(cfg, train_ds)
    params, ledger, trace = tr.train(
        (train_ds.features / scale, train_ds.labels), embedding, spec, cfg.train_config(),
        checkpoint_cb=checkpoint_cb,
    )
    return params, spec, embedding, ledger, trace


def sample_model(cfg: RunConfig, params: sm.Params, embedding: sm.EmbeddingMatrix,
                 train_ds: datasets.Dataset, ledger: pv.PrivacyLedger | None = None):
    """Draw generated samples and de-embed them into (features, labels).

    Features come back on the original data scale.
    """
    lo, hi = _embedded_bounds(cfg, train_ds, embedding)
    scfg = cfg.sampler_config(lo, hi)
    dim = train_ds.dim + embedding.embed_dim
    endpoints = hmc.sample_chains(
        lambda u: sm.score(params, u), dim, scfg, np.random.default_rng(scfg.seed)
    )
    if ledger is not None:
        ledger.register_postprocess("hamiltonian-sampling")
    gen_x, gen_y = sm.unembed_batch(endpoints, embedding)
    gen_x = gen_x * feature_scale(cfg, train_ds)
    return endpoints, gen_x, gen_y


def evaluate_generated(gen_x, gen_y, real_train: datasets.Dataset,
                       real_test: datasets.Dataset, cfg: RunConfig,
                       ledger: pv.PrivacyLedger):
    """Score generated data against held-out real data.

    If generation collapsed to a single class the classifier cannot be fit;
    the report then scores the implied constant predictor instead of
    aborting the run.
    """
    n_classes = real_train.n_classes
    if np.unique(gen_y).size < 2:
        downstream = float(np.mean(real_test.labels == gen_y[0]))
        ledger.register_postprocess("classifier-training")
    else:
        clf = train_classifier(gen_x, gen_y, n_classes=n_classes,
                               epochs=cfg.classifier_epochs, lr=cfg.classifier_lr)
        ledger.register_postprocess("classifier-training")
        downstream = accuracy(clf, real_test.features, real_test.labels)
    baseline_clf = train_classifier(real_train.features, real_train.labels,
                                    n_classes=n_classes, epochs=cfg.classifier_epochs,
                                    lr=cfg.classifier_lr)
    baseline = accuracy(baseline_clf, real_test.features, real_test.labels)
    raw = mmd2_rbf(gen_x, real_test.features)
    eps, delta = pv.ledger_report(ledger)
    return EvalReport(
        downstream_accuracy=downstream,
        baseline_accuracy=baseline,
        mmd2_raw=raw,
        mmd2=max(raw, 0.0),
        class_counts=tuple(int(c) for c in np.bincount(gen_y, minlength=n_classes)),
        epsilon=eps,
        delta=delta,
        config_sha256=config_hash(cfg),
        n_generated=int(len(gen_y)),
    )


def write_report(report: EvalReport, out_dir: Path, manifest):
    formats.write_kv(out_dir / "report.txt", report.to_mapping())
    manifest.append(out_dir / "report.txt")
    header, row = report.csv_header_row()
    path = out_dir / "report.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerow(row)
    manifest.append(path)


def write_samples(endpoints, gen_y, out_dir: Path, manifest):
    formats.save_tensor(out_dir / "samples.bin", endpoints)
    manifest.append(out_dir / "samples.bin")
    path = out_dir / "manifest.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "index", "label"])
        for chain, label in enumerate(gen_y):
            writer.writerow([chain, 0, int(label)])
    manifest.append(path)


def run_pipeline(cfg: RunConfig, write_outputs: bool = True) -> EvalReport:
    """Train, sample, evaluate; returns the report and (optionally) writes
    params, samples, metrics, and figures under cfg.out_dir."""
    full = _resolve_dataset(cfg)
    real_train, real_test = datasets.train_test_split(full, cfg.test_fraction, seed=cfg.seed)

    out_dir = Path(cfg.out_dir)
    manifest = []
    if write_outputs:
        out_dir.mkdir(parents=True, exist_ok=True)

    params, spec, embedding, ledger, trace = train_model(
        cfg, real_train, out_dir if write_outputs else None, manifest
    )
    endpoints, gen_x, gen_y = sample_model(cfg, params, embedding, real_train, ledger)
    report = evaluate_generated(gen_x, gen_y, real_train, real_test, cfg, ledger)

    if write_outputs:
        sm.save_params(out_dir / "params.bin", params, spec)
        manifest.append(out_dir / "params.bin")
        formats.save_tensor(out_dir / "embedding.bin", embedding.matrix)
        manifest.append(out_dir / "embedding.bin")
        with open(out_dir / "loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss"])
            for i, value in enumerate(trace, 1):
                writer.writerow([i, repr(float(value))])
        manifest.append(out_dir / "loss.csv")
        (out_dir / "config.txt").write_text(config_text(cfg))
        manifest.append(out_dir / "config.txt")
        write_samples(endpoints, gen_y, out_dir, manifest)
        formats.save_tensor(out_dir / "gen_features.bin", gen_x)
        manifest.append(out_dir / "gen_features.bin")
        write_report(report, out_dir, manifest)
        manifest.append(figures.save_loss_curve(trace, out_dir / "loss_curve.png"))
        manifest.append(
            figures.save_sample_scatter(gen_x, gen_y, out_dir / "samples_scatter.png")
        )
        manifest.append(
            figures.save_class_counts(report.class_counts, out_dir / "class_counts.png")
        )
        with open(out_dir / "outputs.txt", "w") as fh:
            for p in manifest:
                fh.write(f"{Path(p).name}\n")
    return report
