"""Command-line interface.

Subcommands: gen-data, train, sample, evaluate, audit-privacy, pipeline.
Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 audit failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import privacy as pv
from .. import sampler as hmc
from .. import scoremodel as sm
from .. import training as tr
from . import datasets, figures, formats
from .classifier import accuracy, train_classifier
from .config import ConfigError, config_hash, load_run_config
from .metrics import mmd2_rbf
from . import pipeline as pl

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_AUDIT = 3


def _add_config_args(p):
    p.add_argument("--config", help="path to a key = value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a configuration key")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="privgen",
        description="differentially private score-model training and HMC synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a toy dataset to disk")
    p.add_argument("--spec", required=True, help="generator, e.g. mixture2(6)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a score model under the configured budget")
    _add_config_args(p)
    p.add_argument("--out", help="output directory (defaults to config out_dir)")

    p = sub.add_parser("sample", help="generate labeled samples from a trained model")
    p.add_argument("--model", required=True, help="model directory or params.bin path")
    _add_config_args(p)
    p.add_argument("--out", help="output directory (defaults to config out_dir)")

    p = sub.add_parser("evaluate", help="score generated samples against real data")
    p.add_argument("--generated", required=True, help="directory written by `sample`")
    p.add_argument("--real", required=True, help="real dataset path")
    p.add_argument("--out", help="report directory (defaults to the generated directory)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("audit-privacy", help="empirically audit the response mechanism")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pipeline", help="full train/sample/evaluate run")
    _add_config_args(p)

    return parser


def _cmd_gen_data(args) -> int:
    ds = datasets.gen_toy_dataset(args.spec, args.n, seed=args.seed)
    out = datasets.save_dataset(ds, args.out)
    if ds.dim <= 3:
        datasets.save_csv(ds, Path(args.out) / "data.csv")
    print(f"wrote {ds.n} samples ({ds.dim}-d, {ds.n_classes} classes) to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    full = pl._resolve_dataset(cfg)
    train_ds, _ = datasets.train_test_split(full, cfg.test_fraction, seed=cfg.seed)
    params, spec, embedding, ledger, trace = pl.train_model(cfg, train_ds, out_dir, [])
    sm.save_params(out_dir / "params.bin", params, spec)
    formats.save_tensor(out_dir / "embedding.bin", embedding.matrix)
    eps, delta = pv.ledger_report(ledger)
    formats.write_kv(out_dir / "model_meta.txt", {
        "feature_dim": train_ds.dim,
        "n_classes": train_ds.n_classes,
        "embed_dim": embedding.embed_dim,
        "value_lo": repr(train_ds.value_range[0]),
        "value_hi": repr(train_ds.value_range[1]),
        "feature_scale": repr(pl.feature_scale(cfg, train_ds)),
        "epsilon": repr(eps),
        "delta": repr(delta),
    })
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, value in enumerate(trace, 1):
            writer.writerow([i, repr(float(value))])
    figures.save_loss_curve(trace, out_dir / "loss_curve.png")
    print(f"trained {spec.input_dim}-d model for {cfg.iterations} iterations "
          f"(epsilon={eps:g}, delta=0); outputs in {out_dir}")
    return EXIT_OK


def _load_model_dir(model_arg):
    path = Path(model_arg)
    model_dir = path.parent if path.is_file() else path
    params_path = path if path.is_file() else model_dir / "params.bin"
    params, spec = sm.load_params(params_path)
    meta = formats.read_kv(model_dir / "model_meta.txt")
    embedding = sm.EmbeddingMatrix(matrix=formats.load_tensor(model_dir / "embedding.bin"))
    return params, spec, embedding, meta


def _cmd_sample(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    params, spec, embedding, meta = _load_model_dir(args.model)
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_dim = int(meta["feature_dim"])
    scale = float(meta.get("feature_scale", 1.0))
    lo = np.concatenate([
        np.full(feature_dim, float(meta["value_lo"]) / scale),
        np.full(embedding.embed_dim, float(embedding.matrix.min())),
    ])
    hi = np.concatenate([
        np.full(feature_dim, float(meta["value_hi"]) / scale),
        np.full(embedding.embed_dim, float(embedding.matrix.max())),
    ])
    scfg = cfg.sampler_config(lo, hi)
    endpoints = hmc.sample_chains(
        lambda u: sm.score(params, u), spec.input_dim, scfg,
        np.random.default_rng(scfg.seed),
    )
    gen_x, gen_y = sm.unembed_batch(endpoints, embedding)
    gen_x = gen_x * scale
    manifest = []
    pl.write_samples(endpoints, gen_y, out_dir, manifest)
    formats.save_tensor(out_dir / "gen_features.bin", gen_x)
    formats.write_kv(out_dir / "ledger.txt", {
        "epsilon": meta["epsilon"], "delta": meta["delta"],
    })
    figures.save_sample_scatter(gen_x, gen_y, out_dir / "samples_scatter.png")
    print(f"wrote {len(gen_y)} generated samples to {out_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    gen_dir = Path(args.generated)
    gen_x = formats.load_tensor(gen_dir / "gen_features.bin")
    gen_y = []
    with open(gen_dir / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            gen_y.append(int(row["label"]))
    gen_y = np.asarray(gen_y, dtype=int)
    ledger_info = formats.read_kv(gen_dir / "ledger.txt")
    real = datasets.load_dataset(args.real)
    real_train, real_test = datasets.train_test_split(real, 0.5, seed=args.seed)

    n_classes = real.n_classes
    clf = train_classifier(gen_x, gen_y, n_classes=n_classes)
    downstream = accuracy(clf, real_test.features, real_test.labels)
    baseline = accuracy(
        train_classifier(real_train.features, real_train.labels, n_classes=n_classes),
        real_test.features, real_test.labels,
    )
    raw = mmd2_rbf(gen_x, real_test.features)
    report = pl.EvalReport(
        downstream_accuracy=downstream,
        baseline_accuracy=baseline,
        mmd2_raw=raw,
        mmd2=max(raw, 0.0),
        class_counts=tuple(int(c) for c in np.bincount(gen_y, minlength=n_classes)),
        epsilon=float(ledger_info["epsilon"]),
        delta=float(ledger_info["delta"]),
        config_sha256="-",
        n_generated=int(len(gen_y)),
    )
    out_dir = Path(args.out or gen_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    pl.write_report(report, out_dir, manifest)
    figures.save_sample_scatter(gen_x, gen_y, out_dir / "samples_scatter.png")
    figures.save_class_counts(report.class_counts, out_dir / "class_counts.png")
    for key, value in report.to_mapping().items():
        print(f"{key}={value}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    cfg = pv.RRConfig(args.epsilon, args.k)
    result = pv.audit_ratio(cfg, args.trials, rng=np.random.default_rng(args.seed))
    print(result.line())
    return EXIT_OK if result.passed else EXIT_AUDIT


def _cmd_pipeline(args) -> int:
    cfg = load_run_config(args.config, args.overrides)
    report = pl.run_pipeline(cfg)
    print(f"config {config_hash(cfg)[:12]} -> "
          f"accuracy={report.downstream_accuracy:.4f} "
          f"baseline={report.baseline_accuracy:.4f} "
          f"mmd2={report.mmd2:.6f} "
          f"epsilon={report.epsilon:g} delta={report.delta:g}")
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "evaluate": _cmd_evaluate,
    "audit-privacy": _cmd_audit,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tr.DivergenceError, hmc.SamplerDivergence, ad.NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
