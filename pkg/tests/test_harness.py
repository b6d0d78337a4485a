import subprocess
import sys

import numpy as np
import pytest

from privgen import scoremodel as sm
from privgen.harness import (
    ConfigError,
    RunConfig,
    accuracy,
    config_hash,
    gen_toy_dataset,
    load_dataset,
    load_run_config,
    mmd2_rbf,
    run_pipeline,
    save_dataset,
    train_classifier,
    train_test_split,
)
from privgen.harness import config as hconfig
from privgen.harness import datasets as hdata
from privgen.harness import formats
from privgen.harness import pipeline as hpipe


class TestDatasets:
    def test_gauss2d_covariance(self):
        ds = gen_toy_dataset("gauss2d", 10**4, seed=0)
        assert np.max(np.abs(np.cov(ds.features.T) - np.eye(2))) < 0.1

    def test_mixture2_means(self):
        ds = gen_toy_dataset("mixture2(6)", 10**4, seed=1)
        m0 = ds.features[ds.labels == 0].mean(axis=0)
        m1 = ds.features[ds.labels == 1].mean(axis=0)
        assert np.allclose(m0, [-3, 0], atol=0.1)
        assert np.allclose(m1, [3, 0], atol=0.1)

    def test_grid_digits_in_unit_range(self):
        ds = gen_toy_dataset("grid_digits", 500, seed=2)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0
        assert ds.dim == 64 and ds.n_classes == 10

    def test_rings_classes(self):
        ds = gen_toy_dataset("rings", 2000, seed=3)
        r = np.linalg.norm(ds.features, axis=1)
        assert r[ds.labels == 0].mean() < r[ds.labels == 1].mean()

    def test_deterministic(self):
        a = gen_toy_dataset("mixture2(4)", 100, seed=9)
        b = gen_toy_dataset("mixture2(4)", 100, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_unknown_generator(self):
        with pytest.raises(ValueError):
            gen_toy_dataset("swirl", 100, seed=0)

    def test_save_load_round_trip(self, tmp_path):
        ds = gen_toy_dataset("mixture2(6)", 200, seed=4)
        save_dataset(ds, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert np.allclose(loaded.features, ds.features, atol=1e-6)
        assert np.array_equal(loaded.labels, ds.labels)
        assert loaded.n_classes == ds.n_classes

    def test_csv_round_trip(self, tmp_path):
        ds = gen_toy_dataset("mixture2(6)", 50, seed=5)
        hdata.save_csv(ds, tmp_path / "d.csv")
        loaded = load_dataset(tmp_path / "d.csv")
        assert np.allclose(loaded.features, ds.features)
        assert np.array_equal(loaded.labels, ds.labels)

    def test_split_is_disjoint_and_seeded(self):
        ds = gen_toy_dataset("mixture2(6)", 100, seed=0)
        tr1, te1 = train_test_split(ds, 0.25, seed=7)
        tr2, te2 = train_test_split(ds, 0.25, seed=7)
        assert np.array_equal(tr1.features, tr2.features)
        assert tr1.n + te1.n == ds.n


class TestClassifier:
    def test_separable_mixture(self):
        train = gen_toy_dataset("mixture2(6)", 2000, seed=0)
        test = gen_toy_dataset("mixture2(6)", 1000, seed=1)
        clf = train_classifier(train.features, train.labels)
        assert accuracy(clf, test.features, test.labels) >= 0.95

    def test_shuffled_labels_hit_chance(self):
        # a fit to label noise scores at chance on those labels
        rng = np.random.default_rng(3)
        train = gen_toy_dataset("mixture2(6)", 2000, seed=2)
        shuffled = rng.permutation(train.labels)
        clf = train_classifier(train.features, shuffled)
        acc = accuracy(clf, train.features, shuffled)
        n = train.n
        assert abs(acc - 0.5) < 3 * np.sqrt(0.25 / n) + 0.02

    def test_deterministic(self):
        train = gen_toy_dataset("mixture2(6)", 500, seed=5)
        a = train_classifier(train.features, train.labels)
        b = train_classifier(train.features, train.labels)
        assert np.array_equal(a.weights, b.weights)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_classifier(np.zeros((10, 2)), np.zeros(10, dtype=int))

    def test_perfect_and_constant_fixtures(self):
        x = np.array([[-1.0, 0.0], [1.0, 0.0]] * 50)
        y = np.array([0, 1] * 50)
        clf = train_classifier(x, y, epochs=500)
        assert accuracy(clf, x, y) == 1.0
        constant = type(clf)(weights=np.zeros((2, 2)), bias=np.array([1.0, 0.0]))
        assert accuracy(constant, x, y) == 0.5


class TestMmd:
    def test_identical_samples_biased_zero(self):
        a = np.random.default_rng(0).normal(size=(100, 2))
        assert mmd2_rbf(a, a, biased=True) == pytest.approx(0.0, abs=1e-12)

    def test_separated_distributions(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(1000, 2))
        b = rng.normal(size=(1000, 2)) + np.array([5.0, 0.0])
        assert mmd2_rbf(a, b) > 0.5

    def test_null_distribution_small(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(1000, 2))
        b = rng.normal(size=(1000, 2))
        assert abs(mmd2_rbf(a, b)) < 0.01

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(50, 3))
        b = rng.normal(size=(60, 3)) + 0.3
        assert mmd2_rbf(a, b) == pytest.approx(mmd2_rbf(b, a), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mmd2_rbf(np.zeros((5, 2)), np.zeros((5, 3)))


class TestConfig:
    def test_defaults_valid(self):
        cfg = RunConfig()
        assert cfg.epsilon == 10.0

    def test_file_and_override_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epsilon = 2.0\nk = 4\nseed = 3\n")
        cfg = load_run_config(path, ["epsilon=5.0"])
        assert cfg.epsilon == 5.0  # CLI wins
        assert cfg.k == 4  # file beats default
        assert cfg.batch_size == RunConfig().batch_size  # default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nonsense = 1\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_cross_field_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(batch_size=4, k=10)

    def test_hidden_dims_parsing(self):
        cfg = load_run_config(None, ["hidden_dims=8,4"])
        assert cfg.hidden_dims == (8, 4)

    def test_hash_stable_and_sensitive(self):
        assert config_hash(RunConfig()) == config_hash(RunConfig())
        assert config_hash(RunConfig()) != config_hash(RunConfig(seed=1))

    def test_bad_override_format(self):
        with pytest.raises(ConfigError):
            hconfig.parse_overrides(["epsilon"])


class TestFormats:
    def test_tensor_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(7, 3))
        formats.save_tensor(tmp_path / "t.bin", arr)
        back = formats.load_tensor(tmp_path / "t.bin")
        assert back.shape == arr.shape
        assert np.allclose(back, arr, atol=1e-6)
        assert back.dtype == np.float64

    def test_tensor_magic_rejected(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError):
            formats.load_tensor(tmp_path / "x.bin")

    def test_kv_round_trip(self, tmp_path):
        formats.write_kv(tmp_path / "m.txt", {"a": 1, "b": "x"})
        assert formats.read_kv(tmp_path / "m.txt") == {"a": "1", "b": "x"}


FAST_PIPELINE = dict(
    n_train=600, n_test=200, iterations=150, batch_size=32, n_generate=200,
    outer_iterations=40, leapfrog_steps=10, classifier_epochs=100,
)


class TestPipeline:
    def test_reports_are_byte_identical_for_equal_configs(self, tmp_path):
        cfg = RunConfig(out_dir=str(tmp_path / "a"), **FAST_PIPELINE)
        run_pipeline(cfg)
        first_txt = (tmp_path / "a" / "report.txt").read_bytes()
        first_csv = (tmp_path / "a" / "report.csv").read_bytes()
        run_pipeline(cfg)
        assert (tmp_path / "a" / "report.txt").read_bytes() == first_txt
        assert (tmp_path / "a" / "report.csv").read_bytes() == first_csv

    def test_report_embeds_config_hash_and_zero_delta(self, tmp_path):
        cfg = RunConfig(out_dir=str(tmp_path / "r"), **FAST_PIPELINE)
        report = run_pipeline(cfg)
        assert report.config_sha256 == config_hash(cfg)
        assert report.delta == 0.0
        assert report.epsilon == cfg.epsilon

    def test_outputs_contain_no_private_rows(self, tmp_path):
        cfg = RunConfig(out_dir=str(tmp_path / "p"), **FAST_PIPELINE)
        run_pipeline(cfg)
        out = tmp_path / "p"
        full = hdata.gen_toy_dataset(cfg.dataset, cfg.n_train + cfg.n_test, seed=cfg.seed)
        private_rows = {tuple(np.round(row, 9)) for row in full.features}
        listed = (out / "outputs.txt").read_text().splitlines()
        assert "samples.bin" in listed and "report.txt" in listed
        for name in listed:
            path = out / name
            assert path.exists()
            if path.suffix != ".bin":
                continue
            try:
                tensor = formats.load_tensor(path)
            except ValueError:
                continue  # model parameter file, holds weights not rows
            if tensor.ndim != 2 or tensor.shape[1] < 2:
                continue
            for row in tensor[:, :2]:
                assert tuple(np.round(row, 9)) not in private_rows

    def test_figures_rendered_alongside_reports(self, tmp_path):
        cfg = RunConfig(out_dir=str(tmp_path / "f"), **FAST_PIPELINE)
        run_pipeline(cfg)
        out = tmp_path / "f"
        for name in ("loss_curve.png", "samples_scatter.png", "class_counts.png"):
            assert (out / name).stat().st_size > 0
        assert (out / "report.csv").exists()
        assert (out / "loss.csv").read_text().startswith("iteration,loss")

    def test_checkpoints_written_at_interval(self, tmp_path):
        cfg = RunConfig(out_dir=str(tmp_path / "c"), checkpoint_interval=50,
                        **FAST_PIPELINE)
        run_pipeline(cfg)
        checkpoints = sorted((tmp_path / "c").glob("checkpoint_*.bin"))
        assert len(checkpoints) == cfg.iterations // 50
        params, spec = sm.load_params(checkpoints[0])
        assert spec.input_dim == 2 + cfg.embed_dim

    def test_generated_label_balance_within_multinomial_3sigma(self):
        # class-balanced training data should come back with roughly
        # uniform recovered labels
        cfg = RunConfig(seed=1, n_generate=400)
        report = run_pipeline(cfg, write_outputs=False)
        counts = np.asarray(report.class_counts)
        n = counts.sum()
        expected = n / counts.size
        sigma = np.sqrt(n * (1 / counts.size) * (1 - 1 / counts.size))
        assert np.all(np.abs(counts - expected) <= 3 * sigma), counts

    def test_presets_cover_the_ablation_axes(self):
        from privgen.harness import presets

        eps_labels = {lbl for lbl, _ in presets.epsilon_sweep(seeds=(0,))}
        assert eps_labels == {"eps=10", "eps=1"}
        k_cfgs = presets.k_sweep(seeds=(0, 1), ks=(5, 20))
        assert len(k_cfgs) == 4 and all(c.epsilon == 10.0 for _, c in k_cfgs)
        kin_cfgs = presets.kinetic_sweep(seeds=(0,))
        assert {c.kinetic for _, c in kin_cfgs} == {"gaussian", "rayleigh(0.5)", "uniform(-1,1)"}
        lam_cfgs = presets.step_size_sweep(seeds=(0,))
        assert len({c.lambda0 for _, c in lam_cfgs}) == 3


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "privgen", *args],
        capture_output=True, text=True,
    )


class TestCli:
    def test_gen_data_and_formats(self, tmp_path):
        out = tmp_path / "data"
        res = run_cli("gen-data", "--spec", "mixture2(6)", "--n", "200", "--seed", "1",
                      "--out", str(out))
        assert res.returncode == 0, res.stderr
        ds = load_dataset(out)
        assert ds.n == 200
        assert (out / "data.csv").exists()

    def test_train_sample_evaluate_chain(self, tmp_path):
        data_dir = tmp_path / "data"
        run_cli("gen-data", "--spec", "mixture2(6)", "--n", "800", "--seed", "0",
                "--out", str(data_dir))
        model_dir = tmp_path / "model"
        res = run_cli(
            "train", "--out", str(model_dir),
            "--set", f"dataset={data_dir}",
            "--set", "iterations=150", "--set", "batch_size=32",
            "--set", "n_train=600", "--set", "n_test=200",
        )
        assert res.returncode == 0, res.stderr
        assert (model_dir / "params.bin").exists()
        assert (model_dir / "loss.csv").exists()
        assert (model_dir / "loss_curve.png").exists()

        sample_dir = tmp_path / "samples"
        res = run_cli(
            "sample", "--model", str(model_dir), "--out", str(sample_dir),
            "--set", "n_generate=200", "--set", "outer_iterations=40",
            "--set", "leapfrog_steps=10",
        )
        assert res.returncode == 0, res.stderr
        assert (sample_dir / "samples.bin").exists()
        assert (sample_dir / "manifest.csv").read_text().startswith("chain,index,label")

        res = run_cli("evaluate", "--generated", str(sample_dir), "--real", str(data_dir))
        assert res.returncode == 0, res.stderr
        assert "downstream_accuracy=" in res.stdout
        assert "delta=0.0" in res.stdout
        assert (sample_dir / "report.txt").exists()
        assert (sample_dir / "report.csv").exists()

    def test_audit_line_and_exit_codes(self):
        res = run_cli("audit-privacy", "--epsilon", "1.0", "--k", "4", "--trials", "20000")
        assert res.returncode == 0
        line = res.stdout.strip()
        assert line.startswith("epsilon=1 k=4 trials=20000")
        assert "pass=true" in line

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("batch_size = 4\nk = 10\n")
        res = run_cli("train", "--config", str(bad))
        assert res.returncode == 1
        assert "error" in res.stderr

    def test_audit_trials_too_small_is_config_error(self):
        res = run_cli("audit-privacy", "--epsilon", "1.0", "--k", "2", "--trials", "100")
        assert res.returncode == 1

    def test_numerical_failure_exit_code(self, tmp_path):
        data_dir = tmp_path / "data"
        run_cli("gen-data", "--spec", "mixture2(6)", "--n", "400", "--seed", "0",
                "--out", str(data_dir))
        res = run_cli(
            "train", "--out", str(tmp_path / "m"),
            "--set", f"dataset={data_dir}",
            "--set", "optimizer=sgd", "--set", "learning_rate=1e6",
            "--set", "iterations=50", "--set", "batch_size=16", "--set", "k=8",
            "--set", "n_train=300", "--set", "n_test=100",
        )
        assert res.returncode == 2
        assert "numerical failure" in res.stderr
