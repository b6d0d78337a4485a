"""Toy labeled datasets and their on-disk form.

A dataset on disk is a directory holding features.bin (binary tensor),
labels.csv (index,label) and meta.txt (key = value); a plain CSV file with
x0..xk feature columns and a label column is accepted for 2-D toys.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats

_GENERATORS = ("gauss2d", "mixture2", "rings", "grid_digits")

# blocky 8x8 glyphs for the ten digit classes
_DIGIT_ROWS = [
    "..####..|.##..##.|.##..##.|.##..##.|.##..##.|.##..##.|.##..##.|..####..",
    "...##...|..###...|...##...|...##...|...##...|...##...|...##...|..####..",
    "..####..|.##..##.|.....##.|....##..|...##...|..##....|.##.....|.######.",
    "..####..|.##..##.|.....##.|...###..|.....##.|.....##.|.##..##.|..####..",
    "....##..|...###..|..#.##..|.#..##..|.######.|....##..|....##..|....##..",
    ".######.|.##.....|.##.....|.#####..|.....##.|.....##.|.##..##.|..####..",
    "..####..|.##.....|.##.....|.#####..|.##..##.|.##..##.|.##..##.|..####..",
    ".######.|.....##.|....##..|....##..|...##...|...##...|..##....|..##....",
    "..####..|.##..##.|.##..##.|..####..|.##..##.|.##..##.|.##..##.|..####..",
    "..####..|.##..##.|.##..##.|..#####.|.....##.|.....##.|....##..|..###...",
]


@dataclass(frozen=True)
class Dataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    value_range: tuple

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("features must be a nonempty (n, d) matrix")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must align with features")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError("labels out of range")
        lo, hi = self.value_range
        # slack covers the 32-bit storage round trip
        slack = 1e-6 * max(1.0, abs(lo), abs(hi))
        if x.min() < lo - slack or x.max() > hi + slack:
            raise ValueError("features outside declared value range")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def _digit_templates():
    out = np.zeros((10, 8, 8))
    for digit, rows in enumerate(_DIGIT_ROWS):
        for r, row in enumerate(rows.split("|")):
            for c, ch in enumerate(row):
                out[digit, r, c] = 1.0 if ch == "#" else 0.0
    return out


def parse_generator(spec: str):
    """Split 'mixture2(6)' into ('mixture2', (6.0,))."""
    spec = spec.strip()
    if "(" not in spec:
        return spec, ()
    name, _, rest = spec.partition("(")
    args = tuple(float(a) for a in rest.rstrip(")").split(",") if a.strip())
    return name.strip(), args


def gen_toy_dataset(spec: str, n: int, seed: int = 0) -> Dataset:
    """Deterministic synthetic datasets; n is the total sample count."""
    name, args = parse_generator(spec)
    if name not in _GENERATORS:
        raise ValueError(f"unknown dataset generator {name!r}; choose from {_GENERATORS}")
    rng = np.random.default_rng(seed)

    if name == "gauss2d":
        if n < 2:
            raise ValueError("need at least 2 samples per class")
        x = rng.normal(size=(n, 2))
        y = np.zeros(n, dtype=int)
        n_classes = 1
    elif name == "mixture2":
        sep = args[0] if args else 6.0
        if n < 4:
            raise ValueError("need at least 2 samples per class")
        per = n // 2
        means = np.array([[-sep / 2, 0.0], [sep / 2, 0.0]])
        y = np.repeat([0, 1], [per, n - per])
        x = rng.normal(size=(n, 2)) + means[y]
        n_classes = 2
    elif name == "rings":
        if n < 4:
            raise ValueError("need at least 2 samples per class")
        per = n // 2
        y = np.repeat([0, 1], [per, n - per])
        radii = np.where(y == 0, 1.0, 2.0) + 0.1 * rng.normal(size=n)
        theta = rng.uniform(0, 2 * np.pi, size=n)
        x = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=1)
        n_classes = 2
    else:  # grid_digits
        if n < 20:
            raise ValueError("need at least 2 samples per class")
        templates = _digit_templates().reshape(10, 64)
        y = np.arange(n) % 10
        rng.shuffle(y)
        brightness = rng.uniform(0.7, 1.0, size=(n, 1))
        x = templates[y] * brightness + 0.08 * rng.normal(size=(n, 64))
        x = np.clip(x, 0.0, 1.0)
        n_classes = 10

    lo, hi = float(x.min()), float(x.max())
    return Dataset(name=spec, features=x, labels=y, n_classes=n_classes, value_range=(lo, hi))


def train_test_split(ds: Dataset, test_fraction: float, seed: int = 0):
    if not 0 < test_fraction < 1:
        raise ValueError("test fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    n_test = max(1, int(round(ds.n * test_fraction)))
    test_idx, train_idx = order[:n_test], order[n_test:]

    def subset(idx, tag):
        return Dataset(
            name=f"{ds.name}[{tag}]",
            features=ds.features[idx],
            labels=ds.labels[idx],
            n_classes=ds.n_classes,
            value_range=ds.value_range,
        )

    return subset(train_idx, "train"), subset(test_idx, "test")


def save_dataset(ds: Dataset, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    formats.save_tensor(out_dir / "features.bin", ds.features)
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for i, label in enumerate(ds.labels):
            writer.writerow([i, int(label)])
    formats.write_kv(
        out_dir / "meta.txt",
        {
            "name": ds.name,
            "n": ds.n,
            "dim": ds.dim,
            "n_classes": ds.n_classes,
            "value_lo": repr(ds.value_range[0]),
            "value_hi": repr(ds.value_range[1]),
        },
    )
    return out_dir


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.is_file() and path.suffix == ".csv":
        return _load_csv(path)
    meta = formats.read_kv(path / "meta.txt")
    features = formats.load_tensor(path / "features.bin")
    labels = np.zeros(features.shape[0], dtype=int)
    with open(path / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            labels[int(row["index"])] = int(row["label"])
    return Dataset(
        name=meta["name"],
        features=features,
        labels=labels,
        n_classes=int(meta["n_classes"]),
        value_range=(float(meta["value_lo"]), float(meta["value_hi"])),
    )


def _load_csv(path: Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise ValueError(f"{path}: dataset CSV needs a 'label' column")
        feat_cols = [c for c in reader.fieldnames if c != "label"]
        rows, labels = [], []
        for row in reader:
            rows.append([float(row[c]) for c in feat_cols])
            labels.append(int(row["label"]))
    x = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    return Dataset(
        name=path.stem,
        features=x,
        labels=y,
        n_classes=int(y.max()) + 1,
        value_range=(float(x.min()), float(x.max())),
    )


def save_csv(ds: Dataset, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return path
