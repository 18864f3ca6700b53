"""Synthetic labeled data and non-IID client partitioners.

Datasets are Gaussian mixtures with one isotropic cluster per class.  Two
partitioners split a dataset's indices over clients: a per-class Dirichlet
split and a pathological split where every client holds exactly ``gamma``
classes.  Both produce a disjoint cover of the sample indices.

A small line-oriented text format is provided for archiving datasets and
partitions next to experiment outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, p) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if f.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if y.ndim != 1 or y.shape[0] != f.shape[0]:
            raise ValueError("features and labels must have equal length")
        if f.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.num_classes < 1 or y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class Partition:
    shards: tuple  # tuple of int64 index arrays, one per client

    def __post_init__(self):
        object.__setattr__(
            self, "shards", tuple(np.asarray(s, dtype=np.int64) for s in self.shards)
        )

    @property
    def n_clients(self) -> int:
        return len(self.shards)

    def sizes(self) -> list[int]:
        return [int(s.shape[0]) for s in self.shards]

    def weights(self) -> list[float]:
        n = sum(self.sizes())
        return [k / n for k in self.sizes()]

    def validate(self, n: int) -> None:
        """Raise if shards are not a disjoint, non-empty cover of ``range(n)``."""
        if any(s.shape[0] == 0 for s in self.shards):
            raise PartitionError("empty shard")
        allidx = np.concatenate(self.shards) if self.shards else np.empty(0, np.int64)
        if allidx.shape[0] != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise PartitionError("shards are not a disjoint cover of the dataset")


def gen_gaussian_mixture(classes: int, dim: int, per_class: int, spread: float,
                         seed: int) -> Dataset:
    """Balanced mixture of isotropic Gaussians.

    Class means are drawn uniformly in the cube ``[-1, 1]^dim`` and accepted
    only if they lie at least ``spread / 2`` from every earlier mean.  Samples
    of class ``c`` are ``mean_c + spread * N(0, I)``, so ``spread`` is the
    within-class standard deviation.  Labels are laid out class-major.
    """
    if classes < 2 or dim < 1 or per_class < 1 or not spread > 0:
        raise ValueError("need classes >= 2, dim >= 1, per_class >= 1, spread > 0")
    rng = np.random.default_rng(seed)
    means = _draw_separated_means(rng, classes, dim, 0.5 * spread)
    noise = rng.standard_normal((classes, per_class, dim))
    features = (means[:, None, :] + spread * noise).reshape(classes * per_class, dim)
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(features, labels, classes)


def _draw_separated_means(rng, classes, dim, min_dist, max_attempts=1000):
    means = []
    for c in range(classes):
        for _ in range(max_attempts):
            cand = rng.uniform(-1.0, 1.0, size=dim)
            if all(np.linalg.norm(cand - m) >= min_dist for m in means):
                means.append(cand)
                break
        else:
            raise ValueError(
                f"could not place class mean {c} at distance >= {min_dist:g} after "
                f"{max_attempts} attempts; spread is too large for dim={dim}"
            )
    return np.array(means)


def train_test_split(ds: Dataset, test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split holding out ``test_per_class`` samples of every class."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if idx.shape[0] <= test_per_class:
            raise ValueError(f"class {c} has too few samples to hold out {test_per_class}")
        idx = rng.permutation(idx)
        test.append(idx[:test_per_class])
        train.append(idx[test_per_class:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, proportional to ``weights``.

    Leftover units go to the largest fractional parts; ties favour the lower
    client id.
    """
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    left = total - int(counts.sum())
    if left > 0:
        frac = raw - counts
        # stable sort on -frac keeps lower ids first among equal remainders
        order = np.argsort(-frac, kind="stable")
        counts[order[:left]] += 1
    return counts


def partition_dirichlet(ds: Dataset, n_clients: int, beta: float, seed: int) -> Partition:
    """Split each class over clients with proportions drawn from Dir(beta).

    Empty shards are repaired by moving the lowest index of the first largest
    shard into them, one sample at a time.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if n_clients > len(ds):
        raise PartitionError(f"{n_clients} clients exceed {len(ds)} samples")
    rng = np.random.default_rng(seed)
    shards = [[] for _ in range(n_clients)]
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if idx.shape[0] == 0:
            continue
        idx = rng.permutation(idx)
        w = rng.dirichlet(np.full(n_clients, beta))
        counts = _largest_remainder(w, idx.shape[0])
        start = 0
        for k in range(n_clients):
            shards[k].extend(idx[start:start + counts[k]].tolist())
            start += counts[k]
    shards = [sorted(s) for s in shards]
    while True:
        empty = [k for k, s in enumerate(shards) if not s]
        if not empty:
            break
        sizes = [len(s) for s in shards]
        donor = sizes.index(max(sizes))
        shards[empty[0]].append(shards[donor].pop(0))
    part = Partition(tuple(shards))
    part.validate(len(ds))
    return part


def partition_pathological(ds: Dataset, n_clients: int, gamma: int, seed: int) -> Partition:
    """Give every client exactly ``gamma`` distinct classes.

    Client slots are filled by cycling through a seeded permutation of the
    classes, so client ``k`` receives ``gamma`` consecutive entries of that
    cycle.  Each class's samples are then split evenly over its holders.
    """
    C = ds.num_classes
    if not 1 <= gamma <= C:
        raise ValueError(f"gamma must lie in [1, {C}]")
    if n_clients * gamma < C:
        raise PartitionError(
            f"infeasible: {n_clients} clients x {gamma} classes cannot cover {C} classes"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(C)
    holders = [[] for _ in range(C)]
    for k in range(n_clients):
        for j in range(gamma):
            holders[order[(k * gamma + j) % C]].append(k)
    shards = [[] for _ in range(n_clients)]
    for c in range(C):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        if idx.shape[0] < len(holders[c]):
            raise PartitionError(
                f"class {c} has {idx.shape[0]} samples for {len(holders[c])} holders"
            )
        for k, piece in zip(holders[c], np.array_split(idx, len(holders[c]))):
            shards[k].extend(piece.tolist())
    part = Partition(tuple(sorted(s) for s in shards))
    part.validate(len(ds))
    return part


def partition_iid(ds: Dataset, n_clients: int, seed: int) -> Partition:
    if not 1 <= n_clients <= len(ds):
        raise PartitionError("need 1 <= n_clients <= len(ds)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return Partition(tuple(np.sort(p) for p in np.array_split(perm, n_clients)))


# -- text archive format ---------------------------------------------------
#
# dataset: first line "# classes=C dim=p", then one sample per line:
#   label f_1 ... f_p        (floats in shortest round-trip repr)
# partition: one shard per line, space-separated sample indices.


def save_dataset(ds: Dataset, path) -> None:
    lines = [f"# classes={ds.num_classes} dim={ds.dim}"]
    for y, row in zip(ds.labels, ds.features):
        lines.append(" ".join([str(int(y))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text().splitlines()
    header = dict(kv.split("=") for kv in text[0].lstrip("# ").split())
    classes, dim = int(header["classes"]), int(header["dim"])
    labels, feats = [], []
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split()
        if len(parts) != dim + 1:
            raise ValueError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}")
        labels.append(int(parts[0]))
        feats.append([float(v) for v in parts[1:]])
    return Dataset(np.array(feats).reshape(len(labels), dim), np.array(labels), classes)


def save_partition(part: Partition, path) -> None:
    Path(path).write_text(
        "".join(" ".join(str(int(i)) for i in s) + "\n" for s in part.shards)
    )


def load_partition(path) -> Partition:
    lines = Path(path).read_text().splitlines()
    return Partition(tuple([int(t) for t in line.split()] for line in lines))
