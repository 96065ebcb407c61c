"""Synthetic Gaussian-cluster datasets and Dirichlet non-IID partitioning.

The dataset is the desk-scale stand-in for an image benchmark: C Gaussian
class clusters in R^p whose centers are rescaled to unit minimum separation,
so the ``noise`` parameter reads directly as cluster overlap. Partitioning
draws per-class client proportions from Dirichlet(alpha), the construction
under which small alpha literally gives clients only a few classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

__all__ = [
    "SyntheticDataset",
    "ClientPartition",
    "generate_dataset",
    "dirichlet_partition",
    "stamp_trigger",
    "save_dataset",
    "load_dataset",
    "save_partition",
    "load_partition",
]

_FORMAT_VERSION = 1


@dataclass
class SyntheticDataset:
    """Feature matrix (m, p), integer labels in [0, C), and generation metadata."""

    features: np.ndarray
    labels: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices: np.ndarray) -> "SyntheticDataset":
        return SyntheticDataset(self.features[indices], self.labels[indices], self.params)

    @property
    def num_classes(self) -> int:
        return int(self.params.get("num_classes", int(self.labels.max()) + 1))


@dataclass
class ClientPartition:
    """Disjoint index lists covering the training set, one per client."""

    client_indices: list[np.ndarray]
    dirichlet_alpha: float
    repaired_clients: int = 0

    def __post_init__(self):
        sizes = [len(ix) for ix in self.client_indices]
        if any(s == 0 for s in sizes):
            raise ValueError("every client must be nonempty")
        flat = np.concatenate(self.client_indices)
        if len(np.unique(flat)) != len(flat):
            raise ValueError("client index lists overlap")


def _split_counts(total: int, num_classes: int) -> np.ndarray:
    counts = np.full(num_classes, total // num_classes, dtype=np.int64)
    counts[: total % num_classes] += 1
    return counts


def generate_dataset(
    num_classes: int,
    num_features: int,
    train_size: int,
    test_size: int,
    noise: float,
    seed: int,
) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Seeded Gaussian class clusters; returns (train, test).

    Class centers are drawn once and rescaled so the minimum pairwise center
    distance is exactly 1; samples are center + noise * N(0, I). Sizes are
    split as evenly as possible across classes, so every class appears in both
    splits whenever size >= num_classes.
    """
    if train_size < num_classes or test_size < num_classes:
        raise ValueError("need at least one sample per class in each split")
    rng = make_rng(seed)
    centers = rng.standard_normal((num_classes, num_features))
    if num_classes > 1:
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=2))
        min_dist = dists[~np.eye(num_classes, dtype=bool)].min()
        centers = centers / min_dist

    params = {
        "num_classes": num_classes,
        "num_features": num_features,
        "noise": noise,
        "seed": int(seed),
    }

    def _draw(total: int) -> SyntheticDataset:
        counts = _split_counts(total, num_classes)
        labels = np.repeat(np.arange(num_classes), counts)
        feats = centers[labels] + noise * rng.standard_normal((total, num_features))
        perm = rng.permutation(total)
        return SyntheticDataset(feats[perm], labels[perm], params)

    return _draw(train_size), _draw(test_size)


def dirichlet_partition(
    labels: np.ndarray,
    num_clients: int,
    alpha: float,
    rng: np.random.Generator,
) -> ClientPartition:
    """Allocate each class's samples to clients by Dirichlet(alpha) proportions.

    Empty clients are repaired by stealing one sample from the currently
    largest client (deterministic, repair count recorded).
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if num_clients < 1:
        raise ValueError("need at least one client")
    labels = np.asarray(labels)
    assignments: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for cls in np.unique(labels):
        cls_idx = np.flatnonzero(labels == cls)
        props = rng.dirichlet(np.full(num_clients, alpha))
        cuts = (np.cumsum(props) * len(cls_idx)).astype(int)[:-1]
        for client, chunk in enumerate(np.split(cls_idx, cuts)):
            if len(chunk):
                assignments[client].append(chunk)

    client_indices = [
        np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64)
        for chunks in assignments
    ]

    repaired = 0
    sizes = np.array([len(ix) for ix in client_indices])
    while (sizes == 0).any():
        needy = int(np.flatnonzero(sizes == 0)[0])
        donor = int(np.argmax(sizes))
        if sizes[donor] < 2:
            raise ValueError("not enough samples to give every client one")
        client_indices[needy] = client_indices[donor][-1:]
        client_indices[donor] = client_indices[donor][:-1]
        sizes = np.array([len(ix) for ix in client_indices])
        repaired += 1

    return ClientPartition(client_indices, alpha, repaired)


def stamp_trigger(features: np.ndarray, coords, value: float) -> np.ndarray:
    """Copy of ``features`` with the trigger coordinates overwritten by ``value``."""
    stamped = np.array(features, dtype=np.float64, copy=True)
    stamped[:, np.asarray(coords, dtype=int)] = value
    return stamped


def save_dataset(ds: SyntheticDataset, path) -> None:
    """Versioned .npz cache: features, labels, JSON-encoded generation params."""
    np.savez(
        path,
        format_version=_FORMAT_VERSION,
        features=ds.features,
        labels=ds.labels,
        params=json.dumps(ds.params, sort_keys=True),
    )


def load_dataset(path) -> SyntheticDataset:
    with np.load(path, allow_pickle=False) as z:
        if int(z["format_version"]) != _FORMAT_VERSION:
            raise ValueError(f"unsupported dataset cache version {z['format_version']}")
        return SyntheticDataset(z["features"], z["labels"], json.loads(str(z["params"])))


def save_partition(part: ClientPartition, path) -> None:
    """Versioned .npz cache of the client index lists."""
    arrays = {f"client_{i}": ix for i, ix in enumerate(part.client_indices)}
    np.savez(
        path,
        format_version=_FORMAT_VERSION,
        num_clients=len(part.client_indices),
        dirichlet_alpha=part.dirichlet_alpha,
        repaired_clients=part.repaired_clients,
        **arrays,
    )


def load_partition(path) -> ClientPartition:
    with np.load(path, allow_pickle=False) as z:
        if int(z["format_version"]) != _FORMAT_VERSION:
            raise ValueError(f"unsupported partition cache version {z['format_version']}")
        n = int(z["num_clients"])
        return ClientPartition(
            [z[f"client_{i}"] for i in range(n)],
            float(z["dirichlet_alpha"]),
            int(z["repaired_clients"]),
        )
