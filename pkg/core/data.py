"""
Federated Datasets
Synthetic non-i.i.d. client data (label subsets + per-client feature shift),
train/test splitting, the cut-off regime for few-shot clients, and the CSV bundle format.
"""
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from core.errors import InvalidConfig, ParseError, SchemaError, TooFewSamples
from core.models import Batch

BASE_COLUMNS = ['client_id', 'split', 'label']


@dataclass(frozen=True, eq=False)
class ClientDataset:
    train: Batch
    test: Batch
    label_set: tuple
    virtual: bool = False

    def pooled(self):
        return Batch(np.vstack([self.train.features, self.test.features]),
                     np.concatenate([self.train.labels, self.test.labels]))


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    clients: tuple
    n_features: int
    n_classes: int
    cut_clients: tuple = field(default=())

    @property
    def n_clients(self):
        return len(self.clients)

    @property
    def label_sets(self):
        return tuple(c.label_set for c in self.clients)

    def train_sizes(self):
        return np.array([len(c.train) for c in self.clients])

    def test_sizes(self):
        return np.array([len(c.test) for c in self.clients])

    def statistics(self):
        """Sample counts per client (train + test), as in a dataset statistics table."""
        real = [c for c in self.clients if not c.virtual]
        counts = np.array([len(c.train) + len(c.test) for c in real])
        return {
            "n_clients": len(real),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "total_samples": int(counts.sum()),
            "samples_per_client_mean": float(counts.mean()) if len(counts) else 0.0,
            "samples_per_client_std": float(counts.std()) if len(counts) else 0.0,
            "labels_per_client": sorted({len(c.label_set) for c in real}),
            "cut_clients": list(self.cut_clients),
        }


def _lognormal_counts(rng, n_clients, mean, std, floor):
    sigma2 = math.log(1.0 + (std / mean) ** 2)
    mu = math.log(mean) - sigma2 / 2.0
    counts = np.rint(rng.lognormal(mu, math.sqrt(sigma2), size=n_clients)).astype(int)
    return np.maximum(counts, floor)


def generate_synthetic(n_clients, n_features, n_classes, labels_per_client, samples_mean,
                       samples_std, seed, client_shift=0.5, class_sep=1.0, train_fraction=0.75):
    """
    Generates a FederatedDataset with label heterogeneity and feature shift.

    Class means mu_c ~ N(0, class_sep^2 I) are shared; client k adds delta_k ~ N(0, client_shift^2 I)
    and draws x ~ N(mu_c + delta_k, I) for labels c in its own random label subset.
    Sample counts are lognormal around samples_mean (at least 4 and at least one per label).
    """
    if n_clients < 1 or n_features < 1 or n_classes < 1:
        raise InvalidConfig("n_clients, n_features and n_classes must be positive")
    if not 1 <= labels_per_client <= n_classes:
        raise InvalidConfig(f"labels_per_client must be in 1..{n_classes}, got {labels_per_client}")
    if samples_mean < 4 or samples_std < 0:
        raise InvalidConfig(f"samples_mean must be >= 4 and samples_std >= 0, got {samples_mean}, {samples_std}")

    rng = np.random.default_rng(seed)
    class_means = rng.normal(scale=class_sep, size=(n_classes, n_features))
    counts = _lognormal_counts(rng, n_clients, samples_mean, samples_std, max(4, labels_per_client))

    clients = []
    for k in range(n_clients):
        label_set = tuple(sorted(int(c) for c in rng.choice(n_classes, labels_per_client, replace=False)))
        shift = rng.normal(scale=client_shift, size=n_features)
        n = int(counts[k])
        # every label of the set appears at least once
        labels = np.concatenate([np.array(label_set),
                                 rng.choice(np.array(label_set), size=n - len(label_set))])
        labels = rng.permutation(labels)
        features = class_means[labels] + shift + rng.normal(size=(n, n_features))
        empty = Batch(np.empty((0, n_features)), np.empty(0, dtype=int))
        clients.append(ClientDataset(train=Batch(features, labels.astype(int)), test=empty,
                                     label_set=label_set))

    pooled = FederatedDataset(clients=tuple(clients), n_features=n_features, n_classes=n_classes)
    dataset = split(pooled, train_fraction, seed)
    logging.info(f"Synthetic dataset: {n_clients} clients, {labels_per_client}/{n_classes} labels each, "
                 f"{int(counts.sum())} samples")
    return dataset


def _train_count(n, train_fraction):
    return min(max(int(math.floor(n * train_fraction + 0.5)), 1), n - 1)


def split(dataset, train_fraction, seed):
    """Re-splits every client's pooled samples; both sides stay non-empty."""
    if not 0 < train_fraction < 1:
        raise InvalidConfig(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng([int(seed), 1])
    clients = []
    for k, client in enumerate(dataset.clients):
        pooled = client.pooled()
        n = len(pooled)
        if n < 2:
            raise TooFewSamples(f"Client {k} has {n} samples; a split needs at least 2")
        perm = rng.permutation(n)
        n_train = _train_count(n, train_fraction)
        clients.append(replace(client, train=pooled.take(np.sort(perm[:n_train])),
                               test=pooled.take(np.sort(perm[n_train:]))))
    return replace(dataset, clients=tuple(clients))


def apply_cutoff(dataset, fraction_of_clients=0.5, keep_fraction=0.1, seed=0):
    """
    Keeps only keep_fraction of the training samples (at least one) on a random
    ceil(fraction_of_clients * N) subset of clients. Test sets are untouched.
    The cut client ids are recorded in dataset.cut_clients.
    """
    if not 0 < fraction_of_clients <= 1:
        raise InvalidConfig(f"fraction_of_clients must be in (0, 1], got {fraction_of_clients}")
    if not 0 < keep_fraction < 1:
        raise InvalidConfig(f"keep_fraction must be in (0, 1), got {keep_fraction}")

    rng = np.random.default_rng([int(seed), 2])
    n_clients = dataset.n_clients
    n_cut = min(n_clients, math.ceil(fraction_of_clients * n_clients))
    cut = sorted(int(k) for k in rng.choice(n_clients, size=n_cut, replace=False))

    clients = list(dataset.clients)
    for k in cut:
        train = clients[k].train
        keep = max(1, int(math.floor(len(train) * keep_fraction + 0.5)))
        idx = np.sort(rng.choice(len(train), size=keep, replace=False))
        clients[k] = replace(clients[k], train=train.take(idx))

    logging.info(f"Cut-off applied: {n_cut}/{n_clients} clients keep {keep_fraction:.0%} of training data")
    return replace(dataset, clients=tuple(clients), cut_clients=tuple(cut))


def prepend_virtual_client(dataset):
    """Adds a placeholder client at index 0 (the zero-loss server vertex of a star graph)."""
    zeros = Batch(np.zeros((1, dataset.n_features)), np.zeros(1, dtype=int))
    server = ClientDataset(train=zeros, test=zeros, label_set=(), virtual=True)
    return replace(dataset, clients=(server,) + tuple(dataset.clients),
                   cut_clients=tuple(k + 1 for k in dataset.cut_clients))


# --- CSV bundle ---
def save_csv(dataset, path):
    """Writes client_id, split, label, f0..f{d-1} rows (train rows first per client)."""
    feature_cols = [f"f{j}" for j in range(dataset.n_features)]
    frames = []
    for k, client in enumerate(dataset.clients):
        for split_name, batch in (("train", client.train), ("test", client.test)):
            df = pd.DataFrame(batch.features, columns=feature_cols)
            df.insert(0, 'label', batch.labels.astype(int))
            df.insert(0, 'split', split_name)
            df.insert(0, 'client_id', k)
            frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    out.to_csv(path, index=False, encoding='utf-8')
    logging.info(f"Dataset written to {path} ({len(out)} rows)")


def _parse_column(df, column, dtype):
    try:
        return df[column].astype(dtype).to_numpy()
    except (ValueError, TypeError):
        caster = int if dtype is int else float
        for i, value in enumerate(df[column]):
            try:
                caster(value)
            except (ValueError, TypeError):
                # header is line 1
                raise ParseError(f"Row {i + 2}, column '{column}': cannot parse {value!r}",
                                 row=i + 2, column=column)
        raise


def load_csv(path, n_classes=None):
    """
    Parses a CSV bundle into a FederatedDataset. Label sets are the labels observed per client;
    n_classes defaults to max label + 1.
    """
    if not os.path.exists(path):
        raise InvalidConfig(f"Dataset file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.ParserError as e:
        raise ParseError(f"Malformed CSV {path}: {e}") from e

    for column in BASE_COLUMNS:
        if column not in df.columns:
            raise SchemaError(f"Missing required column '{column}' in {path}", column=column)
    n_features = 0
    while f"f{n_features}" in df.columns:
        n_features += 1
    if n_features == 0:
        raise SchemaError(f"No feature columns f0..f{{d-1}} in {path}", column='f0')
    extra = [c for c in df.columns if c not in BASE_COLUMNS and c not in {f"f{j}" for j in range(n_features)}]
    if extra:
        raise SchemaError(f"Unexpected columns {extra} in {path}", column=extra[0])

    client_ids = _parse_column(df, 'client_id', int)
    labels = _parse_column(df, 'label', int)
    features = np.column_stack([_parse_column(df, f"f{j}", float) for j in range(n_features)])
    splits = df['split'].to_numpy()
    bad = np.flatnonzero(~np.isin(splits, ['train', 'test']))
    if len(bad):
        raise ParseError(f"Row {bad[0] + 2}, column 'split': expected train/test, got {splits[bad[0]]!r}",
                         row=int(bad[0]) + 2, column='split')
    if len(labels) and labels.min() < 0:
        raise SchemaError(f"Negative label in {path}", column='label')
    if len(client_ids) and client_ids.min() < 0:
        raise SchemaError(f"Negative client_id in {path}", column='client_id')

    n_clients = int(client_ids.max()) + 1 if len(client_ids) else 0
    inferred = int(labels.max()) + 1 if len(labels) else 0
    n_classes = inferred if n_classes is None else int(n_classes)
    if inferred > n_classes:
        raise SchemaError(f"Label {inferred - 1} outside 0..{n_classes - 1}", column='label')

    clients = []
    for k in range(n_clients):
        mine = client_ids == k
        train_mask, test_mask = mine & (splits == 'train'), mine & (splits == 'test')
        if not train_mask.any() or not test_mask.any():
            raise SchemaError(f"Client {k} needs at least one train and one test row", column='client_id')
        train = Batch(features[train_mask], labels[train_mask])
        test = Batch(features[test_mask], labels[test_mask])
        label_set = tuple(sorted(int(c) for c in np.unique(labels[mine])))
        clients.append(ClientDataset(train=train, test=test, label_set=label_set))

    logging.info(f"Dataset loaded from {path}: {n_clients} clients, {n_features} features")
    return FederatedDataset(clients=tuple(clients), n_features=n_features, n_classes=n_classes)
