"""
Tests for core/data.py: synthetic generation, splitting, cut-off and the CSV bundle.
"""
import numpy as np
import pandas as pd
import pytest

from core import data
from core.errors import InvalidConfig, ParseError, SchemaError, TooFewSamples
from core.models import Batch


def _pooled_dataset(counts, n_features=2):
    """Clients with the given sample counts, all samples in the train slot."""
    rng = np.random.default_rng(0)
    clients = []
    for n in counts:
        empty = Batch(np.empty((0, n_features)), np.empty(0, dtype=int))
        clients.append(data.ClientDataset(train=Batch(rng.normal(size=(n, n_features)),
                                                      rng.integers(0, 2, size=n)),
                                          test=empty, label_set=(0, 1)))
    return data.FederatedDataset(clients=tuple(clients), n_features=n_features, n_classes=2)


def _assert_same(a, b):
    assert a.n_clients == b.n_clients
    for ca, cb in zip(a.clients, b.clients):
        np.testing.assert_array_equal(ca.train.features, cb.train.features)
        np.testing.assert_array_equal(ca.train.labels, cb.train.labels)
        np.testing.assert_array_equal(ca.test.features, cb.test.features)
        np.testing.assert_array_equal(ca.test.labels, cb.test.labels)


class TestGenerateSynthetic:

    def test_label_sets(self):
        ds = data.generate_synthetic(100, 5, 10, 2, 30, 10, seed=1)
        assert ds.n_clients == 100
        for client in ds.clients:
            assert len(client.label_set) == 2
            assert set(client.train.labels) | set(client.test.labels) <= set(client.label_set)
            assert len(client.train) >= 1 and len(client.test) >= 1

    def test_full_label_sets(self):
        ds = data.generate_synthetic(5, 3, 4, 4, 20, 5, seed=2)
        assert all(c.label_set == (0, 1, 2, 3) for c in ds.clients)

    def test_deterministic(self):
        _assert_same(data.generate_synthetic(8, 3, 5, 2, 25, 5, seed=3),
                     data.generate_synthetic(8, 3, 5, 2, 25, 5, seed=3))

    def test_seed_changes_data(self):
        a = data.generate_synthetic(3, 3, 5, 2, 25, 5, seed=3)
        b = data.generate_synthetic(3, 3, 5, 2, 25, 5, seed=4)
        assert not np.array_equal(a.clients[0].train.features[:1], b.clients[0].train.features[:1])

    def test_train_test_disjoint(self):
        ds = data.generate_synthetic(4, 3, 5, 2, 25, 5, seed=5)
        for c in ds.clients:
            train_rows = {tuple(r) for r in c.train.features}
            assert not any(tuple(r) in train_rows for r in c.test.features)

    def test_invalid_labels_per_client(self):
        with pytest.raises(InvalidConfig):
            data.generate_synthetic(3, 3, 4, 5, 25, 5, seed=0)

    def test_statistics(self, small_dataset):
        stats = small_dataset.statistics()
        assert stats["n_clients"] == 6
        assert stats["total_samples"] == int(small_dataset.train_sizes().sum() + small_dataset.test_sizes().sum())
        assert stats["labels_per_client"] == [2]


class TestSplit:

    @pytest.mark.parametrize("n, fraction, n_train", [(100, 0.75, 75), (4, 0.75, 3), (4, 0.999, 3), (2, 0.1, 1)])
    def test_counts(self, n, fraction, n_train):
        ds = data.split(_pooled_dataset([n]), fraction, seed=0)
        assert len(ds.clients[0].train) == n_train
        assert len(ds.clients[0].test) == n - n_train

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            data.split(_pooled_dataset([1]), 0.75, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(InvalidConfig):
            data.split(_pooled_dataset([10]), 1.0, seed=0)


class TestCutoff:

    def test_343_sample_clients(self):
        ds = data.split(_pooled_dataset([343] * 30), 0.75, seed=0)
        train_before = ds.train_sizes()
        cut = data.apply_cutoff(ds, 0.5, 0.1, seed=1)
        assert len(cut.cut_clients) == 15
        sizes = cut.train_sizes()
        for k in range(30):
            if k in cut.cut_clients:
                assert sizes[k] == int(np.floor(train_before[k] * 0.1 + 0.5))
            else:
                assert sizes[k] == train_before[k]
        np.testing.assert_array_equal(cut.test_sizes(), ds.test_sizes())

    def test_keeps_at_least_one(self):
        ds = data.split(_pooled_dataset([8, 8]), 0.5, seed=0)
        cut = data.apply_cutoff(ds, 1.0, 0.01, seed=0)
        assert list(cut.train_sizes()) == [1, 1]

    def test_near_identity(self):
        ds = data.FederatedDataset(clients=(data.ClientDataset(
            train=Batch(np.zeros((1000, 1)), np.zeros(1000, dtype=int)),
            test=Batch(np.zeros((1, 1)), np.zeros(1, dtype=int)), label_set=(0,)),),
            n_features=1, n_classes=1)
        assert data.apply_cutoff(ds, 1.0, 0.999, seed=0).train_sizes()[0] == 999

    def test_kept_samples_are_a_subset(self, small_dataset):
        cut = data.apply_cutoff(small_dataset, 0.5, 0.3, seed=2)
        for k in cut.cut_clients:
            full = {tuple(r) for r in small_dataset.clients[k].train.features}
            assert all(tuple(r) in full for r in cut.clients[k].train.features)

    def test_virtual_client_shifts_cut_ids(self, small_dataset):
        cut = data.apply_cutoff(small_dataset, 0.5, 0.3, seed=2)
        shifted = data.prepend_virtual_client(cut)
        assert shifted.n_clients == cut.n_clients + 1
        assert shifted.cut_clients == tuple(k + 1 for k in cut.cut_clients)
        assert shifted.clients[0].virtual


class TestCSV:

    def test_save_then_load(self, small_dataset, tmp_path):
        path = str(tmp_path / "data.csv")
        data.save_csv(small_dataset, path)
        loaded = data.load_csv(path, n_classes=small_dataset.n_classes)
        _assert_same(small_dataset, loaded)
        assert loaded.n_features == small_dataset.n_features

    def test_two_client_file(self, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("client_id,split,label,f0,f1\n"
                        "0,train,0,0.1,0.2\n0,train,1,0.3,0.4\n0,test,1,0.5,0.6\n"
                        "1,train,2,1.0,1.0\n1,test,2,2.0,2.0\n")
        ds = data.load_csv(str(path))
        assert ds.n_clients == 2
        assert list(ds.train_sizes()) == [2, 1]
        assert list(ds.test_sizes()) == [1, 1]
        assert ds.n_classes == 3
        assert ds.clients[0].label_set == (0, 1)

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client_id,split,f0\n0,train,1.0\n0,test,2.0\n")
        with pytest.raises(SchemaError) as exc:
            data.load_csv(str(path))
        assert exc.value.column == 'label'
        assert "label" in str(exc.value)

    def test_unparseable_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client_id,split,label,f0\n0,train,0,1.0\n0,test,0,abc\n")
        with pytest.raises(ParseError) as exc:
            data.load_csv(str(path))
        assert exc.value.row == 3
        assert exc.value.column == 'f0'

    def test_bad_split_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client_id,split,label,f0\n0,train,0,1.0\n0,valid,0,2.0\n")
        with pytest.raises(ParseError):
            data.load_csv(str(path))

    def test_negative_client_id(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client_id,split,label,f0\n-1,train,0,1.0\n-1,test,0,2.0\n0,train,0,1.0\n0,test,0,2.0\n")
        with pytest.raises(SchemaError) as exc:
            data.load_csv(str(path))
        assert exc.value.column == 'client_id'

    def test_client_without_test_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("client_id,split,label,f0\n0,train,0,1.0\n")
        with pytest.raises(SchemaError):
            data.load_csv(str(path))

    def test_header_and_row_order(self, small_dataset, tmp_path):
        path = str(tmp_path / "data.csv")
        data.save_csv(small_dataset, path)
        frame = pd.read_csv(path)
        assert list(frame.columns[:3]) == ['client_id', 'split', 'label']
        first = frame[frame.client_id == 0]
        assert list(first.split.iloc[:len(small_dataset.clients[0].train)]) == ['train'] * len(
            small_dataset.clients[0].train)
