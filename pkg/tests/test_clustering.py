import math

import numpy as np
import pytest

from omega_iosda.clustering import (
    ClusterModel,
    MemoryBank,
    assign_cluster,
    extended_pseudo_labels,
    kmeans,
    num_unknown_clusters,
)
from omega_iosda.errors import InvalidArgument
from omega_iosda.numerics import l2_normalize
from omega_iosda.thresholding import predict_open

from conftest import random_probs


class TestMemoryBank:
    def test_write_read(self, rng):
        bank = MemoryBank(5, 3)
        f = l2_normalize(rng.normal(size=(1, 3)))
        bank.update([3], f)
        np.testing.assert_array_equal(bank.V[3], f[0])
        assert bank.initialized.tolist() == [False, False, False, True, False]

    def test_disjoint_commute(self, rng):
        f = l2_normalize(rng.normal(size=(4, 3)))
        a, b = MemoryBank(4, 3), MemoryBank(4, 3)
        a.update([0, 1], f[:2])
        a.update([2, 3], f[2:])
        b.update([2, 3], f[2:])
        b.update([0, 1], f[:2])
        np.testing.assert_array_equal(a.V, b.V)

    @pytest.mark.parametrize("idx", [[0, 0], [5], [-1]])
    def test_bad_indices(self, idx):
        with pytest.raises(InvalidArgument):
            MemoryBank(5, 2).update(idx, np.ones((len(idx), 2)))


class TestKMeans:
    def test_single_cluster_is_mean(self, rng):
        X = rng.normal(size=(20, 3))
        model = kmeans(X, 1, rng)
        np.testing.assert_allclose(model.centroids[0], X.mean(axis=0))

    def test_objective_nonincreasing(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(60, 4))
            hist = kmeans(X, 5, rng).objective_history
            assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_two_blobs(self, rng):
        X = np.vstack([rng.normal(0, 0.1, size=(30, 2)), rng.normal(10, 0.1, size=(25, 2))])
        truth = np.array([0] * 30 + [1] * 25)
        a = kmeans(X, 2, rng).assignment
        assert np.array_equal(a, truth) or np.array_equal(a, 1 - truth)

    def test_bank_input(self, rng):
        bank = MemoryBank(6, 2)
        bank.update([0, 2, 4], l2_normalize(rng.normal(size=(3, 2))))
        model = kmeans(bank, 2, rng)
        assert model.assignment[1] == -1 and model.assignment[0] >= 0

    def test_too_many_clusters(self, rng):
        with pytest.raises(InvalidArgument):
            kmeans(rng.normal(size=(3, 2)), 4, rng)

    def test_deterministic(self):
        X = np.random.default_rng(0).normal(size=(40, 3))
        a = kmeans(X, 3, np.random.default_rng(7))
        b = kmeans(X, 3, np.random.default_rng(7))
        np.testing.assert_array_equal(a.centroids, b.centroids)


class TestAssign:
    def test_on_centroid(self):
        C = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        assert assign_cluster(C[2], C) == 2

    def test_tie(self):
        assert assign_cluster(np.array([0.5, 0.0]), np.array([[0.0, 0.0], [1.0, 0.0]])) == 0

    def test_brute_force(self, rng):
        C = rng.normal(size=(5, 3))
        for x in rng.normal(size=(1000, 3)):
            d = [math.dist(x, c) for c in C]
            assert assign_cluster(x, C) == d.index(min(d))

    def test_cluster_counts(self):
        assert num_unknown_clusters(5) == 2  # round half to even
        assert num_unknown_clusters(1) == 1
        assert num_unknown_clusters(10) == 5


class TestPseudoLabels:
    def _clusters(self):
        C = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        return ClusterModel(C, np.zeros(0, dtype=int))

    def test_one_hot(self):
        labels, conf = extended_pseudo_labels(np.array([[0, 1.0, 0]]), np.array([[1.0, 0]]),
                                              np.full(3, 0.5), self._clusters())
        assert labels[0] == 1 and conf[0] == 1.0

    def test_uniform_near_cluster(self):
        K = 3
        labels, conf = extended_pseudo_labels(np.full((1, K), 1 / K), np.array([[-0.9, 0.1]]),
                                              np.full(K, 0.5), self._clusters())
        assert labels[0] == K + 2
        assert conf[0] == pytest.approx(1.0)

    def test_compositional(self, rng):
        K = 4
        p = random_probs(rng, 40, K, sharp=1.5)
        f = l2_normalize(rng.normal(size=(40, 2)))
        q = np.full(K, 0.9)
        cl = self._clusters()
        labels, conf = extended_pseudo_labels(p, f, q, cl)
        pred = predict_open(p, q)
        for i in range(40):
            if pred[i] == K:
                assert labels[i] == K + assign_cluster(f[i], cl)
                assert K <= labels[i] < K + 3
            else:
                assert labels[i] == pred[i] and conf[i] == p[i].max()
