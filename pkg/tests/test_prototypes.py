"""Prototype bank: similarity, normality weights, clustering and contrastive losses."""

import math

import numpy as np
import pytest

from mnpad.nn import ParamTensor
from mnpad.prototypes import (
    PrototypeBank,
    cluster_targets,
    contrastive_loss,
    d_contrastive_loss,
    d_kl_clustering_loss,
    init_prototypes,
    kl_clustering_loss,
    max_similarity,
    normality_weight,
    prototype_loss,
    similarity,
    similarity_backward,
    similarity_with_cache,
)


def bank_from(rows, alpha=1.0, beta=1.0):
    return PrototypeBank(ParamTensor("prototypes.u", np.asarray(rows, dtype=float)),
                         alpha=alpha, beta=beta)


class TestSimilarity:
    def test_identical_direction_scores_one(self):
        bank = bank_from([[2.0, 0.0]])
        s = similarity(np.array([5.0, 0.0]), bank)  # same direction, different norms
        assert s[0] == pytest.approx(1.0)

    def test_orthogonal_unit_vectors_third(self):
        bank = bank_from([[0.0, 1.0]], alpha=1.0)
        s = similarity(np.array([1.0, 0.0]), bank)
        assert s[0] == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_hand_case(self):
        bank = bank_from([[1.0, 0.0]], alpha=1.0)
        s = similarity(np.array([0.6, 0.8]), bank)
        # squared distance between the unit vectors is 0.8 -> s = 1/1.8
        assert s[0] == pytest.approx(1.0 / 1.8, abs=1e-12)

    def test_zero_norm_latent_rejected(self):
        bank = bank_from([[1.0, 0.0]])
        with pytest.raises(ValueError, match="zero-norm"):
            similarity(np.zeros(2), bank)

    def test_range_and_equality_condition(self, rng):
        bank = bank_from(rng.normal(size=(4, 3)))
        z = rng.normal(size=(50, 3))
        s = similarity(z, bank)
        assert np.all(s > 0.0) and np.all(s <= 1.0)
        z_hat = z / np.linalg.norm(z, axis=1, keepdims=True)
        u_hat = bank.u.values / np.linalg.norm(bank.u.values, axis=1, keepdims=True)
        exact = np.isclose(s, 1.0, atol=1e-15)
        same = np.isclose(z_hat @ u_hat.T, 1.0, atol=1e-15)
        assert np.array_equal(exact, same)

    def test_rotation_invariance(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        u = rng.normal(size=(3, 5))
        z = rng.normal(size=(20, 5))
        s_base = similarity(z, bank_from(u))
        s_rot = similarity(z @ q, bank_from(u @ q))
        np.testing.assert_allclose(s_base, s_rot, atol=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        bank = bank_from(rng.normal(size=(3, 4)))
        z = rng.normal(size=(5, 4))
        c = rng.normal(size=(5, 3))

        def loss(zz):
            return float(np.sum(c * similarity(zz, bank)))

        s, cache = similarity_with_cache(z, bank)
        d_z = similarity_backward(cache, c, bank)
        h = 1e-6
        for i in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd = (loss(zp) - loss(zm)) / (2 * h)
            assert abs(d_z[i] - fd) < 1e-6
        for i in np.ndindex(bank.u.values.shape):
            orig = bank.u.values[i]
            bank.u.values[i] = orig + h
            plus = loss(z)
            bank.u.values[i] = orig - h
            minus = loss(z)
            bank.u.values[i] = orig
            fd = (plus - minus) / (2 * h)
            assert abs(bank.u.grad[i] - fd) < 1e-6


class TestNormalityWeight:
    def test_zero_similarity_limit(self):
        assert normality_weight(0.0, beta=1.0) == pytest.approx(0.5)

    def test_unit_similarity(self):
        expected = 1.0 / (1.0 + math.exp(-1.0))  # ~0.731059
        assert normality_weight(1.0, beta=1.0) == pytest.approx(expected, abs=1e-12)

    def test_beta_scales_input(self):
        assert normality_weight(0.5, beta=2.0) == pytest.approx(normality_weight(1.0, beta=1.0))

    def test_strictly_increasing_in_similarity(self):
        s = np.linspace(0.01, 1.0, 50)
        w = normality_weight(s, beta=1.0)
        assert np.all(np.diff(w) > 0)
        assert np.all((w > 0) & (w < 1))


class TestClusteringLoss:
    def test_single_prototype_is_zero(self, rng):
        s = rng.uniform(0.1, 1.0, size=(6, 1))
        assert kl_clustering_loss(s) == pytest.approx(0.0, abs=1e-15)

    def test_single_sample_is_zero(self, rng):
        # with one sample the target collapses onto the assignment itself
        for k in (2, 3, 5):
            s = rng.uniform(0.1, 1.0, size=(1, k))
            assert kl_clustering_loss(s) == pytest.approx(0.0, abs=1e-12)

    def test_two_sample_hand_case(self):
        s = np.array([[1.0, 0.0], [0.5, 0.5]])  # rows already normalized
        expected = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)  # ~0.13081
        assert kl_clustering_loss(s) == pytest.approx(expected, abs=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(100):
            s = rng.uniform(1e-3, 1.0, size=(int(rng.integers(1, 9)), int(rng.integers(1, 5))))
            assert kl_clustering_loss(s) >= -1e-12

    def test_gradient_matches_fd_with_frozen_target(self, rng):
        s = rng.uniform(0.1, 1.0, size=(5, 3))
        target = cluster_targets(s)
        d = d_kl_clustering_loss(s, target=target)
        h = 1e-7
        for i in np.ndindex(s.shape):
            sp, sm = s.copy(), s.copy()
            sp[i] += h
            sm[i] -= h
            fd = (kl_clustering_loss(sp, target=target) - kl_clustering_loss(sm, target=target)) / (2 * h)
            assert abs(d[i] - fd) < 1e-6


class TestContrastiveLoss:
    def test_equal_means_give_log_two(self):
        got = contrastive_loss([0.6], [1.0], [0.6])
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_unit_gap(self):
        got = contrastive_loss([1.0], [1.0], [0.0])
        assert got == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)  # ~0.313262

    def test_monotone_in_anomaly_similarity(self):
        values = [contrastive_loss([0.9], [1.0], [sa]) for sa in np.linspace(0.9, 0.1, 9)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_gradient_signs(self, rng):
        s_u = rng.uniform(0.2, 0.9, size=6)
        w = rng.uniform(0.3, 0.9, size=6)
        s_a = rng.uniform(0.2, 0.9, size=4)
        d_u, d_a = d_contrastive_loss(s_u, w, s_a)
        assert np.all(d_u < 0) and np.all(d_a > 0)

    def test_gradient_matches_fd(self, rng):
        s_u = rng.uniform(0.2, 0.9, size=5)
        w = rng.uniform(0.3, 0.9, size=5)
        s_a = rng.uniform(0.2, 0.9, size=3)
        d_u, d_a = d_contrastive_loss(s_u, w, s_a)
        h = 1e-7
        for i in range(5):
            p, m = s_u.copy(), s_u.copy()
            p[i] += h
            m[i] -= h
            fd = (contrastive_loss(p, w, s_a) - contrastive_loss(m, w, s_a)) / (2 * h)
            assert abs(d_u[i] - fd) < 1e-8
        for i in range(3):
            p, m = s_a.copy(), s_a.copy()
            p[i] += h
            m[i] -= h
            fd = (contrastive_loss(s_u, w, p) - contrastive_loss(s_u, w, m)) / (2 * h)
            assert abs(d_a[i] - fd) < 1e-8

    def test_empty_batches_rejected(self):
        with pytest.raises(ValueError):
            contrastive_loss([], [], [0.5])


class TestPrototypeLoss:
    def test_sums(self):
        assert prototype_loss(0.0, 0.0) == 0.0
        assert prototype_loss(0.1308, 0.6931) == pytest.approx(0.8239)
        assert prototype_loss(0.0, math.log(2)) == pytest.approx(math.log(2))


class TestInitPrototypes:
    def test_k1_is_mean_of_normalized_latents(self, rng):
        latents = rng.normal(size=(30, 4)) + 3.0
        bank = init_prototypes(latents, k=1)
        normalized = latents / np.linalg.norm(latents, axis=1, keepdims=True)
        np.testing.assert_allclose(bank.u.values[0], normalized.mean(axis=0))

    def test_two_blobs_one_centroid_each(self, rng):
        a = rng.normal(size=(25, 3)) * 0.05 + np.array([5.0, 0.0, 0.0])
        b = rng.normal(size=(25, 3)) * 0.05 + np.array([0.0, 5.0, 0.0])
        bank = init_prototypes(np.concatenate([a, b]), k=2)
        # each centroid should point mostly along one axis
        dirs = np.abs(bank.u.values / np.linalg.norm(bank.u.values, axis=1, keepdims=True))
        assert sorted(np.argmax(dirs, axis=1).tolist()) == [0, 1]

    def test_auto_selects_three_on_three_blobs(self, rng):
        centers = 6.0 * np.eye(3)
        latents = np.concatenate([rng.normal(size=(40, 3)) * 0.1 + c for c in centers])
        bank = init_prototypes(latents, k="auto", seed=0)
        assert bank.k == 3

    def test_k_exceeding_pool_rejected(self, rng):
        with pytest.raises(ValueError):
            init_prototypes(rng.normal(size=(3, 2)), k=5)

    def test_bank_exempt_from_weight_decay(self, rng):
        bank = init_prototypes(rng.normal(size=(10, 2)), k=2)
        assert bank.u.decay is False

    def test_max_similarity_shapes(self, rng):
        bank = bank_from(rng.normal(size=(3, 4)))
        s = similarity(rng.normal(size=(7, 4)), bank)
        s_max, arg = max_similarity(s)
        assert s_max.shape == (7,) and arg.shape == (7,)
        np.testing.assert_allclose(s_max, s[np.arange(7), arg])
