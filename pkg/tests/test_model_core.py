import numpy as np
import pytest
from scipy.special import expit

from func.batching import Batch
from func.model_core import (all_entity_logits, batch_logits, combine_projb, combine_proje, expand_combine,
                             forward_batch, grad, init_params, param_count, score_listwise, score_pointwise,
                             score_transe)
from func.trainer import total_loss
from data.exceptions import DimensionError, ParameterError, StaleCacheError, VocabularyError
from helpers import numeric_grads, random_features, randomize


def _projb(n_e, n_r, k_e, k_r, seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(n_e, n_r, random_features(n_e, n_r, k_e, k_r, rng), rng, mode='projb',
                         dims_entity=k_e, dims_relation=k_r)
    return randomize(params, rng)


class TestCombineProjB:

    def test_zero_relation_annihilates(self, small_projb):
        small_projb.W_R[1] = 0.0
        small_projb.B_QR[small_projb.relation_cluster[1]] = 0.0
        out = combine_projb(0, 1, small_projb)
        np.testing.assert_array_equal(out.b, 0.0)
        np.testing.assert_allclose(out.M, 0.5)
        np.testing.assert_array_equal(out.t, 0.0)

    def test_scalar_case(self):
        params = _projb(2, 1, 1, 1)
        params.D_E[0] = 0.0
        params.B_PE[params.entity_cluster[0]] = 0.0
        out = combine_projb(0, 0, params)
        np.testing.assert_allclose(out.M, 0.5)
        np.testing.assert_allclose(out.t, 0.5 * params.W_R[0])

    def test_double_loop(self):
        params = _projb(4, 2, 3, 2, seed=1)
        out = combine_projb(2, 1, params)
        a = params.D_E[2] * params.W_E[2] + params.B_PE[params.entity_cluster[2]]
        b = params.D_R[1] * params.W_R[1] + params.B_QR[params.relation_cluster[1]]
        expected = np.zeros(3)
        for i in range(3):
            for j in range(2):
                expected[i] += 1.0 / (1.0 + np.exp(-a[i] * b[j])) * params.W_R[1, j]
        np.testing.assert_allclose(out.t, expected, atol=1e-12)

    def test_out_of_range(self, small_projb):
        with pytest.raises(VocabularyError):
            combine_projb(5, 0, small_projb)
        with pytest.raises(VocabularyError):
            combine_projb(0, 2, small_projb)

    def test_rank_one_argument(self):
        params = _projb(3, 2, 3, 2, seed=2)
        params.B_PE[...] = 0.0
        params.B_QR[...] = 0.0
        params.D_E[...] = 1.0
        params.D_R[...] = 1.0
        out = combine_projb(1, 0, params)
        argument = np.log(out.M / (1.0 - out.M))
        np.testing.assert_allclose(argument, np.outer(params.W_E[1], params.W_R[0]), atol=1e-10)
        assert np.linalg.matrix_rank(argument, tol=1e-8) == 1

    def test_sigmoid_entries_in_open_interval(self, small_projb):
        out = combine_projb(3, 1, small_projb)
        assert np.all((out.M > 0) & (out.M < 1))


class TestExpansion:

    def test_matches_combine_on_random_instances(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            params = _projb(6, 3, 4, 3, seed=trial)
            for _ in range(20):
                e, r = int(rng.integers(6)), int(rng.integers(3))
                np.testing.assert_allclose(expand_combine(e, r, params).t, combine_projb(e, r, params).t,
                                           atol=1e-10, rtol=0)

    def test_zero_biases(self, small_projb):
        small_projb.B_PE[...] = 0.0
        small_projb.B_QR[...] = 0.0
        expected = expit(np.outer(small_projb.D_E[2] * small_projb.W_E[2],
                                  small_projb.D_R[0] * small_projb.W_R[0])) @ small_projb.W_R[0]
        np.testing.assert_allclose(expand_combine(2, 0, small_projb).t, expected, atol=1e-12)

    def test_bias_term_only(self, small_projb):
        small_projb.D_E[...] = 0.0
        small_projb.D_R[...] = 0.0
        out = expand_combine(1, 1, small_projb)
        b_pe = small_projb.B_PE[small_projb.entity_cluster[1]]
        b_qr = small_projb.B_QR[small_projb.relation_cluster[1]]
        np.testing.assert_allclose(out.M, expit(np.outer(b_pe, b_qr)))


class TestCombineProjE:

    def test_zero_inputs(self, small_proje):
        small_proje.W_E[0] = 0.0
        small_proje.W_R[0] = 0.0
        small_proje.b_c[...] = 0.0
        np.testing.assert_allclose(combine_proje(0, 0, small_proje), 0.5)

    def test_identity_weights(self, small_proje):
        small_proje.d_e[...] = 1.0
        small_proje.d_r[...] = 1.0
        small_proje.b_c[...] = 0.0
        np.testing.assert_allclose(combine_proje(2, 1, small_proje),
                                   expit(small_proje.W_E[2] + small_proje.W_R[1]))

    def test_elementwise_oracle(self, small_proje):
        t = combine_proje(4, 0, small_proje)
        for d in range(3):
            z = (small_proje.d_e[d] * small_proje.W_E[4, d] + small_proje.d_r[d] * small_proje.W_R[0, d]
                 + small_proje.b_c[d])
            assert t[d] == pytest.approx(1.0 / (1.0 + np.exp(-z)))

    def test_needs_shared_dimension(self, small_projb):
        with pytest.raises(DimensionError):
            combine_proje(0, 0, small_projb)


class TestScoring:

    def test_pointwise_zero_projection(self, small_proje):
        small_proje.b_p[0] = 0.0
        np.testing.assert_allclose(score_pointwise(np.zeros(3), [0, 1, 2, 3], small_proje), 0.5)

    def test_pointwise_monotone_in_bias(self, small_proje):
        t = np.array([0.3, -0.2, 0.1])
        scores = []
        for b_p in (-2.0, 0.0, 2.0):
            small_proje.b_p[0] = b_p
            scores.append(score_pointwise(t, [1], small_proje)[0])
        assert scores[0] < scores[1] < scores[2]

    def test_pointwise_oracle(self, small_proje):
        t = np.array([0.5, 1.0, -1.0])
        scores = score_pointwise(t, [0, 1, 2, 3], small_proje)
        for i, score in enumerate(scores):
            assert score == pytest.approx(1.0 / (1.0 + np.exp(-(small_proje.W_E[i] @ t + small_proje.b_p[0]))))
        assert np.all((scores > 0) & (scores < 1))

    def test_listwise_identical_rows_uniform(self, small_proje):
        small_proje.W_E[:] = small_proje.W_E[0]
        np.testing.assert_allclose(score_listwise(np.ones(3), [0, 1, 2, 3], small_proje), 0.25)

    def test_listwise_closed_form(self, small_proje):
        small_proje.W_E[0] = 0.0
        small_proje.W_E[1] = [np.log(3.0), 0.0, 0.0]
        np.testing.assert_allclose(score_listwise(np.array([1.0, 0.0, 0.0]), [0, 1], small_proje), [0.25, 0.75])

    def test_listwise_shift_invariant(self, small_proje):
        t = np.array([0.2, 0.4, -0.3])
        before = score_listwise(t, [0, 2, 4], small_proje)
        small_proje.b_p[0] += 5.0
        np.testing.assert_allclose(score_listwise(t, [0, 2, 4], small_proje), before, atol=1e-12)
        assert before.sum() == pytest.approx(1.0, abs=1e-9)

    def test_listwise_empty(self, small_proje):
        with pytest.raises(ParameterError):
            score_listwise(np.ones(3), [], small_proje)

    def test_permuted_candidates(self, small_proje):
        t = np.array([0.1, 0.2, 0.3])
        order = [3, 0, 4, 1]
        scores = score_listwise(t, order, small_proje)
        reference = score_listwise(t, sorted(order), small_proje)
        np.testing.assert_allclose(np.sort(scores), np.sort(reference))
        assert order[int(np.argmax(scores))] == sorted(order)[int(np.argmax(reference))]

    def test_candidate_out_of_range(self, small_proje):
        with pytest.raises(VocabularyError):
            score_pointwise(np.ones(3), [9], small_proje)

    def test_transe(self, small_proje):
        small_proje.W_E[2] = small_proje.W_E[0] + small_proje.W_R[1]
        assert score_transe(0, 1, 2, small_proje) == pytest.approx(0.0, abs=1e-12)
        small_proje.W_E[0] = 0.0
        small_proje.W_R[0] = 0.0
        small_proje.W_E[3] = [1.0, 0.0, 0.0]
        assert score_transe(0, 0, 3, small_proje) == pytest.approx(1.0)
        expected = np.sqrt(((small_proje.W_E[4] + small_proje.W_R[1] - small_proje.W_E[1]) ** 2).sum())
        assert score_transe(4, 1, 1, small_proje) == pytest.approx(expected)

    def test_transe_dimension_mismatch(self, small_projb):
        with pytest.raises(DimensionError):
            score_transe(0, 0, 1, small_projb)


class TestBatchedForward:

    def test_matches_per_instance(self):
        params = _projb(12, 4, 5, 3, seed=4)
        rng = np.random.default_rng(0)
        entities, relations = rng.integers(12, size=30), rng.integers(4, size=30)
        cache = forward_batch(params, entities, relations)
        for row, (e, r) in enumerate(zip(entities, relations)):
            np.testing.assert_allclose(cache.t[row], combine_projb(int(e), int(r), params).t, atol=1e-10, rtol=0)

    def test_single_instance(self, small_projb):
        cache = forward_batch(small_projb, [2], [1])
        np.testing.assert_allclose(cache.t[0], combine_projb(2, 1, small_projb).t, atol=1e-12)

    def test_proje_matches_combine(self, small_proje):
        cache = forward_batch(small_proje, [0, 3], [1, 0])
        np.testing.assert_allclose(cache.t[1], combine_proje(3, 0, small_proje))

    def test_all_entity_logits(self, small_projb):
        cache = forward_batch(small_projb, [1], [0])
        logits = all_entity_logits(small_projb, cache)[0]
        np.testing.assert_allclose(logits, small_projb.W_E @ cache.t[0] + small_projb.b_p[0])


class TestGradients:

    @pytest.mark.parametrize('loss_kind', ['pointwise', 'listwise'])
    def test_projb_finite_differences(self, small_projb, fixed_batch, loss_kind):
        _, analytic, _ = grad(loss_kind, fixed_batch, small_projb)
        numeric = numeric_grads(lambda: total_loss(fixed_batch, small_projb, 0.0, loss_kind), small_projb)
        for name in small_projb.trainable:
            np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-7, err_msg=name)

    @pytest.mark.parametrize('loss_kind', ['pointwise', 'listwise'])
    def test_proje_finite_differences(self, small_proje, fixed_batch, loss_kind):
        _, analytic, _ = grad(loss_kind, fixed_batch, small_proje)
        numeric = numeric_grads(lambda: total_loss(fixed_batch, small_proje, 0.0, loss_kind), small_proje)
        for name in small_proje.trainable:
            np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-7, err_msg=name)

    def test_tanh_finite_differences(self, small_projb, fixed_batch):
        small_projb.activation = 'tanh'
        _, analytic, _ = grad('listwise', fixed_batch, small_projb)
        numeric = numeric_grads(lambda: total_loss(fixed_batch, small_projb, 0.0, 'listwise'), small_projb)
        for name in small_projb.trainable:
            np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-7, err_msg=name)

    def test_regularizer_path(self, small_projb, fixed_batch):
        delta = 0.3
        total, analytic, _ = grad('listwise', fixed_batch, small_projb, delta=delta)
        assert total == pytest.approx(total_loss(fixed_batch, small_projb, delta, 'listwise'))
        numeric = numeric_grads(lambda: total_loss(fixed_batch, small_projb, delta, 'listwise'), small_projb)
        for name in small_projb.trainable:
            np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-7, err_msg=name)

    def test_absent_rows_get_zero(self, fixed_batch):
        params = _projb(7, 3, 3, 2, seed=5)
        _, grads, _ = grad('listwise', fixed_batch, params)
        np.testing.assert_array_equal(grads['W_E'][[5, 6]], 0.0)
        np.testing.assert_array_equal(grads['W_R'][2], 0.0)

    def test_identical_candidates_share_gradient(self, small_proje):
        small_proje.W_E[1:4] = small_proje.W_E[1]
        batch = Batch(entities=np.array([0]), relations=np.array([0]), directions=np.array([0]),
                      triple_ids=np.array([0]), candidates=np.array([[1, 2, 3]]), mask=np.ones((1, 3), dtype=bool),
                      labels=np.ones((1, 3)), target_slot=np.array([0]))
        _, grads, _ = grad('listwise', batch, small_proje)
        np.testing.assert_allclose(grads['W_E'][1], grads['W_E'][2])
        np.testing.assert_allclose(grads['W_E'][2], grads['W_E'][3])

    def test_stale_cache(self, small_projb, fixed_batch):
        cache = forward_batch(small_projb, fixed_batch.entities, fixed_batch.relations)
        small_projb.version += 1
        with pytest.raises(StaleCacheError):
            grad('listwise', fixed_batch, small_projb, cache=cache)

    def test_batch_logits_shape(self, small_projb, fixed_batch):
        cache = forward_batch(small_projb, fixed_batch.entities, fixed_batch.relations)
        logits = batch_logits(small_projb, cache, fixed_batch.candidates)
        assert logits.shape == fixed_batch.candidates.shape


class TestParamCount:

    def test_projb_breakdown(self):
        counted = param_count(_projb(4, 2, 3, 3))
        assert counted.breakdown == {'W_E': 12, 'W_R': 6, 'b_p': 1, 'B_PE': 9, 'B_QR': 9}
        assert counted.total == 37
        assert counted.formula == 3 * (4 + 2 + 3 + 3 + 1)
        assert not counted.matches_formula

    def test_unit_model(self):
        counted = param_count(_projb(1, 1, 1, 1))
        assert counted.total == 5
        assert counted.matches_formula

    def test_proje(self):
        params = init_params(3, 2, None, np.random.default_rng(0), mode='proje', dims_entity=2)
        counted = param_count(params)
        assert counted.breakdown == {'W_E': 6, 'W_R': 4, 'b_p': 1, 'd_e': 2, 'd_r': 2, 'b_c': 2}
        assert counted.formula == 3 * 2 + 2 * 2 + 5 * 2


class TestInit:

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionError):
            init_params(5, 2, random_features(5, 2, 3, 2, rng), rng, mode='projb', dims_entity=4, dims_relation=2)

    def test_projb_needs_features(self):
        with pytest.raises(DimensionError):
            init_params(5, 2, None, np.random.default_rng(0), mode='projb')

    def test_uniform_bounds_and_zero_biases(self):
        rng = np.random.default_rng(0)
        params = init_params(50, 4, random_features(50, 4, 6, 3, rng), rng, mode='projb', dims_entity=6,
                             dims_relation=3)
        assert np.abs(params.W_E).max() <= 0.5 / np.sqrt(6)
        assert np.abs(params.W_R).max() <= 0.5 / np.sqrt(3)
        np.testing.assert_array_equal(params.B_PE, 0.0)
        assert params.b_p.shape == (1,)
