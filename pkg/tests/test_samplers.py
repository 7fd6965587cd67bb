import numpy as np
import pytest

from func.kg_store import Triple, Vocabulary, build_knowledge_graph, relation_level
from func.samplers import HEAD, TAIL, Sampler, sample_negatives, weighted_probs
from data.exceptions import ParameterError
from helpers import make_kg


def _brute_weights(kg):
    weights = []
    for h, r, t in kg.train:
        n_r = sum(1 for triple in kg.train if triple.relation == r)
        head_relations = len({rel for head, rel, _ in kg.train if head == h})
        tail_relations = len({rel for _, rel, tail in kg.train if tail == t})
        weights.append(relation_level(kg.vocab.relation_names[r]) / (n_r * head_relations * tail_relations))
    weights = np.array(weights)
    return weights / weights.sum()


class TestNegatives:

    def test_full_rate_takes_every_non_positive(self):
        negatives = sample_negatives(np.array([1, 4]), 6, 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(negatives, [0, 2, 3, 5])

    def test_binomial_count(self):
        rng = np.random.default_rng(1)
        n_entities, p_y, trials = 10000, 0.25, 100
        counts = [len(sample_negatives(np.array([0]), n_entities, p_y, rng)) for _ in range(trials)]
        expected = p_y * (n_entities - 1)
        sigma = np.sqrt((n_entities - 1) * p_y * (1 - p_y))
        assert abs(np.mean(counts) - expected) < 3 * sigma / np.sqrt(trials)

    def test_positives_never_drawn(self):
        rng = np.random.default_rng(2)
        positives = np.array([0, 3, 7])
        for _ in range(50):
            assert not np.isin(sample_negatives(positives, 10, 0.9, rng), positives).any()

    @pytest.mark.parametrize('p_y', [0.0, -0.1, 1.5])
    def test_rate_out_of_range(self, p_y):
        with pytest.raises(ParameterError):
            sample_negatives(np.array([0]), 5, p_y, np.random.default_rng(0))


class TestWeighted:

    def test_single_triple(self):
        np.testing.assert_allclose(weighted_probs(make_kg([(0, 0, 1)])), [1.0])

    def test_rare_relation_preferred(self):
        kg = make_kg([(0, 0, 1), (2, 0, 3), (4, 0, 5), (6, 1, 7)])
        probs = weighted_probs(kg)
        assert probs[3] > probs[0]
        assert probs[0] == pytest.approx(probs[1])

    def test_matches_brute_force(self, kg50):
        probs = weighted_probs(kg50)
        np.testing.assert_allclose(probs, _brute_weights(kg50))
        assert probs.sum() == pytest.approx(1.0)

    def test_relation_level_weighs_in(self):
        vocab = Vocabulary([f"e{i}" for i in range(4)], ['/a', '/a/b/c'])
        kg = build_knowledge_graph(vocab, [Triple(0, 0, 1), Triple(2, 1, 3)])
        np.testing.assert_allclose(weighted_probs(kg), [0.25, 0.75])

    def test_empirical_frequencies(self, kg50):
        sampler = Sampler(kg50, 'weighted', rng=np.random.default_rng(3))
        draws = np.concatenate([sampler.draw_triples() for _ in range(10 ** 6 // len(kg50.train))])
        empirical = np.bincount(draws, minlength=len(kg50.train)) / len(draws)
        assert np.abs(empirical - weighted_probs(kg50)).sum() < 0.01


class TestAdaptive:

    def test_ema_update(self, kg50):
        sampler = Sampler(kg50, 'adaptive', rng=np.random.default_rng(0))
        for _ in range(3):
            sampler.adaptive_update([0], [1.0])
        assert sampler.score_ema[0] == pytest.approx(0.6355)
        assert sampler.score_ema[1] == pytest.approx(0.5)

    def test_equal_emas_are_uniform(self, kg50):
        sampler = Sampler(kg50, 'adaptive', rng=np.random.default_rng(0))
        np.testing.assert_allclose(sampler.adaptive_probs(), 1.0 / len(kg50.train))

    def test_hardest_triple_most_likely(self, kg50):
        sampler = Sampler(kg50, 'adaptive', rng=np.random.default_rng(0))
        sampler.score_ema[:] = np.linspace(0.1, 0.9, len(kg50.train))
        probs = sampler.adaptive_probs()
        assert np.argmax(probs) == np.argmin(sampler.score_ema)
        assert probs.min() > 0

    def test_unknown_triple(self, kg50):
        sampler = Sampler(kg50, 'adaptive', rng=np.random.default_rng(0))
        with pytest.raises(ParameterError):
            sampler.adaptive_update([len(kg50.train)], [0.5])

    def test_other_kinds_ignore_updates(self, kg50):
        sampler = Sampler(kg50, 'candidate', rng=np.random.default_rng(0))
        sampler.adaptive_update([0], [1.0])
        assert sampler.score_ema is None


class TestSampler:

    def test_candidate_visits_every_triple(self, kg50):
        instances = Sampler(kg50, 'candidate', rng=np.random.default_rng(0), directions='tail').epoch_instances()
        assert sorted(instances.triple_ids) == list(range(len(kg50.train)))
        np.testing.assert_array_equal(instances.directions, TAIL)

    def test_both_directions(self, kg50):
        instances = Sampler(kg50, 'candidate', rng=np.random.default_rng(0), directions='both').epoch_instances()
        assert len(instances) == 2 * len(kg50.train)
        heads = instances.directions == HEAD
        triples = kg50.split_array('train')[instances.triple_ids[heads]]
        np.testing.assert_array_equal(instances.entities[heads], triples[:, 2])
        np.testing.assert_array_equal(instances.targets[heads], triples[:, 0])

    def test_positives_from_training_index(self, tiny):
        sampler = Sampler(tiny, rng=np.random.default_rng(0))
        h, r, t = tiny.train[0]
        assert t in sampler.positives(h, r, TAIL)
        assert h in sampler.positives(t, r, HEAD)

    def test_unknown_kind(self, kg50):
        with pytest.raises(ParameterError):
            Sampler(kg50, 'uniform')
