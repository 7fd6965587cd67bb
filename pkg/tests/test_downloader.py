import pytest
import requests

from func import downloader
from func.kg_store import load_dataset
from func.synthetic import random_kg, rule_kg, tiny_kg
from data.configs import DatasetInfo
from data.exceptions import DataError, ParameterError, UsageError
from helpers import FakeResponse, tar_archive


class TestDownload:

    def test_download_extracts_splits(self, monkeypatch, tmp_path):
        members = DatasetInfo.ARCHIVES['wn18']['members']
        payload = tar_archive({member: b"a\t_hyponym\tb\n" for member in members.values()})
        monkeypatch.setattr(downloader.requests, 'get', lambda **kwargs: FakeResponse(payload))

        written = downloader.download_dataset('WN18', tmp_path)
        assert set(written) == set(members)
        assert load_dataset(tmp_path).n_entities == 2

    def test_missing_member(self, tmp_path):
        with pytest.raises(DataError):
            downloader.extract_splits(tar_archive({'other.txt': b''}), {'train': 'train.txt'}, tmp_path)

    def test_retries_then_fails(self, monkeypatch):
        calls = []

        def failing_get(**kwargs):
            calls.append(kwargs['url'])
            raise requests.ConnectionError("offline")

        monkeypatch.setattr(downloader.requests, 'get', failing_get)
        monkeypatch.setattr(downloader.time, 'sleep', lambda seconds: None)
        with pytest.raises(DataError):
            downloader.fetch_archive('https://example.invalid/kg.tgz')
        assert len(calls) == DatasetInfo.MAX_DOWNLOAD_ATTEMPTS

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(UsageError):
            downloader.download_dataset('yago', tmp_path)


class TestSynthetic:

    def test_tiny_shape(self):
        kg = tiny_kg()
        assert (kg.n_entities, kg.n_relations, len(kg.train)) == (8, 2, 12)
        assert all(len(tails) == 1 for tails in kg.train_tails.values())

    def test_rule_kg_is_seeded(self):
        assert rule_kg(3, n_entities=100, n_relations=4, heads_per_relation=20).train == \
               rule_kg(3, n_entities=100, n_relations=4, heads_per_relation=20).train

    def test_rule_kg_splits(self):
        kg = rule_kg(0, n_entities=100, n_relations=4, heads_per_relation=20)
        total = len(kg.train) + len(kg.valid) + len(kg.test)
        assert len(kg.train) == int(0.8 * total)

    def test_random_kg_distinct(self):
        kg = random_kg(20, 3, 50, seed=1)
        assert len(set(kg.train)) == 50

    def test_random_kg_can_fill_every_slot(self):
        kg = random_kg(2, 1, 4, seed=0)
        assert len(set(kg.train)) == 4

    @pytest.mark.parametrize('n_entities, n_relations, n_triples', [(2, 1, 5), (3, 2, 19), (0, 2, 1), (4, 0, 1)])
    def test_random_kg_impossible_request(self, n_entities, n_relations, n_triples):
        with pytest.raises(ParameterError):
            random_kg(n_entities, n_relations, n_triples)
