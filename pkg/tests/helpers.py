"""Builders shared by several test modules."""

import io
import tarfile

import numpy as np

from func.feature_eng import EngineeredFeatures, featurize
from func.kg_store import Triple, Vocabulary, build_knowledge_graph


def make_kg(triples, n_entities=None, n_relations=None, name='toy'):
    """Knowledge graph over ids, with names e<i> / r<j>."""
    n_entities = n_entities or 1 + max(max(h, t) for h, _, t in triples)
    n_relations = n_relations or 1 + max(r for _, r, _ in triples)
    vocab = Vocabulary([f"e{i}" for i in range(n_entities)], [f"r{j}" for j in range(n_relations)])
    return build_knowledge_graph(vocab, [Triple(*triple) for triple in triples], name=name)


def kmeans_features(kg, entity_k, relation_k, seed=0):
    features, _ = featurize(kg, seed, methods=('kmeans',), kernels=('none',), entity_ks=(entity_k,),
                            relation_ks=(relation_k,))
    return features


def random_features(n_entities, n_relations, C_E, C_R, rng):
    entity_cluster = np.concatenate([np.arange(min(C_E, n_entities)), rng.integers(C_E, size=max(n_entities - C_E, 0))])
    relation_cluster = np.concatenate([np.arange(min(C_R, n_relations)),
                                       rng.integers(C_R, size=max(n_relations - C_R, 0))])
    return EngineeredFeatures(entity_features=rng.integers(0, 4, size=(n_entities, C_E)).astype(float),
                              relation_features=rng.integers(0, 4, size=(n_relations, C_R)).astype(float),
                              entity_cluster=entity_cluster, relation_cluster=relation_cluster)


def randomize(params, rng, scale=0.5):
    """Gives every trainable array (biases included) non-trivial values."""
    for array in params.arrays().values():
        array[...] = rng.normal(scale=scale, size=array.shape)
    params.version += 1
    return params


def numeric_grads(loss_fn, params, h=1e-5):
    """Central differences of loss_fn() with respect to every trainable coordinate."""
    grads = {}
    for name, array in params.arrays().items():
        grads[name] = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            saved = array[index]
            array[index] = saved + h
            up = loss_fn()
            array[index] = saved - h
            down = loss_fn()
            array[index] = saved
            grads[name][index] = (up - down) / (2 * h)
    return grads


def tar_archive(members: dict[str, bytes]) -> bytes:
    """Gzipped tar holding the given member payloads."""
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode='w:gz') as tar:
        for name, payload in members.items():
            info = tarfile.TarInfo(name)
            info.size = len(payload)
            tar.addfile(info, io.BytesIO(payload))
    return buffer.getvalue()


class FakeResponse:
    """Stands in for requests.Response in download tests."""

    def __init__(self, content: bytes):
        self.content = content

    def raise_for_status(self):
        pass
