"""Small deterministic knowledge graphs for smoke runs, tests and scaled experiments."""

import numpy as np

from func.kg_store import KnowledgeGraph, Triple, Vocabulary, build_knowledge_graph
from data.exceptions import ParameterError

# Coprime with the group size of rule_kg, so every rule is a bijection inside a group
_MULTIPLIERS = (1, 3, 7, 9, 11, 13, 17, 19, 21, 23)


def tiny_kg() -> KnowledgeGraph:
    """
    8 entities, 2 relations, 12 training triples: a ring of '/toy/ring/next' edges
    plus four '/toy/opposite' edges across the ring. Every (head, relation) has a single tail.
    :return: Knowledge graph with empty valid and test splits.
    """
    vocab = Vocabulary([f"e{i}" for i in range(8)], ['/toy/ring/next', '/toy/opposite'])
    train = [Triple(i, 0, (i + 1) % 8) for i in range(8)]
    train += [Triple(i, 1, i + 4) for i in range(4)]
    return build_knowledge_graph(vocab, train, name='tiny')


def rule_kg(seed: int = 0, n_entities: int = 500, n_relations: int = 20, heads_per_relation: int = 120,
            n_groups: int = 10) -> KnowledgeGraph:
    """
    Rule-generated graph. Entities sit in equal groups; relation r sends entity (g, i) to
    (g + r + 1 mod G, a_r * i + r mod group size). Heads per relation are drawn with the seed,
    then the triples are split 80/10/10.
    :param seed: Generator seed.
    :param n_entities: Entity count, divisible by n_groups.
    :param n_relations: Relation count.
    :param heads_per_relation: Distinct heads drawn per relation.
    :param n_groups: Number of entity groups.
    :return: Knowledge graph.
    """
    rng = np.random.default_rng(seed)
    group_size = n_entities // n_groups
    depth = [2 + r % 3 for r in range(n_relations)]
    relation_names = ['/rule/' + '/'.join(f"p{r}" for _ in range(d - 1)) + f"/r{r}" for r, d in enumerate(depth)]
    vocab = Vocabulary([f"n{i:04d}" for i in range(n_entities)], relation_names)

    triples = set()
    for r in range(n_relations):
        multiplier = _MULTIPLIERS[r % len(_MULTIPLIERS)]
        for h in rng.choice(n_entities, size=min(heads_per_relation, n_entities), replace=False):
            group, index = divmod(int(h), group_size)
            tail_group = (group + r + 1) % n_groups
            tail_index = (multiplier * index + r) % group_size
            triples.add(Triple(int(h), r, tail_group * group_size + tail_index))

    ordered = sorted(triples)
    order = rng.permutation(len(ordered))
    n_train = int(0.8 * len(ordered))
    n_valid = int(0.1 * len(ordered))
    train = [ordered[i] for i in order[:n_train]]
    valid = [ordered[i] for i in order[n_train:n_train + n_valid]]
    test = [ordered[i] for i in order[n_train + n_valid:]]
    return build_knowledge_graph(vocab, train, valid, test, name=f"rules{n_entities}")


def random_kg(n_entities: int, n_relations: int, n_triples: int, seed: int = 0) -> KnowledgeGraph:
    """
    Uniformly random distinct triples, all in the training split.
    """
    if min(n_entities, n_relations) < 1:
        raise ParameterError("A random graph needs at least one entity and one relation.")
    if n_triples > n_entities * n_relations * n_entities:
        raise ParameterError(f"Only {n_entities * n_relations * n_entities} distinct triples exist over "
                             f"{n_entities} entities and {n_relations} relations, {n_triples} requested")
    rng = np.random.default_rng(seed)
    vocab = Vocabulary([f"x{i}" for i in range(n_entities)], [f"/rand/level{r % 3}/r{r}" for r in range(n_relations)])
    triples = set()
    while len(triples) < n_triples:
        h, t = rng.integers(n_entities, size=2)
        triples.add(Triple(int(h), int(rng.integers(n_relations)), int(t)))
    return build_knowledge_graph(vocab, sorted(triples), name=f"random{n_triples}")
