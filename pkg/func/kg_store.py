"""Triple datasets: vocabularies, split files, filter indexes and relation statistics."""

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from func.base_logger import logger
from data.configs import DatasetInfo
from data.exceptions import DataError, ParseError, VocabularyError


class Triple(NamedTuple):
    """A (head, relation, tail) fact as vocabulary ids."""
    head: int
    relation: int
    tail: int


class Vocabulary:
    """
    Dense id assignment for entity and relation names, in first-appearance order.
    """

    def __init__(self, entity_names: list[str] | None = None, relation_names: list[str] | None = None):
        self.entity_names: list[str] = []
        self.relation_names: list[str] = []
        self.entity_ids: dict[str, int] = {}
        self.relation_ids: dict[str, int] = {}
        for name in entity_names or []:
            self.entity_id(name, grow=True)
        for name in relation_names or []:
            self.relation_id(name, grow=True)

    def __str__(self):
        return f"Vocabulary({self.n_entities} entities, {self.n_relations} relations)"

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str, grow: bool = False) -> int:
        """
        Looks up (or appends) an entity name.
        :param name: Entity name.
        :param grow: Append unseen names instead of failing.
        :return: Entity id.
        """
        return self.__lookup(name, self.entity_names, self.entity_ids, grow, "entity")

    def relation_id(self, name: str, grow: bool = False) -> int:
        """
        Looks up (or appends) a relation name.
        :param name: Relation name.
        :param grow: Append unseen names instead of failing.
        :return: Relation id.
        """
        return self.__lookup(name, self.relation_names, self.relation_ids, grow, "relation")

    def entity_name(self, entity_id: int) -> str:
        if not 0 <= entity_id < self.n_entities:
            raise VocabularyError(f"Entity id {entity_id} out of bounds (n_e = {self.n_entities}).")
        return self.entity_names[entity_id]

    def relation_name(self, relation_id: int) -> str:
        if not 0 <= relation_id < self.n_relations:
            raise VocabularyError(f"Relation id {relation_id} out of bounds (n_r = {self.n_relations}).")
        return self.relation_names[relation_id]

    @staticmethod
    def __lookup(name: str, names: list, ids: dict, grow: bool, kind: str) -> int:
        if name in ids:
            return ids[name]
        if not grow:
            raise VocabularyError(f"Unknown {kind} name: {name!r}")
        ids[name] = len(names)
        names.append(name)
        return ids[name]

    def dump(self, directory: Path):
        """
        Writes entities.txt and relations.txt, one name per line, line number = id.
        :param directory: Target directory.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        directory.joinpath('entities.txt').write_text(''.join(n + '\n' for n in self.entity_names), encoding='utf-8')
        directory.joinpath('relations.txt').write_text(''.join(n + '\n' for n in self.relation_names), encoding='utf-8')

    @classmethod
    def load(cls, directory: Path) -> 'Vocabulary':
        """
        Reads a vocabulary written by dump().
        :param directory: Directory with entities.txt and relations.txt.
        :return: The vocabulary.
        """
        directory = Path(directory)
        entities = directory.joinpath('entities.txt').read_text(encoding='utf-8').splitlines()
        relations = directory.joinpath('relations.txt').read_text(encoding='utf-8').splitlines()
        vocab = cls(entities, relations)
        if vocab.n_entities != len(entities) or vocab.n_relations != len(relations):
            raise VocabularyError(f"Duplicate names in vocabulary dump {directory}")
        return vocab


@dataclass(frozen=True)
class RelationStats:
    """
    Relation statistics of the training split, used by the weighted sampler.
    """
    relation_count: np.ndarray  # (n_r,) training triples per relation
    head_unique: np.ndarray  # (n_e,) distinct relations with the entity as head
    tail_unique: np.ndarray  # (n_e,) distinct relations with the entity as tail
    level: np.ndarray  # (n_r,) relation path level, >= 1


@dataclass
class KnowledgeGraph:
    """
    Loaded splits plus filter indexes. Treat as immutable once built.
    """
    vocab: Vocabulary
    train: list[Triple]
    valid: list[Triple] = field(default_factory=list)
    test: list[Triple] = field(default_factory=list)
    true_tails: dict = field(default_factory=dict)  # (h, r) -> set of t over all splits
    true_heads: dict = field(default_factory=dict)  # (t, r) -> set of h over all splits
    train_tails: dict = field(default_factory=dict)  # (h, r) -> sorted id array, train only
    train_heads: dict = field(default_factory=dict)  # (t, r) -> sorted id array, train only
    relation_stats: RelationStats | None = None
    name: str = 'kg'

    def __str__(self):
        return (f"KnowledgeGraph({self.name}: {self.n_entities} entities, {self.n_relations} relations, "
                f"{len(self.train)}/{len(self.valid)}/{len(self.test)} triples)")

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def split(self, name: str) -> list[Triple]:
        if name not in DatasetInfo.SPLITS:
            raise DataError(f"Unknown split {name!r}")
        return getattr(self, name)

    def split_array(self, name: str) -> np.ndarray:
        """
        :param name: Split name.
        :return: (N, 3) int64 array of the split's triples.
        """
        triples = self.split(name)
        if not triples:
            return np.zeros((0, 3), dtype=np.int64)
        return np.asarray(triples, dtype=np.int64)


def load_split(path: Path, vocab: Vocabulary, grow: bool) -> list[Triple]:
    """
    Reads a head<TAB>relation<TAB>tail file.
    :param path: Split file path.
    :param vocab: Vocabulary to look names up in.
    :param grow: Append unseen names to the vocabulary instead of failing.
    :return: Triples in file order.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DataError(f"Cannot read split file {path}: {e}") from e

    triples = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split('\t')
        if len(fields) != 3:
            raise ParseError(path, line_number, f"expected 3 tab-separated fields, got {len(fields)}")
        head, relation, tail = fields
        try:
            triples.append(Triple(vocab.entity_id(head, grow), vocab.relation_id(relation, grow),
                                  vocab.entity_id(tail, grow)))
        except VocabularyError as e:
            raise VocabularyError(f"{path}:{line_number}: {e}") from e
    return triples


def save_split(path: Path, triples: list[Triple], vocab: Vocabulary):
    """
    Writes triples back to the tab-separated format.
    :param path: Target file.
    :param triples: Triples to write.
    :param vocab: Vocabulary the ids belong to.
    """
    lines = [f"{vocab.entity_name(h)}\t{vocab.relation_name(r)}\t{vocab.entity_name(t)}\n" for h, r, t in triples]
    Path(path).write_text(''.join(lines), encoding='utf-8')


def relation_level(relation_name: str) -> int:
    """
    Level of a relation: number of non-empty '/'-separated path segments, at least 1.
    :param relation_name: Relation name, e.g. '/people/person/nationality'.
    :return: Positive level.
    """
    return max(1, sum(1 for segment in relation_name.split('/') if segment))


def build_filter_index(kg: KnowledgeGraph) -> KnowledgeGraph:
    """
    Fills the all-splits filter index and the training-only index.
    :param kg: Knowledge graph with loaded splits.
    :return: The same graph, indexes filled.
    """
    true_tails, true_heads = defaultdict(set), defaultdict(set)
    for split_name in DatasetInfo.SPLITS:
        for h, r, t in kg.split(split_name):
            true_tails[(h, r)].add(t)
            true_heads[(t, r)].add(h)
    kg.true_tails = dict(true_tails)
    kg.true_heads = dict(true_heads)

    train_tails, train_heads = defaultdict(set), defaultdict(set)
    for h, r, t in kg.train:
        train_tails[(h, r)].add(t)
        train_heads[(t, r)].add(h)
    kg.train_tails = {key: np.array(sorted(value), dtype=np.int64) for key, value in train_tails.items()}
    kg.train_heads = {key: np.array(sorted(value), dtype=np.int64) for key, value in train_heads.items()}
    return kg


def compute_relation_stats(kg: KnowledgeGraph) -> RelationStats:
    """
    Counts per-relation triples and per-entity distinct relations over the training split.
    :param kg: Knowledge graph.
    :return: RelationStats.
    """
    triples = kg.split_array('train')
    relation_count = np.bincount(triples[:, 1], minlength=kg.n_relations).astype(np.int64)

    # Distinct (entity, relation) pairs per role
    head_pairs = np.unique(triples[:, [0, 1]], axis=0) if len(triples) else np.zeros((0, 2), dtype=np.int64)
    tail_pairs = np.unique(triples[:, [2, 1]], axis=0) if len(triples) else np.zeros((0, 2), dtype=np.int64)
    head_unique = np.bincount(head_pairs[:, 0], minlength=kg.n_entities).astype(np.int64)
    tail_unique = np.bincount(tail_pairs[:, 0], minlength=kg.n_entities).astype(np.int64)

    level = np.array([relation_level(name) for name in kg.vocab.relation_names], dtype=np.int64)
    return RelationStats(relation_count, head_unique, tail_unique, level)


def build_knowledge_graph(vocab: Vocabulary, train: list[Triple], valid: list[Triple] | None = None,
                          test: list[Triple] | None = None, name: str = 'kg') -> KnowledgeGraph:
    """
    Assembles a knowledge graph and builds its indexes and statistics.
    """
    kg = KnowledgeGraph(vocab=vocab, train=list(train), valid=list(valid or []), test=list(test or []), name=name)
    for split_name in DatasetInfo.SPLITS:
        for h, r, t in kg.split(split_name):
            if not (0 <= h < vocab.n_entities and 0 <= t < vocab.n_entities and 0 <= r < vocab.n_relations):
                raise VocabularyError(f"Triple {(h, r, t)} in {split_name} is out of vocabulary bounds.")
    build_filter_index(kg)
    kg.relation_stats = compute_relation_stats(kg)
    return kg


def load_dataset(data_dir: Path) -> KnowledgeGraph:
    """
    Loads train, valid and test splits from a directory, growing one vocabulary in that order.
    When entities.txt and relations.txt are present, ids come from them and unseen names are errors.
    :param data_dir: Directory with train.txt, valid.txt and test.txt.
    :return: Knowledge graph with indexes and statistics built.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"Data directory {data_dir} does not exist.")

    # A vocabulary dump pins the ids; without one they follow first appearance
    dumped = data_dir.joinpath('entities.txt').exists() and data_dir.joinpath('relations.txt').exists()
    vocab = Vocabulary.load(data_dir) if dumped else Vocabulary()
    splits = {}
    for split_name in DatasetInfo.SPLITS:
        path = data_dir.joinpath(DatasetInfo.SPLIT_FILES[split_name])
        if not path.exists():
            raise DataError(f"Missing split file {path}")
        splits[split_name] = load_split(path, vocab, grow=not dumped)

    kg = build_knowledge_graph(vocab, splits['train'], splits['valid'], splits['test'], name=data_dir.name)
    logger.info(f"Loaded {kg}")
    return kg


def dataset_checksum(path: Path) -> str:
    """
    :param path: File path.
    :return: SHA-256 hex digest of the file.
    """
    digest = hashlib.sha256()
    with open(path, 'rb') as split_file:
        for chunk in iter(lambda: split_file.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def dataset_checksums(data_dir: Path) -> dict[str, str]:
    data_dir = Path(data_dir)
    return {name: dataset_checksum(data_dir.joinpath(file_name))
            for name, file_name in DatasetInfo.SPLIT_FILES.items() if data_dir.joinpath(file_name).exists()}


def write_dataset(kg: KnowledgeGraph, data_dir: Path):
    """
    Writes all three splits and the vocabulary dump to a directory.
    :param kg: Knowledge graph.
    :param data_dir: Target directory.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for split_name, file_name in DatasetInfo.SPLIT_FILES.items():
        save_split(data_dir.joinpath(file_name), kg.split(split_name), kg.vocab)
    kg.vocab.dump(data_dir)
