"""Training-triple selection and negative candidate sampling."""

from dataclasses import dataclass

import numpy as np

from func.base_logger import logger
from func.kg_store import KnowledgeGraph
from data.configs import TrainingDefaults
from data.exceptions import DataError, ParameterError

SAMPLERS = ('candidate', 'weighted', 'adaptive')
TAIL, HEAD = 0, 1


def weighted_probs(kg: KnowledgeGraph) -> np.ndarray:
    """
    Per training triple: Level(r) / (#triples with r * #distinct relations of h as head
    * #distinct relations of t as tail), normalized to sum to 1.
    :param kg: Knowledge graph with relation statistics.
    :return: (N,) probabilities aligned with kg.train.
    """
    triples = kg.split_array('train')
    if len(triples) == 0:
        raise DataError("Weighted sampling needs at least one training triple.")
    stats = kg.relation_stats
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    weights = stats.level[r] / (stats.relation_count[r] * stats.head_unique[h] * stats.tail_unique[t])
    return weights / weights.sum()


def sample_negatives(positives: np.ndarray, n_entities: int, p_y: float, rng: np.random.Generator) -> np.ndarray:
    """
    Each entity outside positives joins independently with probability p_y.
    :param positives: Sorted known-true candidate ids (training index).
    :param n_entities: Entity count.
    :param p_y: Sampling rate in (0, 1].
    :param rng: Generator.
    :return: Sorted negative ids.
    """
    if not 0.0 < p_y <= 1.0:
        raise ParameterError(f"p_y = {p_y} is outside (0, 1]")
    keep = rng.random(n_entities) < p_y
    keep[positives] = False
    return np.flatnonzero(keep)


@dataclass
class Instances:
    """One epoch's training instances in visiting order."""
    entities: np.ndarray  # input entity: head for tail prediction, tail for head prediction
    relations: np.ndarray
    targets: np.ndarray
    directions: np.ndarray
    triple_ids: np.ndarray

    def __len__(self):
        return len(self.entities)

    def slice(self, start: int, stop: int) -> 'Instances':
        return Instances(*(array[start:stop] for array in self.__dict__.values()))


class Sampler:
    """
    Chooses which training triples enter an epoch and draws negatives for them.
    The candidate kind visits every triple once; weighted and adaptive draw |train| triples
    with replacement from their probability tables.
    """

    def __init__(self, kg: KnowledgeGraph, kind: str = TrainingDefaults.SAMPLER, p_y: float = TrainingDefaults.P_Y,
                 rng: np.random.Generator | None = None, directions: str = TrainingDefaults.DIRECTIONS,
                 adaptive_decay: float = TrainingDefaults.ADAPTIVE_DECAY,
                 adaptive_floor: float = TrainingDefaults.ADAPTIVE_FLOOR):
        if kind not in SAMPLERS:
            raise ParameterError(f"Unknown sampler {kind!r}")
        if not 0.0 < p_y <= 1.0:
            raise ParameterError(f"p_y = {p_y} is outside (0, 1]")
        self.kg = kg
        self.kind = kind
        self.p_y = p_y
        self.rng = rng if rng is not None else np.random.default_rng(TrainingDefaults.SEED)
        self.directions = directions
        self.adaptive_decay = adaptive_decay
        self.adaptive_floor = adaptive_floor
        self.triples = kg.split_array('train')
        self.weights = weighted_probs(kg) if kind == 'weighted' else None
        self.score_ema = np.full(len(self.triples), TrainingDefaults.ADAPTIVE_INIT) if kind == 'adaptive' else None

    def __str__(self):
        return f"Sampler(kind={self.kind}, p_y={self.p_y}, triples={len(self.triples)}, directions={self.directions})"

    def adaptive_probs(self) -> np.ndarray:
        """Sampling table of the adaptive kind: (1 - ema) + floor, normalized."""
        weights = (1.0 - self.score_ema) + self.adaptive_floor
        return weights / weights.sum()

    def adaptive_update(self, triple_ids, scores):
        """
        ema <- decay * ema + (1 - decay) * score for each (triple, positive score) pair, in order.
        """
        if self.score_ema is None:
            return
        for triple_id, score in zip(np.asarray(triple_ids), np.asarray(scores)):
            if not 0 <= triple_id < len(self.score_ema):
                raise ParameterError(f"Unknown training triple id {triple_id}")
            self.score_ema[triple_id] = (self.adaptive_decay * self.score_ema[triple_id]
                                         + (1.0 - self.adaptive_decay) * float(np.clip(score, 0.0, 1.0)))

    def draw_triples(self) -> np.ndarray:
        n = len(self.triples)
        if n == 0:
            raise DataError("Empty training set.")
        if self.kind == 'candidate':
            return np.arange(n)
        table = self.weights if self.kind == 'weighted' else self.adaptive_probs()
        return self.rng.choice(n, size=n, replace=True, p=table)

    def epoch_instances(self) -> Instances:
        """
        Training instances of one epoch: each drawn triple as tail prediction, and as head
        prediction too when directions is 'both', in shuffled order.
        """
        triple_ids = self.draw_triples()
        chosen = self.triples[triple_ids]
        h, r, t = chosen[:, 0], chosen[:, 1], chosen[:, 2]

        entities, targets, directions, ids = [h], [t], [np.full(len(h), TAIL)], [triple_ids]
        if self.directions == 'both':
            entities.append(t)
            targets.append(h)
            directions.append(np.full(len(h), HEAD))
            ids.append(triple_ids)

        order = self.rng.permutation(len(h) * len(entities))
        return Instances(entities=np.concatenate(entities)[order], relations=np.concatenate([r] * len(entities))[order],
                         targets=np.concatenate(targets)[order], directions=np.concatenate(directions)[order],
                         triple_ids=np.concatenate(ids)[order])

    def positives(self, entity: int, relation: int, direction: int) -> np.ndarray:
        index = self.kg.train_tails if direction == TAIL else self.kg.train_heads
        found = index.get((int(entity), int(relation)))
        if found is None:
            logger.warning(f"No training positives for ({entity}, {relation}, direction {direction})")
            return np.empty(0, dtype=np.int64)
        return found

    def negatives(self, positives: np.ndarray) -> np.ndarray:
        return sample_negatives(positives, self.kg.n_entities, self.p_y, self.rng)
