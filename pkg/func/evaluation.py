"""Link prediction ranking metrics and the cluster center variance trace."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from func.base_logger import logger
from func.clustering import center_variance
from func.kg_store import KnowledgeGraph
from func.model_core import ProjBParams, all_entity_logits, cluster_means, forward_batch
from func.samplers import HEAD, TAIL
from data.configs import EvaluationSettings
from data.exceptions import EmptyReportError, NumericalFailure, ParameterError

DIRECTION_NAMES = {TAIL: 'tail', HEAD: 'head'}


@dataclass(frozen=True)
class RankReport:
    """
    Raw and filtered rank of every evaluated instance, tagged with its prediction direction.
    """
    raw: np.ndarray
    filtered: np.ndarray
    directions: np.ndarray

    def __len__(self):
        return len(self.raw)

    def __str__(self):
        if not len(self):
            return "RankReport(empty)"
        return (f"RankReport(n={len(self)}, hits@10 raw={hits_at_k(self, 10, False):.4f}, "
                f"filtered={hits_at_k(self, 10, True):.4f})")

    def ranks(self, filtered: bool) -> np.ndarray:
        return self.filtered if filtered else self.raw

    def direction(self, direction: int) -> 'RankReport':
        keep = self.directions == direction
        return RankReport(self.raw[keep], self.filtered[keep], self.directions[keep])


def ranks_from_logits(logits: np.ndarray, true_id: int, known=()) -> tuple[int, int]:
    """
    Pessimistic ranks: every competitor scoring at least as high as the true entity is ranked before it.
    :param logits: (n_e,) candidate logits.
    :param true_id: True entity.
    :param known: Other true entities removed for the filtered rank.
    :return: Raw rank and filtered rank.
    """
    if not np.all(np.isfinite(logits)):
        raise NumericalFailure(f"Non-finite candidate logits while ranking entity {true_id}")
    true_logit = logits[true_id]
    raw = int(np.count_nonzero(logits >= true_logit))
    known = np.asarray([k for k in known if k != true_id], dtype=np.int64)
    ahead_known = int(np.count_nonzero(logits[known] >= true_logit)) if known.size else 0
    return raw, raw - ahead_known


def _known_true(kg: KnowledgeGraph, entity: int, relation: int, direction: int):
    index = kg.true_tails if direction == TAIL else kg.true_heads
    return index.get((int(entity), int(relation)), ())


def rank_entity(entity: int, relation: int, true_id: int, direction: int, params: ProjBParams,
                kg: KnowledgeGraph | None = None, filtered: bool = False) -> int:
    """
    Rank of the true entity among all entities for one (entity, relation) query.
    :param entity: Known entity (head for tail prediction, tail for head prediction).
    :param relation: Relation id.
    :param true_id: Entity to rank.
    :param direction: TAIL or HEAD.
    :param params: Parameters.
    :param kg: Knowledge graph whose all-splits index filters, needed when filtered.
    :param filtered: Remove other known-true entities from the ranking.
    :return: Rank starting at 1.
    """
    if filtered and kg is None:
        raise ParameterError("Filtered ranking needs the knowledge graph.")
    logits = all_entity_logits(params, forward_batch(params, [entity], [relation]))[0]
    raw, filtered_rank = ranks_from_logits(logits, true_id, _known_true(kg, entity, relation, direction) if kg else ())
    return filtered_rank if filtered else raw


def _rank_chunk(params: ProjBParams, kg: KnowledgeGraph, entities, relations, targets, directions):
    logits = all_entity_logits(params, forward_batch(params, entities, relations))
    raw, filtered = np.empty(len(entities), dtype=np.int64), np.empty(len(entities), dtype=np.int64)
    for row, (entity, relation, target, direction) in enumerate(zip(entities, relations, targets, directions)):
        raw[row], filtered[row] = ranks_from_logits(logits[row], target,
                                                    _known_true(kg, entity, relation, direction))
    return raw, filtered


def evaluate(params: ProjBParams, kg: KnowledgeGraph, split: str = 'test', directions: str = 'both',
             threads: int = 1, chunk: int = EvaluationSettings.RANK_CHUNK) -> RankReport:
    """
    Ranks every triple of a split against all entities, in raw and filtered mode.
    :param params: Parameters (read only).
    :param kg: Knowledge graph.
    :param split: Split to evaluate.
    :param directions: 'tail' or 'both'.
    :param threads: Worker threads over query chunks.
    :param chunk: Queries per forward pass.
    :return: RankReport with tail rows first, then head rows.
    """
    triples = kg.split_array(split)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    entities, relations, targets, tags = [h], [r], [t], [np.full(len(h), TAIL)]
    if directions == 'both':
        entities.append(t)
        relations.append(r)
        targets.append(h)
        tags.append(np.full(len(h), HEAD))
    elif directions != 'tail':
        raise ParameterError(f"Unknown evaluation directions {directions!r}")
    entities, relations, targets, tags = (np.concatenate(parts) for parts in (entities, relations, targets, tags))

    bounds = [(start, min(start + chunk, len(entities))) for start in range(0, len(entities), chunk)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda b: _rank_chunk(params, kg, entities[b[0]:b[1]], relations[b[0]:b[1]],
                                                      targets[b[0]:b[1]], tags[b[0]:b[1]]), bounds))

    raw = np.concatenate([part[0] for part in results]) if results else np.empty(0, dtype=np.int64)
    filtered = np.concatenate([part[1] for part in results]) if results else np.empty(0, dtype=np.int64)
    report = RankReport(raw, filtered, tags)
    logger.info(f"Evaluated {split} of {kg.name}: {report}")
    return report


def hits_at_k(report: RankReport, k: int, filtered: bool = True) -> float:
    """Fraction of instances ranked within the top k."""
    if not len(report):
        raise EmptyReportError("Hits@k of an empty rank report.")
    return float(np.mean(report.ranks(filtered) <= k))


def mean_rank(report: RankReport, filtered: bool = True) -> float:
    if not len(report):
        raise EmptyReportError("Mean rank of an empty rank report.")
    return float(np.mean(report.ranks(filtered)))


def _summary(report: RankReport) -> dict:
    summary = {f"hits@{k}": {'raw': hits_at_k(report, k, False), 'filtered': hits_at_k(report, k, True)}
               for k in EvaluationSettings.HITS_AT}
    summary['mean_rank'] = {'raw': mean_rank(report, False), 'filtered': mean_rank(report, True)}
    summary['n_instances'] = len(report)
    return summary


def metrics_document(report: RankReport, dataset: str, config, headline: str = 'tail') -> dict:
    """
    The metrics JSON document. Headline numbers follow the configured protocol (tail rows only,
    or both directions averaged); every direction present also gets its own breakdown.
    :param report: Rank report.
    :param dataset: Dataset name.
    :param config: TrainConfig of the evaluated model.
    :param headline: 'tail' or 'both'.
    :return: JSON-ready dict.
    """
    headline_report = report.direction(TAIL) if headline == 'tail' else report
    document = {'dataset': dataset, 'mode': config.mode, 'loss': config.loss, 'sampler': config.sampler,
                'seed': config.seed, 'config_hash': config.config_hash(), 'protocol': headline}
    document.update(_summary(headline_report))
    document['per_direction'] = {name: _summary(report.direction(direction))
                                 for direction, name in DIRECTION_NAMES.items() if np.any(report.directions == direction)}
    return document


@dataclass
class VarianceTrace:
    """
    Cluster center variance of the current embeddings at septile checkpoints of every epoch,
    relative to the value before training.
    """
    rows: list = field(default_factory=list)
    initial: tuple | None = None

    def record(self, params: ProjBParams, epoch: int, septile: int):
        entity_v = center_variance(cluster_means(params.W_E, params.entity_cluster, params.C_E))
        relation_v = center_variance(cluster_means(params.W_R, params.relation_cluster, params.C_R))
        if self.initial is None:
            self.initial = (entity_v, relation_v)
        base_e, base_r = self.initial
        self.rows.append({'epoch': epoch, 'septile': septile,
                          'entity_relative': entity_v / base_e if base_e > 0 else 1.0,
                          'relation_relative': relation_v / base_r if base_r > 0 else 1.0,
                          'entity_variance': entity_v, 'relation_variance': relation_v})

    @staticmethod
    def checkpoints(n_batches: int) -> dict[int, list[int]]:
        """Batch index -> septiles recorded after that batch. Short epochs record several at once."""
        marks = {}
        for septile in range(1, EvaluationSettings.SEPTILES + 1):
            index = max(1, int(np.ceil(n_batches * septile / EvaluationSettings.SEPTILES))) - 1
            marks.setdefault(index, []).append(septile)
        return marks

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=['epoch', 'septile', 'entity_relative', 'relation_relative',
                                                'entity_variance', 'relation_variance'])

    def write_csv(self, path: Path):
        self.frame().to_csv(path, index=False)
