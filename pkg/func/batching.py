"""Mini-batch staging: candidate lists, labels and padding for the batched forward pass."""

from dataclasses import dataclass

import numpy as np

from func.samplers import Instances, Sampler
from data.exceptions import DataError


@dataclass(frozen=True)
class Batch:
    entities: np.ndarray  # (B,)
    relations: np.ndarray  # (B,)
    directions: np.ndarray  # (B,)
    triple_ids: np.ndarray  # (B,)
    candidates: np.ndarray  # (B, S) entity ids, 0 at padding
    mask: np.ndarray  # (B, S) real candidate
    labels: np.ndarray  # (B, S) 1.0 at positives
    target_slot: np.ndarray  # (B,) slot of the instance's own target

    def __len__(self):
        return len(self.entities)

    @property
    def n_candidates(self) -> int:
        return int(self.mask.sum())


def pad_batch(instances: Instances, candidate_lists: list[np.ndarray], positive_counts: list[int]) -> Batch:
    """
    Packs per-instance candidate lists (positives first) into padded arrays.
    """
    width = max(len(candidates) for candidates in candidate_lists)
    size = len(candidate_lists)
    candidates = np.zeros((size, width), dtype=np.int64)
    mask = np.zeros((size, width), dtype=bool)
    labels = np.zeros((size, width))
    target_slot = np.zeros(size, dtype=np.int64)

    for row, (ids, n_positive, target) in enumerate(zip(candidate_lists, positive_counts, instances.targets)):
        candidates[row, :len(ids)] = ids
        mask[row, :len(ids)] = True
        labels[row, :n_positive] = 1.0
        target_slot[row] = int(np.flatnonzero(ids == target)[0])

    return Batch(entities=instances.entities, relations=instances.relations, directions=instances.directions,
                 triple_ids=instances.triple_ids, candidates=candidates, mask=mask, labels=labels,
                 target_slot=target_slot)


def build_batch(instances: Instances, sampler: Sampler) -> Batch:
    """
    Candidate list per instance: its training positives plus the sampler's negatives.
    :param instances: Instances of this batch.
    :param sampler: Sampler with its generator.
    :return: Padded Batch.
    """
    if len(instances) == 0:
        raise DataError("Cannot build a batch without instances.")
    candidate_lists, positive_counts = [], []
    for entity, relation, direction, target in zip(instances.entities, instances.relations,
                                                   instances.directions, instances.targets):
        positives = sampler.positives(entity, relation, direction)
        if target not in positives:
            positives = np.union1d(positives, [target])
        candidate_lists.append(np.concatenate([positives, sampler.negatives(positives)]))
        positive_counts.append(len(positives))
    return pad_batch(instances, candidate_lists, positive_counts)


def iterate_batches(sampler: Sampler, batch_size: int, instances: Instances | None = None):
    """
    Yields the batches of one epoch in order.
    :param sampler: Sampler.
    :param batch_size: Instances per batch (the last may be smaller).
    :param instances: Epoch instances, drawn from the sampler when missing.
    """
    instances = instances if instances is not None else sampler.epoch_instances()
    for start in range(0, len(instances), batch_size):
        yield build_batch(instances.slice(start, start + batch_size), sampler)
