"""Training loop: batches, Adam steps, adaptive sampling and cluster center updates."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from func.base_logger import logger
from func.batching import Batch, iterate_batches
from func.evaluation import VarianceTrace
from func.kg_store import KnowledgeGraph
from func.losses import batch_loss, batch_regularizer, cluster_regularizer
from func.model_core import ProjBParams, batch_logits, cluster_means, forward_batch, grad
from func.optimizer import Adam
from func.run_config import TrainConfig
from func.samplers import Sampler
from func.timer import RunTimer
from data.exceptions import NumericalFailure


@dataclass
class TrainingHistory:
    epoch_losses: list = field(default_factory=list)  # mean loss per instance
    regularizer: list = field(default_factory=list)  # full-graph regularizer after the epoch
    epoch_seconds: list = field(default_factory=list)
    reassigned: list = field(default_factory=list)  # items that changed cluster at the epoch boundary
    candidates: list = field(default_factory=list)  # real (unpadded) candidates scored per epoch
    n_steps: int = 0
    diverged: bool = False
    failure: str = ''

    def __str__(self):
        last = f"{self.epoch_losses[-1]:.6g}" if self.epoch_losses else 'n/a'
        return f"TrainingHistory(epochs={len(self.epoch_losses)}, steps={self.n_steps}, last loss={last})"

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({'epoch': np.arange(1, len(self.epoch_losses) + 1), 'mean_loss': self.epoch_losses,
                             'regularizer': self.regularizer, 'seconds': self.epoch_seconds,
                             'reassigned': self.reassigned, 'candidates': self.candidates})

    def write_csv(self, path: Path):
        self.frame().to_csv(path, index=False)


def total_loss(batch: Batch, params: ProjBParams, delta: float, loss_kind: str) -> float:
    """
    Cross-entropy of the batch plus delta times the regularizer over the clusters of its inputs.
    """
    cache = forward_batch(params, batch.entities, batch.relations)
    ce, _, _ = batch_loss(loss_kind, batch_logits(params, cache, batch.candidates), batch.labels,
                          batch.mask, batch.target_slot)
    if delta == 0 or params.mode != 'projb':
        return ce
    value, _, _ = batch_regularizer(params, batch.entities, batch.relations)
    return ce + delta * value


def update_cluster_centers(params: ProjBParams, entities, relations) -> tuple[np.ndarray, np.ndarray]:
    """
    Recomputes the centers of the clusters that contain the given items as member means.
    :return: Touched entity clusters and touched relation clusters.
    """
    touched_e = np.unique(params.entity_cluster[np.asarray(entities)])
    touched_r = np.unique(params.relation_cluster[np.asarray(relations)])
    entity_means = cluster_means(params.W_E, params.entity_cluster, params.C_E)
    relation_means = cluster_means(params.W_R, params.relation_cluster, params.C_R)
    params.entity_centers[touched_e] = entity_means[touched_e]
    params.relation_centers[touched_r] = relation_means[touched_r]
    return touched_e, touched_r


def _nearest(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (np.einsum('nk,nk->n', X, X)[:, None] - 2.0 * X @ centers.T
          + np.einsum('ck,ck->c', centers, centers)[None, :])
    return np.argmin(d2, axis=1)


def reassign_clusters(params: ProjBParams) -> int:
    """
    Moves every entity and relation to the cluster with the nearest center.
    :return: Number of items that changed cluster.
    """
    moved = 0
    for embeddings, assignment, centers in ((params.W_E, params.entity_cluster, params.entity_centers),
                                            (params.W_R, params.relation_cluster, params.relation_centers)):
        nearest = _nearest(embeddings, centers)
        moved += int(np.count_nonzero(nearest != assignment))
        assignment[:] = nearest
    params.version += 1
    return moved


def make_sampler(kg: KnowledgeGraph, config: TrainConfig, rng: np.random.Generator) -> Sampler:
    return Sampler(kg, config.sampler, config.p_y, rng, config.directions, config.adaptive_decay,
                   config.adaptive_floor)


def run_epoch(params: ProjBParams, sampler: Sampler, optimizer: Adam, config: TrainConfig, epoch: int,
              trace: VarianceTrace | None = None) -> tuple[float, int, int, int]:
    """
    One pass over the sampler's epoch instances.
    :return: Summed loss, instance count, step count, scored candidate count.
    """
    instances = sampler.epoch_instances()
    n_batches = int(np.ceil(len(instances) / config.batch_size))
    marks = VarianceTrace.checkpoints(n_batches) if trace is not None else {}
    adaptive_centers = config.cluster_update == 'adaptive' and params.mode == 'projb'
    loss_sum, steps, scored = 0.0, 0, 0

    for index, batch in enumerate(iterate_batches(sampler, config.batch_size, instances)):
        loss, grads, positive_scores = grad(config.loss, batch, params, delta=config.delta)
        if not np.isfinite(loss):
            raise NumericalFailure(f"Non-finite loss in epoch {epoch}, batch {index}")
        optimizer.step(params, grads)
        sampler.adaptive_update(batch.triple_ids, positive_scores)
        if adaptive_centers:
            update_cluster_centers(params, np.union1d(batch.entities, batch.candidates[batch.mask]), batch.relations)
        for septile in marks.get(index, ()):
            trace.record(params, epoch, septile)
        loss_sum += loss
        steps += 1
        scored += batch.n_candidates

    return loss_sum, len(instances), steps, scored


def train(kg: KnowledgeGraph, params: ProjBParams, config: TrainConfig, rng: np.random.Generator | None = None,
          trace: VarianceTrace | None = None) -> TrainingHistory:
    """
    Trains params in place for config.epochs epochs.
    On a numerical failure the parameters are rolled back to the start of the failing epoch
    and the history is returned with diverged set.
    :param kg: Knowledge graph (training split and training index).
    :param params: Parameters to train.
    :param config: Training config.
    :param rng: Sampler generator, the config's sampler stream when missing.
    :param trace: Variance trace to fill, skipped when missing.
    :return: TrainingHistory.
    """
    sampler = make_sampler(kg, config, rng if rng is not None else config.seed_streams()['sampler'])
    optimizer = Adam(params, config.lr, config.beta1, config.beta2, config.eps, config.weight_decay)
    adaptive_centers = config.cluster_update == 'adaptive' and params.mode == 'projb'
    history = TrainingHistory()
    timer = RunTimer()
    logger.info(f"Training {params} with {sampler} for {config.epochs} epochs, config {config.config_hash()}")

    if trace is not None and trace.initial is None:
        trace.record(params, 0, 0)

    for epoch in range(1, config.epochs + 1):
        last_good = params.copy()
        timer.lap()
        try:
            loss_sum, n_instances, steps, scored = run_epoch(params, sampler, optimizer, config, epoch, trace)
        except NumericalFailure as e:
            logger.critical(f"Training diverged in epoch {epoch}: {e}. Rolled back to the start of the epoch.")
            params.load_state(last_good)
            history.diverged = True
            history.failure = str(e)
            break

        moved = 0
        if adaptive_centers:
            params.entity_centers = cluster_means(params.W_E, params.entity_cluster, params.C_E)
            params.relation_centers = cluster_means(params.W_R, params.relation_cluster, params.C_R)
            moved = reassign_clusters(params)

        history.n_steps += steps
        history.epoch_losses.append(loss_sum / max(n_instances, 1))
        history.regularizer.append(cluster_regularizer(params) if params.mode == 'projb' else 0.0)
        history.epoch_seconds.append(timer.lap())
        history.reassigned.append(moved)
        history.candidates.append(scored)
        logger.info(f"Epoch {epoch}: mean loss {history.epoch_losses[-1]:.6g}, regularizer "
                    f"{history.regularizer[-1]:.6g}, {moved} reassigned, {history.epoch_seconds[-1]:.2f}s")

    return history
