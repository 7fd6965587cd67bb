"""Experiment harnesses: local optima t-test, batch size timing sweep and the setting comparison grid."""

import itertools
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from func.base_logger import logger
from func.evaluation import evaluate, hits_at_k, mean_rank
from func.feature_eng import EngineeredFeatures, pca_engineered
from func.kg_store import KnowledgeGraph, build_knowledge_graph
from func.losses import batch_loss
from func.model_core import ProjBParams, all_entity_logits, forward_batch, init_params
from func.run_config import TrainConfig
from func.samplers import TAIL
from func.trainer import train
from data.configs import EvaluationSettings
from data.exceptions import ConfigurationError

EXPERIMENTS = ('local_optima', 'timing_sweep', 'table4_grid')


@dataclass(frozen=True)
class TrialStats:
    n_trials: int
    ratios: np.ndarray
    mean: float
    std: float
    t_statistic: float
    p_value: float
    reject: bool
    failed_trials: tuple = field(default=())

    def __str__(self):
        return (f"TrialStats(n={self.n_trials}, mean={self.mean:.4f}, std={self.std:.4f}, t={self.t_statistic:.4f}, "
                f"p={self.p_value:.4g}, reject={self.reject}, failed={len(self.failed_trials)})")

    def as_dict(self) -> dict:
        return {'n_trials': self.n_trials, 'ratios': [float(r) for r in self.ratios], 'mean': self.mean,
                'std': self.std, 't_statistic': self.t_statistic, 'p_value': self.p_value,
                'alpha': EvaluationSettings.ALPHA, 'reject_mean_at_least_one': self.reject,
                'failed_trials': list(self.failed_trials)}


def one_sided_ttest(ratios, alpha: float = EvaluationSettings.ALPHA, failed_trials=()) -> TrialStats:
    """
    One-sample t-test of H0: mean ratio >= 1 against the alternative mean < 1.
    A zero-spread sample gets p = 1 when its mean is at least 1, else p = 0.
    :param ratios: Per-trial loss ratios.
    :param alpha: Significance level.
    :param failed_trials: Indices of excluded trials, carried into the result.
    :return: TrialStats.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    mean = float(ratios.mean()) if ratios.size else float('nan')
    std = float(ratios.std(ddof=1)) if ratios.size > 1 else 0.0

    if ratios.size > 1 and std > 0:
        result = stats.ttest_1samp(ratios, 1.0, alternative='less')
        t_statistic, p_value = float(result.statistic), float(result.pvalue)
    else:
        t_statistic = float('-inf') if mean < 1 else (0.0 if mean == 1 else float('inf'))
        p_value = 1.0 if mean >= 1 else 0.0

    return TrialStats(n_trials=int(ratios.size), ratios=ratios, mean=mean, std=std, t_statistic=t_statistic,
                      p_value=p_value, reject=p_value < alpha, failed_trials=tuple(failed_trials))


def mean_cross_entropy(params: ProjBParams, kg: KnowledgeGraph, loss_kind: str) -> float:
    """
    Mean training loss per training triple with every entity as a candidate (tail prediction).
    """
    triples = kg.split_array('train')
    total = 0.0
    for start in range(0, len(triples), EvaluationSettings.RANK_CHUNK):
        chunk = triples[start:start + EvaluationSettings.RANK_CHUNK]
        logits = all_entity_logits(params, forward_batch(params, chunk[:, 0], chunk[:, 1]))
        labels = np.zeros_like(logits)
        for row, (h, r, _) in enumerate(chunk):
            labels[row, kg.train_tails[(int(h), int(r))]] = 1.0
        loss, _, _ = batch_loss(loss_kind, logits, labels, np.ones_like(labels, dtype=bool), chunk[:, 2])
        total += loss
    return total / max(len(triples), 1)


def _train_model(kg: KnowledgeGraph, features: EngineeredFeatures | None, config: TrainConfig):
    streams = config.seed_streams()
    dims_entity = features.C_E if config.mode == 'projb' else config.dims_entity
    dims_relation = features.C_R if config.mode == 'projb' else config.dims_relation
    params = init_params(kg.n_entities, kg.n_relations, features, streams['init'], config.mode, dims_entity,
                         dims_relation, config.activation, config.feature_scale)
    history = train(kg, params, config, streams['sampler'])
    return params, history


def local_optima_experiment(kg: KnowledgeGraph, features: EngineeredFeatures, config: TrainConfig,
                            n_trials: int = EvaluationSettings.LOCAL_OPTIMA_TRIALS, seed: int = 0,
                            baseline_mode: str = 'proje') -> tuple[TrialStats, pd.DataFrame]:
    """
    Per trial, resamples |train| training triples with replacement, trains ProjB and the
    baseline mode under one config and seed, and records CE(ProjB) / CE(baseline).
    Diverged trials are excluded and listed.
    :param kg: Knowledge graph.
    :param features: Engineered features for ProjB.
    :param config: Shared training config.
    :param n_trials: Number of resampled sets.
    :param seed: Resampling seed.
    :param baseline_mode: 'proje', or 'projb' for a self-comparison control.
    :return: TrialStats and one row per trial.
    """
    triples = kg.train
    rows, ratios, failed = [], [], []

    for trial, trial_seed in enumerate(np.random.SeedSequence(seed).spawn(n_trials)):
        rng = np.random.default_rng(trial_seed)
        sampled = [triples[i] for i in rng.integers(len(triples), size=len(triples))]
        trial_kg = build_knowledge_graph(kg.vocab, sampled, name=f"{kg.name}-trial{trial}")
        trial_config = config.with_overrides(seed=int(trial_seed.generate_state(1)[0] % (2 ** 31)))

        projb, projb_history = _train_model(trial_kg, features, trial_config.with_overrides(mode='projb'))
        baseline, baseline_history = _train_model(trial_kg, features, trial_config.with_overrides(mode=baseline_mode))
        diverged = projb_history.diverged or baseline_history.diverged

        ce_projb = mean_cross_entropy(projb, trial_kg, config.loss)
        ce_baseline = mean_cross_entropy(baseline, trial_kg, config.loss)
        ratio = ce_projb / ce_baseline if ce_baseline > 0 else float('nan')
        if diverged or not np.isfinite(ratio) or ratio <= 0:
            logger.warning(f"Trial {trial} excluded (diverged={diverged}, ratio={ratio})")
            failed.append(trial)
        else:
            ratios.append(ratio)
        rows.append({'trial': trial, 'ce_projb': ce_projb, f"ce_{baseline_mode}": ce_baseline, 'ratio': ratio,
                     'failed': trial in failed})

    trial_stats = one_sided_ttest(ratios, failed_trials=failed)
    logger.info(f"Local optima experiment on {kg.name}: {trial_stats}")
    return trial_stats, pd.DataFrame(rows)


def timing_sweep(kg: KnowledgeGraph, features: EngineeredFeatures, config: TrainConfig,
                 batch_sizes=EvaluationSettings.SWEEP_BATCH_SIZES) -> tuple[pd.DataFrame, bool]:
    """
    Trains one epoch from the same initialisation per batch size and times it.
    :return: One row per batch size, and whether the largest batch size ran faster than the smallest.
    """
    rows = []
    for batch_size in batch_sizes:
        sweep_config = config.with_overrides(batch_size=batch_size, epochs=1)
        _, history = _train_model(kg, features, sweep_config)
        rows.append({'batch_size': batch_size, 'seconds': history.epoch_seconds[0] if history.epoch_seconds else 0.0,
                     'final_loss': history.epoch_losses[-1] if history.epoch_losses else float('nan'),
                     'steps': history.n_steps})
    frame = pd.DataFrame(rows)
    ordered = frame.sort_values('batch_size')
    faster = bool(ordered['seconds'].iloc[-1] < ordered['seconds'].iloc[0]) if len(frame) > 1 else False
    logger.info(f"Timing sweep on {kg.name}: {rows}; largest batch faster: {faster}")
    return frame, faster


def table4_grid(kg: KnowledgeGraph, features: EngineeredFeatures, config: TrainConfig,
                batch_sizes=EvaluationSettings.TABLE4_BATCH_SIZES, threads: int = 1) -> pd.DataFrame:
    """
    Every combination of feature source (PCA reduction or cluster features), cluster update
    (none or adaptive), sampler and batch size, trained as ProjB and evaluated on the test split
    (the training split when the test split is empty).
    :return: One metrics row per combination.
    """
    if config.mode != 'projb':
        raise ConfigurationError("The setting comparison grid trains ProjB models.")
    split = 'test' if kg.test else 'train'
    if split == 'train':
        logger.warning(f"{kg.name} has no test split, the setting comparison ranks training triples.")
    sources = {'cluster': features, 'pca': pca_engineered(kg, features, config.clustering_seed())}
    rows = []

    for source, update, sampler, batch_size in itertools.product(EvaluationSettings.TABLE4_FEATURES,
                                                                 EvaluationSettings.TABLE4_UPDATES,
                                                                 EvaluationSettings.TABLE4_SAMPLERS, batch_sizes):
        cell_config = config.with_overrides(cluster_update=update, sampler=sampler, batch_size=batch_size)
        params, history = _train_model(kg, sources[source], cell_config)
        report = evaluate(params, kg, split, config.eval_directions, threads)
        headline = report.direction(TAIL) if config.eval_directions == 'tail' else report
        rows.append({'features': source, 'cluster_update': update, 'sampler': sampler, 'batch_size': batch_size,
                     'hits@1_filtered': hits_at_k(headline, 1, True), 'hits@10_raw': hits_at_k(headline, 10, False),
                     'hits@10_filtered': hits_at_k(headline, 10, True), 'mean_rank_filtered': mean_rank(headline, True),
                     'final_loss': history.epoch_losses[-1] if history.epoch_losses else float('nan'),
                     'diverged': history.diverged})
        logger.info(f"Setting comparison cell {rows[-1]}")

    return pd.DataFrame(rows)
