"""Cross-entropy losses over candidate lists and the cluster variance regularizer."""

import numpy as np
from scipy.special import expit, log_expit, log_softmax

from func.base_logger import logger
from data.configs import EvaluationSettings
from data.exceptions import ParameterError

LOSSES = ('pointwise', 'listwise')
_LOG_FLOOR = np.log(EvaluationSettings.PROBABILITY_FLOOR)


def pointwise_loss(scores: np.ndarray, labels: np.ndarray, negative_mask: np.ndarray | None = None) -> float:
    """
    -sum over positives of log(score) - sum over sampled negatives of log(1 - score).
    :param scores: Candidate scores in (0, 1).
    :param labels: Binary labels.
    :param negative_mask: Which negatives were drawn, every non-positive when missing.
    :return: Loss, 0.0 with a warning when there is no positive.
    """
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    positive = labels > 0
    if not positive.any():
        logger.warning("Pointwise loss on an instance without positives, skipped.")
        return 0.0
    negative = ~positive if negative_mask is None else (~positive & np.asarray(negative_mask, dtype=bool))
    floor = EvaluationSettings.PROBABILITY_FLOOR
    return float(-np.log(np.maximum(scores[positive], floor)).sum()
                 - np.log(np.maximum(1.0 - scores[negative], floor)).sum())


def listwise_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """
    Cross-entropy of the candidate probabilities against the uniform distribution over positives.
    A zero probability at a positive is clamped and logged.
    """
    probabilities, labels = np.asarray(probabilities, dtype=np.float64), np.asarray(labels)
    positive = labels > 0
    if not positive.any():
        logger.warning("Listwise loss on an instance without positives, skipped.")
        return 0.0
    picked = probabilities[positive]
    if np.any(picked < EvaluationSettings.PROBABILITY_FLOOR):
        logger.warning(f"Clamped {int((picked < EvaluationSettings.PROBABILITY_FLOOR).sum())} positive "
                       f"probabilities at {EvaluationSettings.PROBABILITY_FLOOR}")
    return float(-np.log(np.maximum(picked, EvaluationSettings.PROBABILITY_FLOOR)).sum() / positive.sum())


def batch_loss(loss_kind: str, logits: np.ndarray, labels: np.ndarray, mask: np.ndarray,
               target_slot: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Summed loss of a padded batch and its gradient with respect to the logits.
    :param loss_kind: pointwise | listwise.
    :param logits: (B, S) candidate logits.
    :param labels: (B, S) binary labels, zero at padding.
    :param mask: (B, S) true for real candidates.
    :param target_slot: (B,) slot of the instance's own positive.
    :return: Loss sum, (B, S) logit gradients, (B,) score of each instance's own positive.
    """
    labels = labels * mask
    has_positive = labels.sum(axis=1) > 0
    if not has_positive.all():
        logger.warning(f"{int((~has_positive).sum())} instances without positives skipped.")
    active = mask & has_positive[:, None]
    rows = np.arange(len(logits))

    if loss_kind == 'pointwise':
        scores = expit(logits)
        log_terms = np.where(labels > 0, log_expit(logits), log_expit(-logits))
        loss = -np.where(active, log_terms, 0.0).sum()
        dlogits = np.where(active, scores - labels, 0.0)
        return float(loss), dlogits, scores[rows, target_slot]

    if loss_kind == 'listwise':
        log_q = log_softmax(np.where(mask, logits, -np.inf), axis=1)
        q = np.where(mask, np.exp(log_q), 0.0)
        targets = labels / np.maximum(labels.sum(axis=1, keepdims=True), 1.0)
        clamped = (labels > 0) & active & (log_q < _LOG_FLOOR)
        if clamped.any():
            logger.warning(f"Clamped {int(clamped.sum())} positive probabilities at "
                           f"{EvaluationSettings.PROBABILITY_FLOOR}")
        loss = -np.where((labels > 0) & active, targets * np.maximum(log_q, _LOG_FLOOR), 0.0).sum()
        dlogits = np.where(active, q - targets, 0.0)
        return float(loss), dlogits, q[rows, target_slot]

    raise ParameterError(f"Unknown loss {loss_kind!r}")


def group_variance(X: np.ndarray, assignment: np.ndarray, K: int, clusters=None) -> tuple[float, np.ndarray]:
    """
    Sum over clusters of the per-dimension population variance of their members, summed over dimensions.
    :param X: (n, k) member rows.
    :param assignment: (n,) cluster id per row.
    :param K: Cluster count.
    :param clusters: Restrict to these cluster ids, all clusters when missing.
    :return: Variance sum and its (n, k) gradient with respect to X.
    """
    gradient = np.zeros_like(X)
    if clusters is None:
        members = np.arange(len(assignment))
    else:
        members = np.flatnonzero(np.isin(assignment, np.asarray(clusters)))
    if members.size == 0:
        return 0.0, gradient

    groups = assignment[members]
    counts = np.bincount(groups, minlength=K).astype(np.float64)
    sums = np.zeros((K, X.shape[1]))
    np.add.at(sums, groups, X[members])
    means = sums / np.maximum(counts, 1.0)[:, None]
    deviation = X[members] - means[groups]
    scale = 1.0 / counts[groups]
    value = float((np.einsum('nk,nk->n', deviation, deviation) * scale).sum())
    gradient[members] = 2.0 * deviation * scale[:, None]
    return value, gradient


def cluster_regularizer(params) -> float:
    """
    Full-graph regularizer: summed cluster variance of entity embeddings plus that of relation embeddings.
    """
    entity_part, _ = group_variance(params.W_E, params.entity_cluster, params.C_E)
    relation_part, _ = group_variance(params.W_R, params.relation_cluster, params.C_R)
    return entity_part + relation_part


def batch_regularizer(params, entities, relations) -> tuple[float, np.ndarray, np.ndarray]:
    """
    The regularizer restricted to the clusters of the batch's input entities and relations.
    :return: Value, gradient for W_E, gradient for W_R.
    """
    entity_clusters = np.unique(params.entity_cluster[np.asarray(entities)])
    relation_clusters = np.unique(params.relation_cluster[np.asarray(relations)])
    entity_part, grad_e = group_variance(params.W_E, params.entity_cluster, params.C_E, entity_clusters)
    relation_part, grad_r = group_variance(params.W_R, params.relation_cluster, params.C_R, relation_clusters)
    return entity_part + relation_part, grad_e, grad_r


def add_regularizer_grad(params, grads: dict, delta: float, entities, relations) -> float:
    """
    Adds delta times the batch regularizer gradient to grads.
    :return: delta times the batch regularizer value.
    """
    value, grad_e, grad_r = batch_regularizer(params, entities, relations)
    grads['W_E'] += delta * grad_e
    grads['W_R'] += delta * grad_r
    return delta * value
