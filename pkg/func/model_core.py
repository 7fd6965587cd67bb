"""
Trainable parameters, the ProjB and ProjE combine operators, candidate scoring and exact gradients.

Shape contract: a head entity embedding e has k_e entries, a relation embedding r has k_r.
ProjB builds M = f((D_e e + b_pe)(D_r r + b_qr)^T), a k_e x k_r matrix, and projects
t = M r (k_e entries), which is scored against candidate rows of the same entity matrix.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax

from func.base_logger import logger
from func.feature_eng import EngineeredFeatures, scale_features
from func.losses import add_regularizer_grad, batch_loss
from data.configs import TrainingDefaults
from data.exceptions import DimensionError, ParameterError, StaleCacheError, VocabularyError

PROJB_TRAINABLE = ('W_E', 'W_R', 'b_p', 'B_PE', 'B_QR')
PROJE_TRAINABLE = ('W_E', 'W_R', 'b_p', 'd_e', 'd_r', 'b_c')
MODES = ('projb', 'proje')
ACTIVATIONS = ('sigmoid', 'tanh')


def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == 'sigmoid':
        return expit(z)
    if activation == 'tanh':
        return np.tanh(z)
    raise ParameterError(f"Unknown activation {activation!r}")


def activation_slope(out: np.ndarray, activation: str) -> np.ndarray:
    """Derivative of the activation, written in terms of its output."""
    if activation == 'sigmoid':
        return out * (1.0 - out)
    return 1.0 - out * out


@dataclass
class ProjBParams:
    """
    All parameters of one model. Arrays not used by the mode are None.

    D_E and D_R are frozen engineered features; entity_centers / relation_centers are the
    running cluster centers of the embeddings, which are not trained directly.
    """
    mode: str
    W_E: np.ndarray
    W_R: np.ndarray
    b_p: np.ndarray  # shape (1,)
    entity_cluster: np.ndarray
    relation_cluster: np.ndarray
    B_PE: np.ndarray | None = None
    B_QR: np.ndarray | None = None
    D_E: np.ndarray | None = None
    D_R: np.ndarray | None = None
    d_e: np.ndarray | None = None
    d_r: np.ndarray | None = None
    b_c: np.ndarray | None = None
    activation: str = TrainingDefaults.ACTIVATION
    entity_centers: np.ndarray | None = field(default=None, repr=False)
    relation_centers: np.ndarray | None = field(default=None, repr=False)
    version: int = 0

    def __str__(self):
        return (f"ProjBParams(mode={self.mode}, n_e={self.n_entities}, n_r={self.n_relations}, "
                f"k_e={self.k_e}, k_r={self.k_r}, C_E={self.C_E}, C_R={self.C_R})")

    @property
    def n_entities(self) -> int:
        return self.W_E.shape[0]

    @property
    def n_relations(self) -> int:
        return self.W_R.shape[0]

    @property
    def k_e(self) -> int:
        return self.W_E.shape[1]

    @property
    def k_r(self) -> int:
        return self.W_R.shape[1]

    @property
    def C_E(self) -> int:
        return self.B_PE.shape[0] if self.B_PE is not None else int(self.entity_cluster.max(initial=-1)) + 1

    @property
    def C_R(self) -> int:
        return self.B_QR.shape[0] if self.B_QR is not None else int(self.relation_cluster.max(initial=-1)) + 1

    @property
    def trainable(self) -> tuple:
        return PROJB_TRAINABLE if self.mode == 'projb' else PROJE_TRAINABLE

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.trainable}

    def copy(self) -> 'ProjBParams':
        copied = {name: (value.copy() if isinstance(value, np.ndarray) else value)
                  for name, value in self.__dict__.items()}
        return ProjBParams(**copied)

    def load_state(self, other: 'ProjBParams'):
        """Overwrites every array with a copy of other's; caches of either version go stale."""
        version = max(self.version, other.version) + 1
        for name, value in other.__dict__.items():
            setattr(self, name, value.copy() if isinstance(value, np.ndarray) else value)
        self.version = version

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(array)) for array in self.arrays().values())


def cluster_means(X: np.ndarray, assignment: np.ndarray, K: int) -> np.ndarray:
    """Mean embedding per cluster; empty clusters get a zero center."""
    counts = np.bincount(assignment, minlength=K).astype(np.float64)
    sums = np.zeros((K, X.shape[1]))
    np.add.at(sums, assignment, X)
    return np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)


def init_params(n_entities: int, n_relations: int, features: EngineeredFeatures | None, rng: np.random.Generator,
                mode: str = TrainingDefaults.MODE, dims_entity: int = TrainingDefaults.DIMS_ENTITY,
                dims_relation: int = TrainingDefaults.DIMS_RELATION,
                activation: str = TrainingDefaults.ACTIVATION,
                feature_scale: str = TrainingDefaults.FEATURE_SCALE) -> ProjBParams:
    """
    Random uniform embeddings in [-0.5/sqrt(k), 0.5/sqrt(k)], zero biases.
    ProjB takes k_e = C_E and k_r = C_R from the engineered features; ProjE uses one shared k = dims_entity.
    :param n_entities: Entity count.
    :param n_relations: Relation count.
    :param features: Engineered features (required for ProjB).
    :param rng: Initialisation generator.
    :param mode: projb | proje.
    :param dims_entity: Entity embedding dimension.
    :param dims_relation: Relation embedding dimension (ProjB only).
    :param activation: Combine activation.
    :param feature_scale: Scaling of the counts that become D_E / D_R.
    :return: Fresh parameters.
    """
    if mode not in MODES:
        raise ParameterError(f"Unknown mode {mode!r}")
    if activation not in ACTIVATIONS:
        raise ParameterError(f"Unknown activation {activation!r}")

    if features is not None and (features.n_entities != n_entities or features.n_relations != n_relations):
        raise DimensionError(f"{features} does not cover {n_entities} entities and {n_relations} relations")

    if mode == 'projb':
        if features is None:
            raise DimensionError("ProjB needs engineered features.")
        if (features.C_E, features.C_R) != (dims_entity, dims_relation):
            raise DimensionError(f"Embedding dimensions ({dims_entity}, {dims_relation}) must equal the cluster "
                                 f"counts of the features ({features.C_E}, {features.C_R})")
        k_e, k_r = dims_entity, dims_relation
    else:
        k_e = k_r = dims_entity

    bound_e, bound_r = 0.5 / np.sqrt(k_e), 0.5 / np.sqrt(k_r)
    W_E = rng.uniform(-bound_e, bound_e, size=(n_entities, k_e))
    W_R = rng.uniform(-bound_r, bound_r, size=(n_relations, k_r))
    if features is not None:
        entity_cluster = features.entity_cluster.astype(np.int64)
        relation_cluster = features.relation_cluster.astype(np.int64)
    else:
        entity_cluster = np.zeros(n_entities, dtype=np.int64)
        relation_cluster = np.zeros(n_relations, dtype=np.int64)

    params = ProjBParams(mode=mode, W_E=W_E, W_R=W_R, b_p=np.zeros(1), entity_cluster=entity_cluster,
                         relation_cluster=relation_cluster, activation=activation)
    if mode == 'projb':
        params.B_PE = np.zeros((features.C_E, k_e))
        params.B_QR = np.zeros((features.C_R, k_r))
        params.D_E = scale_features(features.entity_features, feature_scale)
        params.D_R = scale_features(features.relation_features, feature_scale)
    else:
        params.d_e = np.ones(k_e)
        params.d_r = np.ones(k_r)
        params.b_c = np.zeros(k_e)

    params.entity_centers = cluster_means(W_E, entity_cluster, params.C_E)
    params.relation_centers = cluster_means(W_R, relation_cluster, params.C_R)
    logger.info(f"Initialised {params}")
    return params


def _check_entity(params: ProjBParams, ids):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= params.n_entities):
        raise VocabularyError(f"Entity id out of range [0, {params.n_entities})")


def _check_relation(params: ProjBParams, ids):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= params.n_relations):
        raise VocabularyError(f"Relation id out of range [0, {params.n_relations})")


@dataclass(frozen=True)
class CombineOutput:
    t: np.ndarray  # (k_e,)
    a: np.ndarray  # (k_e,) D_e e + b_pe
    b: np.ndarray  # (k_r,) D_r r + b_qr
    M: np.ndarray  # (k_e, k_r)


def combine_projb(e_id: int, r_id: int, params: ProjBParams) -> CombineOutput:
    """
    t = f((D_e e + b_pe)(D_r r + b_qr)^T) r for one (entity, relation) input.
    """
    _check_entity(params, e_id)
    _check_relation(params, r_id)
    e, r = params.W_E[e_id], params.W_R[r_id]
    a = params.D_E[e_id] * e + params.B_PE[params.entity_cluster[e_id]]
    b = params.D_R[r_id] * r + params.B_QR[params.relation_cluster[r_id]]
    M = activate(np.outer(a, b), params.activation)
    return CombineOutput(t=M @ r, a=a, b=b, M=M)


def expand_combine(e_id: int, r_id: int, params: ProjBParams) -> CombineOutput:
    """
    The same projection with the activation argument built from its four expanded terms.
    """
    _check_entity(params, e_id)
    _check_relation(params, r_id)
    e, r = params.W_E[e_id], params.W_R[r_id]
    weighted_e = params.D_E[e_id] * e
    weighted_r = params.D_R[r_id] * r
    b_pe = params.B_PE[params.entity_cluster[e_id]]
    b_qr = params.B_QR[params.relation_cluster[r_id]]
    argument = (np.outer(weighted_e, weighted_r) + np.outer(b_pe, weighted_r)
                + np.outer(weighted_e, b_qr) + np.outer(b_pe, b_qr))
    M = activate(argument, params.activation)
    return CombineOutput(t=M @ r, a=weighted_e + b_pe, b=weighted_r + b_qr, M=M)


def combine_proje(e_id: int, r_id: int, params: ProjBParams) -> np.ndarray:
    """t = f(d_e * e + d_r * r + b_c)."""
    _check_entity(params, e_id)
    _check_relation(params, r_id)
    if params.k_e != params.k_r or params.d_e is None:
        raise DimensionError(f"ProjE combine needs one shared dimension, got k_e={params.k_e}, k_r={params.k_r}")
    return activate(params.d_e * params.W_E[e_id] + params.d_r * params.W_R[r_id] + params.b_c, params.activation)


def candidate_logits(t: np.ndarray, candidates, params: ProjBParams) -> np.ndarray:
    candidates = np.asarray(candidates, dtype=np.int64)
    _check_entity(params, candidates)
    if t.shape[-1] != params.k_e:
        raise DimensionError(f"Projection has {t.shape[-1]} entries, entity rows have {params.k_e}")
    return params.W_E[candidates] @ t + params.b_p[0]


def score_pointwise(t: np.ndarray, candidates, params: ProjBParams) -> np.ndarray:
    """
    sigmoid(W_E[i] . t + b_p) per candidate i.
    """
    return expit(candidate_logits(t, candidates, params))


def score_listwise(t: np.ndarray, candidates, params: ProjBParams) -> np.ndarray:
    """
    Softmax of the candidate logits.
    """
    if len(candidates) == 0:
        raise ParameterError("Listwise scoring needs at least one candidate.")
    return softmax(candidate_logits(t, candidates, params))


def score_transe(h_id: int, r_id: int, t_id: int, params: ProjBParams) -> float:
    """
    ||h + r - t||, lower is better. Needs a shared entity/relation dimension.
    """
    _check_entity(params, [h_id, t_id])
    _check_relation(params, r_id)
    if params.k_e != params.k_r:
        raise DimensionError(f"TransE needs k_e == k_r, got {params.k_e} and {params.k_r}")
    return float(np.linalg.norm(params.W_E[h_id] + params.W_R[r_id] - params.W_E[t_id]))


@dataclass(frozen=True)
class ForwardCache:
    """
    Batched forward intermediates, tied to the parameter version they were computed from.
    ProjB fills a, b and M; ProjE fills t only (its pre-activation is not needed for backprop).
    """
    entity_ids: np.ndarray
    relation_ids: np.ndarray
    t: np.ndarray  # (B, k_e)
    version: int
    a: np.ndarray | None = None  # (B, k_e)
    b: np.ndarray | None = None  # (B, k_r)
    M: np.ndarray | None = None  # (B, k_e, k_r)


def forward_batch(params: ProjBParams, entity_ids, relation_ids) -> ForwardCache:
    """
    Computes the projection of every (entity, relation) input of a batch in one pass.
    The ProjB path gathers the head and relation rows, weights them elementwise by their
    engineered features, adds the cluster biases, forms all outer products as one
    (B, k_e, k_r) tensor, applies the activation and contracts with the relation rows.
    :param params: Parameters.
    :param entity_ids: (B,) input entity ids.
    :param relation_ids: (B,) relation ids.
    :return: ForwardCache.
    """
    entity_ids = np.asarray(entity_ids, dtype=np.int64)
    relation_ids = np.asarray(relation_ids, dtype=np.int64)
    _check_entity(params, entity_ids)
    _check_relation(params, relation_ids)
    heads, relations = params.W_E[entity_ids], params.W_R[relation_ids]

    if params.mode == 'proje':
        t = activate(params.d_e * heads + params.d_r * relations + params.b_c, params.activation)
        return ForwardCache(entity_ids, relation_ids, t, params.version)

    a = params.D_E[entity_ids] * heads + params.B_PE[params.entity_cluster[entity_ids]]
    b = params.D_R[relation_ids] * relations + params.B_QR[params.relation_cluster[relation_ids]]
    M = activate(np.einsum('bi,bj->bij', a, b), params.activation)
    t = np.einsum('bij,bj->bi', M, relations)
    return ForwardCache(entity_ids, relation_ids, t, params.version, a=a, b=b, M=M)


def batch_logits(params: ProjBParams, cache: ForwardCache, candidates: np.ndarray) -> np.ndarray:
    """
    (B, S) logits of padded candidate lists.
    """
    return np.einsum('bk,bsk->bs', cache.t, params.W_E[candidates]) + params.b_p[0]


def all_entity_logits(params: ProjBParams, cache: ForwardCache) -> np.ndarray:
    """(B, n_e) logits against every entity."""
    return cache.t @ params.W_E.T + params.b_p[0]


def zero_grads(params: ProjBParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(array) for name, array in params.arrays().items()}


def backward(params: ProjBParams, cache: ForwardCache, candidates: np.ndarray,
             dlogits: np.ndarray, grads: dict | None = None) -> dict[str, np.ndarray]:
    """
    Reverse-mode pass from logit gradients to every trainable array.
    :param params: Parameters the cache was computed from.
    :param cache: Forward cache.
    :param candidates: (B, S) candidate ids.
    :param dlogits: (B, S) loss gradient per logit, zero at padding.
    :param grads: Gradient dict to accumulate into, fresh zeros when missing.
    :return: Gradient dict keyed like params.arrays().
    """
    if cache.version != params.version:
        raise StaleCacheError(f"Forward cache of version {cache.version} used with parameters "
                              f"of version {params.version}")
    grads = grads if grads is not None else zero_grads(params)
    k_e = params.k_e

    # Candidate rows and projection bias
    np.add.at(grads['W_E'], candidates.ravel(), (dlogits[:, :, None] * cache.t[:, None, :]).reshape(-1, k_e))
    grads['b_p'][0] += dlogits.sum()
    dt = np.einsum('bs,bsk->bk', dlogits, params.W_E[candidates])

    heads = params.W_E[cache.entity_ids]
    relations = params.W_R[cache.relation_ids]

    if params.mode == 'proje':
        dz = dt * activation_slope(cache.t, params.activation)
        np.add.at(grads['W_E'], cache.entity_ids, dz * params.d_e)
        np.add.at(grads['W_R'], cache.relation_ids, dz * params.d_r)
        grads['d_e'] += np.einsum('bk,bk->k', dz, heads)
        grads['d_r'] += np.einsum('bk,bk->k', dz, relations)
        grads['b_c'] += dz.sum(axis=0)
        return grads

    # t = M r: the relation row enters once more as the trailing factor
    d_trailing = np.einsum('bij,bi->bj', cache.M, dt)
    dZ = dt[:, :, None] * relations[:, None, :] * activation_slope(cache.M, params.activation)
    da = np.einsum('bij,bj->bi', dZ, cache.b)
    db = np.einsum('bij,bi->bj', dZ, cache.a)

    np.add.at(grads['W_E'], cache.entity_ids, da * params.D_E[cache.entity_ids])
    np.add.at(grads['B_PE'], params.entity_cluster[cache.entity_ids], da)
    np.add.at(grads['W_R'], cache.relation_ids, db * params.D_R[cache.relation_ids] + d_trailing)
    np.add.at(grads['B_QR'], params.relation_cluster[cache.relation_ids], db)
    return grads


def grad(loss_kind: str, batch, params: ProjBParams, cache: ForwardCache | None = None,
         delta: float = 0.0) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """
    Loss and exact gradients of one batch.
    :param loss_kind: pointwise | listwise.
    :param batch: Batch from func.batching.
    :param params: Parameters.
    :param cache: Forward cache of this batch, computed when missing.
    :param delta: Weight of the cluster regularizer over the batch's clusters.
    :return: Total loss, gradient dict, per-instance positive score.
    """
    cache = cache if cache is not None else forward_batch(params, batch.entities, batch.relations)
    logits = batch_logits(params, cache, batch.candidates)
    ce, dlogits, positive_scores = batch_loss(loss_kind, logits, batch.labels, batch.mask, batch.target_slot)
    grads = backward(params, cache, batch.candidates, dlogits)
    total = ce
    if delta > 0 and params.mode == 'projb':
        total += add_regularizer_grad(params, grads, delta, batch.entities, batch.relations)
    return total, grads, positive_scores


@dataclass(frozen=True)
class ParamCount:
    total: int
    breakdown: dict
    formula: int
    formula_text: str

    @property
    def matches_formula(self) -> bool:
        return self.total == self.formula


def param_count(params: ProjBParams) -> ParamCount:
    """
    Counts trainable scalars per array and the closed-form count of the mode alongside.
    A mismatch between the two is logged, not raised.
    """
    breakdown = {name: int(array.size) for name, array in params.arrays().items()}
    total = sum(breakdown.values())
    n_e, n_r, k = params.n_entities, params.n_relations, params.k_e
    if params.mode == 'projb':
        formula = k * (n_e + n_r + params.C_E + params.C_R + 1)
        text = 'k(n_e + n_r + C_E + C_R + 1)'
    else:
        formula = n_e * k + n_r * k + 5 * k
        text = 'n_e k + n_r k + 5k'
    if formula != total:
        logger.info(f"Trainable count {total} differs from {text} = {formula}")
    return ParamCount(total, breakdown, formula, text)
