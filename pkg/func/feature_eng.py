"""
Co-occurrence feature vectors, cluster-aggregated engineered features (D_e / D_r source)
and the versioned feature file.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from sklearn.decomposition import TruncatedSVD

from func.base_logger import logger
from func.clustering import ClusterModel, finetune
from func.kg_store import KnowledgeGraph
from data.configs import BinaryFormats, FeatureSettings, TrainingDefaults
from data.exceptions import DimensionError, FeatureFileError, ParameterError, VocabularyError

_HEADER = struct.Struct('<4sIIIII')


@dataclass(frozen=True)
class SparseFeatureVector:
    """
    Non-zero co-occurrence counts of one item. Iterates as (index, value) pairs in index order.
    """
    indices: tuple
    values: tuple
    length: int

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise DimensionError("Indices and values differ in length.")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise DimensionError("Indices must be strictly increasing.")
        if self.indices and self.indices[0] < 0:
            raise DimensionError("Indices must be non-negative.")
        if self.indices and self.indices[-1] >= self.length:
            raise DimensionError(f"Index {self.indices[-1]} out of range for length {self.length}.")
        if any(v <= 0 for v in self.values):
            raise DimensionError("Stored values must be positive.")

    def __iter__(self):
        return iter(zip(self.indices, self.values))

    def __len__(self):
        return len(self.indices)

    def total(self) -> float:
        return float(sum(self.values))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.length)
        dense[list(self.indices)] = self.values
        return dense

    @classmethod
    def from_row(cls, row) -> 'SparseFeatureVector':
        row = sparse.csr_matrix(row)
        row.sum_duplicates()
        row.eliminate_zeros()
        order = np.argsort(row.indices)
        return cls(tuple(int(i) for i in row.indices[order]), tuple(float(v) for v in row.data[order]), row.shape[1])


@dataclass(frozen=True)
class CooccurrenceMatrices:
    """
    Training-split contingency counts.

    entity_relation[e, r]: triples with relation r that contain e (a self loop counts once).
    entity_entity[e, e']: triples joining e and e' in either role (a self loop counts once).
    """
    entity_relation: sparse.csr_matrix
    entity_entity: sparse.csr_matrix

    def entity_rows(self) -> sparse.csr_matrix:
        # [entity-relation block (n_r)] ++ [entity-entity block (n_e)]
        return sparse.hstack([self.entity_relation, self.entity_entity], format='csr')

    def relation_rows(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.entity_relation.T)

    def relation_shares(self) -> sparse.csr_matrix:
        # Each entity's relation counts normalised to sum to 1 (all-zero rows stay zero)
        totals = np.asarray(self.entity_relation.sum(axis=1)).ravel()
        inverse = np.divide(1.0, totals, out=np.zeros_like(totals), where=totals > 0)
        return sparse.csr_matrix(sparse.diags(inverse) @ self.entity_relation)


def cooccurrence_matrices(kg: KnowledgeGraph) -> CooccurrenceMatrices:
    """
    Counts entity-relation and entity-entity contingencies over the training triples.
    :param kg: Knowledge graph.
    :return: CooccurrenceMatrices.
    """
    n_e, n_r = kg.n_entities, kg.n_relations
    triples = kg.split_array('train')
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    loop = h == t

    rows = np.concatenate([h, t[~loop]])
    cols = np.concatenate([r, r[~loop]])
    entity_relation = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_e, n_r))

    rows = np.concatenate([h, t[~loop]])
    cols = np.concatenate([t, h[~loop]])
    entity_entity = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_e, n_e))

    for matrix in (entity_relation, entity_entity):
        matrix.sum_duplicates()
    logger.info(f"Co-occurrence counts over {len(triples)} training triples: "
                f"{entity_relation.nnz} entity-relation and {entity_entity.nnz} entity-entity pairs")
    return CooccurrenceMatrices(entity_relation, entity_entity)


def cooccurrence_vector(item: int, kg: KnowledgeGraph, kind: str = 'entity',
                        matrices: CooccurrenceMatrices | None = None) -> SparseFeatureVector:
    """
    Raw co-occurrence vector of one entity or relation.
    :param item: Entity or relation id.
    :param kg: Knowledge graph.
    :param kind: 'entity' or 'relation'.
    :param matrices: Precomputed counts, built from kg when missing.
    :return: SparseFeatureVector of length n_r + n_e (entity) or n_e (relation).
    """
    matrices = matrices or cooccurrence_matrices(kg)
    if kind == 'entity':
        rows, bound = matrices.entity_rows(), kg.n_entities
    elif kind == 'relation':
        rows, bound = matrices.relation_rows(), kg.n_relations
    else:
        raise ParameterError(f"Unknown item kind {kind!r}")
    if not 0 <= item < bound:
        raise VocabularyError(f"{kind} id {item} out of range [0, {bound})")
    return SparseFeatureVector.from_row(rows[item])


def cluster_features(matrices: CooccurrenceMatrices, model: ClusterModel, kind: str = 'entity') -> np.ndarray:
    """
    Re-buckets every item's raw co-occurrence vector into the K clusters of its own kind.

    Entity x: a triple joining x to entity y adds one count to x's entity column y and one to
    its relation column; both land in the cluster of y. A self loop lands in x's own cluster.
    Relation r: the count of entity e in r's row is spread over relation clusters in proportion
    to e's own relation counts.

    Each row sums to the item's raw co-occurrence total.
    :param matrices: Training co-occurrence counts.
    :param model: Fitted clustering of the items of this kind.
    :param kind: 'entity' or 'relation'.
    :return: (n, K) non-negative float array.
    """
    if model is None or model.assignment is None:
        raise ParameterError("Cluster features need a fitted cluster model.")
    if kind == 'entity':
        n = matrices.entity_entity.shape[0]
    elif kind == 'relation':
        n = matrices.entity_relation.shape[1]
    else:
        raise ParameterError(f"Unknown item kind {kind!r}")
    if len(model.assignment) != n:
        raise DimensionError(f"Cluster model covers {len(model.assignment)} items, {n} {kind}s present")

    onehot = sparse.csr_matrix((np.ones(n), (np.arange(n), model.assignment)), shape=(n, model.K))
    if kind == 'entity':
        by_partner = matrices.entity_entity @ onehot
        aggregated = by_partner + by_partner  # entity column + relation column per triple
    else:
        aggregated = matrices.relation_rows() @ (matrices.relation_shares() @ onehot)
    return sparse.csr_matrix(aggregated).toarray()


@dataclass(frozen=True)
class EngineeredFeatures:
    entity_features: np.ndarray  # (n_e, C_E)
    relation_features: np.ndarray  # (n_r, C_R)
    entity_cluster: np.ndarray  # (n_e,)
    relation_cluster: np.ndarray  # (n_r,)

    def __post_init__(self):
        if self.entity_features.ndim != 2 or self.relation_features.ndim != 2:
            raise DimensionError("Feature arrays must be 2-D.")
        if len(self.entity_cluster) != self.entity_features.shape[0]:
            raise DimensionError("Entity cluster map does not cover every entity.")
        if len(self.relation_cluster) != self.relation_features.shape[0]:
            raise DimensionError("Relation cluster map does not cover every relation.")
        if np.any(self.entity_features < 0) or np.any(self.relation_features < 0):
            raise DimensionError("Engineered features must be non-negative.")
        if len(self.entity_cluster) and self.entity_cluster.max() >= self.C_E:
            raise DimensionError("Entity cluster id exceeds C_E.")
        if len(self.relation_cluster) and self.relation_cluster.max() >= self.C_R:
            raise DimensionError("Relation cluster id exceeds C_R.")

    def __str__(self):
        return (f"EngineeredFeatures(n_e={self.n_entities}, n_r={self.n_relations}, "
                f"C_E={self.C_E}, C_R={self.C_R})")

    @property
    def n_entities(self) -> int:
        return self.entity_features.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_features.shape[0]

    @property
    def C_E(self) -> int:
        return self.entity_features.shape[1]

    @property
    def C_R(self) -> int:
        return self.relation_features.shape[1]


def scale_features(features: np.ndarray, how: str = TrainingDefaults.FEATURE_SCALE) -> np.ndarray:
    """
    Scaling applied to raw counts when they become the frozen diagonal weights.
    :param features: Non-negative count array.
    :param how: none | log1p | max.
    :return: Scaled copy.
    """
    if how == 'none':
        return features.astype(np.float64)
    if how == 'log1p':
        return np.log1p(features)
    if how == 'max':
        peak = features.max() if features.size else 0.0
        return features / peak if peak > 0 else features.astype(np.float64)
    raise ParameterError(f"Unknown feature scaling {how!r}")


def pca_features(raw, k: int, seed: int) -> np.ndarray:
    """
    Truncated-SVD reduction of raw co-occurrence rows, each column shifted to start at 0.
    Columns beyond the reducible rank are left zero.
    :param raw: (n, d) co-occurrence rows.
    :param k: Target dimension.
    :param seed: SVD seed.
    :return: (n, k) non-negative array.
    """
    n, d = raw.shape
    reducible = min(k, d - 1, n - 1)
    reduced = np.zeros((n, k))
    if reducible < k:
        logger.warning(f"PCA reduction to {k} columns only has rank room for {max(reducible, 0)}; padding with zeros.")
    if reducible >= 1:
        svd = TruncatedSVD(n_components=reducible, random_state=seed)
        reduced[:, :reducible] = svd.fit_transform(raw)
    return reduced - reduced.min(axis=0, keepdims=True)


def featurize(kg: KnowledgeGraph, seed: int, methods=(TrainingDefaults.FEATURE_METHOD,),
              kernels=(TrainingDefaults.FEATURE_KERNEL,), entity_ks=(TrainingDefaults.DIMS_ENTITY,),
              relation_ks=(TrainingDefaults.DIMS_RELATION,),
              n_neighbors: int = TrainingDefaults.KNN_NEIGHBORS) -> tuple[EngineeredFeatures, list[dict]]:
    """
    Clusters entities and relations by their co-occurrence vectors with the center-variance
    fine-tuner, then aggregates co-occurrence counts by the selected clusters.
    :param kg: Knowledge graph.
    :param seed: Clustering seed.
    :param methods: Candidate clustering methods.
    :param kernels: Candidate kernels.
    :param entity_ks: Candidate entity cluster counts.
    :param relation_ks: Candidate relation cluster counts.
    :param n_neighbors: Neighbours for nn kernel / knn_graph.
    :return: Engineered features and one report row per evaluated grid point.
    """
    matrices = cooccurrence_matrices(kg)
    report = []

    entity_setting, entity_model, entity_grid = finetune(matrices.entity_rows(), methods, kernels, entity_ks,
                                                         seed, n_neighbors)
    logger.info(f"Entity clustering selected {entity_setting}: {entity_model}")
    report += [{'kind': 'entity', **point.__dict__} for point in entity_grid]

    relation_setting, relation_model, relation_grid = finetune(matrices.relation_rows(), methods, kernels,
                                                               relation_ks, seed, n_neighbors)
    logger.info(f"Relation clustering selected {relation_setting}: {relation_model}")
    report += [{'kind': 'relation', **point.__dict__} for point in relation_grid]

    features = EngineeredFeatures(entity_features=cluster_features(matrices, entity_model, 'entity'),
                                  relation_features=cluster_features(matrices, relation_model, 'relation'),
                                  entity_cluster=entity_model.assignment,
                                  relation_cluster=relation_model.assignment)
    return features, report


def featurize_paper_grid(kg: KnowledgeGraph, seed: int) -> tuple[EngineeredFeatures, list[dict]]:
    """Full fine-tuner grid: every method and kernel with the published cluster-count grids."""
    return featurize(kg, seed, FeatureSettings.METHODS, FeatureSettings.KERNELS,
                     FeatureSettings.ENTITY_KS, FeatureSettings.RELATION_KS)


def pca_engineered(kg: KnowledgeGraph, clustered: EngineeredFeatures, seed: int) -> EngineeredFeatures:
    """
    PCA-reduced raw vectors in place of the cluster-aggregated ones. Cluster maps stay those of
    the clustered features so the cluster biases keep their meaning.
    """
    matrices = cooccurrence_matrices(kg)
    return EngineeredFeatures(entity_features=pca_features(matrices.entity_rows(), clustered.C_E, seed),
                              relation_features=pca_features(matrices.relation_rows(), clustered.C_R, seed),
                              entity_cluster=clustered.entity_cluster,
                              relation_cluster=clustered.relation_cluster)


def save_features(features: EngineeredFeatures, path: Path):
    """
    Writes the feature file: header (magic, version, n_e, n_r, C_E, C_R; u32 little-endian),
    float32 entity then relation features row-major, then u32 entity and relation cluster ids.
    """
    with open(path, 'wb') as file:
        file.write(_HEADER.pack(BinaryFormats.FEATURE_MAGIC, BinaryFormats.FEATURE_VERSION, features.n_entities,
                                features.n_relations, features.C_E, features.C_R))
        file.write(features.entity_features.astype('<f4').tobytes())
        file.write(features.relation_features.astype('<f4').tobytes())
        file.write(features.entity_cluster.astype('<u4').tobytes())
        file.write(features.relation_cluster.astype('<u4').tobytes())
    logger.info(f"Saved {features} to {path}")


def load_features(path: Path) -> EngineeredFeatures:
    """
    Reads a feature file written by save_features.
    :param path: Feature file.
    :return: EngineeredFeatures (float64 in memory).
    """
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FeatureFileError(f"Cannot read feature file {path}: {e}") from e
    if len(payload) < _HEADER.size:
        raise FeatureFileError(f"Feature file {path} is truncated.")

    magic, version, n_e, n_r, c_e, c_r = _HEADER.unpack_from(payload)
    if magic != BinaryFormats.FEATURE_MAGIC:
        raise FeatureFileError(f"{path} is not a feature file (magic {magic!r}).")
    if version != BinaryFormats.FEATURE_VERSION:
        raise FeatureFileError(f"Unsupported feature file version {version}.")

    sizes = [(n_e * c_e, '<f4'), (n_r * c_r, '<f4'), (n_e, '<u4'), (n_r, '<u4')]
    if len(payload) != _HEADER.size + 4 * sum(count for count, _ in sizes):
        raise FeatureFileError(f"Feature file {path} has {len(payload)} bytes, header disagrees.")

    arrays, offset = [], _HEADER.size
    for count, dtype in sizes:
        arrays.append(np.frombuffer(payload, dtype=dtype, count=count, offset=offset))
        offset += 4 * count

    try:
        return EngineeredFeatures(entity_features=arrays[0].reshape(n_e, c_e).astype(np.float64),
                                  relation_features=arrays[1].reshape(n_r, c_r).astype(np.float64),
                                  entity_cluster=arrays[2].astype(np.int64),
                                  relation_cluster=arrays[3].astype(np.int64))
    except DimensionError as e:
        raise FeatureFileError(f"Feature file {path} is inconsistent: {e}") from e
