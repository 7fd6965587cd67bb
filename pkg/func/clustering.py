"""Kernels, clustering methods and the center-variance fine-tuner over feature vectors."""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh
from scipy.special import expit
from sklearn.metrics import pairwise
from sklearn.neighbors import kneighbors_graph
from sklearn.preprocessing import normalize

from func.base_logger import logger
from data.configs import FeatureSettings, TrainingDefaults
from data.exceptions import ConfigurationError, DimensionError, ParameterError

# Above this many items the spectral embedding switches from dense eigh to eigsh
_DENSE_EIGEN_LIMIT = 2000


@dataclass(frozen=True)
class ClusterModel:
    """
    A fitted clustering. Centers live in the space the method clustered in
    (kernel rows, raw vectors or spectral embedding).
    """
    method: str
    kernel: str
    K: int
    centers: np.ndarray
    assignment: np.ndarray
    center_variance: float
    n_iter: int = 0
    objective_trace: tuple = field(default=(), repr=False)

    def __str__(self):
        return f"ClusterModel({self.method}/{self.kernel}, K={self.K}, V={self.center_variance:.6g})"


def _as_dense(matrix) -> np.ndarray:
    if sparse.issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=np.float64)


def _check_rows(X):
    if isinstance(X, (list, tuple)):
        lengths = {len(row) for row in X}
        if len(lengths) > 1:
            raise DimensionError(f"Feature vectors have different lengths: {sorted(lengths)}")
        X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"Expected a 2-D feature matrix, got shape {X.shape}")
    return X.astype(np.float64) if not sparse.issparse(X) else sparse.csr_matrix(X, dtype=np.float64)


def mutual_knn_adjacency(X, n_neighbors: int = TrainingDefaults.KNN_NEIGHBORS) -> sparse.csr_matrix:
    """
    Mutual k-nearest-neighbour adjacency with ones on the diagonal.
    :param X: Feature rows (dense or sparse).
    :param n_neighbors: Neighbours per item.
    :return: Symmetric sparse 0/1 matrix.
    """
    n = X.shape[0]
    if n < 2:
        return sparse.identity(n, format='csr', dtype=np.float64)
    graph = kneighbors_graph(X, n_neighbors=min(n_neighbors, n - 1), mode='connectivity', include_self=False)
    mutual = graph.minimum(graph.T)
    return sparse.csr_matrix(mutual + sparse.identity(n, format='csr'), dtype=np.float64)


def kernel_matrix(X, kernel: str, n_neighbors: int = TrainingDefaults.KNN_NEIGHBORS):
    """
    Square kernel matrix over the rows of X.

    rbf: exp(-||x_i - x_j||^2); sigmoid: 1 / (1 + exp(-x_i.x_j)); polynomial: x_i.x_j + 1;
    linear: x_i.x_j; cosine: x_i.x_j / (||x_i|| ||x_j||), 0 for a zero vector;
    nn: mutual kNN adjacency (sparse).
    :param X: (n, d) feature rows, dense or sparse.
    :param kernel: Kernel name.
    :param n_neighbors: Neighbours for the nn kernel.
    :return: (n, n) matrix.
    """
    X = _check_rows(X)
    if kernel == 'rbf':
        K = pairwise.rbf_kernel(X, gamma=1.0)
    elif kernel == 'sigmoid':
        K = expit(_as_dense(X @ X.T))
    elif kernel == 'polynomial':
        K = pairwise.polynomial_kernel(X, degree=1, gamma=1.0, coef0=1.0)
    elif kernel == 'linear':
        K = _as_dense(pairwise.linear_kernel(X))
    elif kernel == 'cosine':
        K = pairwise.cosine_similarity(X)
    elif kernel == 'nn':
        return mutual_knn_adjacency(X, n_neighbors)
    else:
        raise ParameterError(f"Unknown kernel {kernel!r}")
    K = np.asarray(K, dtype=np.float64)
    return (K + K.T) / 2.0


def kernel_rows(X, kernel: str, n_neighbors: int = TrainingDefaults.KNN_NEIGHBORS):
    """
    The rows a clustering method runs on: kernel matrix rows, or X itself for kernel 'none'.
    """
    if kernel == 'none':
        return _check_rows(X)
    return kernel_matrix(X, kernel, n_neighbors)


def center_variance(model_or_centers) -> float:
    """
    Per-dimension population variance of the cluster centers, summed over dimensions.
    :param model_or_centers: ClusterModel or (K, d) array of centers.
    :return: Non-negative scalar.
    """
    centers = model_or_centers.centers if isinstance(model_or_centers, ClusterModel) else model_or_centers
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] == 0:
        return 0.0
    return float(np.var(centers, axis=0).sum())


def _squared_distances(rows, sq_norms: np.ndarray, centers: np.ndarray) -> np.ndarray:
    cross = rows @ centers.T
    d2 = sq_norms[:, None] - 2.0 * _as_dense(cross) + np.einsum('kd,kd->k', centers, centers)[None, :]
    return np.maximum(d2, 0.0)


def _row_sq_norms(rows) -> np.ndarray:
    if sparse.issparse(rows):
        return np.asarray(rows.multiply(rows).sum(axis=1)).ravel()
    return np.einsum('nd,nd->n', rows, rows)


def _cluster_means(rows, labels: np.ndarray, K: int, fallback: np.ndarray) -> np.ndarray:
    n = rows.shape[0]
    indicator = sparse.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(K, n))
    sums = _as_dense(indicator @ rows)
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    means = fallback.copy()
    filled = counts > 0
    means[filled] = sums[filled] / counts[filled, None]
    return means


def farthest_point_seeds(rows, K: int, rng: np.random.Generator) -> np.ndarray:
    """
    Deterministic farthest-point seeding: a random first item, then repeatedly the item
    farthest from all chosen seeds (lowest index on ties, chosen items never repeat).
    :return: Seed item indices.
    """
    n = rows.shape[0]
    sq_norms = _row_sq_norms(rows)
    chosen = [int(rng.integers(n))]
    min_d2 = _squared_distances(rows, sq_norms, _as_dense(rows[chosen[0]:chosen[0] + 1])).ravel()
    min_d2[chosen[0]] = -1.0
    while len(chosen) < K:
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        d2 = _squared_distances(rows, sq_norms, _as_dense(rows[nxt:nxt + 1])).ravel()
        min_d2 = np.minimum(min_d2, d2)
        min_d2[chosen] = -1.0
    return np.array(chosen, dtype=np.int64)


def _reseed_empty(labels: np.ndarray, d2: np.ndarray, K: int) -> np.ndarray:
    """
    Moves the point farthest from its own center into each empty cluster.
    """
    labels = labels.copy()
    for empty in np.flatnonzero(np.bincount(labels, minlength=K) == 0):
        counts = np.bincount(labels, minlength=K)
        own = d2[np.arange(len(labels)), labels].copy()
        own[counts[labels] <= 1] = -1.0
        donor = int(np.argmax(own))
        labels[donor] = empty
        d2[donor, :] = np.inf
        d2[donor, empty] = 0.0
    return labels


def lloyd_kmeans(rows, K: int, rng: np.random.Generator, max_iter: int = FeatureSettings.KMEANS_MAX_ITER,
                 tol: float = FeatureSettings.KMEANS_TOL) -> tuple[np.ndarray, np.ndarray, int, list]:
    """
    Lloyd iterations from farthest-point seeds until relative center movement < tol.
    :param rows: (n, d) rows, dense or sparse.
    :param K: Cluster count.
    :param rng: Seeding generator.
    :param max_iter: Iteration cap.
    :param tol: Relative center movement tolerance.
    :return: labels, centers, iterations run, objective after each assignment step.
    """
    sq_norms = _row_sq_norms(rows)
    centers = _as_dense(rows[farthest_point_seeds(rows, K, rng)])
    objective = []
    labels = np.zeros(rows.shape[0], dtype=np.int64)
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        d2 = _squared_distances(rows, sq_norms, centers)
        labels = np.argmin(d2, axis=1)
        objective.append(float(d2[np.arange(len(labels)), labels].sum()))
        if np.any(np.bincount(labels, minlength=K) == 0):
            labels = _reseed_empty(labels, d2, K)
        new_centers = _cluster_means(rows, labels, K, centers)
        movement = np.linalg.norm(new_centers - centers) / max(np.linalg.norm(centers), np.finfo(float).tiny)
        centers = new_centers
        if movement < tol:
            break

    return labels, centers, n_iter, objective


def _spectral_embedding(rows, K: int, rng: np.random.Generator, is_affinity: bool) -> np.ndarray:
    if is_affinity and sparse.issparse(rows):
        affinity = sparse.csr_matrix(rows)
    else:
        affinity = np.maximum(_as_dense(rows) if is_affinity else pairwise.cosine_similarity(rows), 0.0)
    laplacian = csgraph.laplacian(affinity, normed=True)
    n = laplacian.shape[0]

    if n <= _DENSE_EIGEN_LIMIT or K >= n - 1:
        _, vectors = np.linalg.eigh(_as_dense(laplacian))
        embedding = vectors[:, :K]
    else:
        shifted = sparse.identity(n) - sparse.csr_matrix(laplacian)
        _, vectors = eigsh(shifted, k=K, which='LA', v0=rng.uniform(-1.0, 1.0, size=n))
        embedding = vectors[:, ::-1]

    # Sign flip so the largest-magnitude entry of each eigenvector is positive
    signs = np.sign(embedding[np.argmax(np.abs(embedding), axis=0), np.arange(embedding.shape[1])])
    signs[signs == 0] = 1.0
    return normalize(embedding * signs)


def _fuzzy_cmeans(rows, K: int, rng: np.random.Generator, m: float = FeatureSettings.FUZZY_M):
    X = _as_dense(rows)
    centers = X[farthest_point_seeds(X, K, rng)].copy()
    memberships = np.zeros((X.shape[0], K))
    n_iter = 0

    for n_iter in range(1, FeatureSettings.FUZZY_MAX_ITER + 1):
        distances = np.sqrt(_squared_distances(X, _row_sq_norms(X), centers))
        distances = np.maximum(distances, 1e-12)
        inverse = distances ** (-2.0 / (m - 1.0))
        new_memberships = inverse / inverse.sum(axis=1, keepdims=True)
        weights = new_memberships ** m
        centers = (weights.T @ X) / weights.sum(axis=0)[:, None]
        change = np.abs(new_memberships - memberships).max()
        memberships = new_memberships
        if change < FeatureSettings.FUZZY_TOL:
            break

    labels = np.argmax(memberships, axis=1)
    if np.any(np.bincount(labels, minlength=K) == 0):
        d2 = _squared_distances(X, _row_sq_norms(X), centers)
        labels = _reseed_empty(labels, d2, K)
        centers = _cluster_means(X, labels, K, centers)
    return labels, centers, n_iter


def _knn_graph_clusters(rows, K: int, rng: np.random.Generator, n_neighbors: int):
    """
    Connected components of the mutual kNN graph, merged (smallest into one) or
    split (largest by 2-means) until exactly K clusters remain.
    """
    n = rows.shape[0]
    _, components = csgraph.connected_components(mutual_knn_adjacency(rows, n_neighbors), directed=False)
    groups = [np.flatnonzero(components == c) for c in np.unique(components)]
    groups.sort(key=lambda members: (-len(members), members[0]))

    if len(groups) > K:
        merged = np.sort(np.concatenate(groups[K - 1:]))
        groups = groups[:K - 1] + [merged]
    while len(groups) < K:
        largest = groups.pop(0)
        split_labels, _, _, _ = lloyd_kmeans(rows[largest], 2, rng)
        groups += [largest[split_labels == 0], largest[split_labels == 1]]
        groups.sort(key=lambda members: (-len(members), members[0]))

    labels = np.empty(n, dtype=np.int64)
    for cluster, members in enumerate(groups):
        labels[members] = cluster
    centers = _cluster_means(rows, labels, K, np.zeros((K, rows.shape[1])))
    return labels, centers


def _fit(rows, method: str, kernel: str, K: int, seed: int, n_neighbors: int) -> ClusterModel:
    # rows already went through kernel_rows
    rng = np.random.default_rng(seed)
    objective = []
    n_iter = 0

    if method == 'kmeans':
        labels, centers, n_iter, objective = lloyd_kmeans(rows, K, rng)
    elif method == 'spectral_kmeans':
        embedding = _spectral_embedding(rows, K, rng, is_affinity=kernel != 'none')
        labels, centers, n_iter, objective = lloyd_kmeans(embedding, K, rng)
    elif method == 'fuzzy_cmeans':
        labels, centers, n_iter = _fuzzy_cmeans(rows, K, rng)
    elif method == 'knn_graph':
        labels, centers = _knn_graph_clusters(rows, K, rng, n_neighbors)
    else:
        raise ParameterError(f"Unknown clustering method {method!r}")

    return ClusterModel(method=method, kernel=kernel, K=K, centers=centers,
                        assignment=np.asarray(labels, dtype=np.int64), center_variance=center_variance(centers),
                        n_iter=n_iter, objective_trace=tuple(objective))


def fit_clusters(X, method: str, kernel: str, K: int, seed: int,
                 n_neighbors: int = TrainingDefaults.KNN_NEIGHBORS) -> ClusterModel:
    """
    Clusters the rows of X after the kernel transform.
    :param X: (n, d) feature rows, dense or sparse.
    :param method: kmeans | spectral_kmeans | fuzzy_cmeans | knn_graph.
    :param kernel: rbf | sigmoid | polynomial | linear | cosine | nn | none.
    :param K: Cluster count, 1 <= K <= n.
    :param seed: Seed for the initialisation.
    :param n_neighbors: Neighbours for the nn kernel and the knn_graph method.
    :return: Fitted ClusterModel.
    """
    n = X.shape[0] if not isinstance(X, (list, tuple)) else len(X)
    if not 1 <= K <= n:
        raise ParameterError(f"Cluster count K={K} must be between 1 and the item count {n}.")
    if method not in FeatureSettings.METHODS:
        raise ParameterError(f"Unknown clustering method {method!r}")
    return _fit(kernel_rows(X, kernel, n_neighbors), method, kernel, K, seed, n_neighbors)


@dataclass(frozen=True)
class GridPoint:
    """One evaluated fine-tuner setting."""
    method: str
    kernel: str
    K: int
    center_variance: float
    selected: bool = False


def finetune(X, methods, kernels, Ks, seed: int,
             n_neighbors: int = TrainingDefaults.KNN_NEIGHBORS) -> tuple[tuple, ClusterModel, list[GridPoint]]:
    """
    Exhaustive grid search over (method, kernel, K), keeping the setting with the largest
    center variance. Ties keep the earlier grid point. K larger than the item count is skipped.
    :param X: (n, d) feature rows.
    :param methods: Clustering methods.
    :param kernels: Kernels.
    :param Ks: Cluster counts.
    :param seed: Seed shared by every grid point.
    :param n_neighbors: Neighbours for nn kernel / knn_graph.
    :return: Best (method, kernel, K), its model, and one GridPoint per evaluated setting.
    """
    n = X.shape[0] if not isinstance(X, (list, tuple)) else len(X)
    best_setting, best_model, v_max = None, None, -np.inf
    report = []
    rows_cache = {}

    for method in methods:
        if method not in FeatureSettings.METHODS:
            raise ParameterError(f"Unknown clustering method {method!r}")
        for kernel in kernels:
            for K in Ks:
                if K > n:
                    logger.warning(f"Skipping grid point {method}/{kernel}/K={K}: only {n} items.")
                    continue
                if kernel not in rows_cache:
                    rows_cache[kernel] = kernel_rows(X, kernel, n_neighbors)
                model = _fit(rows_cache[kernel], method, kernel, K, seed, n_neighbors)
                v = model.center_variance
                logger.info(f"Grid point {method}/{kernel}/K={K}: center variance {v:.6g}")
                report.append(GridPoint(method, kernel, K, v))
                if v > v_max:
                    best_setting, best_model, v_max = (method, kernel, K), model, v
                elif v == v_max:
                    logger.warning(f"Tie at center variance {v:.6g} between {best_setting} and "
                                   f"{(method, kernel, K)}; keeping the first.")

    if best_model is None:
        raise ConfigurationError(f"Every grid point was skipped (item count {n}, Ks {list(Ks)}).")

    report = [replace(p, selected=(p.method, p.kernel, p.K) == best_setting) for p in report]
    return best_setting, best_model, report
