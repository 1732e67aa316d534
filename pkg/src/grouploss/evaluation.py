"""Inference-time evaluation: L2-normalized embeddings, Recall@K, K-means and NMI.

Nothing here touches the refinement dynamics; retrieval and clustering run
on the encoder's embeddings directly.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, ParameterError
from .model import encode
from .tensor import as_matrix

DEFAULT_KS = (1, 2, 4, 8)


class ZeroRowWarning(UserWarning):
    pass


def l2_normalize(embeddings):
    e = as_matrix(embeddings, "embeddings")
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    zero = norms[:, 0] == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero embedding row(s) left unnormalized", ZeroRowWarning, stacklevel=2)
    return e / np.where(zero[:, None], 1.0, norms)


def neighbor_order(embeddings, k):
    """Indices of the ``k`` nearest other rows of every row (Euclidean), ties
    broken towards the lower index."""
    e = as_matrix(embeddings, "embeddings")
    dist = cdist(e, e, "sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def recall_at_k(embeddings, labels, ks=DEFAULT_KS):
    """Fraction of queries whose ``K`` nearest neighbours (self excluded)
    include a sample of the same class, for every ``K`` in ``ks``."""
    e = as_matrix(embeddings, "embeddings")
    labels = np.asarray(labels)
    n = e.shape[0]
    if labels.shape != (n,):
        raise ContractError("one label per embedding row required")
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] <= 0:
        raise ParameterError("every K must be positive")
    if ks[-1] >= n:
        raise ParameterError(f"K={ks[-1]} needs at least {ks[-1] + 1} samples, got {n}")
    hits = labels[neighbor_order(e, ks[-1])] == labels[:, None]
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), ks[-1])
    return {k: float(np.mean(first_hit < k)) for k in ks}


# k-means ------------------------------------------------------------------------

def _sq_dists(x, centers):
    return cdist(x, centers, "sqeuclidean")


def _seed_centers(x, k, rng):
    """Greedy k-means++: uniform first center, then among a few D^2-sampled
    candidates keep the one that lowers the potential most."""
    n = x.shape[0]
    trials = 2 + int(np.log(k))
    centers = [int(rng.integers(n))]
    closest = _sq_dists(x, x[centers])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), centers)
            pick = int(rng.choice(remaining)) if remaining.size else int(rng.integers(n))
            centers.append(pick)
            continue
        cand = np.searchsorted(np.cumsum(closest), rng.uniform(0, total, size=trials))
        cand = np.minimum(cand, n - 1)
        cand_d = np.minimum(closest[None, :], _sq_dists(x[cand], x))
        best = int(np.argmin(cand_d.sum(axis=1)))
        centers.append(int(cand[best]))
        closest = cand_d[best]
    return x[centers].copy()


def _lloyd(x, centers, max_iter):
    labels = None
    k = centers.shape[0]
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # re-seed empty clusters at the points farthest from their centers
            point_d = d[np.arange(x.shape[0]), labels].copy()
            for c in empty:
                far = int(np.argmax(point_d))
                centers[c] = x[far]
                labels[far] = c
                point_d[far] = -1.0
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        centers = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centers)
    inertia = float(_sq_dists(x, centers)[np.arange(x.shape[0]), labels].sum())
    return labels, centers, inertia


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float


def kmeans_fit(embeddings, k, seed=0, n_init=10, max_iter=300):
    x = as_matrix(embeddings, "embeddings")
    if k <= 0:
        raise ParameterError(f"k must be positive, got {k}")
    if k > x.shape[0]:
        raise ParameterError(f"k={k} exceeds the number of points {x.shape[0]}")
    best = None
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_init)):
        labels, centers, inertia = _lloyd(x, _seed_centers(x, k, rng), max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia)
    return best


def kmeans(embeddings, k, seed=0, n_init=10, max_iter=300):
    """Cluster assignment of the best of ``n_init`` seeded Lloyd runs."""
    return kmeans_fit(embeddings, k, seed, n_init, max_iter).labels


# NMI ----------------------------------------------------------------------------

def _canonical(a):
    # relabel by order of first appearance so the result does not depend on ids
    _, first, inverse = np.unique(a, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse.ravel()], first.size


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(assignment, labels):
    """Normalized mutual information ``I(A; Y) / sqrt(H(A) H(Y))`` (natural log)."""
    a, b = np.asarray(assignment), np.asarray(labels)
    if a.ndim != 1 or a.shape != b.shape:
        raise ContractError(f"partitions must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ContractError("partitions must be non-empty")
    a, ka = _canonical(a)
    b, kb = _canonical(b)
    n = a.size
    table = np.zeros((ka, kb))
    np.add.at(table, (a, b), 1.0)
    ra, rb = table.sum(axis=1), table.sum(axis=0)
    ha, hb = _entropy(ra, n), _entropy(rb, n)
    if ha == 0.0 or hb == 0.0:
        return 1.0 if ha == hb else 0.0
    i, j = np.nonzero(table)
    nij = table[i, j]
    mi = float(np.sum(nij / n * (np.log(nij) + np.log(n) - np.log(ra[i]) - np.log(rb[j]))))
    return float(min(max(mi / np.sqrt(ha * hb), 0.0), 1.0))


# report -------------------------------------------------------------------------

@dataclass
class EvalReport:
    recall_at: dict
    nmi: float
    n_queries: int
    config: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"n_queries={self.n_queries}"]
        lines += [f"recall@{k}={v:.6f}" for k, v in sorted(self.recall_at.items())]
        lines.append(f"nmi={self.nmi:.6f}")
        lines += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        recall, cfg, nmi_value, n = {}, {}, None, None
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key.startswith("recall@"):
                recall[int(key[7:])] = float(value)
            elif key == "nmi":
                nmi_value = float(value)
            elif key == "n_queries":
                n = int(value)
            elif key.startswith("config."):
                cfg[key[7:]] = value
        return cls(recall, nmi_value, n, cfg)


def evaluate(encoder, dataset, ks=DEFAULT_KS, k_clusters=None, seed=0, n_init=10):
    """Embed ``dataset``, L2-normalize, then Recall@K and K-means NMI.

    ``k_clusters`` defaults to the number of classes in ``dataset``.
    """
    if len(dataset) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    emb, _ = encode(encoder, dataset.features)
    emb = l2_normalize(emb)
    k_clusters = dataset.num_classes if k_clusters is None else k_clusters
    recall = recall_at_k(emb, dataset.labels, ks)
    clusters = kmeans(emb, k_clusters, seed=seed, n_init=n_init)
    return EvalReport(
        recall,
        nmi(clusters, dataset.labels),
        len(dataset),
        {"ks": ",".join(str(k) for k in sorted(recall)), "k_clusters": k_clusters, "kmeans_seed": seed},
    )
