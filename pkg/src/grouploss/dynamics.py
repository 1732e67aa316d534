"""Replicator-dynamics refinement of soft label assignments.

Starting from a prior ``X(0)`` (temperature softmax of the classifier logits,
with anchor rows overwritten by their one-hot labels), each step computes the
support ``Pi = W @ X`` and moves every row towards the labels whose support
beats the row's average support::

    X(t+1) = (X(t) * Pi(t)) / rowsum(X(t) * Pi(t))

For non-negative ``W`` this never decreases the consistency
``F(X) = sum_ij sum_l w_ij x_il x_jl``.
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import DEGENERATE_ROW_SUM, as_labels, as_matrix, one_hot, softmax_with_temperature

DEFAULT_ITERATIONS = 3
MAX_ITERATIONS = 50

#: Instrumentation: how often the refinement entry points ran in this process.
call_counts = Counter()


@dataclass(frozen=True)
class AnchorSpec:
    """Rows whose assignment is pinned to the one-hot of their true label."""

    indices: tuple = ()
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def none(cls, labels=()):
        return cls((), np.asarray(labels, dtype=np.int64))

    @classmethod
    def from_mask(cls, mask, labels):
        return cls(tuple(int(i) for i in np.flatnonzero(mask)), np.asarray(labels, dtype=np.int64))

    def mask(self, n):
        out = np.zeros(n, dtype=bool)
        if self.indices:
            out[list(self.indices)] = True
        return out

    def validate(self, n, m):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ContractError(f"anchor index out of range [0, {n})")
        if len(set(self.indices)) != len(self.indices):
            raise ContractError("duplicate anchor index")
        if idx.size:
            as_labels(self.labels, n, m, "anchor labels")

    def max_per_class(self):
        if not self.indices:
            return 0
        return int(np.bincount(np.asarray(self.labels)[list(self.indices)]).max())


@dataclass(frozen=True)
class RefinementTrace:
    X_history: list
    Pi_history: list
    W: np.ndarray

    @property
    def final(self):
        return self.X_history[-1]


def _anchor_mask(anchors, n, m):
    if anchors is None or not anchors.indices:
        return np.zeros(n, dtype=bool)
    anchors.validate(n, m)
    return anchors.mask(n)


def init_assignments(logits, anchors=None, temperature=1.0):
    """Prior assignment matrix ``X(0)``.

    Non-anchor rows are the temperature softmax of ``logits``; anchor rows are
    exactly one-hot at the anchor's label.
    """
    x = softmax_with_temperature(logits, temperature)
    n, m = x.shape
    mask = _anchor_mask(anchors, n, m)
    if mask.any():
        x[mask] = one_hot(np.asarray(anchors.labels)[mask], m)
    return x


def support(W, X):
    """Support matrix ``Pi = W @ X``; ``Pi[i, l]`` is how strongly the batch
    endorses label ``l`` for sample ``i``."""
    X = as_matrix(X, "X")
    W = as_matrix(W, "W", rows=X.shape[0], cols=X.shape[0])
    return W @ X


def _step(X, W, frozen):
    pi = W @ X
    p = X * pi
    q = p.sum(axis=1)
    keep = frozen | (q < DEGENERATE_ROW_SUM)
    out = p / np.where(keep, 1.0, q)[:, None]
    out[keep] = X[keep]
    return out, pi


def replicator_step(X, W, anchors=None):
    """One multi-population replicator update.

    Anchor rows, and rows whose normalizer ``sum_l x_il pi_il`` vanishes, are
    copied through unchanged.
    """
    X = as_matrix(X, "X")
    n, m = X.shape
    W = as_matrix(W, "W", rows=n, cols=n)
    call_counts["replicator_step"] += 1
    out, _ = _step(X, W, _anchor_mask(anchors, n, m))
    return out


def refine(X0, W, anchors=None, iteration_count=DEFAULT_ITERATIONS):
    """Run ``iteration_count`` replicator steps, recording every ``X(t)`` and ``Pi(t)``."""
    if iteration_count < 0:
        raise ContractError(f"iteration_count must be >= 0, got {iteration_count}")
    X = as_matrix(X0, "X0")
    n, m = X.shape
    W = as_matrix(W, "W", rows=n, cols=n)
    frozen = _anchor_mask(anchors, n, m)
    call_counts["refine"] += 1
    xs, pis = [X], []
    for _ in range(int(iteration_count)):
        X, pi = _step(X, W, frozen)
        xs.append(X)
        pis.append(pi)
    return RefinementTrace(xs, pis, W)


def consistency(X, W):
    """``F(X) = sum_ij sum_l w_ij x_il x_jl``."""
    X = as_matrix(X, "X")
    W = as_matrix(W, "W", rows=X.shape[0], cols=X.shape[0])
    return float(np.sum(W * (X @ X.T)))
