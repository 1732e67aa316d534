"""Dense numeric helpers: validation, temperature softmax, cross-entropy and
row normalization.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every public
function returns a fresh array and never mutates its inputs.
"""
import numpy as np

from .errors import ContractError, InvalidBatchError, NumericError, ParameterError

#: Floor applied to probabilities before taking a logarithm.
LOG_EPS = 1e-12
#: Row sums below this are treated as zero by :func:`row_normalize`.
DEGENERATE_ROW_SUM = 1e-30


def as_matrix(a, name="matrix", rows=None, cols=None):
    """Return ``a`` as a 2-D float64 array, checking shape and finiteness."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ContractError(f"{name} must have {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ContractError(f"{name} must have {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def as_labels(y, n, m=None, name="labels"):
    labels = np.asarray(y)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ContractError(f"{name} must be a vector of length {n}, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ContractError(f"{name} must be integers")
    labels = labels.astype(np.int64)
    if m is not None and labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ContractError(f"{name} must lie in [0, {m})")
    return labels


def is_row_stochastic(x, tol=1e-9):
    x = np.asarray(x)
    return bool(
        x.ndim == 2
        and np.all(x >= -tol)
        and np.all(x <= 1 + tol)
        and np.all(np.abs(x.sum(axis=1) - 1.0) <= tol)
    )


def softmax_with_temperature(logits, temperature=1.0):
    """Row-wise softmax of ``logits / temperature``.

    The per-row maximum is subtracted before exponentiating, so large logits
    do not overflow.

    Parameters
    ----------
    logits : array_like, shape (n, m)
    temperature : float
        Strictly positive. Values above 1 flatten the distribution, values
        below 1 sharpen it.

    Returns
    -------
    ndarray, shape (n, m)
        Row-stochastic assignment matrix.
    """
    if not np.isfinite(temperature) or temperature <= 0:
        raise ParameterError(f"temperature must be positive and finite, got {temperature!r}")
    z = as_matrix(logits, "logits") / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(x, y, mask=None):
    """Mean of ``-log(max(x[i, y[i]], LOG_EPS))`` over rows selected by ``mask``.

    ``mask`` is a boolean vector, True for rows that contribute (the
    non-anchor rows). ``None`` selects every row.
    """
    x = as_matrix(x, "assignments")
    n, m = x.shape
    y = as_labels(y, n, m)
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ContractError(f"mask must have shape ({n},), got {mask.shape}")
    if not mask.any():
        raise InvalidBatchError("every row is masked out; no loss to compute")
    picked = x[np.flatnonzero(mask), y[mask]]
    return float(np.mean(-np.log(np.maximum(picked, LOG_EPS))))


def row_normalize(m, fallback):
    """Divide each row by its sum.

    Rows whose sum is below ``DEGENERATE_ROW_SUM`` are replaced by the matching
    row of ``fallback`` instead of being divided by (almost) zero.
    """
    m = as_matrix(m, "matrix")
    fallback = as_matrix(fallback, "fallback", rows=m.shape[0], cols=m.shape[1])
    if np.any(m < 0):
        raise ContractError("row_normalize requires a non-negative matrix")
    s = m.sum(axis=1, keepdims=True)
    degenerate = s[:, 0] < DEGENERATE_ROW_SUM
    out = m / np.where(degenerate[:, None], 1.0, s)
    out[degenerate] = fallback[degenerate]
    return out


def one_hot(y, m):
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.shape[0], m))
    out[np.arange(y.shape[0]), y] = 1.0
    return out
