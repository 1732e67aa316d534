"""Pearson-correlation similarity between embedding rows.

Correlations live in [-1, 1], while the replicator update needs a
non-negative matrix. Two remedies are offered through :class:`NegativeMode`:
``CLAMP`` zeroes negative entries (a rectifier on the correlation matrix),
``SHIFT`` subtracts the most negative off-diagonal entry from all of them.
"""
import enum
import warnings

import numpy as np

from .errors import ContractError
from .tensor import as_matrix

#: Rows whose (population) variance is below this are treated as constant.
DEGENERATE_VARIANCE = 1e-30


class NegativeMode(str, enum.Enum):
    CLAMP = "clamp"
    SHIFT = "shift"


class DegenerateRowWarning(UserWarning):
    """An embedding row is constant, so its correlations are undefined."""


def standardize_rows(embeddings):
    """Center each row and scale it to unit population variance.

    Returns ``(u, scale, degenerate)`` where ``u[i] @ u[i] == d`` for every
    non-degenerate row, ``scale`` holds the per-row standard deviations and
    ``degenerate`` flags rows with variance below ``DEGENERATE_VARIANCE``
    (those rows of ``u`` are zero).
    """
    z = embeddings - embeddings.mean(axis=1, keepdims=True)
    var = np.mean(z * z, axis=1)
    degenerate = var < DEGENERATE_VARIANCE
    scale = np.sqrt(np.where(degenerate, 1.0, var))
    u = z / scale[:, None]
    u[degenerate] = 0.0
    return u, scale, degenerate


def _check_embeddings(embeddings):
    e = as_matrix(embeddings, "embeddings")
    n, d = e.shape
    if n < 2 or d < 2:
        raise ContractError(f"need at least 2 rows and 2 columns, got {e.shape}")
    return e


def pearson_correlation(embeddings, warn=True):
    """Raw Pearson correlation between rows, with a zero diagonal.

    Entries involving a constant row are 0. Returns ``(c, degenerate)``.
    """
    e = _check_embeddings(embeddings)
    u, _, degenerate = standardize_rows(e)
    if warn and degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} embedding row(s) have zero variance; "
            "their similarities are set to 0",
            DegenerateRowWarning,
            stacklevel=3,
        )
    c = (u @ u.T) / e.shape[1]
    # exact symmetry; the BLAS product is not guaranteed to be
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 0.0)
    return c, degenerate


def _offdiag_argmin(c):
    masked = c.copy()
    np.fill_diagonal(masked, np.inf)
    flat = int(np.argmin(masked))
    return divmod(flat, c.shape[0])


def apply_negative_mode(c, mode=NegativeMode.CLAMP, degenerate=None):
    """Make a zero-diagonal correlation matrix non-negative."""
    mode = NegativeMode(mode)
    n = c.shape[0]
    if mode is NegativeMode.CLAMP:
        w = np.maximum(c, 0.0)
    else:
        w = c.copy()
        if n > 1:
            i, j = _offdiag_argmin(c)
            lowest = c[i, j]
            if lowest < 0:
                w -= lowest
        np.fill_diagonal(w, 0.0)
    if degenerate is not None and degenerate.any():
        w[degenerate, :] = 0.0
        w[:, degenerate] = 0.0
    return w


def pearson_similarity(embeddings, mode=NegativeMode.CLAMP):
    """Similarity matrix ``W`` of a batch of embeddings.

    ``W[i, j]`` is the Pearson correlation of rows ``i`` and ``j`` computed over
    the feature dimensions (population convention), made non-negative
    according to ``mode``. The diagonal is zero. A constant row has zero
    similarity to everything and triggers a :class:`DegenerateRowWarning`.
    """
    c, degenerate = pearson_correlation(embeddings)
    return apply_negative_mode(c, mode, degenerate)


def pearson_correlation_vjp(embeddings, upstream):
    """Gradient w.r.t. ``embeddings`` of ``sum(upstream * C)``, C the raw correlation."""
    e = as_matrix(embeddings, "embeddings")
    n, d = e.shape
    g = as_matrix(upstream, "upstream", rows=n, cols=n).copy()
    np.fill_diagonal(g, 0.0)
    u, scale, degenerate = standardize_rows(e)
    du = (g + g.T) @ u / d
    proj = np.sum(u * du, axis=1, keepdims=True) / d
    dz = (du - u * proj) / scale[:, None]
    dz[degenerate] = 0.0
    return dz - dz.mean(axis=1, keepdims=True)


def negative_mode_vjp(c, upstream, mode=NegativeMode.CLAMP, degenerate=None):
    """Pull ``upstream`` (adjoint of W) back to the raw correlation matrix.

    The clamp uses sub-gradient 0 at exactly 0.
    """
    mode = NegativeMode(mode)
    g = np.array(upstream, dtype=np.float64)
    np.fill_diagonal(g, 0.0)
    if degenerate is not None and degenerate.any():
        g[degenerate, :] = 0.0
        g[:, degenerate] = 0.0
    if mode is NegativeMode.CLAMP:
        return np.where(c > 0, g, 0.0)
    i, j = _offdiag_argmin(c)
    if c[i, j] < 0:
        g[i, j] -= g.sum()
    return g


def similarity_jacobian_apply(embeddings, upstream, mode=NegativeMode.CLAMP):
    """Backpropagate an adjoint of ``pearson_similarity`` to the embeddings.

    Parameters
    ----------
    embeddings : array_like, shape (n, d)
        The forward input.
    upstream : array_like, shape (n, n)
        Gradient of a scalar loss with respect to ``W``.

    Returns
    -------
    ndarray, shape (n, d)
    """
    e = _check_embeddings(embeddings)
    n = e.shape[0]
    upstream = as_matrix(upstream, "upstream", rows=n, cols=n)
    c, degenerate = pearson_correlation(e, warn=False)
    dc = negative_mode_vjp(c, upstream, mode, degenerate)
    return pearson_correlation_vjp(e, dc)
