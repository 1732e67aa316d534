"""Reverse-mode differentiation of the Group Loss over a fixed set of primitives.

A :class:`Tape` records every primitive in execution order together with its
forward value and a vector-Jacobian product. :func:`backward` walks the tape
once in reverse, so the whole pipeline::

    embeddings -> pearson -> clamp/shift -> W
    logits -> softmax(T) -> anchor overlay -> X(0) -> replicator steps -> X(T)
    X(T), labels -> cross-entropy

is differentiated exactly. The encoder in :mod:`grouploss.model` records its
affine and rectifier layers on the same tape, so gradients reach its
parameters too.
"""
from dataclasses import dataclass, field

import numpy as np

from . import similarity as sim
from .dynamics import DEFAULT_ITERATIONS, MAX_ITERATIONS, AnchorSpec
from .errors import ContractError, InvalidBatchError, NumericError, ParameterError
from .similarity import NegativeMode
from .tensor import DEGENERATE_ROW_SUM, LOG_EPS, as_labels, as_matrix, one_hot

LOSSES = ("cross_entropy", "kl")


@dataclass(frozen=True)
class GroupLossConfig:
    iteration_count: int = DEFAULT_ITERATIONS
    temperature: float = 10.0
    negative_mode: NegativeMode = NegativeMode.CLAMP
    loss: str = "cross_entropy"

    def __post_init__(self):
        if not 0 <= self.iteration_count <= MAX_ITERATIONS:
            raise ParameterError(f"iteration_count must be in [0, {MAX_ITERATIONS}]")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ParameterError("temperature must be positive")
        object.__setattr__(self, "negative_mode", NegativeMode(self.negative_mode))
        if self.loss not in LOSSES:
            raise ParameterError(f"loss must be one of {LOSSES}, got {self.loss!r}")


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    value: object
    vjp: object = None
    name: str = ""

    def label(self, index):
        return f"#{index} {self.op}" + (f" ({self.name})" if self.name else "")


@dataclass(eq=False)
class Var:
    """Handle to a value recorded on a tape."""

    tape: "Tape"
    index: int

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return np.shape(self.value)


class Tape:
    """Ordered record of primitive evaluations."""

    def __init__(self):
        self.nodes = []
        self.variables = {}
        self.marks = {}
        self.output = None

    def push(self, op, inputs, value, vjp=None, name=""):
        for v in inputs:
            if v.tape is not self:
                raise ContractError("cannot mix values from different tapes")
        self.nodes.append(Node(op, tuple(v.index for v in inputs), value, vjp, name))
        return Var(self, len(self.nodes) - 1)

    def variable(self, value, name):
        if name in self.variables:
            raise ContractError(f"variable {name!r} already on tape")
        var = self.push("variable", (), np.array(value, dtype=np.float64), name=name)
        self.variables[name] = var.index
        return var

    def constant(self, value, name=""):
        return self.push("constant", (), np.array(value, dtype=np.float64), name=name)

    def gradients(self, output=None):
        """Adjoint of every node with respect to ``output`` (default: ``self.output``)."""
        output = self.output if output is None else output
        if output is None:
            raise ContractError("tape has no output to differentiate")
        if np.ndim(output.value) != 0:
            raise ContractError("can only differentiate a scalar output")
        if not np.isfinite(output.value):
            raise NumericError(f"output {self.nodes[output.index].label(output.index)} is not finite")
        adj = [None] * len(self.nodes)
        adj[output.index] = 1.0
        for k in range(output.index, -1, -1):
            node, g = self.nodes[k], adj[k]
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite adjoint at node {node.label(k)}")
            if node.vjp is None:
                continue
            for i, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                adj[i] = gi if adj[i] is None else adj[i] + gi
        return adj


# primitives ---------------------------------------------------------------

def matmul(a, b):
    av, bv = a.value, b.value
    return a.tape.push("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def add_bias(x, b):
    return x.tape.push("add_bias", (x, b), x.value + b.value[None, :], lambda g: (g, g.sum(axis=0)))


def hadamard(a, b):
    av, bv = a.value, b.value
    return a.tape.push("hadamard", (a, b), av * bv, lambda g: (g * bv, g * av))


def row_sum(a):
    return a.tape.push("row_sum", (a,), a.value.sum(axis=1), lambda g: (np.repeat(g[:, None], a.shape[1], axis=1),))


def row_divide(a, s, skip=None):
    """``a[i] / s[i]``; rows flagged in ``skip`` are passed through undivided."""
    av = a.value
    skip = np.zeros(av.shape[0], dtype=bool) if skip is None else skip
    denom = np.where(skip, 1.0, s.value)
    out = av / denom[:, None]

    def vjp(g):
        ds = -np.sum(g * out, axis=1) / denom
        ds[skip] = 0.0
        return g / denom[:, None], ds

    return a.tape.push("row_divide", (a, s), out, vjp)


def relu(x, name="relu"):
    """Rectifier with sub-gradient 0 at 0. Also used as the similarity clamp."""
    xv = x.value
    active = xv > 0
    return x.tape.push(name, (x,), np.where(active, xv, 0.0), lambda g: (np.where(active, g, 0.0),))


def tanh(x):
    t = np.tanh(x.value)
    return x.tape.push("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def shift_negative(c, degenerate=None):
    cv = c.value
    w = sim.apply_negative_mode(cv, NegativeMode.SHIFT, degenerate)
    return c.tape.push(
        "shift", (c,), w, lambda g: (sim.negative_mode_vjp(cv, g, NegativeMode.SHIFT, degenerate),)
    )


def softmax(z, temperature=1.0):
    zv = z.value / temperature
    e = np.exp(zv - zv.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)) / temperature,)

    return z.tape.push("softmax", (z,), p, vjp)


def pearson(e):
    """Raw Pearson correlation (zero diagonal). Returns the node and the
    degenerate-row flags."""
    ev = e.value
    c, degenerate = sim.pearson_correlation(ev)
    node = e.tape.push("pearson", (e,), c, lambda g: (sim.pearson_correlation_vjp(ev, g),))
    return node, degenerate


def overlay(base, source, rows):
    """Rows flagged in ``rows`` are taken from ``source``, the rest from ``base``."""
    rows = np.asarray(rows, dtype=bool)
    out = np.where(rows[:, None], source.value, base.value)

    def vjp(g):
        return np.where(rows[:, None], 0.0, g), np.where(rows[:, None], g, 0.0)

    return base.tape.push("overlay", (base, source), out, vjp)


def cross_entropy_node(x, y, mask):
    xv = x.value
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise InvalidBatchError("every row is an anchor; no loss to compute")
    picked = xv[rows, y[rows]]
    loss = float(np.mean(-np.log(np.maximum(picked, LOG_EPS))))

    def vjp(g):
        out = np.zeros_like(xv)
        live = picked > LOG_EPS
        out[rows[live], y[rows[live]]] = -g / (rows.size * picked[live])
        return (out,)

    return x.tape.push("cross_entropy", (x,), loss, vjp)


def _same_class_pairs(y, mask):
    idx = np.flatnonzero(mask)
    same = (y[idx][:, None] == y[idx][None, :]) & ~np.eye(idx.size, dtype=bool)
    a, b = np.nonzero(same)
    return idx[a], idx[b]


def kl_pairs_node(x, y, mask):
    """Mean ``KL(x_i || x_j)`` over ordered same-class pairs of non-anchor rows."""
    xv = x.value
    i, j = _same_class_pairs(y, mask)
    if i.size == 0:
        raise InvalidBatchError("no same-class pair of non-anchor rows for the KL loss")
    xi, xj = np.maximum(xv[i], LOG_EPS), np.maximum(xv[j], LOG_EPS)
    terms = xv[i] * (np.log(xi) - np.log(xj))
    loss = float(terms.sum() / i.size)

    def vjp(g):
        out = np.zeros_like(xv)
        live_i = xv[i] > LOG_EPS
        live_j = xv[j] > LOG_EPS
        gi = np.log(xi) - np.log(xj) + np.where(live_i, 1.0, 0.0)
        gj = np.where(live_j, -xv[i] / xj, 0.0)
        np.add.at(out, i, gi)
        np.add.at(out, j, gj)
        return (out * g / i.size,)

    return x.tape.push("kl_pairs", (x,), loss, vjp)


# the Group Loss ------------------------------------------------------------

def replicator_step_node(x, w, frozen):
    pi = matmul(w, x)
    p = hadamard(x, pi)
    q = row_sum(p)
    keep = frozen | (q.value < DEGENERATE_ROW_SUM)
    return overlay(row_divide(p, q, skip=keep), x, keep)


def _as_var(tape, value, name):
    if isinstance(value, Var):
        if value.tape is not tape:
            raise ContractError("embeddings and logits must share a tape")
        return value
    return tape.variable(as_matrix(value, name), name)


def forward_loss(embeddings, logits, anchors, y, config=None):
    """Group Loss of one mini-batch, recorded on a tape.

    ``embeddings`` and ``logits`` are arrays, or :class:`Var` handles from a
    tape the encoder already wrote to. Returns ``(loss, tape)``.
    """
    config = config or GroupLossConfig()
    tape = next((v.tape for v in (embeddings, logits) if isinstance(v, Var)), None) or Tape()
    e = _as_var(tape, embeddings, "embeddings")
    z = _as_var(tape, logits, "logits")
    n, m = z.shape
    if e.shape[0] != n:
        raise ContractError(f"embeddings have {e.shape[0]} rows, logits {n}")
    y = as_labels(y, n, m)
    anchors = anchors if anchors is not None else AnchorSpec.none(y)
    anchors.validate(n, m)
    if anchors.indices and not np.array_equal(np.asarray(anchors.labels)[list(anchors.indices)], y[list(anchors.indices)]):
        raise ContractError("anchor labels disagree with batch labels")
    frozen = anchors.mask(n)

    c, degenerate = pearson(e)
    if config.negative_mode is NegativeMode.CLAMP:
        w = relu(c, name="relu_clamp")
    else:
        w = shift_negative(c, degenerate)

    x = softmax(z, config.temperature)
    if frozen.any():
        x = overlay(x, tape.constant(one_hot(y, m), "anchor_one_hot"), frozen)
    for _ in range(config.iteration_count):
        x = replicator_step_node(x, w, frozen)

    live = ~frozen
    loss = cross_entropy_node(x, y, live) if config.loss == "cross_entropy" else kl_pairs_node(x, y, live)
    tape.marks.update(embeddings=e.index, logits=z.index)
    tape.output = loss
    return float(loss.value), tape


@dataclass
class GradientBundle:
    d_embeddings: np.ndarray
    d_logits: np.ndarray
    params: dict = field(default_factory=dict)


def backward(tape):
    """Exact gradients of ``tape.output``.

    ``d_embeddings`` and ``d_logits`` are the adjoints of the nodes marked by
    :func:`forward_loss`; ``params`` holds the adjoint of every other variable
    (encoder weights, when the encoder wrote to the tape).
    """
    adj = tape.gradients()

    def grad_of(idx):
        g = adj[idx]
        return np.zeros_like(tape.nodes[idx].value) if g is None else np.asarray(g, dtype=np.float64)

    params = {name: grad_of(idx) for name, idx in tape.variables.items() if name not in tape.marks}
    d_e = grad_of(tape.marks["embeddings"]) if "embeddings" in tape.marks else None
    d_z = grad_of(tape.marks["logits"]) if "logits" in tape.marks else None
    return GradientBundle(d_e, d_z, params)


# finite-difference verification -------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    excluded: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e} "
            f"checked={self.n_checked} excluded={len(self.excluded)} failures={len(self.failures)}"
        )


def relative_error(analytic, numeric, floor=1e-4):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from
    turning round-off into huge ratios."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn, inputs, h=1e-6, tol=1e-5, kink=None, floor=1e-4):
    """Compare reverse-mode gradients of ``fn`` with central differences.

    Parameters
    ----------
    fn : callable
        ``fn(tape, vars)`` records a computation and returns a scalar
        :class:`Var`; ``vars`` maps each key of ``inputs`` to a tape variable.
    inputs : dict of str to array_like
    h : float
        Finite-difference step.
    tol : float
        Maximum allowed :func:`relative_error`.
    kink : callable, optional
        ``kink(inputs)`` returns a hashable signature of the piecewise regime
        (for instance which similarities are clamped). A coordinate whose
        ``+h`` or ``-h`` perturbation changes the signature sits on a kink and
        is excluded rather than failed.

    Returns
    -------
    GradCheckReport
        Failures are reported, never raised.
    """
    if not h > 0:
        raise ParameterError("h must be positive")
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    def evaluate(vals):
        tape = Tape()
        out = fn(tape, {k: tape.variable(v, k) for k, v in vals.items()})
        return tape, out

    tape, out = evaluate(inputs)
    adj = tape.gradients(out)
    analytic = {}
    for k, idx in tape.variables.items():
        analytic[k] = np.zeros_like(inputs[k]) if adj[idx] is None else np.asarray(adj[idx])
    base_sig = kink(inputs) if kink else None

    report = GradCheckReport(0.0, tol, 0)
    for k, v in inputs.items():
        for coord in np.ndindex(v.shape):
            vals = {kk: vv.copy() for kk, vv in inputs.items()}
            vals[k][coord] = v[coord] + h
            plus = dict(vals)
            vals_m = {kk: vv.copy() for kk, vv in inputs.items()}
            vals_m[k][coord] = v[coord] - h
            if kink and (kink(plus) != base_sig or kink(vals_m) != base_sig):
                report.excluded.append((k, coord))
                continue
            f_plus = float(evaluate(plus)[1].value)
            f_minus = float(evaluate(vals_m)[1].value)
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(analytic[k][coord])
            err = relative_error(a, numeric, floor)
            report.n_checked += 1
            report.max_rel_error = max(report.max_rel_error, err)
            if not err < tol:
                report.failures.append((k, coord, a, numeric, err))
    return report


@dataclass
class GroupLossInstance:
    embeddings: np.ndarray
    logits: np.ndarray
    labels: np.ndarray
    anchors: AnchorSpec
    config: GroupLossConfig = field(default_factory=GroupLossConfig)

    @classmethod
    def random(cls, rng, n=6, m=3, d=5, iteration_count=2, num_anchors=1, **config):
        labels = np.arange(n) % m
        rng.shuffle(labels)
        anchor_rows = tuple(sorted(rng.choice(n, size=num_anchors, replace=False).tolist())) if num_anchors else ()
        return cls(
            rng.normal(size=(n, d)),
            rng.normal(size=(n, m)),
            labels,
            AnchorSpec(anchor_rows, labels),
            GroupLossConfig(iteration_count=iteration_count, **config),
        )

    def loss_fn(self, tape, vars):
        loss, _ = forward_loss(vars["embeddings"], vars["logits"], self.anchors, self.labels, self.config)
        return tape.output

    def inputs(self):
        return {"embeddings": self.embeddings, "logits": self.logits}


def similarity_regime(embeddings, mode=NegativeMode.CLAMP, kink_tol=1e-8):
    """Signature of the piecewise-linear regime of the similarity layer."""
    c, degenerate = sim.pearson_correlation(embeddings, warn=False)
    if NegativeMode(mode) is NegativeMode.CLAMP:
        near = np.abs(c) < kink_tol
        np.fill_diagonal(near, False)
        return (c > 0).tobytes(), near.tobytes(), degenerate.tobytes()
    return sim._offdiag_argmin(c), degenerate.tobytes()


def check_group_loss(instance, h=1e-6, tol=1e-5, floor=1e-4):
    """:func:`grad_check` of the Group Loss w.r.t. embeddings and logits."""
    mode = instance.config.negative_mode
    return grad_check(
        instance.loss_fn,
        instance.inputs(),
        h=h,
        tol=tol,
        kink=lambda vals: similarity_regime(vals["embeddings"], mode),
        floor=floor,
    )
