"""A small MLP encoder with a linear classification head, Adam, and the
training step that chains encoder -> Group Loss -> parameter update."""
import json
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import autograd as ag
from .errors import CheckpointError, ContractError, NumericError, ParameterError
from .tensor import as_matrix

ACTIVATIONS = ("relu", "tanh", "identity")
CHECKPOINT_SCHEMA = "grouploss-checkpoint"
CHECKPOINT_SCHEMA_VERSION = 1


@dataclass
class MlpEncoder:
    """``d_in -> hidden... -> d_embed`` with the activation between layers,
    followed by a linear head ``d_embed -> num_classes``.

    The activation is applied after every hidden layer but not to the
    embedding itself. Weights are stored as ``(fan_in, fan_out)``.
    """

    weights: list
    biases: list
    head_weight: np.ndarray
    head_bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix and at least one layer")
        prev = self.weights[0].shape[0]
        for w, b in zip(self.weights + [self.head_weight], self.biases + [self.head_bias]):
            if w.ndim != 2 or w.shape[0] != prev or b.shape != (w.shape[1],):
                raise ContractError(f"layer shapes do not chain: {w.shape} after width {prev}")
            prev = w.shape[1]

    @classmethod
    def init(cls, d_in, hidden, d_embed, num_classes, rng, activation="relu"):
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases."""
        sizes = [d_in, *hidden, d_embed]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        bound = 1.0 / np.sqrt(d_embed)
        head = rng.uniform(-bound, bound, size=(d_embed, num_classes))
        return cls(weights, biases, head, np.zeros(num_classes), activation)

    @property
    def layout(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights] + [self.head_weight.shape[1]]

    @property
    def d_in(self):
        return self.weights[0].shape[0]

    @property
    def num_classes(self):
        return self.head_weight.shape[1]

    def params(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def with_params(self, params):
        k = len(self.weights)
        return MlpEncoder(
            [np.asarray(params[f"layer{i}.weight"]) for i in range(k)],
            [np.asarray(params[f"layer{i}.bias"]) for i in range(k)],
            np.asarray(params["head.weight"]),
            np.asarray(params["head.bias"]),
            self.activation,
        )

    def copy(self):
        return self.with_params({k: v.copy() for k, v in self.params().items()})


def _activate(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    return x


def encode(encoder, inputs):
    """Forward pass without recording. Returns ``(embeddings, logits)``."""
    h = as_matrix(inputs, "inputs", cols=encoder.d_in)
    last = len(encoder.weights) - 1
    for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        h = h @ w + b
        if i < last:
            h = _activate(h, encoder.activation)
    return h, h @ encoder.head_weight + encoder.head_bias


def encode_on_tape(encoder, inputs, tape, params=None):
    """Forward pass recorded on ``tape`` with every parameter as a variable.

    ``params`` may supply the parameter variables (as :func:`grad_check`
    does); by default they are created from ``encoder``. Returns
    ``(embeddings, logits)`` as :class:`~grouploss.autograd.Var`.
    """
    x = tape.constant(as_matrix(inputs, "inputs", cols=encoder.d_in), "inputs")
    p = params or {name: tape.variable(v, name) for name, v in encoder.params().items()}
    last = len(encoder.weights) - 1
    h = x
    for i in range(last + 1):
        h = ag.add_bias(ag.matmul(h, p[f"layer{i}.weight"]), p[f"layer{i}.bias"])
        if i < last:
            if encoder.activation == "relu":
                h = ag.relu(h)
            elif encoder.activation == "tanh":
                h = ag.tanh(h)
    logits = ag.add_bias(ag.matmul(h, p["head.weight"]), p["head.bias"])
    return h, logits


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_epoch: int = 30
    decay_factor: float = 0.1
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, epoch):
        """Constant learning rate, multiplied by ``decay_factor`` from ``decay_epoch`` on."""
        return self.lr * (self.decay_factor if self.decay_epoch is not None and epoch >= self.decay_epoch else 1.0)

    def copy(self):
        return replace(self, m={k: a.copy() for k, a in self.m.items()}, v={k: a.copy() for k, a in self.v.items()})


def adam_update(params, grads, state, lr=None):
    """One Adam step. Returns ``(new_params, new_state)``; inputs are not mutated."""
    lr = state.lr if lr is None else lr
    t = state.step + 1
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if state.weight_decay:
            g = g + state.weight_decay * p
        m0 = state.m.get(name, np.zeros_like(p))
        v0 = state.v.get(name, np.zeros_like(p))
        m[name] = state.beta1 * m0 + (1 - state.beta1) * g
        v[name] = state.beta2 * v0 + (1 - state.beta2) * g * g
        m_hat = m[name] / (1 - state.beta1**t)
        v_hat = v[name] / (1 - state.beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, step=t, m=m, v=v)


def group_loss_with_grads(encoder, batch, config):
    """Loss and parameter gradients of the Group Loss on one batch."""
    tape = ag.Tape()
    emb, logits = encode_on_tape(encoder, batch.features, tape)
    loss, tape = ag.forward_loss(emb, logits, batch.anchors, batch.labels, config)
    return loss, ag.backward(tape)


def train_step(encoder, adam, batch, config=None, lr=None):
    """encode -> Group Loss -> backward -> Adam.

    Returns ``(loss, new_encoder, new_adam)`` where ``loss`` is measured before
    the update. A non-finite loss raises :class:`NumericError` and nothing is
    updated.
    """
    config = config or ag.GroupLossConfig()
    loss, grads = group_loss_with_grads(encoder, batch, config)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    params, adam = adam_update(encoder.params(), grads.params, adam, lr)
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise NumericError("parameter update produced non-finite values")
    return loss, encoder.with_params(params), adam


def check_encoder_gradients(encoder, batch, config=None, h=1e-6, tol=1e-5, floor=1e-4):
    """Finite-difference check of the Group Loss w.r.t. every encoder parameter.

    Coordinates whose perturbation flips a hidden rectifier or a similarity
    clamp are excluded.
    """
    config = config or ag.GroupLossConfig()

    def fn(tape, vars):
        emb, logits = encode_on_tape(encoder, batch.features, tape, vars)
        ag.forward_loss(emb, logits, batch.anchors, batch.labels, config)
        return tape.output

    def regime(vals):
        enc = encoder.with_params(vals)
        h_ = batch.features
        pattern = []
        for w, b in zip(enc.weights[:-1], enc.biases[:-1]):
            h_ = h_ @ w + b
            pattern.append((h_ > 0).tobytes())
            h_ = _activate(h_, enc.activation)
        emb, _ = encode(enc, batch.features)
        return tuple(pattern), ag.similarity_regime(emb, config.negative_mode)

    return ag.grad_check(fn, encoder.params(), h=h, tol=tol, kink=regime, floor=floor)


# checkpoints ----------------------------------------------------------------

def save_checkpoint(encoder, adam, path):
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "package_version": __version__,
        "activation": encoder.activation,
        "num_layers": len(encoder.weights),
        "adam": {
            k: getattr(adam, k)
            for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "decay_epoch", "decay_factor", "step")
        },
    }
    arrays = {f"param/{k}": v for k, v in encoder.params().items()}
    arrays.update({f"adam_m/{k}": v for k, v in adam.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in adam.v.items()})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Read a checkpoint. Returns ``(encoder, adam, meta)``.

    Any checkpoint with the same schema tag and schema version loads,
    whatever package version wrote it.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        meta = json.loads(str(arrays.pop("__meta__")))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path} has no readable metadata") from exc
    if meta.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"{path}: unknown schema {meta.get('schema')!r}")
    if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: schema version {meta.get('schema_version')} is not supported "
            f"(expected {CHECKPOINT_SCHEMA_VERSION})"
        )
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    k = meta["num_layers"]
    try:
        encoder = MlpEncoder(
            [params[f"layer{i}.weight"] for i in range(k)],
            [params[f"layer{i}.bias"] for i in range(k)],
            params["head.weight"],
            params["head.bias"],
            meta["activation"],
        )
    except (KeyError, ContractError) as exc:
        raise CheckpointError(f"{path}: inconsistent parameters ({exc})") from exc
    adam = AdamState(
        **meta["adam"],
        m={k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        v={k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_v/")},
    )
    return encoder, adam, meta
