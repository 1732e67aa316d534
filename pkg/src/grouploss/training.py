"""Run configuration and the training / sweep drivers behind the CLI."""
import csv
import dataclasses
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import LOSSES, GroupLossConfig, GroupLossInstance, check_group_loss
from .data import MiniBatch, load_dataset, make_blobs, sample_batch, zero_shot_split
from .dynamics import MAX_ITERATIONS, AnchorSpec
from .errors import NumericError, ParameterError
from .evaluation import evaluate, l2_normalize, recall_at_k
from .model import (
    ACTIVATIONS,
    AdamState,
    MlpEncoder,
    check_encoder_gradients,
    encode,
    save_checkpoint,
    train_step,
)
from .similarity import DegenerateRowWarning, NegativeMode

log = logging.getLogger(__name__)

SEED_ENV = "GROUPLOSS_SEED"
SWEEP_AXES = {"anchors": "num_anchors", "classes_per_batch": "num_classes_per_batch"}


@dataclass
class RunConfig:
    # data: a train file (+ optional test file) or generated blobs
    dataset: str = None
    test_dataset: str = None
    dataset_format: str = "csv"
    blob_classes: int = 20
    blob_train_classes: int = 10
    blob_per_class: int = 50
    blob_dim: int = 32
    blob_spread: float = 1.0
    blob_center_box: float = 7.0
    blob_informative_dims: int = 8
    # batch geometry
    num_classes_per_batch: int = 5
    samples_per_class: int = 9
    num_anchors: int = 1
    # dynamics
    iteration_count: int = 3
    temperature: float = 10.0
    negative_mode: str = "clamp"
    loss: str = "cross_entropy"
    # model
    hidden: list = field(default_factory=lambda: [64])
    embed_dim: int = 32
    activation: str = "relu"
    # optimizer
    lr: float = 1e-3
    lr_decay_epoch: int = 30
    weight_decay: float = 0.0
    epochs: int = 60
    warmup_epochs: int = 0
    batches_per_epoch: int = None
    # evaluation
    ks: list = field(default_factory=lambda: [1, 2, 4, 8])
    k_clusters: int = None
    kmeans_restarts: int = 10
    seed: int = 0
    out_dir: str = "runs/default"

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.field_names())
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def batch_size(self):
        return self.num_classes_per_batch * self.samples_per_class

    def group_loss(self, warmup=False):
        return GroupLossConfig(
            iteration_count=0 if warmup else self.iteration_count,
            temperature=self.temperature,
            negative_mode=self.negative_mode,
            loss="cross_entropy" if warmup else self.loss,
        )

    def validate(self):
        """Raise :class:`ParameterError` listing every violated constraint."""
        problems = []
        if self.num_classes_per_batch < 1 or self.samples_per_class < 2:
            problems.append("need num_classes_per_batch >= 1 and samples_per_class >= 2")
        if not 0 <= self.num_anchors < self.samples_per_class:
            problems.append("need 0 <= num_anchors < samples_per_class")
        if not 0 <= self.iteration_count <= MAX_ITERATIONS:
            problems.append(f"iteration_count must be in [0, {MAX_ITERATIONS}]")
        if not self.temperature > 0:
            problems.append("temperature must be positive")
        if self.negative_mode not in {m.value for m in NegativeMode}:
            problems.append(f"negative_mode must be one of {[m.value for m in NegativeMode]}")
        if self.loss not in LOSSES:
            problems.append(f"loss must be one of {LOSSES}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}")
        if self.embed_dim < 2 or any(h < 1 for h in self.hidden):
            problems.append("embed_dim must be >= 2 and hidden sizes positive")
        if self.lr < 0 or self.weight_decay < 0:
            problems.append("lr and weight_decay must be non-negative")
        if self.epochs < 0 or self.warmup_epochs < 0:
            problems.append("epochs and warmup_epochs must be non-negative")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            problems.append("batches_per_epoch must be positive")
        if not self.ks or min(self.ks) < 1:
            problems.append("ks must be a non-empty list of positive integers")
        if self.dataset is None:
            if not 0 < self.blob_train_classes < self.blob_classes:
                problems.append("need 0 < blob_train_classes < blob_classes")
            if self.blob_train_classes < self.num_classes_per_batch:
                problems.append("fewer training classes than num_classes_per_batch")
            if self.blob_per_class < self.samples_per_class:
                problems.append("blob_per_class smaller than samples_per_class")
        if self.loss == "kl" and self.samples_per_class - self.num_anchors < 2:
            problems.append("the kl loss needs at least two non-anchor samples per class")
        if problems:
            raise ParameterError("invalid config: " + "; ".join(problems))
        return self


def seeds(root):
    """Independent generators for data, model, sampler and clustering."""
    data, model, sampler, cluster = np.random.SeedSequence(root).spawn(4)
    return {
        "data": int(data.generate_state(1)[0]),
        "model": np.random.default_rng(model),
        "sampler": np.random.default_rng(sampler),
        "cluster": int(cluster.generate_state(1)[0]),
    }


def load_splits(config, data_seed):
    """Train and test datasets. Without an explicit test file the classes are
    split in half (zero-shot protocol)."""
    if config.dataset is None:
        full = make_blobs(
            config.blob_classes,
            config.blob_per_class,
            config.blob_dim,
            config.blob_spread,
            data_seed,
            config.blob_center_box,
            config.blob_informative_dims,
        )
        return zero_shot_split(full, config.blob_train_classes)
    train = load_dataset(config.dataset, config.dataset_format)
    if config.test_dataset is None:
        return zero_shot_split(train, train.num_classes // 2)
    test = load_dataset(config.test_dataset, config.dataset_format)
    train.split, test.split = "train", "test"
    return train, test


@dataclass
class TrainResult:
    encoder: MlpEncoder
    adam: AdamState
    history: list
    report: object
    train: object
    test: object


def _dump_batch(out_dir, batch):
    path = Path(out_dir) / "bad_batch.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, features=batch.features, labels=batch.labels, anchors=np.array(batch.anchors.indices))
    return path


def fit(config, out_dir=None):
    """Warm-up (optional) then Group Loss epochs, then a final evaluation.

    ``history`` holds one dict per epoch: phase, epoch, lr, mean loss and
    test Recall@1.
    """
    config.validate()
    rng = seeds(config.seed)
    train, test = load_splits(config, rng["data"])
    encoder = MlpEncoder.init(
        train.dim, config.hidden, config.embed_dim, train.num_classes, rng["model"], config.activation
    )
    adam = AdamState(lr=config.lr, weight_decay=config.weight_decay, decay_epoch=config.lr_decay_epoch)
    batches = config.batches_per_epoch or max(1, math.ceil(len(train) / config.batch_size))
    history = []
    phases = [("warmup", e, True) for e in range(config.warmup_epochs)]
    phases += [("group_loss", e, False) for e in range(config.epochs)]
    for phase, epoch, warmup in phases:
        lr = config.lr if warmup else adam.lr_at(epoch)
        loss_cfg = config.group_loss(warmup)
        losses = []
        for _ in range(batches):
            batch = sample_batch(
                train, config.num_classes_per_batch, config.samples_per_class, config.num_anchors, rng["sampler"]
            )
            try:
                loss, encoder, adam = train_step(encoder, adam, batch, loss_cfg, lr=lr)
            except NumericError as exc:
                where = _dump_batch(out_dir or config.out_dir, batch)
                raise NumericError(f"{phase} epoch {epoch}: {exc}; batch dumped to {where}") from exc
            losses.append(loss)
        emb, _ = encode(encoder, test.features)
        r1 = recall_at_k(l2_normalize(emb), test.labels, [1])[1]
        history.append({"phase": phase, "epoch": epoch, "lr": lr, "loss": float(np.mean(losses)), "test_recall@1": r1})
        log.info("%s epoch %d loss %.5f R@1 %.4f", phase, epoch, history[-1]["loss"], r1)
    report = evaluate_run(encoder, test, config, rng["cluster"])
    return TrainResult(encoder, adam, history, report, train, test)


def evaluate_run(encoder, test, config, cluster_seed):
    """Final report for a run, with the run's provenance in its config echo."""
    report = evaluate(encoder, test, config.ks, config.k_clusters, seed=cluster_seed, n_init=config.kmeans_restarts)
    report.config.update({"iteration_count": config.iteration_count, "root_seed": config.seed})
    return report


def history_csv(history):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["phase", "epoch", "lr", "loss", "test_recall@1"], lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({**row, "lr": repr(row["lr"]), "loss": repr(row["loss"]), "test_recall@1": repr(row["test_recall@1"])})
    return buf.getvalue()


def write_artifacts(result, config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())
    save_checkpoint(result.encoder, result.adam, out / "checkpoint.npz")
    (out / "metrics.csv").write_text(history_csv(result.history))
    (out / "report.txt").write_text(result.report.to_text())
    return out


def train_and_save(config):
    result = fit(config, config.out_dir)
    write_artifacts(result, config, config.out_dir)
    return result


def _sweep_cell(args):
    config, axis, value, out_dir = args
    cell = config.replace(**{SWEEP_AXES[axis]: value}, out_dir=str(out_dir))
    try:
        result = train_and_save(cell)
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        return value, None, None, f"{type(exc).__name__}: {exc}"
    return value, result.report.recall_at[1], result.report.nmi, ""


def sweep(config, axis, values, jobs=1):
    """Train one model per value of ``axis`` (shared seed) and tabulate
    Recall@1 and NMI, plus the percentage-point gap to the best cell."""
    if axis not in SWEEP_AXES:
        raise ParameterError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = [int(v) for v in values]
    if not values:
        raise ParameterError("sweep needs at least one value")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())
    tasks = [(config, axis, v, out / f"{axis}={v}") for v in values]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(t) for t in tasks]
    done = [r[1] for r in rows if r[1] is not None]
    best = max(done) if done else None
    table = []
    for value, r1, score, error in rows:
        table.append(
            {
                axis: value,
                "recall@1": r1,
                "nmi": score,
                "delta_pp": None if r1 is None else 100.0 * (r1 - best),
                "error": error,
            }
        )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, [axis, "recall@1", "nmi", "delta_pp", "error"], lineterminator="\n")
    writer.writeheader()
    for row in table:
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    (out / "sweep.csv").write_text(buf.getvalue())
    return table


def _gradcheck_case(i, rng, count, h, tol, iteration_count, negative_mode):
    m = int(rng.integers(2, 5))
    n = int(rng.integers(max(3, m), 9))
    d = int(rng.integers(2, 7))
    t = int(rng.integers(0, 4)) if iteration_count is None else iteration_count
    anchors = int(rng.integers(0, 2))
    cfg = dict(iteration_count=t, negative_mode=negative_mode)
    if i < count:
        inst = GroupLossInstance.random(rng, n=n, m=m, d=d, num_anchors=anchors, **cfg)
        return f"loss[{i}] n={n} m={m} d={d} T={t}", check_group_loss(inst, h=h, tol=tol)
    d_in = int(rng.integers(2, 6))
    enc = MlpEncoder.init(d_in, [int(rng.integers(3, 6))], d, m, rng)
    labels = np.arange(n) % m
    rows = tuple(sorted(rng.choice(n, size=anchors, replace=False).tolist()))
    batch = MiniBatch(rng.normal(size=(n, d_in)), labels, AnchorSpec(rows, labels))
    rep = check_encoder_gradients(enc, batch, GroupLossConfig(**cfg), h=h, tol=tol)
    return f"encoder[{i - count}] n={n} m={m} d={d} T={t}", rep


def gradcheck_suite(
    count=50, seed=0, h=1e-6, tol=1e-5, iteration_count=None, negative_mode="clamp", encoder_instances=5
):
    """Seeded finite-difference suite.

    ``count`` random Group Loss instances (n <= 8, m <= 4, d <= 6, T <= 3)
    checked w.r.t. embeddings and logits, then ``encoder_instances`` tiny
    batches checked w.r.t. encoder parameters. Returns a list of
    ``(name, GradCheckReport)``.
    """
    streams = np.random.SeedSequence(seed).spawn(count + encoder_instances)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRowWarning)
        return [
            _gradcheck_case(i, np.random.default_rng(ss), count, h, tol, iteration_count, negative_mode)
            for i, ss in enumerate(streams)
        ]
