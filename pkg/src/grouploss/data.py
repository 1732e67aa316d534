"""Datasets, the class-balanced group sampler, and a Gaussian-blob generator.

Dataset files are UTF-8 delimited text with a header row
``id,label,f0,f1,...,f{d-1}``.
"""
import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import AnchorSpec
from .errors import DatasetError, SamplerError

FORMATS = {"csv": ",", "tsv": "\t"}


class ExcludedClassWarning(UserWarning):
    """A class has too few samples to fill a batch and is skipped by the sampler."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None
    split: str = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DatasetError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.ids is None:
            self.ids = np.array([str(i) for i in range(len(self.labels))])
        self.ids = np.asarray(self.ids).astype(str)
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain non-finite values")
        self.classes = np.unique(self.labels)
        self.class_index = {int(c): np.flatnonzero(self.labels == c) for c in self.classes}

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return len(self.classes)

    def codes(self, labels=None):
        """Map class ids to contiguous column indices ``0..num_classes-1``."""
        labels = self.labels if labels is None else np.asarray(labels)
        return np.searchsorted(self.classes, labels)

    def subset(self, rows, split=None):
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.ids[rows], split)

    def eligible_classes(self, samples_per_class, warn=True):
        ok = [c for c in self.classes if len(self.class_index[int(c)]) >= samples_per_class]
        if warn and len(ok) < len(self.classes):
            warnings.warn(
                f"{len(self.classes) - len(ok)} class(es) have fewer than {samples_per_class} "
                "samples and are excluded from sampling",
                ExcludedClassWarning,
                stacklevel=2,
            )
        return np.array(ok, dtype=np.int64)


def zero_shot_split(dataset, num_train_classes):
    """Split by class: the first ``num_train_classes`` (sorted ids) train, the
    rest test. The two label sets are disjoint."""
    if not 0 < num_train_classes < dataset.num_classes:
        raise DatasetError(f"need 0 < num_train_classes < {dataset.num_classes}")
    train_classes = dataset.classes[:num_train_classes]
    in_train = np.isin(dataset.labels, train_classes)
    train = dataset.subset(np.flatnonzero(in_train), "train")
    test = dataset.subset(np.flatnonzero(~in_train), "test")
    assert not set(train.classes) & set(test.classes)
    return train, test


def load_dataset(path, format="csv"):
    """Parse a delimited-text dataset. Errors name the offending line."""
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; expected one of {sorted(FORMATS)}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=FORMATS[format])
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty dataset file")
        header = [h.strip() for h in header]
        d = len(header) - 2
        if header[:2] != ["id", "label"] or header[2:] != [f"f{i}" for i in range(d)]:
            raise DatasetError(f"{path}:1: header must be id,label,f0..f{{d-1}}, got {header}")
        ids, labels, rows, seen = [], [], [], set()
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != d + 2:
                raise DatasetError(f"{path}:{line}: expected {d + 2} fields, got {len(row)}")
            if row[0] in seen:
                raise DatasetError(f"{path}:{line}: duplicate id {row[0]!r}")
            seen.add(row[0])
            try:
                label = int(row[1])
                feats = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DatasetError(f"{path}:{line}: {exc}") from None
            if not np.all(np.isfinite(feats)):
                raise DatasetError(f"{path}:{line}: non-finite feature")
            ids.append(row[0])
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DatasetError(f"{path}: dataset has no rows")
    return Dataset(np.array(rows, dtype=np.float64).reshape(len(rows), d), labels, ids)


def save_dataset(dataset, path, format="csv"):
    """Write ``dataset`` so that :func:`load_dataset` reads it back bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=FORMATS[format], lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{i}" for i in range(dataset.dim)])
        for i, lab, feats in zip(dataset.ids, dataset.labels, dataset.features.tolist()):
            writer.writerow([i, int(lab)] + [repr(v) for v in feats])


def make_blobs(
    num_classes=10, per_class=50, d_in=32, spread=1.0, seed=0, center_box=7.0, informative_dims=8, max_tries=100
):
    """Gaussian clusters, one per class.

    Class means are drawn uniformly from ``[-center_box, center_box]`` along
    ``informative_dims`` random orthonormal directions (shared by all
    classes) and are redrawn until every pair is at least ``4 * spread``
    apart. Features are ``mean + spread * N(0, I)``, so the remaining
    ``d_in - informative_dims`` directions carry only noise. Pass
    ``informative_dims=None`` to spread the means over all of ``d_in``.
    """
    if min(num_classes, per_class, d_in) <= 0:
        raise DatasetError("num_classes, per_class and d_in must be positive")
    if spread < 0:
        raise DatasetError("spread must be non-negative")
    s = d_in if informative_dims is None else int(informative_dims)
    if not 0 < s <= d_in:
        raise DatasetError(f"informative_dims must be in [1, {d_in}]")
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.normal(size=(d_in, s)))[0] if s < d_in else np.eye(d_in)
    for _ in range(max_tries):
        means = rng.uniform(-center_box, center_box, size=(num_classes, s)) @ basis.T
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= 4 * spread:
            break
    else:
        raise DatasetError(f"could not place {num_classes} means {4 * spread} apart in {max_tries} tries")
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + spread * rng.normal(size=(labels.size, d_in))
    return Dataset(features, labels)


@dataclass
class MiniBatch:
    features: np.ndarray
    labels: np.ndarray
    anchors: AnchorSpec
    classes: np.ndarray = None
    indices: list = field(default_factory=list)

    @property
    def size(self):
        return self.labels.shape[0]


def sample_batch(dataset, num_classes_per_batch, samples_per_class, num_anchors, rng):
    """Class-balanced group batch.

    Draws ``num_classes_per_batch`` eligible classes without replacement, then
    ``samples_per_class`` rows of each without replacement, and marks
    ``num_anchors`` random rows per class as anchors. Batch labels are the
    dataset's column codes (see :meth:`Dataset.codes`).
    """
    if num_classes_per_batch <= 0 or samples_per_class <= 0:
        raise SamplerError("batch geometry must be positive")
    if not 0 <= num_anchors < samples_per_class:
        raise SamplerError(f"need 0 <= num_anchors < samples_per_class, got {num_anchors}")
    eligible = dataset.eligible_classes(samples_per_class)
    if len(eligible) < num_classes_per_batch:
        raise SamplerError(
            f"only {len(eligible)} classes have {samples_per_class} samples; "
            f"{num_classes_per_batch} requested"
        )
    classes = rng.choice(eligible, size=num_classes_per_batch, replace=False)
    rows, anchor_rows = [], []
    for k, c in enumerate(classes):
        pick = rng.choice(dataset.class_index[int(c)], size=samples_per_class, replace=False)
        rows.append(pick)
        chosen = rng.choice(samples_per_class, size=num_anchors, replace=False)
        anchor_rows.extend((k * samples_per_class + chosen).tolist())
    rows_all = np.concatenate(rows)
    labels = dataset.codes(dataset.labels[rows_all])
    anchors = AnchorSpec(tuple(sorted(anchor_rows)), labels)
    return MiniBatch(dataset.features[rows_all], labels, anchors, classes, rows)
