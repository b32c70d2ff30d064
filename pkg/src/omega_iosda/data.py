"""Synthetic imbalanced open-set tasks and feature CSV ingestion.

In memory, labels are 0-based and every target-private class is collapsed
to ``K``. CSV files use 1-based labels (``K + 1`` for unknown).
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, GenerationError, InvalidArgument, ParseError

PROTOCOLS = ("rs-ut", "balanced", "custom")


@dataclass
class DomainDataset:
    X: np.ndarray
    labels: np.ndarray  # None for an unlabeled target file
    role: str
    num_classes: int
    private_class: np.ndarray = None  # which private Gaussian, -1 for shared; synthetic only

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise InvalidArgument(f"role must be 'source' or 'target', got {self.role!r}")
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            top = self.num_classes if self.role == "target" else self.num_classes - 1
            if len(self.labels) != len(self.X):
                raise InvalidArgument("labels and samples differ in length")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > top):
                raise InvalidArgument(f"{self.role} labels must lie in [0, {top}]")
        elif self.role == "source":
            raise InvalidArgument("source datasets must be labeled")

    def __len__(self):
        return self.X.shape[0]

    @property
    def d_in(self):
        return self.X.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes + (self.role == "target"))


@dataclass
class ImbalanceSpec:
    omega: float = 10.0
    protocol: str = "rs-ut"
    openness: float = 0.5
    weights: list = None  # relative class sizes for the "custom" protocol

    def __post_init__(self):
        if self.omega < 1:
            raise InvalidArgument(f"imbalance factor must be >= 1, got {self.omega}")
        if self.protocol not in PROTOCOLS:
            raise InvalidArgument(f"protocol must be one of {PROTOCOLS}")
        if not 0 <= self.openness < 1:
            raise InvalidArgument(f"openness must lie in [0, 1), got {self.openness}")


@dataclass
class ShiftParams:
    rotation: float = 0.0  # radians, in one seeded random plane
    translation: object = 0.0  # scalar magnitude along a seeded direction, or a full vector
    cov_scale: object = 1.0  # target/source std ratio, scalar or one per shared class


@dataclass
class SyntheticTask:
    num_classes: int = 5
    n_unknown_classes: int = 3
    d_in: int = 10
    n_max: int = 500
    mean_radius: float = 5.0
    unknown_offset: float = 0.2  # easy private means' own-axis offset, fraction of mean_radius
    class_std: float = 1.0
    unknown_std: float = 0.4  # std of private classes; None means class_std
    min_sep_factor: float = 3.0
    hardness: float = 0.5
    imbalance: ImbalanceSpec = field(default_factory=ImbalanceSpec)
    shift: ShiftParams = field(default_factory=lambda: ShiftParams(rotation=0.5, translation=1.0))


def pareto_counts(K, n_max, omega, reversed=False):
    """Long-tailed class sizes from ``n_max`` down to ``n_max / omega``
    along a geometric progression."""
    if omega < 1:
        raise InvalidArgument(f"imbalance factor must be >= 1, got {omega}")
    if n_max < omega:
        raise InvalidArgument(f"n_max={n_max} < omega={omega} leaves empty classes")
    if K == 1:
        counts = np.array([n_max])
    else:
        ranks = np.arange(K)
        counts = np.round(n_max * omega ** (-ranks / (K - 1))).astype(np.int64)
    return counts[::-1].copy() if reversed else counts


def _rotation(d, angle, rng):
    """Rotation by ``angle`` in a random 2-plane of R^d."""
    basis, _ = np.linalg.qr(rng.normal(size=(d, 2)))
    u, v = basis[:, 0], basis[:, 1]
    R = np.eye(d)
    R += (np.cos(angle) - 1) * (np.outer(u, u) + np.outer(v, v))
    R += np.sin(angle) * (np.outer(v, u) - np.outer(u, v))
    return R


def _place_means(task, rng):
    """Shared means on a jittered regular simplex. Easy private means sit at
    the centroid of a random subset of shared means, nudged along their own
    axis; with ``hardness > 0`` the first private mean instead sits on the
    segment from one shared mean toward another, ``min_sep * (2 - hardness)``
    from the first (capped at the midpoint)."""
    K, U, d = task.num_classes, task.n_unknown_classes, task.d_in
    R = task.mean_radius
    stds = np.array([task.class_std] * K + [_unknown_std(task)] * U)
    # pairwise: min_sep_factor times the larger std of the two classes
    min_sep = task.min_sep_factor * np.maximum(stds[:, None], stds[None, :])
    for _ in range(100):
        if K + U <= d:
            dirs = np.linalg.qr(rng.normal(size=(d, K + U)))[0].T
        else:
            dirs = rng.normal(size=(K + U, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = np.empty((K + U, d))
        means[:K] = dirs[:K] * R * rng.uniform(0.9, 1.1, size=(K, 1))
        for u in range(U):
            size = int(rng.integers(min(3, K), K + 1))
            subset = rng.choice(K, size=size, replace=False)
            means[K + u] = means[subset].mean(axis=0) + task.unknown_offset * R * dirs[K + u]
        if U > 0 and task.hardness > 0:
            a, b = rng.choice(K, size=2, replace=False)
            seg = means[b] - means[a]
            length = np.linalg.norm(seg)
            dist = min(task.min_sep_factor * task.class_std * (2.0 - task.hardness), length / 2)
            means[K] = means[a] + seg * dist / length
        gaps = np.sqrt(np.sum((means[:, None, :] - means[None, :, :]) ** 2, axis=2))
        np.fill_diagonal(gaps, np.inf)
        if np.all(gaps >= min_sep - 1e-12):
            return means
    raise GenerationError(f"could not separate {K + U} class means after 100 tries")


def _unknown_std(task):
    return task.class_std if task.unknown_std is None else task.unknown_std


def _class_sizes(task, rng):
    spec = task.imbalance
    K = task.num_classes
    if spec.protocol == "balanced":
        src = tgt = np.full(K, task.n_max, dtype=np.int64)
    elif spec.protocol == "custom":
        if spec.weights is None or len(spec.weights) != K:
            raise InvalidArgument("custom protocol needs one weight per shared class")
        w = np.asarray(spec.weights, dtype=np.float64)
        src = np.maximum(1, np.round(task.n_max * w / w.max())).astype(np.int64)
        tgt = src[::-1].copy()
    else:
        src = pareto_counts(K, task.n_max, spec.omega)
        tgt = pareto_counts(K, task.n_max, spec.omega, reversed=True)
    n_known = int(tgt.sum())
    o = spec.openness
    n_unk = int(round(o * n_known / (1 - o))) if task.n_unknown_classes > 0 else 0
    U = task.n_unknown_classes
    unk = np.full(U, n_unk // U, dtype=np.int64) if U else np.zeros(0, dtype=np.int64)
    unk[: n_unk - int(unk.sum())] += 1
    return src, tgt, unk


def make_synthetic_task(task, seed):
    """Return ``(source, target)`` with covariate shift, label shift and
    target-private classes. A pure function of ``(task, seed)``."""
    K = task.num_classes
    if K < 2:
        raise InvalidArgument("need at least 2 shared classes")
    rng = np.random.default_rng(seed)
    means = _place_means(task, rng)
    d = task.d_in
    R = _rotation(d, task.shift.rotation, rng)
    t = np.asarray(task.shift.translation, dtype=np.float64)
    if t.ndim == 0:
        direction = rng.normal(size=d)
        t = float(t) * direction / np.linalg.norm(direction)
    elif t.shape != (d,):
        raise InvalidArgument(f"translation must be a scalar or a length-{d} vector")
    scale = np.broadcast_to(np.asarray(task.shift.cov_scale, dtype=np.float64), (K,))
    src_n, tgt_n, unk_n = _class_sizes(task, rng)
    unk_std = _unknown_std(task)

    xs, ys = [], []
    for k in range(K):
        xs.append(means[k] + task.class_std * rng.normal(size=(src_n[k], d)))
        ys.append(np.full(src_n[k], k))
    src_X = np.concatenate(xs)
    src_y = np.concatenate(ys)
    perm = rng.permutation(len(src_y))
    source = DomainDataset(src_X[perm], src_y[perm], "source", K)

    xt, yt, pc = [], [], []
    for k in range(K):
        xt.append(means[k] + task.class_std * scale[k] * rng.normal(size=(tgt_n[k], d)))
        yt.append(np.full(tgt_n[k], k))
        pc.append(np.full(tgt_n[k], -1))
    for u, n in enumerate(unk_n):
        xt.append(means[K + u] + unk_std * rng.normal(size=(n, d)))
        yt.append(np.full(n, K))
        pc.append(np.full(n, u))
    tgt_X = np.concatenate(xt) @ R.T + t
    tgt_y = np.concatenate(yt)
    tgt_pc = np.concatenate(pc)
    perm = rng.permutation(len(tgt_y))
    target = DomainDataset(tgt_X[perm], tgt_y[perm], "target", K, private_class=tgt_pc[perm])
    return source, target


def load_feature_csv(path, role, num_classes=None):
    """Read a feature CSV (``dim_0..dim_{d-1}[,label]``, 1-based labels).

    ``num_classes`` defaults to the largest known label seen. A target file
    may omit the label column entirely.
    """
    if role not in ("source", "target"):
        raise InvalidArgument(f"role must be 'source' or 'target', got {role!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        has_label = bool(header) and header[-1] == "label"
        dims = header[:-1] if has_label else header
        if not dims or dims != [f"dim_{i}" for i in range(len(dims))]:
            raise ParseError("header must be dim_0,...,dim_{d-1}[,label]", line=1)
        if role == "source" and not has_label:
            raise ParseError("source file needs a label column", line=1)
        d = len(dims)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DimensionError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                rows.append([float(v) for v in row[:d]])
            except ValueError as exc:
                raise ParseError(f"bad feature value: {exc}", line=lineno) from None
            if not np.all(np.isfinite(rows[-1])):
                raise ParseError("non-finite feature value", line=lineno)
            if has_label:
                try:
                    lab = int(row[d])
                except ValueError:
                    raise ParseError(f"bad label {row[d]!r}", line=lineno) from None
                if lab < 1:
                    raise ParseError(f"labels are 1-based, got {lab}", line=lineno)
                labels.append((lab, lineno))
    if not rows:
        raise ParseError("no samples", line=2)
    if num_classes is None:
        known = [lab for lab, _ in labels]
        if role == "target":
            raise InvalidArgument("target files need num_classes to tell unknown labels apart")
        num_classes = max(known)
    top = num_classes + 1 if role == "target" else num_classes
    for lab, lineno in labels:
        if lab > top:
            raise ParseError(f"label {lab} outside 1..{top} for a {role} file", line=lineno)
    y = np.array([lab - 1 for lab, _ in labels], dtype=np.int64) if has_label else None
    return DomainDataset(np.array(rows, dtype=np.float64).reshape(-1, d), y, role, num_classes)


def write_feature_csv(dataset, path):
    d = dataset.d_in
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"dim_{i}" for i in range(d)]
        if dataset.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i]) + 1))
            writer.writerow(row)


def openness(dataset):
    """Fraction of target samples whose ground truth is a private class."""
    if dataset.labels is None:
        raise InvalidArgument("openness needs ground-truth labels")
    if len(dataset) == 0:
        raise InvalidArgument("empty dataset")
    return float(np.mean(dataset.labels == dataset.num_classes))
