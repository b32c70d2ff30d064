"""Per-class entropy thresholds for open-set prediction."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .numerics import entropy


def fixed_threshold(num_classes):
    """The neutral threshold ln(K)/2."""
    return np.log(num_classes) / 2


@dataclass
class ThresholdState:
    thresholds: np.ndarray
    ratio: float
    class_entropy: np.ndarray = None
    class_counts: np.ndarray = None
    rho: float = field(init=False)

    def __post_init__(self):
        self.rho = fixed_threshold(len(self.thresholds))

    @classmethod
    def initial(cls, num_classes, ratio):
        return cls(np.full(num_classes, fixed_threshold(num_classes)), ratio)

    @property
    def num_classes(self):
        return len(self.thresholds)


def class_entropies(probs):
    """Mean prediction entropy of the samples argmax-assigned to each class.

    Returns ``(E, counts)``; empty classes get ``E = nan``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InvalidArgument("need a non-empty (n, K) probability batch")
    k = probs.shape[1]
    assign = np.argmax(probs, axis=1)
    h = entropy(probs)
    counts = np.bincount(assign, minlength=k)
    sums = np.bincount(assign, weights=h, minlength=k)
    E = np.full(k, np.nan)
    nz = counts > 0
    E[nz] = sums[nz] / counts[nz]
    return E, counts


def update_thresholds(E, counts, r, num_classes=None):
    """Min-max scale class entropies into ``[(0.5-r) ln K, (0.5+r) ln K]``.

    Classes with no samples, and every class when all populated entropies
    coincide, fall back to ln(K)/2.
    """
    E = np.asarray(E, dtype=np.float64)
    counts = np.asarray(counts)
    k = len(E) if num_classes is None else num_classes
    if not 0.0 <= r <= 0.5:
        raise InvalidArgument(f"threshold ratio must lie in [0, 0.5], got {r}")
    if len(E) != k or len(counts) != k:
        raise InvalidArgument("E and counts must have one entry per class")
    nz = counts > 0
    if not np.any(nz):
        raise InvalidArgument("every class is empty")
    rho = fixed_threshold(k)
    q = np.full(k, rho)
    if r == 0:
        return q
    lo, hi = E[nz].min(), E[nz].max()
    if hi > lo:
        scaled = (E[nz] - lo) / (hi - lo)
        q[nz] = (0.5 - r + 2 * scaled * r) * np.log(k)
    return q


def refresh(state, probs):
    """New ``ThresholdState`` from a full pass of target predictions."""
    E, counts = class_entropies(probs)
    q = update_thresholds(E, counts, state.ratio, state.num_classes)
    return ThresholdState(q, state.ratio, E, counts)


def predict_open(probs, thresholds):
    """Argmax class, or ``K`` (unknown) when entropy exceeds that class's threshold."""
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    k = probs.shape[1]
    kstar = np.argmax(probs, axis=1)
    unknown = entropy(probs) > np.asarray(thresholds)[kstar]
    pred = np.where(unknown, k, kstar)
    return int(pred[0]) if single else pred
