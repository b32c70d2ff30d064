"""Training objectives. Each loss returns ``(value, grad)`` where ``grad`` is
taken w.r.t. the loss's array input (probabilities or features).

Class labels are 0-based: known classes ``0..K-1``; extended pseudo-labels
for unknown samples are ``K + z`` for cluster ``z``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidLabel
from .numerics import KL_EPS, entropy, entropy_grad, sym_kl, sym_kl_grad


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    nc: float
    es: float
    cl: float
    total: float
    eta1: float
    eta2: float

    def as_dict(self):
        return {"ce": self.ce, "nc": self.nc, "es": self.es, "cl": self.cl, "total": self.total}


def ce_loss(probs, labels, eps=KL_EPS):
    """Mean negative log-probability of the true class."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.shape != (n,):
        raise InvalidArgument(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidLabel(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    py = probs[rows, labels]
    value = -np.mean(np.log(np.maximum(py, eps)))
    grad = np.zeros_like(probs)
    grad[rows, labels] = np.where(py > eps, -1.0 / np.maximum(py, eps), 0.0) / n
    return float(value), grad


def es_loss(probs, rho, margin):
    """Entropy separation: push entropies away from ``rho`` outside a band
    of half-width ``margin``; the band edge counts as outside."""
    probs = np.asarray(probs, dtype=np.float64)
    if margin < 0:
        raise InvalidArgument(f"margin must be >= 0, got {margin}")
    n = probs.shape[0]
    dev = entropy(probs) - rho
    active = np.abs(dev) >= margin
    value = -np.sum(np.abs(dev[active])) / n
    coef = np.where(active, -np.sign(dev), 0.0) / n
    grad = coef[:, None] * entropy_grad(probs)
    grad[~active] = 0.0
    return float(value), grad


def pair_weight(pseudo_i, pseudo_j, conf_i, conf_j):
    """min of the two confidences when pseudo-labels agree, else 0."""
    for c in (conf_i, conf_j):
        if not 0.0 <= c <= 1.0:
            raise InvalidArgument(f"confidence must lie in [0, 1], got {c}")
    return float(min(conf_i, conf_j)) if pseudo_i == pseudo_j else 0.0


def pair_weights(pseudo, conf):
    """Matrix of ``pair_weight`` over a batch, with a zero diagonal."""
    pseudo = np.asarray(pseudo)
    conf = np.asarray(conf, dtype=np.float64)
    if np.any(conf < 0) or np.any(conf > 1):
        raise InvalidArgument("confidences must lie in [0, 1]")
    w = np.where(pseudo[:, None] == pseudo[None, :], np.minimum(conf[:, None], conf[None, :]), 0.0)
    np.fill_diagonal(w, 0.0)
    return w


def cl_loss(probs, pseudo, conf, eps=KL_EPS):
    """Confidence-weighted symmetric KL between same-pseudo-label pairs,
    normalized by the squared batch size. Weights are constants."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    if n < 1:
        raise InvalidArgument("empty batch")
    if len(pseudo) != n or len(conf) != n:
        raise InvalidArgument("pseudo-labels and confidences must align with the batch")
    w = pair_weights(pseudo, conf)
    grad = np.zeros_like(probs)
    ii, jj = np.nonzero(w)
    if ii.size == 0:
        return 0.0, grad
    pi, pj = probs[ii], probs[jj]
    wij = w[ii, jj] / n**2
    value = np.sum(wij * sym_kl(pi, pj, eps))
    gi, gj = sym_kl_grad(pi, pj, eps)
    np.add.at(grad, ii, wij[:, None] * gi)
    np.add.at(grad, jj, wij[:, None] * gj)
    return float(value), grad


def nc_loss(feats, indices, bank, prototypes, tau):
    """Neighborhood clustering entropy.

    ``feats`` (n, d) are live batch features, ``indices`` their rows in
    ``bank`` (N_t, d); ``prototypes`` is the (d, K) classifier matrix. Each
    sample is compared to every bank row except its own plus all prototypes.
    Only ``feats`` receives gradient.
    """
    feats = np.asarray(feats, dtype=np.float64)
    indices = np.asarray(indices)
    bank = np.asarray(bank, dtype=np.float64)
    n_t = bank.shape[0]
    if np.any(indices < 0) or np.any(indices >= n_t):
        raise InvalidArgument(f"bank index out of range [0, {n_t})")
    F = np.concatenate([bank, np.asarray(prototypes, dtype=np.float64).T], axis=0)
    n = feats.shape[0]
    s = feats @ F.T / tau
    rows = np.arange(n)
    s[rows, indices] = -np.inf
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=1, keepdims=True)
    h = entropy(p)
    value = np.mean(h)
    # dH/ds_j = -p_j (ln p_j + H); the excluded column has p = 0
    ds = -(p * (np.log(np.maximum(p, np.finfo(np.float64).tiny)) + h[:, None]))
    ds[rows, indices] = 0.0
    grad = ds @ F / (tau * n)
    return float(value), grad


def total_loss(ce, nc, es, cl, eta1=0.05, eta2=0.1):
    if eta1 < 0 or eta2 < 0:
        raise InvalidArgument("loss weights must be non-negative")
    total = ce + eta1 * (nc + es) + eta2 * cl
    return LossBreakdown(ce=ce, nc=nc, es=es, cl=cl, total=total, eta1=eta1, eta2=eta2)
