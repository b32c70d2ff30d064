"""Small numerical primitives: tempered softmax, entropy, symmetric KL,
row normalization and a central-difference gradient checker.

All functions accept a single vector or a batch of row vectors and work in
float64.
"""
import numpy as np

from .errors import DegenerateInput, InvalidArgument, OracleFailure

KL_EPS = 1e-8
NORM_EPS = 1e-12


def _as_float(x):
    return np.asarray(x, dtype=np.float64)


def softmax_tau(logits, tau=1.0):
    """Softmax of ``logits / tau`` along the last axis."""
    z = _as_float(logits)
    if not tau > 0 or not np.isfinite(tau):
        raise InvalidArgument(f"temperature must be positive, got {tau}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgument("logits must be finite")
    z = z / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_tau_backward(probs, grad_probs, tau=1.0):
    """Pull a gradient w.r.t. ``softmax_tau`` output back to the logits."""
    p = _as_float(probs)
    g = _as_float(grad_probs)
    inner = np.sum(g * p, axis=-1, keepdims=True)
    return p * (g - inner) / tau


def xlogx(p):
    """Elementwise p*ln(p) with 0*ln(0) = 0."""
    p = _as_float(p)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def entropy(p):
    """Shannon entropy (natural log) along the last axis."""
    h = -np.sum(xlogx(p), axis=-1)
    return np.maximum(h, 0.0)


def entropy_grad(p):
    """d entropy / d p, i.e. -(ln p + 1). Zero entries get a finite stand-in;
    every caller multiplies this by p when chaining through a softmax."""
    p = _as_float(p)
    return -(np.log(np.maximum(p, np.finfo(np.float64).tiny)) + 1.0)


def sym_kl(p, q, eps=KL_EPS):
    """KL(p||q) + KL(q||p) along the last axis, logs taken of max(., eps).

    The two KL terms combine to sum_k (p_k - q_k) (ln p_k - ln q_k).
    """
    p = _as_float(p)
    q = _as_float(q)
    if p.shape[-1] != q.shape[-1]:
        raise InvalidArgument(f"support mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    return np.sum((p - q) * (lp - lq), axis=-1)


def sym_kl_grad(p, q, eps=KL_EPS):
    """Gradient of ``sym_kl`` w.r.t. p and q (the clamp passes zero gradient)."""
    p = _as_float(p)
    q = _as_float(q)
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    diff = p - q
    dlp = np.where(p > eps, 1.0 / np.maximum(p, eps), 0.0)
    dlq = np.where(q > eps, 1.0 / np.maximum(q, eps), 0.0)
    gp = (lp - lq) + diff * dlp
    gq = -(lp - lq) - diff * dlq
    return gp, gq


def l2_normalize(v):
    """Scale each row of ``v`` to unit Euclidean norm."""
    v = _as_float(v)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateInput("cannot normalize a (near-)zero vector")
    return v / norms


def l2_normalize_backward(v, grad_out):
    """Gradient through row normalization, given the *unnormalized* input."""
    v = _as_float(v)
    g = _as_float(grad_out)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norms
    return (g - u * np.sum(g * u, axis=-1, keepdims=True)) / norms


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = _as_float(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailure(f"non-finite function value at coordinate {k}")
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """True when two gradients agree to ``rtol`` relative with an ``atol`` floor."""
    a = _as_float(analytic)
    n = _as_float(numeric)
    return bool(np.all(np.abs(a - n) <= atol + rtol * np.maximum(np.abs(a), np.abs(n))))
