"""Feature extractor with domain-specific batch normalization, the
prototype classifier, and their reverse-mode gradients.

Each layer is ``Linear -> DomainBatchNorm``; a ReLU sits between layers and
the last layer's output is L2-normalized. Batch-norm scale/shift are shared
by both domains, only the running statistics are kept per domain.
"""
import json
import struct

import numpy as np

from . import numerics
from .errors import InvalidArgument, InvalidBatch, StateError

DOMAINS = ("source", "target")
CKPT_MAGIC = b"IOSDA-CKPT-1"


def _check_domain(domain):
    if domain not in DOMAINS:
        raise InvalidArgument(f"domain must be one of {DOMAINS}, got {domain!r}")


class DomainBatchNorm:
    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = {d: np.zeros(dim) for d in DOMAINS}
        self.running_var = {d: np.ones(dim) for d in DOMAINS}

    def forward(self, h, domain, train):
        _check_domain(domain)
        if train:
            n = h.shape[0]
            if n < 2:
                raise InvalidBatch("train-mode batch norm needs at least 2 samples")
            mean = h.mean(axis=0)
            var = h.var(axis=0)
            m = self.momentum
            self.running_mean[domain] = (1 - m) * self.running_mean[domain] + m * mean
            self.running_var[domain] = (1 - m) * self.running_var[domain] + m * var * n / (n - 1)
        else:
            mean = self.running_mean[domain]
            var = self.running_var[domain]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (h - mean) * inv_std
        return self.gamma * xhat + self.beta, (xhat, inv_std, train)

    def backward(self, cache, g):
        xhat, inv_std, train = cache
        dgamma = np.sum(g * xhat, axis=0)
        dbeta = np.sum(g, axis=0)
        dxhat = g * self.gamma
        if train:
            # batch statistics depend on every row of the batch
            dh = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * np.mean(dxhat * xhat, axis=0))
        else:
            dh = dxhat * inv_std
        return dh, dgamma, dbeta


class FeatureExtractor:
    """Perceptron ``d_in -> widths... -> d`` with per-layer domain batch norm."""

    def __init__(self, d_in, widths=(64, 64), d=32, rng=None, bn_momentum=0.1, bn_eps=1e-5):
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [d_in, *widths, d]
        self.d_in = d_in
        self.d = d
        self.weights = []
        self.biases = []
        self.bns = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
            self.bns.append(DomainBatchNorm(fan_out, bn_momentum, bn_eps))

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, x, domain, train):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != self.d_in:
            raise InvalidArgument(f"expected a non-empty (n, {self.d_in}) batch, got {x.shape}")
        caches = []
        h = x
        for k in range(self.n_layers):
            inp = h
            pre = inp @ self.weights[k].T + self.biases[k]
            out, bn_cache = self.bns[k].forward(pre, domain, train)
            last = k == self.n_layers - 1
            caches.append((inp, bn_cache, out))
            h = out if last else np.maximum(out, 0.0)
        feats = numerics.l2_normalize(h)
        return feats, (caches, h)

    def backward(self, cache, grad_feats):
        caches, h = cache
        g = numerics.l2_normalize_backward(h, grad_feats)
        grads = {}
        for k in reversed(range(self.n_layers)):
            inp, bn_cache, out = caches[k]
            if k != self.n_layers - 1:
                g = g * (out > 0)
            g, dgamma, dbeta = self.bns[k].backward(bn_cache, g)
            grads[f"layer{k}.weight"] = g.T @ inp
            grads[f"layer{k}.bias"] = g.sum(axis=0)
            grads[f"layer{k}.bn_scale"] = dgamma
            grads[f"layer{k}.bn_shift"] = dbeta
            g = g @ self.weights[k]
        return grads, g


class PrototypeClassifier:
    """Bias-free linear classifier whose columns act as class prototypes."""

    def __init__(self, d, num_classes, tau=0.05, rng=None):
        if not tau > 0:
            raise InvalidArgument(f"temperature must be positive, got {tau}")
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / np.sqrt(d)
        self.W = rng.uniform(-bound, bound, size=(d, num_classes))
        self.tau = tau

    @property
    def num_classes(self):
        return self.W.shape[1]

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.W.shape[0]:
            raise InvalidArgument(f"feature dim {x.shape[-1]} != prototype dim {self.W.shape[0]}")
        return x @ self.W

    def classify(self, x):
        return numerics.softmax_tau(self.logits(x), self.tau)


class Network:
    """Extractor and classifier bundled with a per-domain forward record."""

    def __init__(self, d_in, num_classes, widths=(64, 64), d=32, tau=0.05, rng=None,
                 bn_momentum=0.1, bn_eps=1e-5):
        rng = np.random.default_rng(0) if rng is None else rng
        self.extractor = FeatureExtractor(d_in, widths, d, rng, bn_momentum, bn_eps)
        self.classifier = PrototypeClassifier(d, num_classes, tau, rng)
        self.widths = tuple(widths)
        self._records = {}

    @property
    def num_classes(self):
        return self.classifier.num_classes

    @property
    def tau(self):
        return self.classifier.tau

    def parameters(self):
        """Name -> array mapping; arrays are the live parameter buffers."""
        params = {}
        ex = self.extractor
        for k in range(ex.n_layers):
            params[f"layer{k}.weight"] = ex.weights[k]
            params[f"layer{k}.bias"] = ex.biases[k]
            params[f"layer{k}.bn_scale"] = ex.bns[k].gamma
            params[f"layer{k}.bn_shift"] = ex.bns[k].beta
        params["classifier.W"] = self.classifier.W
        return params

    def buffers(self):
        bufs = {}
        for k, bn in enumerate(self.extractor.bns):
            for d in DOMAINS:
                bufs[f"layer{k}.{d}.running_mean"] = bn.running_mean[d]
                bufs[f"layer{k}.{d}.running_var"] = bn.running_var[d]
        return bufs

    def forward(self, x, domain, train=False):
        """Return unit-norm features and class probabilities.

        In train mode the pass is recorded for a later ``backward`` on the
        same domain.
        """
        feats, cache = self.extractor.forward(x, domain, train)
        probs = self.classifier.classify(feats)
        if train:
            self._records[domain] = (cache, feats, probs)
        return feats, probs

    def extract(self, x, domain, train=False):
        return self.forward(x, domain, train)[0]

    def backward(self, domain, grad_feats=None, grad_probs=None):
        """Gradients of a scalar loss given its gradients w.r.t. the recorded
        features and probabilities of ``domain``."""
        if domain not in self._records:
            raise StateError(f"backward on {domain!r} without a recorded forward pass")
        cache, feats, probs = self._records.pop(domain)
        g_feats = np.zeros_like(feats) if grad_feats is None else np.array(grad_feats, dtype=np.float64)
        grads = {}
        if grad_probs is not None:
            g_logits = numerics.softmax_tau_backward(probs, grad_probs, self.tau)
            grads["classifier.W"] = feats.T @ g_logits
            g_feats = g_feats + g_logits @ self.classifier.W.T
        else:
            grads["classifier.W"] = np.zeros_like(self.classifier.W)
        ex_grads, _ = self.extractor.backward(cache, g_feats)
        grads.update(ex_grads)
        return grads

    def discard_records(self):
        self._records.clear()


def save_checkpoint(path, net, metadata=None):
    """Write parameters and running statistics to ``path``.

    Layout: magic line, one JSON header line (metadata plus array index),
    then the arrays as little-endian float64 in header order.
    """
    arrays = {**net.parameters(), **net.buffers()}
    names = sorted(arrays)
    header = {
        "metadata": metadata or {},
        "architecture": {
            "d_in": net.extractor.d_in,
            "widths": list(net.widths),
            "d": net.extractor.d,
            "num_classes": net.num_classes,
            "tau": net.tau,
            "bn_momentum": net.extractor.bns[0].momentum,
            "bn_eps": net.extractor.bns[0].eps,
        },
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            a = np.ascontiguousarray(arrays[n], dtype="<f8")
            fh.write(struct.pack("<Q", a.size))
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns ``(network, metadata)``."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != CKPT_MAGIC:
            raise InvalidArgument(f"{path}: not a checkpoint (magic {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        arch = header["architecture"]
        net = Network(arch["d_in"], arch["num_classes"], arch["widths"], arch["d"], arch["tau"],
                      bn_momentum=arch["bn_momentum"], bn_eps=arch["bn_eps"])
        targets = {**net.parameters(), **net.buffers()}
        for entry in header["arrays"]:
            (size,) = struct.unpack("<Q", fh.read(8))
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(entry["shape"])
            dest = targets[entry["name"]]
            if dest.shape != data.shape:
                raise InvalidArgument(f"{entry['name']}: shape {data.shape} != {dest.shape}")
            dest[...] = data
    return net, header["metadata"]
