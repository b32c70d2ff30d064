"""Mini-batch training with periodic cluster and threshold refreshes."""
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .clustering import MemoryBank, extended_pseudo_labels, kmeans, num_unknown_clusters
from .errors import InvalidArgument, MetricUndefined, NumericFailure
from .evaluation import metrics_from_predictions
from .rng import stream
from .thresholding import ThresholdState, fixed_threshold, predict_open, refresh


@dataclass
class TrainConfig:
    tau: float = 0.05
    eta1: float = 0.05
    eta2: float = 0.1
    margin: float = 0.5
    r: float = 0.15
    z_fraction: float = 0.5
    batch_size: int = 32
    base_lr: float = 0.01
    momentum: float = 0.9
    gamma: float = 10.0
    power: float = -0.75
    epochs: int = 30
    kmeans_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau}")
        if not 0 <= self.r <= 0.5:
            raise InvalidArgument(f"r must lie in [0, 0.5], got {self.r}")
        if self.eta1 < 0 or self.eta2 < 0:
            raise InvalidArgument("eta1 and eta2 must be non-negative")
        if self.margin < 0:
            raise InvalidArgument("margin must be non-negative")
        if self.batch_size < 2:
            raise InvalidArgument("batch_size must be at least 2")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be non-negative")
        if not self.z_fraction > 0:
            raise InvalidArgument("z_fraction must be positive")


def lr_at(iteration, cfg):
    """Polynomially decayed learning rate."""
    return cfg.base_lr * (1 + cfg.gamma * iteration / 10000) ** cfg.power


class SGD:
    """Classical momentum: ``v <- mu v + g; theta <- theta - lr v``."""

    def __init__(self, params, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        self.iteration = 0

    def step(self, grads, lr):
        for name, g in grads.items():
            p = self.params[name]
            if g.shape != p.shape:
                raise InvalidArgument(f"{name}: gradient shape {g.shape} != parameter {p.shape}")
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p -= lr * v
        self.iteration += 1


def sgd_step(params, grads, state, lr, momentum):
    """Functional form of one ``SGD.step``; ``state`` maps name -> velocity."""
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise InvalidArgument(f"{name}: gradient shape {g.shape} != parameter {np.shape(p)}")
        v = momentum * state.get(name, np.zeros_like(g)) + g
        new_state[name] = v
        new_params[name] = p - lr * v
    return new_params, new_state


@dataclass
class EpochSummary:
    epoch: int
    ce: float
    nc: float
    es: float
    cl: float
    total: float
    lr: float
    wall_ms: float
    thresholds: np.ndarray
    metrics: object = None  # MetricsReport when target ground truth is available


@dataclass
class TrainState:
    bank: MemoryBank
    clusters: object
    thresholds: ThresholdState
    optimizer: SGD
    batch_rng: np.random.Generator
    kmeans_rng: np.random.Generator
    step_losses: list = field(default_factory=list)


def sample_batch(rng, n, batch_size):
    """Indices for one mini-batch: distinct within the batch, drawn
    independently per call."""
    return rng.choice(n, size=min(batch_size, n), replace=False)


def steps_per_epoch(n_source, n_target, batch_size):
    return math.ceil(max(n_source, n_target) / batch_size)


def init_state(net, target, cfg):
    """Fill the bank with an eval-mode pass and run the first clustering."""
    bank = MemoryBank(len(target), net.extractor.d)
    bank.update(np.arange(len(target)), net.extract(target.X, "target", train=False))
    kmeans_rng = stream(cfg.seed, "kmeans")
    Z = num_unknown_clusters(net.num_classes, cfg.z_fraction)
    clusters = kmeans(bank, Z, kmeans_rng, cfg.kmeans_iters)
    return TrainState(
        bank=bank,
        clusters=clusters,
        thresholds=ThresholdState.initial(net.num_classes, cfg.r),
        optimizer=SGD(net.parameters(), cfg.momentum),
        batch_rng=stream(cfg.seed, "batching"),
        kmeans_rng=kmeans_rng,
    )


def train_step(net, source, target, state, cfg):
    """One optimization step; returns the step's ``LossBreakdown``."""
    K = net.num_classes
    rho = fixed_threshold(K)
    s_idx = sample_batch(state.batch_rng, len(source), cfg.batch_size)
    t_idx = sample_batch(state.batch_rng, len(target), cfg.batch_size)

    batches = {"source": s_idx.tolist(), "target": t_idx.tolist()}
    try:
        _, ps = net.forward(source.X[s_idx], "source", train=True)
        ce, g_ps = losses.ce_loss(ps, source.labels[s_idx])

        ft, pt = net.forward(target.X[t_idx], "target", train=True)
        nc, g_ft = losses.nc_loss(ft, t_idx, state.bank.V, net.classifier.W, net.tau)
        es, g_es = losses.es_loss(pt, rho, cfg.margin)
        pseudo, conf = extended_pseudo_labels(pt, ft, state.thresholds.thresholds, state.clusters)
        cl, g_cl = losses.cl_loss(pt, pseudo, conf)
    except InvalidArgument as exc:
        # non-finite activations surface as invalid softmax or norm inputs
        net.discard_records()
        raise NumericFailure(f"forward pass failed: {exc}", batch_indices=batches) from exc
    parts = losses.total_loss(ce, nc, es, cl, cfg.eta1, cfg.eta2)
    if not np.isfinite(parts.total):
        net.discard_records()
        raise NumericFailure(f"non-finite loss {parts.as_dict()}", batch_indices=batches)

    grads = net.backward("source", grad_probs=g_ps)
    g_t = net.backward("target", grad_feats=cfg.eta1 * g_ft, grad_probs=cfg.eta1 * g_es + cfg.eta2 * g_cl)
    for name, g in g_t.items():
        grads[name] = grads[name] + g
    state.optimizer.step(grads, lr_at(state.optimizer.iteration, cfg))
    state.bank.update(t_idx, ft)
    return parts


def end_of_epoch(net, target, state, cfg):
    """Re-cluster the bank, then refresh thresholds from a full eval pass.

    Returns the eval-pass probabilities.
    """
    Z = num_unknown_clusters(net.num_classes, cfg.z_fraction)
    state.clusters = kmeans(state.bank, Z, state.kmeans_rng, cfg.kmeans_iters)
    _, probs = net.forward(target.X, "target", train=False)
    state.thresholds = refresh(state.thresholds, probs)
    return probs


def train_epoch(net, source, target, state, cfg, epoch=0, eval_labels=None):
    start = time.perf_counter()
    lr = lr_at(state.optimizer.iteration, cfg)
    parts = [train_step(net, source, target, state, cfg)
             for _ in range(steps_per_epoch(len(source), len(target), cfg.batch_size))]
    state.step_losses = parts
    probs = end_of_epoch(net, target, state, cfg)
    metrics = None
    if eval_labels is not None:
        pred = predict_open(probs, state.thresholds.thresholds)
        try:
            metrics = metrics_from_predictions(pred, eval_labels, net.num_classes)
        except MetricUndefined:
            metrics = None
    mean = {k: float(np.mean([getattr(p, k) for p in parts])) for k in ("ce", "nc", "es", "cl", "total")}
    return EpochSummary(
        epoch=epoch, lr=lr, wall_ms=1000 * (time.perf_counter() - start),
        thresholds=state.thresholds.thresholds.copy(), metrics=metrics, **mean,
    )


def fit(net, source, target, cfg, evaluate=True, callback=None):
    """Train ``net`` in place for ``cfg.epochs`` epochs; returns
    ``(net, history, state)``.

    Target ground truth, when present and ``evaluate`` is set, is used only
    for the per-epoch metrics.
    """
    cfg.validate()
    net.classifier.tau = cfg.tau
    history = []
    if cfg.epochs == 0:
        return net, history, None
    state = init_state(net, target, cfg)
    eval_labels = target.labels if evaluate else None
    for epoch in range(1, cfg.epochs + 1):
        summary = train_epoch(net, source, target, state, cfg, epoch, eval_labels)
        history.append(summary)
        if callback is not None:
            callback(summary)
    return net, history, state


def config_dict(cfg):
    return asdict(cfg)
