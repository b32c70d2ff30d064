"""Open-set metrics: OS*, UNK, HOS, openness and ablation tables."""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, MetricUndefined
from .thresholding import predict_open


@dataclass
class MetricsReport:
    os_star: float
    unk: float
    hos: float
    per_class_acc: np.ndarray  # nan for classes absent from the target
    openness: float
    confusion: np.ndarray  # (K+1, K+1), rows = ground truth
    absent_classes: tuple = ()

    def as_dict(self, percent=False):
        s = 100.0 if percent else 1.0
        out = {"os_star": self.os_star * s, "unk": self.unk * s, "hos": self.hos * s,
               "openness": self.openness}
        for k, a in enumerate(self.per_class_acc):
            out[f"acc_{k + 1}"] = a * s
        return out

    def to_text(self):
        lines = [f"{k}={v:.6f}" for k, v in self.as_dict().items()]
        lines.append("absent_classes=" + ",".join(str(c + 1) for c in self.absent_classes))
        lines.append("confusion=" + ";".join(",".join(str(int(v)) for v in row) for row in self.confusion))
        return "\n".join(lines) + "\n"


def hos(os_star, unk):
    """Harmonic mean of known-class and unknown accuracy."""
    for v in (os_star, unk):
        if not 0.0 <= v <= 1.0:
            raise InvalidArgument(f"accuracies must lie in [0, 1], got {v}")
    if os_star + unk == 0:
        return 0.0
    return 2 * os_star * unk / (os_star + unk)


def metrics_from_predictions(pred, truth, num_classes):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    K = num_classes
    if len(truth) == 0:
        raise InvalidArgument("empty target")
    conf = np.zeros((K + 1, K + 1), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    support = conf.sum(axis=1)
    if support[:K].sum() == 0:
        raise MetricUndefined("target has no known-class samples: OS* undefined")
    if support[K] == 0:
        raise MetricUndefined("target has no unknown samples: UNK undefined")
    per_class = np.full(K, np.nan)
    present = support[:K] > 0
    per_class[present] = np.diag(conf)[:K][present] / support[:K][present]
    os_star = float(np.mean(per_class[present]))
    unk = float(conf[K, K] / support[K])
    return MetricsReport(
        os_star=os_star,
        unk=unk,
        hos=hos(os_star, unk),
        per_class_acc=per_class,
        openness=float(support[K] / support.sum()),
        confusion=conf,
        absent_classes=tuple(int(k) for k in np.flatnonzero(~present)),
    )


def predict_target(net, thresholds, X):
    _, probs = net.forward(X, "target", train=False)
    return predict_open(probs, thresholds)


def evaluate(net, thresholds, target):
    if target.labels is None:
        raise InvalidArgument("evaluation needs target ground truth")
    pred = predict_target(net, thresholds, target.X)
    return metrics_from_predictions(pred, target.labels, net.num_classes)


@dataclass
class AblationRow:
    name: str
    final_hos: list
    best_hos: list

    @property
    def mean_final(self):
        return float(np.mean(self.final_hos))

    @property
    def std_final(self):
        return float(np.std(self.final_hos, ddof=1)) if len(self.final_hos) > 1 else 0.0

    @property
    def mean_best(self):
        return float(np.mean(self.best_hos))

    @property
    def std_best(self):
        return float(np.std(self.best_hos, ddof=1)) if len(self.best_hos) > 1 else 0.0


def compare_ablations(histories, names):
    """Summarize HOS per variant.

    ``histories[v]`` is a list over seeds of per-epoch ``MetricsReport``
    sequences (or a single sequence for one seed).
    """
    if len(histories) != len(names):
        raise InvalidArgument("need one name per variant")
    rows = []
    n_epochs = None
    for name, runs in zip(names, histories):
        if runs and isinstance(runs[0], MetricsReport):
            runs = [runs]
        final, best = [], []
        for series in runs:
            if n_epochs is None:
                n_epochs = len(series)
            if len(series) != n_epochs or not series:
                raise InvalidArgument("all histories must cover the same number of epochs")
            h = [r.hos for r in series]
            final.append(h[-1])
            best.append(max(h))
        rows.append(AblationRow(name, final, best))
    return rows


def format_ablation_table(rows):
    lines = ["variant,seeds,final_hos_mean,final_hos_std,best_hos_mean,best_hos_std"]
    for r in rows:
        lines.append(f"{r.name},{len(r.final_hos)},{100 * r.mean_final:.2f},{100 * r.std_final:.2f},"
                     f"{100 * r.mean_best:.2f},{100 * r.std_best:.2f}")
    return "\n".join(lines) + "\n"
