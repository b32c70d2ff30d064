"""Running one configured experiment and writing its artifacts."""
import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import VARIANTS, dump, synthetic_task, train_config
from .data import load_feature_csv, make_synthetic_task, openness
from .errors import MetricUndefined
from .evaluation import metrics_from_predictions
from .model import Network, save_checkpoint
from .rng import stream, stream_seed
from .thresholding import predict_open
from .training import fit


@dataclass
class RunResult:
    net: Network
    history: list
    state: object
    source: object
    target: object
    train_cfg: object


def build_data(cfg):
    """``(source, target)`` from the task section."""
    task = cfg["task"]
    if task["kind"] == "synthetic":
        return make_synthetic_task(synthetic_task(cfg), stream_seed(cfg["seed"], "data"))
    c = task["csv"]
    source = load_feature_csv(c["source"], "source", c["num_classes"])
    target = load_feature_csv(c["target"], "target", source.num_classes)
    return source, target


def build_network(cfg, d_in, num_classes):
    m = cfg["model"]
    return Network(d_in, num_classes, widths=tuple(m["widths"]), d=m["d"], tau=cfg["train"]["tau"],
                   rng=stream(cfg["seed"], "init"), bn_momentum=m["bn_momentum"], bn_eps=m["bn_eps"])


def run(cfg, variant="full", data=None, callback=None):
    """Train one variant; ``data`` reuses already built datasets."""
    source, target = build_data(cfg) if data is None else data
    tcfg = train_config(cfg, **VARIANTS[variant])
    net = build_network(cfg, source.d_in, source.num_classes)
    evaluate = cfg["eval"]["enabled"] and target.labels is not None
    net, history, state = fit(net, source, target, tcfg, evaluate=evaluate, callback=callback)
    return RunResult(net, history, state, source, target, tcfg)


def _fmt(v):
    return "" if v is None else repr(float(v))


def epochs_csv(history, num_classes):
    """Per-epoch log. Wall time lives in a separate file so this one is
    reproducible byte for byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "ce", "nc", "es", "cl", "total", "lr"]
               + [f"q_{k + 1}" for k in range(num_classes)] + ["os_star", "unk", "hos"])
    for h in history:
        m = h.metrics
        scores = [None] * 3 if m is None else [100 * m.os_star, 100 * m.unk, 100 * m.hos]
        w.writerow([h.epoch] + [_fmt(getattr(h, k)) for k in ("ce", "nc", "es", "cl", "total", "lr")]
                   + [_fmt(q) for q in h.thresholds] + [_fmt(s) for s in scores])
    return buf.getvalue()


def timing_csv(history):
    return "epoch,wall_ms\n" + "".join(f"{h.epoch},{h.wall_ms:.3f}\n" for h in history)


def report_row(report):
    d = report.as_dict(percent=True)
    keys = list(d)
    return ",".join(keys) + "\n" + ",".join(_fmt(d[k]) for k in keys) + "\n"


def final_report(result):
    """Metrics of the final model, or ``None`` without target ground truth."""
    tgt = result.target
    if tgt.labels is None or result.state is None:
        return None
    _, probs = result.net.forward(tgt.X, "target", train=False)
    pred = predict_open(probs, result.state.thresholds.thresholds)
    try:
        return metrics_from_predictions(pred, tgt.labels, result.net.num_classes)
    except MetricUndefined:
        return None


def manifest(cfg, source, target):
    out = {
        "seed": cfg["seed"],
        "version": __version__,
        "source_counts": source.class_counts().tolist(),
        "source_size": len(source),
        "target_size": len(target),
    }
    if cfg["task"]["kind"] == "synthetic":
        out["omega"] = cfg["task"]["synthetic"]["imbalance"]["omega"]
    if target.labels is not None:
        out["target_counts"] = target.class_counts().tolist()
        out["openness"] = openness(target)
    return out


def prepare_out_dir(path, force):
    """Create ``path``; refuse to reuse a non-empty one unless ``force``."""
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise FileExistsError(f"{path} is not empty (use --force to overwrite)")
    os.makedirs(path, exist_ok=True)


def write_run(out_dir, cfg, result, dump_clusters=False):
    """Write every artifact of a finished run into ``out_dir``."""
    def put(name, text):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    put("config.yaml", dump(cfg))
    K = result.net.num_classes
    put("manifest.json", json.dumps(manifest(cfg, result.source, result.target), indent=2, sort_keys=True) + "\n")
    put("epochs.csv", epochs_csv(result.history, K))
    put("timing.csv", timing_csv(result.history))
    meta = {"seed": cfg["seed"], "version": __version__}
    if result.state is not None:
        meta["thresholds"] = [float(q) for q in result.state.thresholds.thresholds]
    save_checkpoint(os.path.join(out_dir, "model.ckpt"), result.net, meta)
    report = final_report(result)
    if report is not None:
        put("report.txt", report.to_text())
        put("report.csv", report_row(report))
    if dump_clusters and result.state is not None:
        a = result.state.clusters.assignment
        put("clusters.csv", "sample_index,cluster\n" + "".join(f"{i},{int(z)}\n" for i, z in enumerate(a)))
    return report


def thresholds_from_metadata(meta, num_classes):
    q = meta.get("thresholds")
    if q is None:
        return np.full(num_classes, np.log(num_classes) / 2)
    return np.asarray(q, dtype=np.float64)
