"""Three-phase optimization: per-view attention classifiers first, then the
joint collaboration model on the frozen first-stage traces, then the fusion
head on frozen second-stage outputs. Plus evaluation and the ablation grid."""

from __future__ import annotations

import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .cells import CollabOptions
from .model import (CamParams, init_cam_params, init_fusion_head,
                    init_stage_one_view, init_stage_two_model, correlative_fusion,
                    predict, stage1_forward, stage2_forward)
from .tensor import cross_entropy  # noqa: F401  (this module's loss surface)

THREADS_ENV = "CAMSEQ_THREADS"


class NonFiniteLossError(FloatingPointError):
    """A loss or gradient went NaN/Inf; the message names where."""


@dataclass
class RunConfig:
    """Hyperparameters and seeds governing one experiment.

    The paper-scale defaults are hidden/attention width 128 and learning
    rates 5e-4 (first stage) and 1e-3 (second stage); desk-scale runs shrink
    the widths and epoch budgets through these fields.
    """
    hidden_dim: int = 128
    att_dim: int | None = None  # defaults to hidden_dim
    lr_stage1: float = 5e-4
    lr_stage2: float = 1e-3
    lr_fusion: float = 1e-3
    batch_size: int = 32
    epochs_stage1: int = 100
    epochs_stage2: int = 100
    epochs_fusion: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    collaborate_rgb: bool = True
    collaborate_depth: bool = True
    hidden_from_collaborated: bool = True

    def __post_init__(self):
        for lr in (self.lr_stage1, self.lr_stage2, self.lr_fusion):
            if lr <= 0:
                raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    @property
    def attention_dim(self):
        return self.hidden_dim if self.att_dim is None else self.att_dim

    def options(self, **overrides):
        base = dict(collaborate_rgb=self.collaborate_rgb,
                    collaborate_depth=self.collaborate_depth,
                    hidden_from_collaborated=self.hidden_from_collaborated)
        base.update(overrides)
        return CollabOptions(**base)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    """Loss curves per phase, final per-head test metrics, and wall-clock.

    Wall-clock seconds stay on the in-memory object only; the serialized
    report carries just the reproducible content.
    """
    config: dict
    loss_curves: dict = field(default_factory=dict)
    accuracy: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    def to_json(self):
        import json
        payload = {
            "config": self.config,
            "loss_curves": self.loss_curves,
            "accuracy": self.accuracy,
            "confusion": self.confusion,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def stream(seed, tag):
    """Named deterministic RNG stream, independent of creation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]))


class Adam:
    """Adam with bias correction over a list of (name, DiffArray) blocks."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = [np.zeros_like(p.values) for _, p in self.named_params]
        self._v = [np.zeros_like(p.values) for _, p in self.named_params]

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for (name, p), m, v in zip(self.named_params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteLossError(f"non-finite gradient in block {name}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _stack_view(samples, view):
    return np.stack([s.x_r if view == "r" else s.x_d for s in samples], axis=2)


def _stack_traces(traces, samples, view):
    try:
        return np.stack([traces[s.id][view] for s in samples], axis=1)
    except KeyError as exc:
        raise KeyError(f"missing first-stage trace for sample id {exc.args[0]}") from exc


def _labels(samples):
    return np.array([s.label for s in samples], dtype=np.intp)


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_loss(loss, phase, epoch):
    value = float(loss.values)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss in {phase} at epoch {epoch}")
    return value


def materialize_traces(dataset, view_r, view_d):
    """Frozen per-sample forward pass producing both views' traces."""
    traces = {}
    for s in dataset.all_samples:
        _, z_r = stage1_forward(s.x_r, view_r)
        _, z_d = stage1_forward(s.x_d, view_d)
        traces[s.id] = {"r": z_r.values.copy(), "d": z_d.values.copy()}
    return traces


def train_stage1(dataset, config):
    """Train the two view-specific models independently (shared batch order,
    separate losses and optimizers), then freeze and emit every sample's
    attention trace for the second stage."""
    att_dim = config.attention_dim
    view_r = init_stage_one_view(dataset.d_r, config.hidden_dim, att_dim,
                                 dataset.n_classes, stream(config.seed, "init-stage1-rgb"))
    view_d = init_stage_one_view(dataset.d_d, config.hidden_dim, att_dim,
                                 dataset.n_classes, stream(config.seed, "init-stage1-depth"))
    opt_r = Adam(view_r.named("s1r"), config.lr_stage1,
                 config.adam_beta1, config.adam_beta2, config.adam_eps)
    opt_d = Adam(view_d.named("s1d"), config.lr_stage1,
                 config.adam_beta1, config.adam_beta2, config.adam_eps)
    shuffle = stream(config.seed, "shuffle-stage1")
    train = dataset.train
    curves = {"stage1_r": [], "stage1_d": []}
    for epoch in range(config.epochs_stage1):
        sums = {"stage1_r": 0.0, "stage1_d": 0.0}
        for idx in _epoch_batches(len(train), config.batch_size, shuffle):
            batch = [train[i] for i in idx]
            labels = _labels(batch)
            for key, view, opt in (("stage1_r", view_r, opt_r),
                                   ("stage1_d", view_d, opt_d)):
                opt.zero_grad()
                with T.Tape() as tape:
                    logits, _ = stage1_forward(_stack_view(batch, key[-1]), view)
                    loss = T.cross_entropy(logits, labels)
                    value = _check_loss(loss, key, epoch)
                    T.backward(loss, tape)
                opt.step()
                sums[key] += value * len(batch)
        for key in curves:
            curves[key].append(sums[key] / len(train))
    traces = materialize_traces(dataset, view_r, view_d)
    return view_r, view_d, traces, curves


def train_stage2(dataset, traces, config):
    """Train the joint collaboration model; the two per-view losses are
    summed per batch and the first-stage traces stay constant."""
    model = init_stage_two_model(dataset.d_r, dataset.d_d, config.hidden_dim,
                                 config.attention_dim, dataset.n_classes,
                                 stream(config.seed, "init-stage2"))
    opt = Adam(model.named("s2"), config.lr_stage2,
               config.adam_beta1, config.adam_beta2, config.adam_eps)
    shuffle = stream(config.seed, "shuffle-stage2")
    options = config.options()
    train = dataset.train
    curve = []
    for epoch in range(config.epochs_stage2):
        total = 0.0
        for idx in _epoch_batches(len(train), config.batch_size, shuffle):
            batch = [train[i] for i in idx]
            labels = _labels(batch)
            opt.zero_grad()
            with T.Tape() as tape:
                logits_r, logits_d, _, _ = stage2_forward(
                    _stack_view(batch, "r"), _stack_view(batch, "d"),
                    _stack_traces(traces, batch, "r"), _stack_traces(traces, batch, "d"),
                    model, options)
                loss = T.add(T.cross_entropy(logits_r, labels),
                             T.cross_entropy(logits_d, labels))
                value = _check_loss(loss, "stage2", epoch)
                T.backward(loss, tape)
            opt.step()
            total += value * len(batch)
        curve.append(total / len(train))
    return model, curve


def _stage2_probabilities(samples, traces, model, options):
    probs_r, probs_d = [], []
    for s in samples:
        logits_r, logits_d, _, _ = stage2_forward(
            s.x_r, s.x_d, traces[s.id]["r"], traces[s.id]["d"], model, options)
        probs_r.append(T.softmax_np(logits_r.values))
        probs_d.append(T.softmax_np(logits_d.values))
    return np.stack(probs_r, axis=1), np.stack(probs_d, axis=1)


def train_fusion(dataset, model, traces, config):
    """Train only the fusion head on the frozen second-stage distributions."""
    options = config.options()
    head = init_fusion_head(dataset.n_classes, stream(config.seed, "init-fusion"))
    opt = Adam(head.named("fusion"), config.lr_fusion,
               config.adam_beta1, config.adam_beta2, config.adam_eps)
    shuffle = stream(config.seed, "shuffle-fusion")
    train = dataset.train
    p_r, p_d = _stage2_probabilities(train, traces, model, options)
    labels_all = _labels(train)
    curve = []
    for epoch in range(config.epochs_fusion):
        total = 0.0
        for idx in _epoch_batches(len(train), config.batch_size, shuffle):
            opt.zero_grad()
            with T.Tape() as tape:
                logits = correlative_fusion(T.constant(p_r[:, idx]),
                                            T.constant(p_d[:, idx]), head)
                loss = T.cross_entropy(logits, labels_all[idx])
                value = _check_loss(loss, "fusion", epoch)
                T.backward(loss, tape)
            opt.step()
            total += value * len(idx)
        curve.append(total / len(train))
    return head, curve


def _worker_count():
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _predictions(samples, params, options):
    """Per-sample predictions in dataset order; sample-level parallelism is
    allowed because each forward pass is independent and read-only."""
    workers = _worker_count()
    if workers == 1:
        return [predict(s.x_r, s.x_d, params, options) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: predict(s.x_r, s.x_d, params, options), samples))


def confusion_matrix(true_labels, pred_labels, n_classes):
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true_labels, pred_labels):
        m[t, p] += 1
    return m


def evaluate(samples, params, options=CollabOptions()):
    """Per-head accuracy and confusion matrices over one dataset split."""
    if not samples:
        raise ValueError("evaluate: empty split")
    n_classes = params.fusion.classifier.b.shape[0]
    preds = _predictions(samples, params, options)
    true = [s.label for s in samples]
    result = {"accuracy": {}, "confusion": {}}
    for head, column in (("rgb", 0), ("depth", 1), ("fused", 2)):
        pred = [p[column] for p in preds]
        result["accuracy"][head] = float(np.mean([t == p for t, p in zip(true, pred)]))
        result["confusion"][head] = confusion_matrix(true, pred, n_classes)
    return result


def evaluate_stage1(samples, view_r, view_d, n_classes):
    """Accuracy of the two frozen first-stage classifiers (the no-collaboration,
    no-fusion reference row)."""
    if not samples:
        raise ValueError("evaluate_stage1: empty split")
    result = {"accuracy": {}, "confusion": {}}
    true = [s.label for s in samples]
    for head, view, attr in (("rgb", view_r, "x_r"), ("depth", view_d, "x_d")):
        pred = []
        for s in samples:
            logits, _ = stage1_forward(getattr(s, attr), view)
            pred.append(int(np.argmax(logits.values)))
        result["accuracy"][head] = float(np.mean([t == p for t, p in zip(true, pred)]))
        result["confusion"][head] = confusion_matrix(true, pred, n_classes)
    return result


def train_all(dataset, config):
    """Run the three phases in order and evaluate the trained model.

    Returns (params, report, traces); the traces are the frozen first-stage
    attention distributions for every sample.
    """
    report = TrainReport(config=config.as_dict())
    t0 = time.perf_counter()
    view_r, view_d, traces, curves = train_stage1(dataset, config)
    report.wall_clock["stage1"] = time.perf_counter() - t0
    report.loss_curves.update(curves)

    t0 = time.perf_counter()
    model, curve2 = train_stage2(dataset, traces, config)
    report.wall_clock["stage2"] = time.perf_counter() - t0
    report.loss_curves["stage2"] = curve2

    t0 = time.perf_counter()
    head, curve3 = train_fusion(dataset, model, traces, config)
    report.wall_clock["fusion"] = time.perf_counter() - t0
    report.loss_curves["fusion"] = curve3

    params = CamParams(view_r, view_d, model, head)
    if dataset.test:
        metrics = evaluate(dataset.test, params, config.options())
        report.accuracy = metrics["accuracy"]
        report.confusion = {k: v.tolist() for k, v in metrics["confusion"].items()}
    return params, report, traces


ABLATION_ROWS = {
    "LSTM (baseline)": None,
    "CAM w/o MAR": dict(collaborate_rgb=False, collaborate_depth=False),
    "CAM w/o RGB": dict(collaborate_rgb=True, collaborate_depth=False),
    "CAM w/o Depth": dict(collaborate_rgb=False, collaborate_depth=True),
    "CAM (full)": dict(collaborate_rgb=True, collaborate_depth=True),
}


def ablation_suite(dataset, config, one_sided="depth"):
    """The four-row ablation grid on one dataset.

    Rows: the plain per-view reference (stage 1 only, no fusion), the
    collaboration-free two-stage model with fusion, one one-sided
    collaboration variant (``one_sided`` picks which view's aid is removed),
    and the full model. The first stage is trained once and shared; each
    later row trains its own second stage and fusion head from identical
    seeds so rows differ only in the collaboration wiring.
    """
    if one_sided not in ("rgb", "depth"):
        raise ValueError("one_sided must be 'rgb' or 'depth'")
    view_r, view_d, traces, _ = train_stage1(dataset, config)
    base = evaluate_stage1(dataset.test, view_r, view_d, dataset.n_classes)
    rows = [{"name": "LSTM (baseline)",
             "rgb": base["accuracy"]["rgb"],
             "depth": base["accuracy"]["depth"],
             "fusion": None}]
    one_sided_name = f"CAM w/o {'RGB' if one_sided == 'rgb' else 'Depth'}"
    for name in ("CAM w/o MAR", one_sided_name, "CAM (full)"):
        flags = ABLATION_ROWS[name]
        row_config = RunConfig.from_dict({**config.as_dict(), **flags})
        model, _ = train_stage2(dataset, traces, row_config)
        head, _ = train_fusion(dataset, model, traces, row_config)
        params = CamParams(view_r, view_d, model, head)
        metrics = evaluate(dataset.test, params, row_config.options())
        rows.append({"name": name,
                     "rgb": metrics["accuracy"]["rgb"],
                     "depth": metrics["accuracy"]["depth"],
                     "fusion": metrics["accuracy"]["fused"]})
    return rows
