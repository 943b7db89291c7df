"""Model assembly: per-view attention classifiers, the collaboration stage,
and correlative late fusion over the outer product of the two views'
predicted class distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, attend, attention_scores, init_attention_params
from .cells import (CollabOptions, CollaboratorParams, LstmParams,
                    init_collaborator_params, init_lstm_params, lstm_encode,
                    mar_encode)
from .tensor import DiffArray, ShapeError


@dataclass
class LinearHead:
    w: DiffArray  # (n_out, n_in)
    b: DiffArray  # (n_out,)

    def named(self, prefix):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def init_linear_head(n_in, n_out, rng):
    bound = 1.0 / np.sqrt(n_in)
    return LinearHead(T.parameter(rng.uniform(-bound, bound, size=(n_out, n_in))),
                      T.parameter(np.zeros(n_out)))


def _apply_head(head, x):
    b = head.b if x.values.ndim == 1 else T.reshape(head.b, (head.b.shape[0], 1))
    return T.add(T.matmul(head.w, x), b)


@dataclass
class StageOneView:
    """Single-view encoder/classifier: LSTM, attention head, linear head."""
    lstm: LstmParams
    att: AttentionParams
    classifier: LinearHead

    def named(self, prefix):
        yield from self.lstm.named(f"{prefix}.lstm")
        yield from self.att.named(f"{prefix}.att")
        yield from self.classifier.named(f"{prefix}.cls")


@dataclass
class StageTwoModel:
    """Joint two-view collaboration model with per-view heads."""
    lstm_r: LstmParams
    lstm_d: LstmParams
    collab: CollaboratorParams
    att_r: AttentionParams
    att_d: AttentionParams
    classifier_r: LinearHead
    classifier_d: LinearHead

    def named(self, prefix):
        yield from self.lstm_r.named(f"{prefix}.lstm_r")
        yield from self.lstm_d.named(f"{prefix}.lstm_d")
        yield from self.collab.named(f"{prefix}.collab")
        yield from self.att_r.named(f"{prefix}.att_r")
        yield from self.att_d.named(f"{prefix}.att_d")
        yield from self.classifier_r.named(f"{prefix}.cls_r")
        yield from self.classifier_d.named(f"{prefix}.cls_d")


@dataclass
class FusionHead:
    """Linear classifier over the flattened C x C correlation matrix."""
    classifier: LinearHead

    def named(self, prefix):
        yield from self.classifier.named(f"{prefix}.cls")


@dataclass
class CamParams:
    stage1_r: StageOneView
    stage1_d: StageOneView
    stage2: StageTwoModel
    fusion: FusionHead

    def named(self, prefix="cam"):
        yield from self.stage1_r.named(f"{prefix}.stage1_r")
        yield from self.stage1_d.named(f"{prefix}.stage1_d")
        yield from self.stage2.named(f"{prefix}.stage2")
        yield from self.fusion.named(f"{prefix}.fusion")


def init_stage_one_view(input_dim, hidden_dim, att_dim, n_classes, rng):
    return StageOneView(init_lstm_params(input_dim, hidden_dim, rng),
                        init_attention_params(hidden_dim, att_dim, rng),
                        init_linear_head(hidden_dim, n_classes, rng))


def init_stage_two_model(d_r, d_d, hidden_dim, att_dim, n_classes, rng):
    return StageTwoModel(
        lstm_r=init_lstm_params(d_r, hidden_dim, rng),
        lstm_d=init_lstm_params(d_d, hidden_dim, rng),
        collab=init_collaborator_params(d_r, d_d, hidden_dim, rng),
        att_r=init_attention_params(hidden_dim, att_dim, rng),
        att_d=init_attention_params(hidden_dim, att_dim, rng),
        classifier_r=init_linear_head(hidden_dim, n_classes, rng),
        classifier_d=init_linear_head(hidden_dim, n_classes, rng),
    )


def init_fusion_head(n_classes, rng):
    return FusionHead(init_linear_head(n_classes * n_classes, n_classes, rng))


def init_cam_params(d_r, d_d, hidden_dim, att_dim, n_classes, rngs):
    """Build the full parameter set from named generator streams."""
    return CamParams(
        stage1_r=init_stage_one_view(d_r, hidden_dim, att_dim, n_classes, rngs["init_stage1_r"]),
        stage1_d=init_stage_one_view(d_d, hidden_dim, att_dim, n_classes, rngs["init_stage1_d"]),
        stage2=init_stage_two_model(d_r, d_d, hidden_dim, att_dim, n_classes, rngs["init_stage2"]),
        fusion=init_fusion_head(n_classes, rngs["init_fusion"]),
    )


def stage1_forward(X, view):
    """Encode one view and classify its attention summary.

    Returns (logits, trace): raw class scores (softmax lives in the loss)
    and the length-T attention trace. ``X`` may be (T, d) or (T, d, B).
    """
    states = lstm_encode(X, view.lstm)
    H = [s.h for s in states]
    trace = attention_scores(H, view.att)
    r = attend(H, trace)
    return _apply_head(view.classifier, r), trace


def stage2_forward(X_r, X_d, Z_r, Z_d, model, options=CollabOptions()):
    """Collaboratively encode both views under the first-stage traces.

    Returns (logits_r, logits_d, trace_r, trace_d); the traces are the
    second-stage attention distributions.
    """
    states_r, states_d = mar_encode(X_r, X_d, Z_r, Z_d,
                                    model.lstm_r, model.lstm_d, model.collab, options)
    H_r = [s.h for s in states_r]
    H_d = [s.h for s in states_d]
    trace_r = attention_scores(H_r, model.att_r)
    trace_d = attention_scores(H_d, model.att_d)
    logits_r = _apply_head(model.classifier_r, attend(H_r, trace_r))
    logits_d = _apply_head(model.classifier_d, attend(H_d, trace_d))
    return logits_r, logits_d, trace_r, trace_d


def correlative_fusion(p_r, p_d, head):
    """Classify from the outer product of the two predicted distributions.

    ``p_r``/``p_d`` are softmaxed class probabilities (each column sums to 1
    within 1e-6). The C x C matrix D with D[i, j] = p_r[i] * p_d[j] is
    flattened row-major (RGB indexing rows) and mapped by the linear head.
    """
    p_r = p_r if isinstance(p_r, DiffArray) else T.constant(p_r)
    p_d = p_d if isinstance(p_d, DiffArray) else T.constant(p_d)
    if p_r.shape != p_d.shape:
        raise ShapeError(f"correlative_fusion: shapes {p_r.shape} vs {p_d.shape}")
    for name, p in (("rgb", p_r), ("depth", p_d)):
        sums = p.values.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError(f"correlative_fusion: {name} input not normalized")
    return _apply_head(head.classifier, T.pairwise_outer(p_r, p_d))


def predict_full(x_r, x_d, params, options=CollabOptions()):
    """Gradient-free forward through all three heads for one sample.

    Returns a dict with per-head logits/probabilities, argmax classes and
    both stages' attention traces (as plain arrays).
    """
    logits1_r, z_r = stage1_forward(x_r, params.stage1_r)
    logits1_d, z_d = stage1_forward(x_d, params.stage1_d)
    logits_r, logits_d, z2_r, z2_d = stage2_forward(
        x_r, x_d, z_r.values, z_d.values, params.stage2, options)
    p_r = T.softmax_np(logits_r.values)
    p_d = T.softmax_np(logits_d.values)
    logits_f = correlative_fusion(T.constant(p_r), T.constant(p_d), params.fusion)
    return {
        "logits_r": logits_r.values, "logits_d": logits_d.values,
        "logits_fused": logits_f.values,
        "proba_r": p_r, "proba_d": p_d,
        "proba_fused": T.softmax_np(logits_f.values),
        "class_r": int(np.argmax(logits_r.values)),
        "class_d": int(np.argmax(logits_d.values)),
        "class_fused": int(np.argmax(logits_f.values)),
        "stage1_trace_r": z_r.values, "stage1_trace_d": z_d.values,
        "stage2_trace_r": z2_r.values, "stage2_trace_d": z2_d.values,
    }


def predict(x_r, x_d, params, options=CollabOptions()):
    """Argmax classes of the three heads; ties break to the lowest index."""
    out = predict_full(x_r, x_d, params, options)
    return out["class_r"], out["class_d"], out["class_fused"]
