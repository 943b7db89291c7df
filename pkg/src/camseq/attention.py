"""Context-vector attention over a hidden-state sequence.

Each hidden state is mapped through a tanh layer, scored against a learned
global context vector, and the scores are softmax-normalized over time. The
sequence summary is the score-weighted sum of hidden states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DiffArray, ShapeError


@dataclass
class AttentionParams:
    w_w: DiffArray  # (att_dim, hidden)
    b_w: DiffArray  # (att_dim,)
    u_w: DiffArray  # (att_dim,) learned context vector

    @property
    def att_dim(self):
        return self.u_w.shape[0]

    def named(self, prefix):
        for field in ("w_w", "b_w", "u_w"):
            yield f"{prefix}.{field}", getattr(self, field)


def init_attention_params(hidden_dim, att_dim, rng):
    bound = 1.0 / np.sqrt(hidden_dim)
    w_w = T.parameter(rng.uniform(-bound, bound, size=(att_dim, hidden_dim)))
    b_w = T.parameter(np.zeros(att_dim))
    scale = 1.0 / np.sqrt(att_dim)
    u_w = T.parameter(rng.uniform(-scale, scale, size=att_dim))
    return AttentionParams(w_w, b_w, u_w)


def attention_scores(H, p):
    """Length-T trace of frame importances; non-negative, sums to 1.

    ``H`` is a list of hidden states, each (h,) or (h, B); the result is
    (T,) or (T, B) accordingly.
    """
    if len(H) == 0:
        raise ShapeError("attention_scores: empty hidden sequence")
    u_w_row = T.reshape(p.u_w, (1, p.att_dim))
    logits = []
    for h_t in H:
        b = p.b_w if h_t.values.ndim == 1 else T.reshape(p.b_w, (p.att_dim, 1))
        u_t = T.tanh(T.add(T.matmul(p.w_w, h_t), b))
        logits.append(T.matmul(u_w_row, u_t))  # (1,) or (1, B)
    return T.softmax_over_time(T.concat_rows(logits))


def attend(H, trace):
    """Weighted sum of hidden states under a trace from attention_scores."""
    if len(H) != trace.shape[0]:
        raise ShapeError(f"attend: {len(H)} states vs trace of length {trace.shape[0]}")
    r = None
    for t, h_t in enumerate(H):
        term = T.mul(T.take_row(trace, t), h_t)
        r = term if r is None else T.add(r, term)
    return r
