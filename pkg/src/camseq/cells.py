"""Recurrent cells: the standard LSTM and the two-view mutual-aid step.

The mutual-aid step runs both views' LSTM updates, gates each view's fresh
cell state with a sigmoid computed from the other view's current input and
its own previous hidden state, and blends gated and ungated cells with the
per-frame attention weights handed down from the first training stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DiffArray, ShapeError

log = logging.getLogger(__name__)

_LSTM_FIELDS = ("w_f", "u_f", "b_f", "w_i", "u_i", "b_i",
                "w_o", "u_o", "b_o", "w_c", "u_c", "b_c")


@dataclass
class LstmParams:
    """Gate weights (hidden x input), recurrences (hidden x hidden), biases."""
    w_f: DiffArray
    u_f: DiffArray
    b_f: DiffArray
    w_i: DiffArray
    u_i: DiffArray
    b_i: DiffArray
    w_o: DiffArray
    u_o: DiffArray
    b_o: DiffArray
    w_c: DiffArray
    u_c: DiffArray
    b_c: DiffArray

    @property
    def hidden_dim(self):
        return self.b_f.shape[0]

    @property
    def input_dim(self):
        return self.w_f.shape[1]

    def named(self, prefix):
        for field in _LSTM_FIELDS:
            yield f"{prefix}.{field}", getattr(self, field)


@dataclass
class CellState:
    """Hidden state ``h`` and cell state ``c``; vectors or (h, B) columns."""
    h: DiffArray
    c: DiffArray


@dataclass
class CollaboratorParams:
    """The four gate matrices of the cross-view collaborator (no biases)."""
    w_rd: DiffArray  # (hidden, d_r) input term of the gate filtering depth
    w_d: DiffArray   # (hidden, hidden) depth's previous hidden term
    w_dr: DiffArray  # (hidden, d_d) input term of the gate filtering rgb
    w_r: DiffArray   # (hidden, hidden) rgb's previous hidden term

    def named(self, prefix):
        for field in ("w_rd", "w_d", "w_dr", "w_r"):
            yield f"{prefix}.{field}", getattr(self, field)


@dataclass
class CollabOptions:
    """Switches for ablations and reduction tests.

    ``collaborate_rgb``/``collaborate_depth`` enable the aid flowing INTO the
    named view's cell; with both off the step degenerates to two independent
    LSTMs. ``force_gate_ones`` replaces the sigmoid gates by exact ones and
    ``z_override`` pins the normalized weight pair, both used to exercise the
    degenerate algebra of the full code path. ``hidden_from_collaborated``
    selects whether h_t is taken from the blended cell (default) or the raw
    per-view cell.
    """
    collaborate_rgb: bool = True
    collaborate_depth: bool = True
    force_gate_ones: bool = False
    z_override: tuple | None = None
    hidden_from_collaborated: bool = True


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_lstm_params(input_dim, hidden_dim, rng, forget_bias=1.0):
    """Fan-in scaled uniform weights, zero biases except the forget gate."""
    def gate(bias_value):
        w = T.parameter(_uniform(rng, (hidden_dim, input_dim), input_dim))
        u = T.parameter(_uniform(rng, (hidden_dim, hidden_dim), hidden_dim))
        b = T.parameter(np.full(hidden_dim, bias_value, dtype=np.float64))
        return w, u, b

    w_f, u_f, b_f = gate(forget_bias)
    w_i, u_i, b_i = gate(0.0)
    w_o, u_o, b_o = gate(0.0)
    w_c, u_c, b_c = gate(0.0)
    return LstmParams(w_f, u_f, b_f, w_i, u_i, b_i, w_o, u_o, b_o, w_c, u_c, b_c)


def init_collaborator_params(d_r, d_d, hidden_dim, rng):
    w_rd = T.parameter(_uniform(rng, (hidden_dim, d_r), d_r))
    w_d = T.parameter(_uniform(rng, (hidden_dim, hidden_dim), hidden_dim))
    w_dr = T.parameter(_uniform(rng, (hidden_dim, d_d), d_d))
    w_r = T.parameter(_uniform(rng, (hidden_dim, hidden_dim), hidden_dim))
    return CollaboratorParams(w_rd, w_d, w_dr, w_r)


def initial_state(hidden_dim, batch=None):
    shape = (hidden_dim,) if batch is None else (hidden_dim, batch)
    zeros = np.zeros(shape)
    return CellState(T.constant(zeros), T.constant(zeros.copy()))


def _bias_for(b, x):
    # biases are stored flat; against column batches they broadcast as (h, 1)
    if x.values.ndim == 2:
        return T.reshape(b, (b.shape[0], 1))
    return b


def _affine(w, x, u, h, b):
    return T.add(T.add(T.matmul(w, x), T.matmul(u, h)), _bias_for(b, x))


def _gated_cell(x, prev, p):
    """Eq.-style internal update; returns the output gate and the raw cell."""
    f = T.sigmoid(_affine(p.w_f, x, p.u_f, prev.h, p.b_f))
    i = T.sigmoid(_affine(p.w_i, x, p.u_i, prev.h, p.b_i))
    o = T.sigmoid(_affine(p.w_o, x, p.u_o, prev.h, p.b_o))
    u = T.tanh(_affine(p.w_c, x, p.u_c, prev.h, p.b_c))
    c = T.add(T.mul(f, prev.c), T.mul(i, u))
    return o, c


def lstm_step(x_t, prev, p):
    """One LSTM update; the candidate affine uses the current input."""
    x_t = x_t if isinstance(x_t, DiffArray) else T.constant(x_t)
    if x_t.shape[0] != p.input_dim:
        raise ShapeError(f"lstm_step: input dim {x_t.shape[0]} != {p.input_dim}")
    if prev.h.shape[0] != p.hidden_dim:
        raise ShapeError(f"lstm_step: state dim {prev.h.shape[0]} != {p.hidden_dim}")
    o, c = _gated_cell(x_t, prev, p)
    h = T.mul(o, T.tanh(c))
    return CellState(h, c)


def lstm_encode(X, p, h0=None):
    """Fold lstm_step over t, returning every intermediate state.

    ``X`` is (T, d) for one sample or (T, d, B) column-batched.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 1:
        raise ShapeError("lstm_encode: empty sequence")
    batch = X.shape[2] if X.ndim == 3 else None
    state = h0 if h0 is not None else initial_state(p.hidden_dim, batch)
    states = []
    for t in range(X.shape[0]):
        state = lstm_step(T.constant(X[t]), state, p)
        states.append(state)
    return states


def _gate(w_x, x, w_h, h_prev):
    return T.sigmoid(T.add(T.matmul(w_x, x), T.matmul(w_h, h_prev)))


def collaborator_gates(x_r, x_d, h_prev_r, h_prev_d, p):
    """Both cross-view gates; each combines one view's input with the other
    view's previous hidden state. Entries are strictly inside (0, 1)."""
    x_r = x_r if isinstance(x_r, DiffArray) else T.constant(x_r)
    x_d = x_d if isinstance(x_d, DiffArray) else T.constant(x_d)
    g_rd = _gate(p.w_rd, x_r, p.w_d, h_prev_d)
    g_dr = _gate(p.w_dr, x_d, p.w_r, h_prev_r)
    return g_rd, g_dr


def mutual_filter(G, c):
    """Pointwise gating of a cell state; shrinks every coordinate."""
    if G.shape != c.shape:
        raise ShapeError(f"mutual_filter: shapes {G.shape} and {c.shape} differ")
    return T.mul(G, c)


def normalize_attention_pair(z_r, z_d):
    """Rescale one frame's pair of attention scores to sum to one.

    Works on scalars or same-shape arrays (gradient-free: first-stage traces
    are constants here). A both-zero pair falls back to (0.5, 0.5) with a
    logged warning; negative scores are rejected.
    """
    z_r = np.asarray(z_r, dtype=np.float64)
    z_d = np.asarray(z_d, dtype=np.float64)
    if np.any(z_r < 0) or np.any(z_d < 0):
        raise ValueError("normalize_attention_pair: negative attention score")
    total = z_r + z_d
    degenerate = total == 0
    if np.any(degenerate):
        log.warning("normalize_attention_pair: zero score pair, using (0.5, 0.5)")
    safe = np.where(degenerate, 1.0, total)
    zp_r = np.where(degenerate, 0.5, z_r / safe)
    zp_d = np.where(degenerate, 0.5, z_d / safe)
    if zp_r.ndim == 0:
        return float(zp_r), float(zp_d)
    return zp_r, zp_d


def _z_const(z, c):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or c.values.ndim == 1:
        return T.constant(z)
    return T.constant(z.reshape(1, -1))  # (1, B) row broadcasting over hidden


def _blend(z_own, c, z_other, c_filtered):
    return T.add(T.mul(_z_const(z_own, c), c),
                 T.mul(_z_const(z_other, c_filtered), c_filtered))


def collaborate_cell(zp_r, zp_d, c_r, c_r_filtered, c_d, c_d_filtered):
    """Weighted cell update: each view keeps its own cell with its own weight
    and takes the other view's weight on the cross-filtered cell."""
    if not np.allclose(np.asarray(zp_r) + np.asarray(zp_d), 1.0, atol=1e-9):
        raise ValueError("collaborate_cell: weights must sum to 1")
    c_r_cc = _blend(zp_r, c_r, zp_d, c_r_filtered)
    c_d_cc = _blend(zp_d, c_d, zp_r, c_d_filtered)
    return c_r_cc, c_d_cc


def _ones_like(c):
    return T.constant(np.ones_like(c.values))


def mar_step(x_r, x_d, prev_r, prev_d, z_r, z_d, lstm_r, lstm_d, collab,
             options=CollabOptions()):
    """Advance both views one frame with mutual aid.

    Order of operations: per-view LSTM updates (keeping the output gates and
    raw cells), cross-view gates from the pre-step hidden states, mutual
    filtering, score normalization, weighted cell blending, then h from the
    blended cell. Returned states carry the blended cell.
    """
    x_r = x_r if isinstance(x_r, DiffArray) else T.constant(x_r)
    x_d = x_d if isinstance(x_d, DiffArray) else T.constant(x_d)
    o_r, c_r = _gated_cell(x_r, prev_r, lstm_r)
    o_d, c_d = _gated_cell(x_d, prev_d, lstm_d)

    if options.z_override is not None:
        zp_r, zp_d = options.z_override
    else:
        zp_r, zp_d = normalize_attention_pair(z_r, z_d)

    if options.collaborate_rgb:
        g_dr = _ones_like(c_r) if options.force_gate_ones else \
            _gate(collab.w_dr, x_d, collab.w_r, prev_r.h)
        c_r_cc = _blend(zp_r, c_r, zp_d, mutual_filter(g_dr, c_r))
    else:
        c_r_cc = c_r
    if options.collaborate_depth:
        g_rd = _ones_like(c_d) if options.force_gate_ones else \
            _gate(collab.w_rd, x_r, collab.w_d, prev_d.h)
        c_d_cc = _blend(zp_d, c_d, zp_r, mutual_filter(g_rd, c_d))
    else:
        c_d_cc = c_d

    if options.hidden_from_collaborated:
        h_r = T.mul(o_r, T.tanh(c_r_cc))
        h_d = T.mul(o_d, T.tanh(c_d_cc))
    else:
        h_r = T.mul(o_r, T.tanh(c_r))
        h_d = T.mul(o_d, T.tanh(c_d))
    return CellState(h_r, c_r_cc), CellState(h_d, c_d_cc)


def mar_encode(X_r, X_d, Z_r, Z_d, lstm_r, lstm_d, collab,
               options=CollabOptions()):
    """Fold mar_step over the shared time axis from zero states.

    ``Z_r``/``Z_d`` are the first-stage traces: (T,) per sample or (T, B)
    column-batched, aligned frame by frame with the features.
    """
    X_r = np.asarray(X_r, dtype=np.float64)
    X_d = np.asarray(X_d, dtype=np.float64)
    Z_r = np.asarray(Z_r, dtype=np.float64)
    Z_d = np.asarray(Z_d, dtype=np.float64)
    lengths = {X_r.shape[0], X_d.shape[0], Z_r.shape[0], Z_d.shape[0]}
    if len(lengths) != 1:
        raise ShapeError(f"mar_encode: sequence lengths disagree: {sorted(lengths)}")
    if X_r.shape[0] < 1:
        raise ShapeError("mar_encode: empty sequence")
    batch = X_r.shape[2] if X_r.ndim == 3 else None
    state_r = initial_state(lstm_r.hidden_dim, batch)
    state_d = initial_state(lstm_d.hidden_dim, batch)
    out_r, out_d = [], []
    for t in range(X_r.shape[0]):
        state_r, state_d = mar_step(
            T.constant(X_r[t]), T.constant(X_d[t]), state_r, state_d,
            Z_r[t], Z_d[t], lstm_r, lstm_d, collab, options)
        out_r.append(state_r)
        out_d.append(state_d)
    return out_r, out_d
