import numpy as np
import pytest

from camseq import tensor as T
from camseq.cells import CollabOptions
from camseq.model import (correlative_fusion, init_cam_params, init_fusion_head,
                          init_stage_one_view, init_stage_two_model, predict,
                          predict_full, stage1_forward, stage2_forward)

from _oracles import softmax as softmax_ref
from _oracles import stage1_ref

_LSTM_FIELDS = ("w_f", "u_f", "b_f", "w_i", "u_i", "b_i",
                "w_o", "u_o", "b_o", "w_c", "u_c", "b_c")


def rngs_for(seed):
    base = np.random.default_rng(seed)
    names = ("init_stage1_r", "init_stage1_d", "init_stage2", "init_fusion")
    return {n: np.random.default_rng(base.integers(2 ** 32)) for n in names}


def test_stage1_zero_params_uniform_trace_zero_logits():
    view = init_stage_one_view(3, 4, 4, 5, np.random.default_rng(0))
    for _, arr in view.named("v"):
        arr.values[...] = 0.0
    logits, trace = stage1_forward(np.random.default_rng(1).normal(size=(6, 3)), view)
    assert np.allclose(logits.values, 0.0)
    assert np.allclose(trace.values, 1.0 / 6)


def test_stage1_single_frame():
    rng = np.random.default_rng(2)
    view = init_stage_one_view(3, 4, 4, 5, rng)
    X = rng.normal(size=(1, 3))
    logits, trace = stage1_forward(X, view)
    assert np.allclose(trace.values, [1.0])
    from camseq.cells import initial_state, lstm_step
    h1 = lstm_step(X[0], initial_state(4), view.lstm).h
    want = view.classifier.w.values @ h1.values + view.classifier.b.values
    assert np.max(np.abs(logits.values - want)) < 1e-12


def test_stage1_matches_compositional_oracle():
    rng = np.random.default_rng(0)
    view = init_stage_one_view(3, 4, 4, 5, rng)
    X = rng.normal(size=(5, 3))
    logits, trace = stage1_forward(X, view)
    lstm = {f: getattr(view.lstm, f).values for f in _LSTM_FIELDS}
    att = {"w_w": view.att.w_w.values, "b_w": view.att.b_w.values,
           "u_w": view.att.u_w.values}
    ref_logits, ref_trace = stage1_ref(X, lstm, att, view.classifier.w.values,
                                       view.classifier.b.values)
    assert np.max(np.abs(logits.values - ref_logits)) < 1e-12
    assert np.max(np.abs(trace.values - ref_trace)) < 1e-12


def test_stage2_reduction_to_stage1_pipeline():
    """With identity-regime gates and boundary weights the second-stage RGB
    branch is exactly a single-view pipeline over the same parameters."""
    rng = np.random.default_rng(3)
    model = init_stage_two_model(3, 2, 4, 4, 5, rng)
    X_r, X_d = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    Z = np.full(6, 1 / 6)
    opts = CollabOptions(force_gate_ones=True, z_override=(1.0, 0.0))
    logits_r, _, trace_r, _ = stage2_forward(X_r, X_d, Z, Z, model, opts)

    from camseq.model import StageOneView
    as_stage1 = StageOneView(model.lstm_r, model.att_r, model.classifier_r)
    want_logits, want_trace = stage1_forward(X_r, as_stage1)
    assert np.max(np.abs(logits_r.values - want_logits.values)) < 1e-12
    assert np.max(np.abs(trace_r.values - want_trace.values)) < 1e-12


def test_stage2_equal_traces_same_as_half_override():
    rng = np.random.default_rng(4)
    model = init_stage_two_model(3, 2, 4, 4, 5, rng)
    X_r, X_d = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    Z = softmax_ref(rng.normal(size=5))
    got = stage2_forward(X_r, X_d, Z, Z, model)
    want = stage2_forward(X_r, X_d, Z, Z, model, CollabOptions(z_override=(0.5, 0.5)))
    for a, b in zip(got, want):
        assert np.array_equal(a.values, b.values)


def test_stage2_trace_length_mismatch():
    rng = np.random.default_rng(5)
    model = init_stage_two_model(3, 2, 4, 4, 5, rng)
    with pytest.raises(T.ShapeError):
        stage2_forward(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)),
                       np.ones(4) / 4, np.ones(5) / 5, model)


def test_correlative_fusion_one_hot_outer_product():
    head = init_fusion_head(2, np.random.default_rng(6))
    head.classifier.w.values[...] = np.eye(2, 4)  # pick out first two entries
    head.classifier.b.values[...] = 0.0
    logits = correlative_fusion(T.constant([1.0, 0.0]), T.constant([0.0, 1.0]), head)
    # D = [[0, 1], [0, 0]] flattens to [0, 1, 0, 0]
    assert np.allclose(logits.values, [0.0, 1.0])


def test_correlative_matrix_properties():
    rng = np.random.default_rng(7)
    for _ in range(25):
        c = int(rng.integers(2, 6))
        p_r = softmax_ref(rng.normal(size=c))
        p_d = softmax_ref(rng.normal(size=c))
        d = np.outer(p_r, p_d)
        assert abs(d.sum() - 1.0) < 1e-9
        s = np.linalg.svd(d, compute_uv=False)
        assert s[1] < 1e-10  # rank one
    uniform = np.full(3, 1 / 3)
    assert np.allclose(np.outer(uniform, uniform), 1 / 9)


def test_correlative_fusion_rejects_unnormalized():
    head = init_fusion_head(3, np.random.default_rng(8))
    with pytest.raises(ValueError):
        correlative_fusion(T.constant([0.5, 0.2, 0.2]),
                           T.constant(np.full(3, 1 / 3)), head)


def test_predict_zero_params_ties_to_class_zero():
    params = init_cam_params(3, 2, 4, 4, 5, rngs_for(9))
    for _, arr in params.named():
        arr.values[...] = 0.0
    rng = np.random.default_rng(10)
    out = predict(rng.normal(size=(6, 3)), rng.normal(size=(6, 2)), params)
    assert out == (0, 0, 0)


def test_predict_classes_in_range():
    params = init_cam_params(3, 2, 4, 4, 5, rngs_for(11))
    rng = np.random.default_rng(12)
    for _ in range(5):
        out = predict(rng.normal(size=(6, 3)), rng.normal(size=(6, 2)), params)
        assert all(0 <= c < 5 for c in out)


def test_predict_full_trace_invariants():
    params = init_cam_params(3, 2, 4, 4, 5, rngs_for(13))
    rng = np.random.default_rng(14)
    out = predict_full(rng.normal(size=(6, 3)), rng.normal(size=(6, 2)), params)
    for key in ("stage1_trace_r", "stage1_trace_d", "stage2_trace_r", "stage2_trace_d"):
        assert out[key].shape == (6,)
        assert abs(out[key].sum() - 1.0) < 1e-9
    assert abs(out["proba_fused"].sum() - 1.0) < 1e-9


def test_class_relabeling_equivariance():
    """Permuting classifier rows permutes predictions accordingly."""
    rng = np.random.default_rng(15)
    params = init_cam_params(3, 2, 4, 4, 4, rngs_for(16))
    x_r, x_d = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    base = predict_full(x_r, x_d, params)

    perm = np.array([2, 0, 3, 1])  # new label of old class k is perm[k]
    inv = np.argsort(perm)
    for head in (params.stage1_r.classifier, params.stage1_d.classifier,
                 params.stage2.classifier_r, params.stage2.classifier_d):
        head.w.values[...] = head.w.values[inv]
        head.b.values[...] = head.b.values[inv]
    w = params.fusion.classifier.w.values.reshape(4, 4, 4)
    params.fusion.classifier.w.values[...] = \
        w[np.ix_(inv, inv, inv)].reshape(4, 16)
    params.fusion.classifier.b.values[...] = params.fusion.classifier.b.values[inv]

    permuted = predict_full(x_r, x_d, params)
    assert permuted["class_r"] == perm[base["class_r"]]
    assert permuted["class_d"] == perm[base["class_d"]]
    assert permuted["class_fused"] == perm[base["class_fused"]]
