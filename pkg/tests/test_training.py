import numpy as np
import pytest

from camseq import tensor as T
from camseq.cells import CollabOptions
from camseq.data import SynthSpec, generate_synthetic
from camseq.model import (CamParams, init_fusion_head, init_stage_one_view,
                          init_stage_two_model, stage1_forward, stage2_forward)
from camseq.training import (Adam, NonFiniteLossError, RunConfig, ablation_suite,
                             cross_entropy, evaluate, evaluate_stage1, stream,
                             train_all, train_fusion, train_stage1, train_stage2)


def overfit_dataset():
    """Ten noiseless samples, two per class, everything in train."""
    return generate_synthetic(SynthSpec(
        n_classes=5, seq_len=20, d_r=8, d_d=8, samples_per_class=2,
        noise_std=0.0, signal_frames=4, overlap=0.0, seed=0, train_fraction=1.0))


def small_config(**kw):
    base = dict(hidden_dim=8, batch_size=10, epochs_stage1=40, epochs_stage2=40,
                epochs_fusion=30, seed=0)
    base.update(kw)
    return RunConfig(**base)


def test_cross_entropy_uniform():
    assert abs(float(cross_entropy(T.constant(np.zeros(4)), 1).values) - np.log(4)) < 1e-12


def test_adam_zero_gradient_keeps_params():
    p = T.parameter(np.array([1.0, -2.0]))
    opt = Adam([("block", p)], lr=0.1)
    opt.zero_grad()
    opt.step()
    assert np.array_equal(p.values, [1.0, -2.0])
    assert opt.step_count == 1


def test_adam_first_step_is_signed_lr():
    p = T.parameter(np.array([0.0, 0.0, 0.0]))
    opt = Adam([("block", p)], lr=0.01)
    p.grad[...] = np.array([3.0, -0.5, 1e-3])
    opt.step()
    assert np.allclose(p.values, [-0.01, 0.01, -0.01], atol=1e-6)


def test_adam_deterministic_trajectory():
    def run():
        rng = np.random.default_rng(0)
        p = T.parameter(rng.normal(size=4))
        opt = Adam([("w", p)], lr=0.05)
        for step in range(20):
            opt.zero_grad()
            with T.Tape() as tape:
                loss = T.sum_all(T.mul(p, p))
                T.backward(loss, tape)
            opt.step()
        return p.values.copy()

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_gradient():
    p = T.parameter(np.zeros(2))
    opt = Adam([("weights.first", p)], lr=0.1)
    p.grad[...] = [np.nan, 0.0]
    with pytest.raises(NonFiniteLossError, match="weights.first"):
        opt.step()


def test_initial_losses_near_log_c():
    ds = overfit_dataset()
    cfg = small_config()
    view = init_stage_one_view(ds.d_r, cfg.hidden_dim, cfg.attention_dim,
                               ds.n_classes, stream(0, "init-stage1-rgb"))
    X = np.stack([s.x_r for s in ds.train], axis=2)
    labels = np.array([s.label for s in ds.train])
    logits, _ = stage1_forward(X, view)
    assert abs(float(cross_entropy(logits, labels).values) - np.log(5)) < 0.1

    model = init_stage_two_model(ds.d_r, ds.d_d, cfg.hidden_dim, cfg.attention_dim,
                                 ds.n_classes, stream(0, "init-stage2"))
    Z = np.full((ds.seq_len, len(ds.train)), 1.0 / ds.seq_len)
    lr_, ld_, _, _ = stage2_forward(X, np.stack([s.x_d for s in ds.train], axis=2),
                                    Z, Z, model)
    joint = float(cross_entropy(lr_, labels).values) + float(cross_entropy(ld_, labels).values)
    assert abs(joint - 2 * np.log(5)) < 0.2

    head = init_fusion_head(ds.n_classes, stream(0, "init-fusion"))
    from camseq.model import correlative_fusion
    p_uniform = np.full((5, len(ds.train)), 0.2)
    fused = correlative_fusion(T.constant(p_uniform), T.constant(p_uniform), head)
    assert abs(float(cross_entropy(fused, labels).values) - np.log(5)) < 0.1


def train_accuracy(samples, params, options):
    res = evaluate(samples, params, options)
    return res["accuracy"]


def test_overfit_all_phases():
    """On the tiny noiseless set every head reaches 100% train accuracy."""
    ds = overfit_dataset()
    cfg = small_config()
    params, report, traces = train_all(ds, cfg)
    acc = train_accuracy(ds.train, params, cfg.options())
    assert acc == {"rgb": 1.0, "depth": 1.0, "fused": 1.0}
    # traces exist for every sample and have length T
    assert set(traces) == {s.id for s in ds.all_samples}
    for tr in traces.values():
        assert tr["r"].shape == (ds.seq_len,) and tr["d"].shape == (ds.seq_len,)
        assert abs(tr["r"].sum() - 1.0) < 1e-9


def test_stage1_loss_nonincreasing_early():
    ds = overfit_dataset()
    _, _, _, curves = train_stage1(ds, small_config(epochs_stage1=10))
    for curve in curves.values():
        diffs = np.diff(curve)
        assert np.all(diffs <= 1e-9)


def test_stage2_missing_trace():
    ds = overfit_dataset()
    cfg = small_config(epochs_stage2=1)
    traces = {ds.train[0].id: {"r": np.full(20, 0.05), "d": np.full(20, 0.05)}}
    with pytest.raises(KeyError, match="trace"):
        train_stage2(ds, traces, cfg)


def test_fusion_head_is_linear_in_weights():
    head = init_fusion_head(3, np.random.default_rng(0))
    from camseq.model import correlative_fusion
    p = T.constant(np.full(3, 1 / 3))
    base = correlative_fusion(p, p, head).values.copy()
    b = head.classifier.b.values.copy()
    head.classifier.w.values[...] *= 2.0
    doubled = correlative_fusion(p, p, head).values
    assert np.allclose(doubled, 2 * (base - b) + b)


def test_evaluate_confusion_shapes():
    ds = overfit_dataset()
    cfg = small_config()
    params, _, _ = train_all(ds, cfg)
    res = evaluate(ds.train, params, cfg.options())
    for head in ("rgb", "depth", "fused"):
        m = res["confusion"][head]
        assert m.shape == (5, 5)
        assert m.sum() == len(ds.train)
        # perfect predictor: diagonal counts
        assert np.array_equal(m, np.diag(np.full(5, 2)))


def test_evaluate_empty_split():
    ds = overfit_dataset()
    cfg = small_config(epochs_stage1=1, epochs_stage2=1, epochs_fusion=1)
    params, _, _ = train_all(ds, cfg)
    with pytest.raises(ValueError, match="empty"):
        evaluate([], params, cfg.options())


def test_training_is_bit_deterministic():
    ds = overfit_dataset()
    cfg = small_config(epochs_stage1=5, epochs_stage2=5, epochs_fusion=5)
    params_a, report_a, _ = train_all(ds, cfg)
    params_b, report_b, _ = train_all(ds, cfg)
    for (name_a, a), (name_b, b) in zip(params_a.named(), params_b.named()):
        assert name_a == name_b
        assert np.array_equal(a.values, b.values), name_a
    assert report_a.to_json() == report_b.to_json()


def test_collaboration_disabled_equals_plain_pipelines():
    """With both aid directions off, the second stage trains two independent
    single-view models: its forward must match a plain encoder pipeline."""
    ds = overfit_dataset()
    cfg = small_config(epochs_stage2=3, collaborate_rgb=False, collaborate_depth=False)
    _, _, traces, _ = train_stage1(ds, small_config(epochs_stage1=3))
    model, _ = train_stage2(ds, traces, cfg)
    s = ds.train[0]
    logits_r, logits_d, _, _ = stage2_forward(
        s.x_r, s.x_d, traces[s.id]["r"], traces[s.id]["d"], model, cfg.options())
    from camseq.model import StageOneView
    plain_r = StageOneView(model.lstm_r, model.att_r, model.classifier_r)
    plain_d = StageOneView(model.lstm_d, model.att_d, model.classifier_d)
    want_r, _ = stage1_forward(s.x_r, plain_r)
    want_d, _ = stage1_forward(s.x_d, plain_d)
    assert np.max(np.abs(logits_r.values - want_r.values)) < 1e-12
    assert np.max(np.abs(logits_d.values - want_d.values)) < 1e-12


def test_ablation_suite_shape_and_baseline_identity():
    ds = generate_synthetic(SynthSpec(
        n_classes=3, seq_len=8, d_r=6, d_d=6, samples_per_class=8,
        noise_std=0.3, signal_frames=2, overlap=0.0, seed=0, train_fraction=0.5))
    cfg = RunConfig(hidden_dim=6, batch_size=8, epochs_stage1=8,
                    epochs_stage2=8, epochs_fusion=8, seed=0)
    rows = ablation_suite(ds, cfg)
    assert [r["name"] for r in rows] == \
        ["LSTM (baseline)", "CAM w/o MAR", "CAM w/o Depth", "CAM (full)"]
    assert rows[0]["fusion"] is None  # reference row has no fusion column
    for row in rows:
        assert 0.0 <= row["rgb"] <= 1.0 and 0.0 <= row["depth"] <= 1.0
        if row["fusion"] is not None:
            assert 0.0 <= row["fusion"] <= 1.0
    # the reference row is exactly the frozen first-stage pipeline
    view_r, view_d, _, _ = train_stage1(ds, cfg)
    direct = evaluate_stage1(ds.test, view_r, view_d, ds.n_classes)
    assert rows[0]["rgb"] == direct["accuracy"]["rgb"]
    assert rows[0]["depth"] == direct["accuracy"]["depth"]
