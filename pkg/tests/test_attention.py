import numpy as np
import pytest

from camseq import tensor as T
from camseq.attention import attend, attention_scores, init_attention_params
from camseq.tensor import ShapeError

from _oracles import attention_ref


def hidden_list(H):
    return [T.constant(h) for h in H]


def test_single_frame_trace_is_one():
    p = init_attention_params(3, 3, np.random.default_rng(0))
    trace = attention_scores(hidden_list(np.random.default_rng(1).normal(size=(1, 3))), p)
    assert np.allclose(trace.values, [1.0])


def test_identical_hiddens_give_uniform_trace():
    p = init_attention_params(3, 3, np.random.default_rng(0))
    h = np.random.default_rng(2).normal(size=3)
    trace = attention_scores(hidden_list(np.tile(h, (5, 1))), p)
    assert np.allclose(trace.values, 0.2)


def test_scores_match_direct_formula():
    rng = np.random.default_rng(0)
    p = init_attention_params(3, 3, rng)
    H = rng.normal(size=(4, 3))
    trace = attention_scores(hidden_list(H), p)
    att = {"w_w": p.w_w.values, "b_w": p.b_w.values, "u_w": p.u_w.values}
    ref_trace, ref_r = attention_ref(H, att)
    assert np.max(np.abs(trace.values - ref_trace)) < 1e-12
    r = attend(hidden_list(H), trace)
    assert np.max(np.abs(r.values - ref_r)) < 1e-12


def test_scores_empty_input():
    p = init_attention_params(3, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        attention_scores([], p)


def test_trace_invariants_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        t_len = int(rng.integers(1, 9))
        hidden = int(rng.integers(1, 6))
        p = init_attention_params(hidden, hidden, rng)
        trace = attention_scores(hidden_list(rng.normal(0, 4, size=(t_len, hidden))), p)
        assert np.all(trace.values >= 0)
        assert abs(trace.values.sum() - 1.0) < 1e-9


def test_negated_context_still_normalizes():
    rng = np.random.default_rng(4)
    p = init_attention_params(3, 3, rng)
    H = hidden_list(rng.normal(size=(5, 3)))
    z1 = attention_scores(H, p).values
    p.u_w.values *= -1.0
    z2 = attention_scores(H, p).values
    assert abs(z2.sum() - 1.0) < 1e-9
    # logit ordering flips, so the trace ordering reverses
    assert np.array_equal(np.argsort(z1), np.argsort(z2)[::-1])


def test_attend_selection_and_mean():
    H = np.random.default_rng(5).normal(size=(4, 3))
    one_hot = np.zeros(4)
    one_hot[2] = 1.0
    r = attend(hidden_list(H), T.constant(one_hot))
    assert np.allclose(r.values, H[2])
    r = attend(hidden_list(H), T.constant(np.full(4, 0.25)))
    assert np.allclose(r.values, H.mean(axis=0))


def test_attend_direct_sum():
    H = hidden_list(np.array([[1.0, 0.0], [0.0, 1.0]]))
    r = attend(H, T.constant([0.25, 0.75]))
    assert np.allclose(r.values, [0.25, 0.75])


def test_attend_is_linear_in_hiddens():
    rng = np.random.default_rng(6)
    H = rng.normal(size=(5, 3))
    z = T.constant(np.abs(rng.normal(size=5)) / np.abs(rng.normal(size=5)).sum())
    base = attend(hidden_list(H), z).values
    scaled = attend(hidden_list(2.5 * H), z).values
    assert np.allclose(scaled, 2.5 * base)


def test_attend_length_mismatch():
    H = hidden_list(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        attend(H, T.constant([0.5, 0.5]))


def test_batched_matches_single():
    rng = np.random.default_rng(7)
    p = init_attention_params(3, 3, rng)
    H = rng.normal(size=(4, 3, 5))  # five samples
    trace = attention_scores([T.constant(H[t]) for t in range(4)], p)
    r = attend([T.constant(H[t]) for t in range(4)], trace)
    for b in range(5):
        single = attention_scores(hidden_list(H[:, :, b]), p)
        assert np.max(np.abs(trace.values[:, b] - single.values)) < 1e-12
        single_r = attend(hidden_list(H[:, :, b]), single)
        assert np.max(np.abs(r.values[:, b] - single_r.values)) < 1e-12
