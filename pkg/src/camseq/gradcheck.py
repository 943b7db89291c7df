"""Central-difference gradient verification against the tape's backward pass."""

from __future__ import annotations

import numpy as np

from . import tensor as T


class NonDeterministicLossError(RuntimeError):
    """The loss function returned different values for identical inputs."""


# skip remaining step sizes once an entry agrees this closely
_GOOD_ENOUGH = 1e-6


def finite_diff_check(loss_fn, params, epsilon=1e-5):
    """Worst relative disagreement between analytic and numeric gradients.

    ``loss_fn`` rebuilds the forward graph from the current values of
    ``params`` (a list of DiffArrays) and returns the scalar loss DiffArray.
    Every parameter entry is perturbed by +/- epsilon and the symmetric
    difference is compared to the gradient produced by one backward pass.
    The relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.

    ``epsilon`` may also be a sequence of step sizes; each entry then keeps
    its best-converged estimate. One step cannot serve every entry in
    float64: entries with tiny true gradients are roundoff-limited (need a
    larger step), entries with strong curvature are truncation-limited (need
    a smaller one). A genuinely wrong analytic gradient disagrees at every
    step size, so this loses no checking power.
    """
    epsilons = (epsilon,) if np.isscalar(epsilon) else tuple(epsilon)
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilon must be positive")

    def evaluate():
        return float(loss_fn().values)

    base = evaluate()
    if evaluate() != base:
        raise NonDeterministicLossError("loss function is not deterministic")

    T.zero_grads(params)
    with T.Tape() as tape:
        loss = loss_fn()
        T.backward(loss, tape)

    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1)
        flat = p.values.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            best = np.inf
            for eps in epsilons:
                flat[k] = orig + eps
                f_plus = evaluate()
                flat[k] = orig - eps
                f_minus = evaluate()
                flat[k] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(analytic[k]), abs(numeric), 1e-8)
                best = min(best, abs(analytic[k] - numeric) / denom)
                if best < _GOOD_ENOUGH:
                    break
            worst = max(worst, best)
    return worst


def _random_sequence(rng, length, dim, batch=None):
    shape = (length, dim) if batch is None else (length, dim, batch)
    return rng.normal(0.0, 1.0, size=shape)


def build_stage1_case(rng, seq_len=4, input_dim=3, hidden_dim=4, n_classes=3):
    """Random single-view classification loss and its parameter list."""
    from .model import init_stage_one_view, stage1_forward

    view = init_stage_one_view(input_dim, hidden_dim, hidden_dim, n_classes, rng)
    X = _random_sequence(rng, seq_len, input_dim)
    label = int(rng.integers(0, n_classes))
    params = [a for _, a in view.named("s1")]

    def loss_fn():
        logits, _ = stage1_forward(X, view)
        return T.cross_entropy(logits, label)

    return loss_fn, params


def build_stage2_case(rng, seq_len=4, d_r=3, d_d=3, hidden_dim=4, n_classes=3):
    """Random two-view collaboration loss (both heads summed)."""
    from .cells import CollabOptions
    from .model import init_stage_two_model, stage2_forward

    model = init_stage_two_model(d_r, d_d, hidden_dim, hidden_dim, n_classes, rng)
    X_r = _random_sequence(rng, seq_len, d_r)
    X_d = _random_sequence(rng, seq_len, d_d)
    Z_r = T.softmax_np(rng.normal(size=seq_len))
    Z_d = T.softmax_np(rng.normal(size=seq_len))
    label = int(rng.integers(0, n_classes))
    options = CollabOptions()
    params = [a for _, a in model.named("s2")]

    def loss_fn():
        logits_r, logits_d, _, _ = stage2_forward(X_r, X_d, Z_r, Z_d, model, options)
        return T.add(T.cross_entropy(logits_r, label), T.cross_entropy(logits_d, label))

    return loss_fn, params


def build_fusion_case(rng, n_classes=3):
    """Random correlative-fusion loss over the fusion head's parameters."""
    from .model import correlative_fusion, init_fusion_head

    head = init_fusion_head(n_classes, rng)
    p_r = T.softmax_np(rng.normal(size=n_classes))
    p_d = T.softmax_np(rng.normal(size=n_classes))
    label = int(rng.integers(0, n_classes))
    params = [a for _, a in head.named("fusion")]

    def loss_fn():
        logits = correlative_fusion(T.constant(p_r), T.constant(p_d), head)
        return T.cross_entropy(logits, label)

    return loss_fn, params


def check_all_losses(seed=0, seq_len=4, d_r=3, d_d=3, hidden_dim=4, n_classes=3,
                     epsilon=(1e-4, 1e-3)):
    """Run the finite-difference check on one case of each loss family.

    Returns a dict of family name to worst relative error.
    """
    rng = np.random.default_rng(seed)
    results = {}
    loss_fn, params = build_stage1_case(rng, seq_len, d_r, hidden_dim, n_classes)
    results["stage1"] = finite_diff_check(loss_fn, params, epsilon)
    loss_fn, params = build_stage2_case(rng, seq_len, d_r, d_d, hidden_dim, n_classes)
    results["stage2"] = finite_diff_check(loss_fn, params, epsilon)
    loss_fn, params = build_fusion_case(rng, n_classes)
    results["fusion"] = finite_diff_check(loss_fn, params, epsilon)
    return results
