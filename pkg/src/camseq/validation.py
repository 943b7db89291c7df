"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np


def check_two_view_sequences(X):
    """Coerce ``X`` into a pair of float64 arrays (N, T, d_r), (N, T, d_d).

    Accepts either a (X_rgb, X_depth) pair of 3-D arrays or a list of
    per-sample (x_rgb, x_depth) pairs sharing T within each view.
    """
    if isinstance(X, (tuple, list)) and len(X) == 2 and \
            np.asarray(X[0]).ndim == 3 and np.asarray(X[1]).ndim == 3:
        x_r = np.asarray(X[0], dtype=np.float64)
        x_d = np.asarray(X[1], dtype=np.float64)
    else:
        try:
            pairs = [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
                     for a, b in X]
        except (TypeError, ValueError) as exc:
            raise ValueError(
                "X must be a (X_rgb, X_depth) pair of 3-D arrays or a sequence "
                "of (x_rgb, x_depth) pairs") from exc
        if not pairs:
            raise ValueError("X is empty")
        x_r = np.stack([a for a, _ in pairs], axis=0)
        x_d = np.stack([b for _, b in pairs], axis=0)
    if x_r.shape[0] != x_d.shape[0]:
        raise ValueError(f"views disagree on sample count: {x_r.shape[0]} vs {x_d.shape[0]}")
    if x_r.shape[1] != x_d.shape[1]:
        raise ValueError(f"views disagree on sequence length: {x_r.shape[1]} vs {x_d.shape[1]}")
    for name, arr in (("rgb", x_r), ("depth", x_d)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in the {name} view")
    return x_r, x_d


def check_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"y must be a length-{n_samples} label vector, got shape {y.shape}")
    return y
