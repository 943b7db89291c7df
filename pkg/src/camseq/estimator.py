"""Scikit-learn style front end: the whole three-phase pipeline behind
fit/predict, so the classifier composes with the wider ecosystem."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .cells import CollabOptions
from .data import Dataset, ViewSample
from .model import predict_full
from .training import RunConfig, train_all
from .validation import check_labels, check_two_view_sequences


class CamClassifier(BaseEstimator, ClassifierMixin):
    """Two-view sequence classifier with collaborative temporal attention.

    ``X`` is a pair of 3-D arrays ``(X_rgb, X_depth)`` shaped (N, T, d_view),
    or a sequence of per-sample (x_rgb, x_depth) pairs. Training runs the
    three phases in order: per-view attention models, the joint collaboration
    model on the frozen first-stage traces, then the fusion head. ``predict``
    returns the fused head's labels.

    Parameters mirror :class:`camseq.training.RunConfig`; see there for the
    paper-scale defaults.
    """

    def __init__(self, hidden_dim=128, att_dim=None, lr_stage1=5e-4,
                 lr_stage2=1e-3, lr_fusion=1e-3, batch_size=32,
                 epochs_stage1=100, epochs_stage2=100, epochs_fusion=50,
                 collaborate_rgb=True, collaborate_depth=True, seed=0):
        self.hidden_dim = hidden_dim
        self.att_dim = att_dim
        self.lr_stage1 = lr_stage1
        self.lr_stage2 = lr_stage2
        self.lr_fusion = lr_fusion
        self.batch_size = batch_size
        self.epochs_stage1 = epochs_stage1
        self.epochs_stage2 = epochs_stage2
        self.epochs_fusion = epochs_fusion
        self.collaborate_rgb = collaborate_rgb
        self.collaborate_depth = collaborate_depth
        self.seed = seed

    def _config(self):
        return RunConfig(
            hidden_dim=self.hidden_dim, att_dim=self.att_dim,
            lr_stage1=self.lr_stage1, lr_stage2=self.lr_stage2,
            lr_fusion=self.lr_fusion, batch_size=self.batch_size,
            epochs_stage1=self.epochs_stage1, epochs_stage2=self.epochs_stage2,
            epochs_fusion=self.epochs_fusion, seed=self.seed,
            collaborate_rgb=self.collaborate_rgb,
            collaborate_depth=self.collaborate_depth,
        )

    def fit(self, X, y):
        x_r, x_d = check_two_view_sequences(X)
        y = check_labels(y, x_r.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        samples = [ViewSample(f"fit-{i:06d}", int(encoded[i]), x_r[i], x_d[i])
                   for i in range(x_r.shape[0])]
        dataset = Dataset(len(self.classes_), x_r.shape[1], x_r.shape[2],
                          x_d.shape[2], samples, [])
        self.params_, self.report_, _ = train_all(dataset, self._config())
        self.n_features_in_ = (x_r.shape[2], x_d.shape[2])
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("CamClassifier is not fitted; call fit first")

    def _options(self):
        return CollabOptions(collaborate_rgb=self.collaborate_rgb,
                             collaborate_depth=self.collaborate_depth)

    def _forward_all(self, X):
        self._check_fitted()
        x_r, x_d = check_two_view_sequences(X)
        return [predict_full(x_r[i], x_d[i], self.params_, self._options())
                for i in range(x_r.shape[0])]

    def predict(self, X):
        outs = self._forward_all(X)
        return self.classes_[np.array([o["class_fused"] for o in outs], dtype=np.intp)]

    def predict_proba(self, X):
        outs = self._forward_all(X)
        return np.stack([o["proba_fused"] for o in outs], axis=0)

    def predict_per_view(self, X):
        """Labels of all three heads: dict with 'rgb', 'depth', 'fused'."""
        outs = self._forward_all(X)
        return {head: self.classes_[np.array([o[f"class_{key}"] for o in outs], dtype=np.intp)]
                for head, key in (("rgb", "r"), ("depth", "d"), ("fused", "fused"))}

    def attention_traces(self, X):
        """Both stages' attention traces, each (N, T): dict keyed
        stage1_rgb / stage1_depth / stage2_rgb / stage2_depth."""
        outs = self._forward_all(X)
        return {
            "stage1_rgb": np.stack([o["stage1_trace_r"] for o in outs]),
            "stage1_depth": np.stack([o["stage1_trace_d"] for o in outs]),
            "stage2_rgb": np.stack([o["stage2_trace_r"] for o in outs]),
            "stage2_depth": np.stack([o["stage2_trace_d"] for o in outs]),
        }
