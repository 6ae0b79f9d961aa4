from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .model import TmtpnConfig, TmtpnModel, forecast
from .training import train


class TMTPNForecaster(RegressorMixin, BaseEstimator):
    """Estimator wrapper around ``TmtpnModel``.

    ``fit(X, Y)`` takes windows ``X`` of shape ``(n, T, K)`` and targets ``Y``
    of shape ``(n, F, K)``; ``predict`` returns autoregressive forecasts.
    Without explicit validation windows the last ``validation_fraction`` of
    the training windows is held out.
    """

    def __init__(self, d_model=64, num_heads=4, enc_layers=2, dec_layers=2, d_ffn=128, dropout=0.1,
                 lr=1e-3, batch_size=32, max_epochs=50, patience=None, grad_clip=1.0,
                 validation_fraction=0.1, random_state=0):
        self.d_model = d_model
        self.num_heads = num_heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.d_ffn = d_ffn
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.grad_clip = grad_clip
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self, K, T, F):
        return TmtpnConfig(
            K=K, T=T, F=F, d_model=self.d_model, num_heads=self.num_heads, enc_layers=self.enc_layers,
            dec_layers=self.dec_layers, d_ffn=self.d_ffn, dropout=self.dropout, lr=self.lr,
            batch_size=self.batch_size, max_epochs=self.max_epochs, seed=int(self.random_state or 0),
            patience=self.patience, grad_clip=self.grad_clip,
        )

    def fit(self, X, Y, X_val=None, Y_val=None):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        Y = check_array(Y, allow_nd=True, dtype=np.float64)
        if X.ndim != 3 or Y.ndim != 3 or X.shape[0] != Y.shape[0] or X.shape[2] != Y.shape[2]:
            raise ValueError(f"expected X (n, T, K) and Y (n, F, K), got {X.shape} and {Y.shape}")
        if X_val is None:
            n_val = max(1, int(round(X.shape[0] * self.validation_fraction)))
            if n_val >= X.shape[0]:
                raise ValueError("not enough windows to hold out a validation set")
            X, X_val = X[:-n_val], X[-n_val:]
            Y, Y_val = Y[:-n_val], Y[-n_val:]
        _, T, K = X.shape
        cfg = self._config(K, T, Y.shape[1])
        self.model_, self.train_log_ = train(TmtpnModel(cfg), (X, Y), (X_val, Y_val))
        self.n_features_in_ = K
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        return forecast(self.model_, X)

    def score(self, X, Y):
        # negative MAE keeps "greater is better"
        return -float(np.mean(np.abs(self.predict(X) - np.asarray(Y))))
