"""Encoder-decoder transformer for joint multi-service forecasting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from ..exceptions import ValidationError


@dataclass(frozen=True)
class TmtpnConfig:
    K: int
    T: int = 30
    F: int = 5
    d_model: int = 64
    num_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ffn: int = 128
    dropout: float = 0.1
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 0
    patience: int | None = None
    grad_clip: float | None = 1.0

    def __post_init__(self):
        for name in ("K", "T", "F", "d_model", "num_heads", "enc_layers", "dec_layers", "d_ffn", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")
        if self.d_model % self.num_heads:
            raise ValidationError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if self.d_model % 2:
            raise ValidationError("d_model must be even for sinusoidal positional encoding")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def replace(self, **changes):
        return type(self).from_dict({**self.to_dict(), **changes})


def positional_encoding(length, d_model):
    """Sinusoidal encoding, ``(length, d_model)``: sin on even columns, cos on odd."""
    if length < 1:
        raise ValidationError("length must be >= 1")
    if d_model < 2 or d_model % 2:
        raise ValidationError(f"d_model must be a positive even number, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def look_ahead_mask(F, dtype=torch.float64):
    """Additive ``(F, F)`` mask: ``-inf`` strictly above the diagonal, 0 elsewhere."""
    if F < 1:
        raise ValidationError("F must be >= 1")
    return torch.triu(torch.full((F, F), float("-inf"), dtype=dtype), diagonal=1)


def attention_weights(Q, K, mask=None):
    if Q.shape[-1] != K.shape[-1]:
        raise ValidationError(f"query/key widths differ: {Q.shape[-1]} vs {K.shape[-1]}")
    scores = Q @ K.transpose(-2, -1) / math.sqrt(Q.shape[-1])
    if mask is not None:
        if mask.shape[-2:] != scores.shape[-2:]:
            raise ValidationError(f"mask shape {tuple(mask.shape)} does not match scores {tuple(scores.shape)}")
        scores = scores + mask.to(scores.dtype)
    return torch.softmax(scores, dim=-1)


def scaled_dot_attention(Q, K, V, mask=None):
    """``softmax(Q K^T / sqrt(d_k) + mask) V`` over the last two axes."""
    if K.shape[-2] != V.shape[-2]:
        raise ValidationError(f"key/value lengths differ: {K.shape[-2]} vs {V.shape[-2]}")
    return attention_weights(Q, K, mask) @ V


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, num_heads, dropout=0.0):
        super().__init__()
        if d_model % num_heads:
            raise ValidationError(f"d_model={d_model} is not divisible by num_heads={num_heads}")
        self.num_heads = num_heads
        self.d_k = d_model // num_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _heads(self, x):
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.num_heads, self.d_k).transpose(-3, -2)

    def forward(self, q_in, k_in, v_in, mask=None):
        q = self._heads(self.q_proj(q_in))
        k = self._heads(self.k_proj(k_in))
        v = self._heads(self.v_proj(v_in))
        weights = self.dropout(attention_weights(q, k, mask))
        heads = weights @ v  # (..., h, n_q, d_k)
        *lead, h, n_q, d_k = heads.shape
        concat = heads.transpose(-3, -2).reshape(*lead, n_q, h * d_k)
        return self.out_proj(concat)


class FeedForward(nn.Sequential):
    def __init__(self, d_model, d_ffn, dropout):
        super().__init__(nn.Linear(d_model, d_ffn), nn.ReLU(), nn.Dropout(dropout), nn.Linear(d_ffn, d_model))


class EncoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x):
        x = self.norm1(x + self.drop(self.self_attn(x, x, x)))
        return self.norm2(x + self.drop(self.ffn(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.num_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, y, memory, mask):
        y = self.norm1(y + self.drop(self.self_attn(y, y, y, mask)))
        y = self.norm2(y + self.drop(self.cross_attn(y, memory, memory)))
        return self.norm3(y + self.drop(self.ffn(y)))


class TmtpnModel(nn.Module):
    """Post-norm transformer: linear service embedding plus sinusoidal
    positions, an encoder over the T input steps and a causally masked
    decoder over the shifted targets, with a linear head back to K services.

    Parameters are initialized from ``config.seed`` without touching the
    global torch RNG.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.enc_embed = nn.Linear(config.K, config.d_model)
            self.dec_embed = nn.Linear(config.K, config.d_model)
            self.encoder = nn.ModuleList(EncoderLayer(config) for _ in range(config.enc_layers))
            self.decoder = nn.ModuleList(DecoderLayer(config) for _ in range(config.dec_layers))
            self.head = nn.Linear(config.d_model, config.K)
        self.embed_drop = nn.Dropout(config.dropout)
        pe = positional_encoding(max(config.T, config.F), config.d_model)
        self.register_buffer("pe", torch.as_tensor(pe, dtype=torch.float32), persistent=False)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def encode(self, x):
        h = self.embed_drop(self.enc_embed(x) + self.pe[: x.shape[-2]].to(x.dtype))
        for layer in self.encoder:
            h = layer(h)
        return h

    def decode(self, memory, dec_in):
        n = dec_in.shape[-2]
        mask = look_ahead_mask(n, dtype=dec_in.dtype)
        h = self.embed_drop(self.dec_embed(dec_in) + self.pe[:n].to(dec_in.dtype))
        for layer in self.decoder:
            h = layer(h, memory, mask)
        return self.head(h)

    def forward(self, x, y):
        """Teacher-forced pass: the decoder sees ``[0, y_1, ..., y_{F-1}]``."""
        start = torch.zeros_like(y[..., :1, :])
        dec_in = torch.cat([start, y[..., :-1, :]], dim=-2)
        return self.decode(self.encode(x), dec_in)

    @torch.no_grad()
    def generate(self, x, steps=None):
        """Autoregressive decoding: each prediction is fed back as the next input."""
        steps = self.config.F if steps is None else steps
        memory = self.encode(x)
        dec_in = torch.zeros(*x.shape[:-2], 1, self.config.K, dtype=x.dtype)
        preds = []
        for _ in range(steps):
            nxt = self.decode(memory, dec_in)[..., -1:, :]
            if not torch.all(torch.isfinite(nxt)):
                raise FloatingPointError("non-finite value during autoregressive decoding")
            preds.append(nxt)
            dec_in = torch.cat([dec_in, nxt], dim=-2)
        return torch.cat(preds, dim=-2)


def _as_tensor(a, model, name, shape_tail):
    t = torch.as_tensor(np.asarray(a) if not isinstance(a, torch.Tensor) else a, dtype=model.dtype)
    if tuple(t.shape[-2:]) != shape_tail:
        raise ValidationError(f"{name} must end in shape {shape_tail}, got {tuple(t.shape)}")
    if not torch.all(torch.isfinite(t)):
        raise ValidationError(f"{name} contains non-finite values")
    return t


def forward_train(model, X, Y):
    """Teacher-forced predictions for ``X`` (``(..., T, K)``) and targets ``Y``
    (``(..., F, K)``), all F positions in one pass. Returns a tensor with grad."""
    cfg = model.config
    x = _as_tensor(X, model, "X", (cfg.T, cfg.K))
    y = _as_tensor(Y, model, "Y", (cfg.F, cfg.K))
    return model(x, y)


def forecast(model, X):
    """Autoregressive F-step forecast for ``X`` of shape ``(T, K)`` or ``(n, T, K)``."""
    cfg = model.config
    x = _as_tensor(X, model, "X", (cfg.T, cfg.K))
    was_training = model.training
    model.eval()
    try:
        out = model.generate(x)
    finally:
        model.train(was_training)
    return out.cpu().numpy().astype(np.float64)


def persistence_baseline(X, F):
    """Repeat the last observed row ``F`` times."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-2] < 1:
        raise ValidationError("X must have at least one time step")
    last = X[..., -1:, :]
    return np.repeat(last, F, axis=-2)
