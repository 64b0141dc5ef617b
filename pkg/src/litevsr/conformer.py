"""Conformer blocks and convolutional time subsampling shared by both encoders.

Normalization is LayerNorm/GroupNorm throughout (never BatchNorm) so that a
batched forward equals the concatenation of per-sample forwards.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import DataError


class PositionalEncoding(nn.Module):
    """Standard sinusoidal absolute positional encoding, added in place."""

    def __init__(self, dim: int, max_len: int = 4096):
        super().__init__()
        self.dim = dim
        self.register_buffer("pe", self._build(max_len), persistent=False)

    def _build(self, length: int) -> torch.Tensor:
        position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(torch.arange(0, self.dim, 2, dtype=torch.float64) * (-math.log(10000.0) / self.dim))
        pe = torch.zeros(length, self.dim, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(position * div)
        pe[:, 1::2] = torch.cos(position * div[: (self.dim + 1) // 2])
        return pe

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[1]
        if t > self.pe.shape[0]:
            self.pe = self._build(t).to(self.pe.device)
        return x + self.pe[:t].to(x.dtype)


class ConformerBlock(nn.Module):
    """Half-step FFN, self-attention, depthwise-conv module, half-step FFN.

    ``mask`` is [N, T] with True on valid frames; padded frames are zeroed on
    exit so stacking blocks never leaks padding into valid positions.
    """

    def __init__(self, dim: int, num_heads: int, ff_mult: int = 4, conv_kernel: int = 7, dropout: float = 0.0):
        super().__init__()
        if dim % num_heads != 0:
            raise DataError(f"model dim {dim} not divisible by {num_heads} heads")
        if conv_kernel % 2 != 1:
            raise DataError("conv_kernel must be odd")
        self.ff1_norm = nn.LayerNorm(dim)
        self.ff1 = _feed_forward(dim, ff_mult, dropout)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.conv_norm = nn.LayerNorm(dim)
        self.conv_pointwise_in = nn.Conv1d(dim, 2 * dim, kernel_size=1)
        self.conv_depthwise = nn.Conv1d(dim, dim, kernel_size=conv_kernel, padding=conv_kernel // 2, groups=dim)
        self.conv_channel_norm = nn.GroupNorm(1, dim)
        self.conv_pointwise_out = nn.Conv1d(dim, dim, kernel_size=1)
        self.ff2_norm = nn.LayerNorm(dim)
        self.ff2 = _feed_forward(dim, ff_mult, dropout)
        self.final_norm = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        fmask = mask.unsqueeze(-1).to(x.dtype)
        x = x + 0.5 * self.dropout(self.ff1(self.ff1_norm(x)))
        q = self.attn_norm(x)
        attn_out, _ = self.attn(q, q, q, key_padding_mask=~mask, need_weights=False)
        x = x + self.dropout(attn_out)
        x = x * fmask
        c = self.conv_norm(x) * fmask
        c = c.transpose(1, 2)
        c = F.glu(self.conv_pointwise_in(c), dim=1)
        c = self.conv_depthwise(c)
        c = F.silu(self.conv_channel_norm(c))
        c = self.conv_pointwise_out(c).transpose(1, 2)
        x = x + self.dropout(c)
        x = x + 0.5 * self.dropout(self.ff2(self.ff2_norm(x)))
        return self.final_norm(x) * fmask


def _feed_forward(dim: int, mult: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(dim, dim * mult),
        nn.SiLU(),
        nn.Dropout(dropout),
        nn.Linear(dim * mult, dim),
    )


class ConvSubsampler(nn.Module):
    """Strided temporal convolution mapping [N, T, in_dim] -> [N, ceil(T/factor), out_dim].

    Inputs are right-zero-padded to a multiple of ``factor`` so non-overlapping
    windows give the ceil-division output length exactly.
    """

    def __init__(self, in_dim: int, out_dim: int, factor: int = 1):
        super().__init__()
        if factor < 1:
            raise DataError("subsampling factor must be >= 1")
        self.factor = factor
        if factor == 1:
            self.conv = nn.Conv1d(in_dim, out_dim, kernel_size=3, padding=1)
        else:
            self.conv = nn.Conv1d(in_dim, out_dim, kernel_size=factor, stride=factor)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        n, t, _ = x.shape
        if self.factor > 1:
            pad = (-t) % self.factor
            if pad:
                x = F.pad(x, (0, 0, 0, pad))
        y = F.silu(self.conv(x.transpose(1, 2))).transpose(1, 2)
        out_lengths = torch.div(lengths + self.factor - 1, self.factor, rounding_mode="floor")
        return y, out_lengths
