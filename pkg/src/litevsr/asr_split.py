"""Toy CTC acoustic model and its split into an audio base and a frozen audio head.

The base is the convolutional subsampler plus the first ``split_layer``
Conformer blocks; the head is the remaining blocks plus the linear decoder.
Both halves reference the full model's parameter tensors (no copies), the
split sits at a block boundary, and head(base(x)) reproduces the full
forward exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .conformer import ConformerBlock, ConvSubsampler, PositionalEncoding
from .core import BatchedFeatures, ConfigError, DataError, zero_padding
from .weights_io import load_module, save_module

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class AcousticModelConfig:
    num_conformer_layers: int = 4
    model_dim: int = 32
    input_dim: int = 16
    subsampling_factor: int = 1
    vocab_size: int = 29
    split_layer: int = 2
    num_heads: int = 4
    ff_mult: int = 4
    conv_kernel: int = 7
    dropout: float = 0.0
    dtype: str = "float32"

    def validate(self) -> None:
        if self.num_conformer_layers < 0:
            raise ConfigError("num_conformer_layers must be >= 0")
        if self.model_dim <= 0:
            raise ConfigError("model_dim must be positive")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if not 0 <= self.split_layer <= self.num_conformer_layers:
            raise ConfigError(
                f"split_layer {self.split_layer} out of range [0, {self.num_conformer_layers}]"
            )
        if self.subsampling_factor < 1:
            raise ConfigError("subsampling_factor must be >= 1")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError("model_dim must be divisible by num_heads")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


class AcousticModel(nn.Module):
    """Subsampler -> positional encoding -> Conformer stack -> linear decoder."""

    def __init__(self, cfg: AcousticModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.subsampler = ConvSubsampler(cfg.input_dim, cfg.model_dim, cfg.subsampling_factor)
        self.pos_enc = PositionalEncoding(cfg.model_dim)
        self.layers = nn.ModuleList(
            ConformerBlock(cfg.model_dim, cfg.num_heads, cfg.ff_mult, cfg.conv_kernel, cfg.dropout)
            for _ in range(cfg.num_conformer_layers)
        )
        self.decoder = nn.Linear(cfg.model_dim, cfg.vocab_size + 1)
        self.to(cfg.torch_dtype)

    def _check_input(self, audio: torch.Tensor, lengths: torch.Tensor) -> None:
        if audio.ndim != 3 or audio.shape[2] != self.cfg.input_dim:
            raise DataError(f"expected audio [N, T, {self.cfg.input_dim}], got {tuple(audio.shape)}")
        if lengths.ndim != 1 or lengths.shape[0] != audio.shape[0]:
            raise DataError("lengths must have one entry per batch element")
        if bool((lengths <= 0).any()):
            raise DataError("zero-length audio input")
        if bool((lengths > audio.shape[1]).any()):
            raise DataError("length exceeds number of frames")

    def encode_front(self, audio: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check_input(audio, lengths)
        x, out_lengths = self.subsampler(audio, lengths)
        x = zero_padding(self.pos_enc(x), out_lengths)
        return x, out_lengths

    def forward(self, audio: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Full model: audio features [N, T, F_in] -> logits [N, T', vocab+1]."""
        x, out_lengths = self.encode_front(audio, lengths)
        mask = _mask(out_lengths, x.shape[1])
        for layer in self.layers:
            x = layer(x, mask)
        return self.decoder(x), out_lengths


def _mask(lengths: torch.Tensor, t: int) -> torch.Tensor:
    return torch.arange(t, device=lengths.device).unsqueeze(0) < lengths.unsqueeze(1)


def build_acoustic_model(cfg: AcousticModelConfig, seed: int) -> AcousticModel:
    """Deterministically initialized model: identical seeds give identical parameters."""
    cfg.validate()
    torch.manual_seed(seed)
    model = AcousticModel(cfg)
    model.eval()
    return model


class AudioBase(nn.Module):
    """Subsampler plus Conformer blocks 1..k; emits the distillation target space."""

    def __init__(self, model: AcousticModel, k: int):
        super().__init__()
        self.cfg = model.cfg
        self.subsampler = model.subsampler
        self.pos_enc = model.pos_enc
        self.layers = model.layers[:k]
        self._front = model.encode_front

    def forward(self, audio: torch.Tensor, lengths: torch.Tensor) -> BatchedFeatures:
        x, out_lengths = self._front(audio, lengths)
        mask = _mask(out_lengths, x.shape[1])
        for layer in self.layers:
            x = layer(x, mask)
        return BatchedFeatures(x, out_lengths)


class AudioHead(nn.Module):
    """Conformer blocks k+1..L plus the linear decoder; no temporal resampling."""

    def __init__(self, model: AcousticModel, k: int):
        super().__init__()
        self.cfg = model.cfg
        self.layers = model.layers[k:]
        self.decoder = model.decoder

    def forward(self, features: BatchedFeatures) -> torch.Tensor:
        if features.dim != self.cfg.model_dim:
            raise DataError(f"expected features of dim {self.cfg.model_dim}, got {features.dim}")
        x = features.values
        mask = _mask(features.lengths, x.shape[1])
        for layer in self.layers:
            x = layer(x, mask)
        return self.decoder(x)


@dataclass
class AcousticSplit:
    base: AudioBase
    head: AudioHead
    split_layer: int


def split_model(model: AcousticModel, k: int) -> AcousticSplit:
    """Split at the boundary after the k-th Conformer block; halves share the
    full model's tensors and partition its parameters exactly."""
    if not 0 <= k <= model.cfg.num_conformer_layers:
        raise ConfigError(f"split layer {k} out of range [0, {model.cfg.num_conformer_layers}]")
    return AcousticSplit(base=AudioBase(model, k), head=AudioHead(model, k), split_layer=k)


def num_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_acoustic_checkpoint(model: AcousticModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_module(model, directory / "acoustic")
    (directory / "acoustic_config.json").write_text(
        json.dumps(dataclasses.asdict(model.cfg), indent=1), encoding="utf-8"
    )


def load_acoustic_checkpoint(directory: str | Path) -> AcousticModel:
    directory = Path(directory)
    cfg_path = directory / "acoustic_config.json"
    if not cfg_path.is_file():
        raise DataError(f"acoustic checkpoint not found in {directory}")
    cfg = AcousticModelConfig(**json.loads(cfg_path.read_text(encoding="utf-8")))
    model = AcousticModel(cfg)
    load_module(model, directory / "acoustic")
    model.eval()
    return model
