"""Shared domain types: feature sequences, batching/masking, manifests, vocabularies."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)

LABEL_SOURCES = ("human", "pseudo", "none")

DETERMINISTIC_ENV_VAR = "LITEVSR_DETERMINISTIC"


class LiteVsrError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(LiteVsrError):
    """Invalid configuration value or argument."""

    exit_code = 2


class DataError(LiteVsrError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericError(LiteVsrError):
    """Non-finite values or numerically degenerate inputs."""

    exit_code = 4


def deterministic_requested() -> bool:
    return os.environ.get(DETERMINISTIC_ENV_VAR, "") == "1"


def set_determinism(seed: int, deterministic: bool = True) -> None:
    """Seed torch and, when requested, forbid nondeterministic kernels."""
    torch.manual_seed(seed)
    if deterministic or deterministic_requested():
        torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------------------
# Feature sequences and batching
# ---------------------------------------------------------------------------


@dataclass
class FeatureSequence:
    """A [T, d] feature matrix with a valid-length prefix; frames past
    ``valid_length`` are padding and excluded from statistics and losses."""

    values: torch.Tensor
    valid_length: int

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise DataError(f"FeatureSequence.values must be [T, d], got shape {tuple(self.values.shape)}")
        if not 0 <= self.valid_length <= self.values.shape[0]:
            raise DataError(
                f"valid_length {self.valid_length} out of range for {self.values.shape[0]} frames"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def valid_values(self) -> torch.Tensor:
        return self.values[: self.valid_length]


@dataclass
class BatchedFeatures:
    """Right-zero-padded batch of feature sequences: values [N, T_max, d]."""

    values: torch.Tensor
    lengths: torch.Tensor

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise DataError(f"BatchedFeatures.values must be [N, T, d], got {tuple(self.values.shape)}")
        if self.lengths.ndim != 1 or self.lengths.shape[0] != self.values.shape[0]:
            raise DataError("lengths must be a vector with one entry per sequence")

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def mask(self) -> torch.Tensor:
        """Boolean [N, T] mask, True on valid frames."""
        return length_mask(self.lengths, self.values.shape[1])

    def sequences(self) -> Iterator[FeatureSequence]:
        for i in range(self.batch_size):
            n = int(self.lengths[i])
            yield FeatureSequence(self.values[i, :n], n)


def length_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    steps = torch.arange(max_len, device=lengths.device)
    return steps.unsqueeze(0) < lengths.unsqueeze(1)


def zero_padding(values: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Return a copy of ``values`` with frames past each length set to zero."""
    mask = length_mask(lengths, values.shape[1]).to(values.dtype)
    return values * mask.unsqueeze(-1)


def pad_batch(seqs: Sequence[FeatureSequence]) -> BatchedFeatures:
    """Stack sequences into a right-zero-padded batch, preserving order.

    Fails on an empty list and on mixed feature dimensions.
    """
    if len(seqs) == 0:
        raise DataError("pad_batch requires at least one sequence")
    dim = seqs[0].dim
    for i, s in enumerate(seqs):
        if s.dim != dim:
            raise DataError(f"feature dimension mismatch: sequence 0 has d={dim}, sequence {i} has d={s.dim}")
    lengths = torch.tensor([s.valid_length for s in seqs], dtype=torch.long)
    t_max = int(lengths.max())
    out = torch.zeros(len(seqs), t_max, dim, dtype=seqs[0].values.dtype)
    for i, s in enumerate(seqs):
        out[i, : s.valid_length] = s.valid_values()
    return BatchedFeatures(out, lengths)


# ---------------------------------------------------------------------------
# Token sequences and vocabulary
# ---------------------------------------------------------------------------

TOY_CHARACTERS = "abcdefghijklmnopqrstuvwxyz '."


@dataclass
class TokenSequence:
    """Integer token ids over a vocabulary; the CTC blank is not a member
    (it exists only as the extra logit index ``vocab_size``)."""

    ids: list[int]
    vocab_size: int

    def __post_init__(self) -> None:
        for t in self.ids:
            if not 0 <= t < self.vocab_size:
                raise DataError(f"token id {t} outside vocabulary of size {self.vocab_size}")

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    """Token list mapping ids to strings. Blank id is ``size`` (not a member).

    The file format is one token per line, preserved verbatim apart from the
    trailing newline, so a single-space token round-trips. Multi-character
    tokens (e.g. BPE units) load and decode fine; ``encode`` is only defined
    for single-character vocabularies.
    """

    def __init__(self, tokens: Sequence[str]):
        if len(tokens) < 2:
            raise ConfigError("vocabulary needs at least 2 tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    @classmethod
    def toy_chars(cls) -> "Vocabulary":
        return cls(list(TOY_CHARACTERS))

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        if not lines:
            raise DataError(f"empty vocabulary file: {path}")
        return cls(lines)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    def encode(self, text: str) -> TokenSequence:
        if any(len(t) != 1 for t in self.tokens):
            raise ConfigError("encode is only supported for single-character vocabularies")
        ids = []
        for ch in text:
            if ch not in self._index:
                raise DataError(f"character {ch!r} not in vocabulary")
            ids.append(self._index[ch])
        return TokenSequence(ids, self.size)

    def decode(self, seq: TokenSequence | Sequence[int]) -> str:
        ids = seq.ids if isinstance(seq, TokenSequence) else seq
        return "".join(self.tokens[i] for i in ids)


# ---------------------------------------------------------------------------
# Sample manifests (JSON-lines, one sample per line)
# ---------------------------------------------------------------------------


@dataclass
class SampleManifestEntry:
    sample_id: str
    video_path: Path
    landmark_path: Path
    duration_s: float
    label_source: str = "none"
    audio_path: Path | None = None
    transcript: str | None = None

    def validate(self) -> None:
        if not self.sample_id:
            raise DataError("sample_id must be non-empty")
        if self.label_source not in LABEL_SOURCES:
            raise DataError(f"label_source must be one of {LABEL_SOURCES}, got {self.label_source!r}")
        has_transcript = self.transcript is not None
        if has_transcript != (self.label_source != "none"):
            raise DataError(
                f"sample {self.sample_id}: transcript must be present iff label_source != 'none' "
                f"(label_source={self.label_source!r}, transcript={'present' if has_transcript else 'absent'})"
            )
        if self.duration_s < 0:
            raise DataError(f"sample {self.sample_id}: negative duration_s")

    @property
    def labeled(self) -> bool:
        return self.label_source != "none"


_REQUIRED_MANIFEST_FIELDS = ("sample_id", "video_path", "landmark_path", "label_source", "duration_s")


def _entry_from_json(obj: dict, base_dir: Path) -> SampleManifestEntry:
    for name in _REQUIRED_MANIFEST_FIELDS:
        if name not in obj:
            raise DataError(f"missing required field {name!r}")
    unknown = set(obj) - set(_REQUIRED_MANIFEST_FIELDS) - {"audio_path", "transcript"}
    if unknown:
        raise DataError(f"unknown manifest fields: {sorted(unknown)}")

    def _resolve(p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else base_dir / path

    entry = SampleManifestEntry(
        sample_id=str(obj["sample_id"]),
        video_path=_resolve(obj["video_path"]),
        landmark_path=_resolve(obj["landmark_path"]),
        audio_path=_resolve(obj.get("audio_path")),
        transcript=obj.get("transcript"),
        label_source=obj["label_source"],
        duration_s=float(obj["duration_s"]),
    )
    entry.validate()
    return entry


def load_manifest(
    path: str | Path,
    strict: bool = True,
    check_paths: bool = True,
) -> list[SampleManifestEntry]:
    """Load a JSON-lines manifest; relative paths resolve against the manifest dir.

    In strict mode the first malformed line aborts with its line number; otherwise
    malformed lines are logged as warnings and skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    base_dir = path.parent
    entries: list[SampleManifestEntry] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise DataError("manifest line is not a JSON object")
            entry = _entry_from_json(obj, base_dir)
            if check_paths:
                for p in (entry.video_path, entry.landmark_path, entry.audio_path):
                    if p is not None and not p.is_file():
                        raise DataError(f"path not found: {p}")
        except (json.JSONDecodeError, DataError, ValueError) as exc:
            msg = f"{path}:{lineno}: {exc}"
            if strict:
                raise DataError(msg) from exc
            logger.warning("skipping manifest line: %s", msg)
            continue
        entries.append(entry)
    return entries


def save_manifest(entries: Iterable[SampleManifestEntry], path: str | Path) -> None:
    """Write a JSON-lines manifest; paths are stored relative to it when possible."""
    path = Path(path)
    base = path.parent.resolve()

    def _rel(p: Path | None) -> str | None:
        if p is None:
            return None
        p = p.resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            e.validate()
            obj = {
                "sample_id": e.sample_id,
                "video_path": _rel(e.video_path),
                "landmark_path": _rel(e.landmark_path),
                "label_source": e.label_source,
                "duration_s": e.duration_s,
            }
            if e.audio_path is not None:
                obj["audio_path"] = _rel(e.audio_path)
            if e.transcript is not None:
                obj["transcript"] = e.transcript
            f.write(json.dumps(obj) + "\n")


def load_clip(path: str | Path) -> np.ndarray:
    """Read a video clip stored as a .npy array [F, H, W, C] (uint8 or float)."""
    arr = np.load(path)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise DataError(f"clip {path} must be [F, H, W, C], got shape {arr.shape}")
    return arr


def load_audio_features(path: str | Path) -> np.ndarray:
    """Read precomputed acoustic front-end features stored as .npy [T, F_in]."""
    arr = np.load(path)
    if arr.ndim != 2:
        raise DataError(f"audio features {path} must be [T, F_in], got shape {arr.shape}")
    return arr
