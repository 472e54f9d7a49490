"""Anchored 3D positions and axis-split rotary embeddings.

Every conditioning token gets a coordinate (t, a2, a3). Prompt text runs
along t with a2 = a3 = 0; after each subject descriptor the temporal axis
reserves two slots, so that the subject's image-reference tokens sit at
(e+1, h, w), its audio-reference tokens at (e+2, j, 0), and text resumes at
e+3, where e is the temporal coordinate of the descriptor's last token.
TTS phoneme tokens are spread with linspace over their utterance's content
coordinates and flagged with a3 = 1.

Rotary rotation splits the head dimension into three even blocks, one per
axis, and rotates adjacent pairs (2m, 2m+1) inside each block by
coord_axis * base**(-2m/block_dim).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import sqrt

import numpy as np
import torch
from torch import Tensor

from .captions import Caption
from .errors import DimMismatch, InvalidSpan, MissingSubject, MissingUtterance


@dataclass(frozen=True)
class Coord3D:
    t: float
    a2: float
    a3: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.t, self.a2, self.a3)


@dataclass(frozen=True)
class PositionalAssignment:
    """Coordinates for every conditioning token group.

    image/audio coords are keyed by subject id (image grids flattened
    row-major); tts coords are keyed by utterance position in the caption.
    """

    text_coords: tuple[Coord3D, ...]
    image_coords: dict[int, tuple[Coord3D, ...]]
    audio_coords: dict[int, tuple[Coord3D, ...]]
    tts_coords: dict[int, tuple[Coord3D, ...]]

    def group_counts(self) -> tuple[int, int, int, int]:
        return (
            len(self.text_coords),
            sum(len(v) for v in self.image_coords.values()),
            sum(len(v) for v in self.audio_coords.values()),
            sum(len(v) for v in self.tts_coords.values()),
        )

    def tts_lengths(self, count: int | None = None) -> list[int]:
        """Token count per utterance, in caption order (0 when absent)."""
        if count is None:
            count = max(self.tts_coords) + 1 if self.tts_coords else 0
        return [len(self.tts_coords.get(m, ())) for m in range(count)]


def assign_positions(
    caption: Caption,
    image_grids: dict[int, tuple[int, int]] | None = None,
    audio_lengths: dict[int, int] | None = None,
    tts_counts: dict[int, int] | None = None,
) -> PositionalAssignment:
    """Assign anchored 3D coordinates to all token groups of a caption.

    image_grids maps subject id to (H, W); audio_lengths maps subject id to
    J; tts_counts maps utterance position to the phoneme token count M.
    """
    image_grids = image_grids or {}
    audio_lengths = audio_lengths or {}
    tts_counts = tts_counts or {}

    declared = caption.subject_ids()
    for sid in image_grids:
        if sid not in declared:
            raise MissingSubject(f"image grid for undeclared subject {sid}")
    for sid in audio_lengths:
        if sid not in declared:
            raise MissingSubject(f"audio length for undeclared subject {sid}")
    for m in tts_counts:
        if not 0 <= m < len(caption.utterances):
            raise MissingUtterance(f"tts count for nonexistent utterance {m}")

    # Temporal shift: +2 after each descriptor's closing token, reserving the
    # image and audio slots whether or not references are supplied.
    desc_ends = {s.span.end for s in caption.subjects}
    text_t: list[float] = []
    offset = 0
    for i in range(len(caption.tokens)):
        text_t.append(float(i + offset))
        if i in desc_ends:
            offset += 2
    text_coords = tuple(Coord3D(t, 0.0, 0.0) for t in text_t)

    image_coords: dict[int, tuple[Coord3D, ...]] = {}
    for sid in sorted(image_grids):
        h_count, w_count = image_grids[sid]
        anchor_t = text_t[caption.subject(sid).span.end] + 1.0
        image_coords[sid] = tuple(
            Coord3D(anchor_t, float(h), float(w))
            for h in range(h_count)
            for w in range(w_count)
        )

    audio_coords: dict[int, tuple[Coord3D, ...]] = {}
    for sid in sorted(audio_lengths):
        anchor_t = text_t[caption.subject(sid).span.end] + 2.0
        audio_coords[sid] = tuple(
            Coord3D(anchor_t, float(j), 0.0) for j in range(audio_lengths[sid])
        )

    tts_coords: dict[int, tuple[Coord3D, ...]] = {}
    for m in sorted(tts_counts):
        content = caption.utterances[m].content
        tts_coords[m] = tuple(
            tts_positions(text_t[content.start], text_t[content.end], tts_counts[m])
        )

    return PositionalAssignment(text_coords, image_coords, audio_coords, tts_coords)


def tts_positions(t_start: float, t_end: float, count: int) -> list[Coord3D]:
    """Spread ``count`` phoneme tokens over [t_start, t_end] with a3 = 1.

    A single token sits at t_start.
    """
    if t_start > t_end:
        raise InvalidSpan(f"t_start {t_start} > t_end {t_end}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        times = [float(t_start)]
    else:
        times = [float(t) for t in np.linspace(t_start, t_end, count)]
    return [Coord3D(t, 0.0, 1.0) for t in times]


@dataclass(frozen=True)
class RopeConfig:
    """Head dimension, per-axis block sizes, and rotation base."""

    head_dim: int
    axis_split: tuple[int, int, int]
    base_frequency: float = 10000.0

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ValueError(f"head_dim must be even and positive, got {self.head_dim}")
        if sum(self.axis_split) != self.head_dim:
            raise ValueError(
                f"axis_split {self.axis_split} does not sum to head_dim {self.head_dim}"
            )
        for d in self.axis_split:
            if d < 2 or d % 2:
                raise ValueError(f"each axis needs an even block of >= 2 dims, got {d}")
        if self.base_frequency <= 0:
            raise ValueError("base_frequency must be positive")

    @classmethod
    def for_head_dim(cls, head_dim: int, base_frequency: float = 10000.0) -> "RopeConfig":
        """Default split: half the dims to t, a quarter each to a2/a3."""
        quarter = max(2, 2 * (head_dim // 8))
        return cls(head_dim, (head_dim - 2 * quarter, quarter, quarter), base_frequency)


def coords_tensor(coords, dtype=torch.float64) -> Tensor:
    """Stack Coord3D items (or pass through an (n, 3) tensor) as float64."""
    if isinstance(coords, Tensor):
        if coords.ndim != 2 or coords.shape[-1] != 3:
            raise DimMismatch(f"coordinate tensor must be (n, 3), got {tuple(coords.shape)}")
        return coords.to(dtype)
    return torch.tensor([c.as_tuple() for c in coords], dtype=dtype).reshape(-1, 3)


def _pair_angles(coords: Tensor, config: RopeConfig) -> Tensor:
    """Rotation angle per adjacent pair: (n, head_dim / 2)."""
    blocks = []
    for axis, block_dim in enumerate(config.axis_split):
        exponents = torch.arange(0, block_dim, 2, dtype=coords.dtype) / block_dim
        freqs = config.base_frequency ** (-exponents)
        blocks.append(coords[:, axis : axis + 1] * freqs)
    return torch.cat(blocks, dim=-1)


def rope_rotate(embeddings: Tensor, coords, config: RopeConfig) -> Tensor:
    """Rotate each vector by its coordinate's per-axis angles.

    embeddings: (n, head_dim) or (n, heads, head_dim); norm is preserved.
    """
    c = coords_tensor(coords, dtype=embeddings.dtype)
    if embeddings.shape[-1] != config.head_dim:
        raise DimMismatch(
            f"vector dim {embeddings.shape[-1]} != head_dim {config.head_dim}"
        )
    if embeddings.shape[0] != c.shape[0]:
        raise DimMismatch(
            f"{embeddings.shape[0]} vectors vs {c.shape[0]} coordinates"
        )
    ang = _pair_angles(c, config)
    if embeddings.ndim == 3:  # (n, heads, head_dim): same angles on every head
        ang = ang.unsqueeze(1)
    elif embeddings.ndim != 2:
        raise DimMismatch(f"expected 2 or 3 dims, got {embeddings.ndim}")
    cos, sin = torch.cos(ang), torch.sin(ang)
    even = embeddings[..., 0::2]
    odd = embeddings[..., 1::2]
    rotated = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return rotated.reshape(embeddings.shape)


def rope_rotate_1d(embeddings: Tensor, positions: Tensor, base: float = 10000.0) -> Tensor:
    """Plain single-axis rotary rotation over the full head dimension."""
    dim = embeddings.shape[-1]
    if dim % 2:
        raise DimMismatch(f"head dim must be even, got {dim}")
    exponents = torch.arange(0, dim, 2, dtype=embeddings.dtype) / dim
    freqs = base ** (-exponents)
    ang = positions.to(embeddings.dtype).reshape(-1, 1) * freqs
    shape = [ang.shape[0]] + [1] * (embeddings.ndim - 2) + [dim // 2]
    ang = ang.reshape(shape)
    cos, sin = torch.cos(ang), torch.sin(ang)
    even = embeddings[..., 0::2]
    odd = embeddings[..., 1::2]
    rotated = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return rotated.reshape(embeddings.shape)


def attention_logits(
    queries: Tensor,
    keys: Tensor,
    q_coords,
    k_coords,
    config: RopeConfig,
) -> Tensor:
    """Scaled dot-product logits between rotated queries and keys.

    Depends only on per-axis coordinate differences.
    """
    q = rope_rotate(queries, q_coords, config)
    k = rope_rotate(keys, k_coords, config)
    return q @ k.transpose(-2, -1) / sqrt(config.head_dim)


def group_coord_tensors(
    assignment: PositionalAssignment, dtype=torch.float64
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Per-group (n, 3) coordinate tensors in fusion concatenation order:
    text, then images by subject id, audio by subject id, tts by utterance."""

    def stack(coords_list) -> Tensor:
        flat = [c.as_tuple() for coords in coords_list for c in coords]
        return torch.tensor(flat, dtype=dtype).reshape(-1, 3)

    text = stack([assignment.text_coords])
    image = stack([assignment.image_coords[k] for k in sorted(assignment.image_coords)])
    audio = stack([assignment.audio_coords[k] for k in sorted(assignment.audio_coords)])
    tts = stack([assignment.tts_coords[k] for k in sorted(assignment.tts_coords)])
    return text, image, audio, tts


def assignment_to_json(assignment: PositionalAssignment) -> dict:
    """Plain-dict dump matching the documented coordinate schema."""

    def triples(coords) -> list[list[float]]:
        return [[c.t, c.a2, c.a3] for c in coords]

    return {
        "text": triples(assignment.text_coords),
        "image": {str(k): triples(v) for k, v in sorted(assignment.image_coords.items())},
        "audio": {str(k): triples(v) for k, v in sorted(assignment.audio_coords.items())},
        "tts": {str(k): triples(v) for k, v in sorted(assignment.tts_coords.items())},
    }


def dump_assignment_json(assignment: PositionalAssignment) -> str:
    return json.dumps(assignment_to_json(assignment), indent=2, sort_keys=True) + "\n"
