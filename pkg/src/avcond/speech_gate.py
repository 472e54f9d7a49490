"""Hard-gated phoneme injection into speech-span text tokens.

A binary mask derived from the caption's utterance spans confines a single
cross-attention layer: text positions inside an utterance attend to that
utterance's own phoneme tokens and receive a zero-initialized output
projection as a residual; every other position is returned bit-for-bit
unchanged (the gated path never writes into them).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Sequence

import torch
from torch import Tensor, nn

from .captions import Caption, Span
from .errors import EmptyTtsWithActiveMask, InvalidDim, ShapeMismatch
from .fusion import DTYPE, seeded_uniform_init_


@dataclass(frozen=True)
class SpeechMask:
    """0/1 vector over text tokens plus the per-utterance content spans."""

    values: tuple[int, ...]
    spans: tuple[Span, ...]

    @classmethod
    def from_spans(cls, spans: Sequence[Span], length: int) -> "SpeechMask":
        values = [0] * length
        for span in spans:
            for i in span.indices():
                if not 0 <= i < length:
                    raise ShapeMismatch(
                        f"utterance span {span} exceeds token count {length}"
                    )
                values[i] = 1
        return cls(tuple(values), tuple(spans))

    def active_count(self) -> int:
        return sum(self.values)


def build_speech_mask(caption: Caption) -> SpeechMask:
    """1 strictly inside every utterance's <S>..<E> content, 0 elsewhere."""
    return SpeechMask.from_spans(
        [u.content for u in caption.utterances], len(caption.tokens)
    )


class SpeechGate(nn.Module):
    """Single masked cross-attention layer; output projection zero at init."""

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.q = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.k = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.v = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.out = nn.Linear(d, d, bias=False, dtype=DTYPE)  # zero at init


def init_mtpca_params(d: int, seed: int) -> SpeechGate:
    if d <= 0:
        raise InvalidDim(f"embedding dim must be positive, got {d}")
    gate = SpeechGate(d)
    seeded_uniform_init_(gate, seed, 1.0 / sqrt(d))
    with torch.no_grad():
        gate.out.weight.zero_()
    return gate


def _segment_lengths(
    mask: SpeechMask, n_tts: int, tts_lengths: Sequence[int] | None
) -> list[int]:
    if tts_lengths is None:
        if len(mask.spans) <= 1:
            return [n_tts] * len(mask.spans)
        raise ShapeMismatch(
            "tts_lengths is required when the mask covers multiple utterances"
        )
    lengths = list(tts_lengths)
    if len(lengths) != len(mask.spans):
        raise ShapeMismatch(
            f"{len(lengths)} tts segments for {len(mask.spans)} utterances"
        )
    if sum(lengths) != n_tts:
        raise ShapeMismatch(
            f"tts segments sum to {sum(lengths)}, but c_tts has {n_tts} tokens"
        )
    return lengths


def mtpca_forward(
    c_txt: Tensor,
    c_tts: Tensor,
    mask: SpeechMask,
    params: SpeechGate,
    tts_lengths: Sequence[int] | None = None,
) -> Tensor:
    """Inject phoneme context into masked text positions only.

    Positions with mask 0 are bitwise untouched. Each utterance's text span
    attends solely to its own phoneme segment (``tts_lengths`` gives the
    per-utterance segmentation of ``c_tts``; it may be omitted when there is
    at most one utterance).
    """
    if c_txt.ndim != 2 or c_tts.ndim != 2:
        raise ShapeMismatch("c_txt and c_tts must be 2-D")
    if len(mask.values) != c_txt.shape[0]:
        raise ShapeMismatch(
            f"mask length {len(mask.values)} != text length {c_txt.shape[0]}"
        )
    d = params.d
    if c_txt.shape[1] != d or (c_tts.numel() and c_tts.shape[1] != d):
        raise ShapeMismatch("embedding dim does not match gate parameters")
    if mask.active_count() and c_tts.shape[0] == 0:
        raise EmptyTtsWithActiveMask(
            "mask has active positions but there are no TTS tokens"
        )

    c_txt = c_txt.to(DTYPE)
    out = c_txt.clone()
    if not mask.spans:
        return out
    lengths = _segment_lengths(mask, c_tts.shape[0], tts_lengths)

    offset = 0
    for span, seg_len in zip(mask.spans, lengths):
        rows = torch.arange(span.start, span.end + 1)
        segment = c_tts[offset : offset + seg_len].to(DTYPE)
        offset += seg_len
        if rows.numel() == 0:
            continue
        if seg_len == 0:
            raise EmptyTtsWithActiveMask(
                f"utterance span {span} is active but its TTS segment is empty"
            )
        q = params.q(c_txt[rows])
        k = params.k(segment)
        v = params.v(segment)
        attn = torch.softmax(q @ k.T / sqrt(d), dim=-1)
        out[rows] = c_txt[rows] + params.out(attn @ v)
    return out
