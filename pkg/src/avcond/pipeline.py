"""The canonical conditioning order: speech gate first, then context fusion."""

from __future__ import annotations

from torch import Tensor

from .fusion import ConditionBundle, ContextFusion, ocf_forward
from .positions import RopeConfig
from .speech_gate import SpeechGate, SpeechMask, mtpca_forward


def enriched_context(
    bundle: ConditionBundle,
    mask: SpeechMask,
    gate: SpeechGate,
    fusion: ContextFusion,
    rope: RopeConfig,
) -> Tensor:
    """Gate phonemes into the speech spans, then fuse all reference context.

    The gated text replaces c_txt in the bundle before fusion; the TTS
    segmentation comes from the bundle's positional assignment.
    """
    lengths = bundle.assignment.tts_lengths(len(mask.spans))
    gated = mtpca_forward(
        bundle.c_txt, bundle.c_tts, mask, gate, tts_lengths=lengths
    )
    return ocf_forward(bundle.with_text(gated), fusion, rope)
