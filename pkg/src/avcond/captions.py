"""Structured caption grammar: parsing, validation, serialization.

A caption is a whitespace-tokenized sentence sequence with a fixed layout:

    <label> <subN> is <visual desc> [,] with <acoustic desc> .   (one per subject)
    <global narrative sentences, anchors allowed>                (optional)
    <label> <subK> says <S> spoken words <E> [.]                 (zero or more)

Tags are single whitespace-delimited tokens: ``<subN>`` anchors a subject,
``<S>``/``<E>`` bracket spoken content. Descriptor sentences come first,
ordered by subject id; narrative follows; speech sentences close the caption
and may not interleave with narrative.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .errors import (
    EmptyInput,
    MalformedDescriptor,
    MalformedSpeech,
    UnknownAnchor,
    UnterminatedSpeech,
)

ANCHOR_PATTERN = re.compile(r"^<sub([1-9][0-9]*)>$")
SPEECH_START_TEXT = "<S>"
SPEECH_END_TEXT = "<E>"
PERIOD = "."


class TokenKind(Enum):
    WORD = "word"
    ANCHOR = "anchor"
    SPEECH_START = "speech_start"
    SPEECH_END = "speech_end"


@dataclass(frozen=True)
class Token:
    text: str
    index: int
    kind: TokenKind
    subject_id: int | None = None  # populated iff kind is ANCHOR

    @staticmethod
    def classify(text: str, index: int) -> "Token":
        """Build a token, inferring its kind from the text."""
        if text == SPEECH_START_TEXT:
            return Token(text, index, TokenKind.SPEECH_START)
        if text == SPEECH_END_TEXT:
            return Token(text, index, TokenKind.SPEECH_END)
        m = ANCHOR_PATTERN.match(text)
        if m:
            return Token(text, index, TokenKind.ANCHOR, subject_id=int(m.group(1)))
        return Token(text, index, TokenKind.WORD)


@dataclass(frozen=True)
class Span:
    """Inclusive token-index range; ``end < start`` encodes the empty span."""

    start: int
    end: int

    @property
    def is_empty(self) -> bool:
        return self.end < self.start

    def __len__(self) -> int:
        return max(0, self.end - self.start + 1)

    def indices(self) -> range:
        return range(self.start, self.end + 1)

    def contains(self, other: "Span") -> bool:
        if other.is_empty:
            return True
        return not self.is_empty and self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "Span") -> bool:
        if self.is_empty or other.is_empty:
            return False
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class SubjectDescriptor:
    subject_id: int
    label: Span          # identity words before the anchor (may be empty)
    visual_desc: Span    # words between "is" and [","] "with"
    acoustic_desc: Span  # words between "with" and the closing "."
    span: Span           # full descriptor sentence, period included


@dataclass(frozen=True)
class SpeechUtterance:
    speaker_id: int
    content: Span          # words strictly between <S> and <E>
    utterance_index: int   # per-speaker counter, order of appearance


@dataclass(frozen=True)
class Caption:
    """A fully parsed caption with its token stream and structural spans."""

    tokens: tuple[Token, ...]
    subjects: tuple[SubjectDescriptor, ...]
    global_section: Span
    utterances: tuple[SpeechUtterance, ...]

    def subject_ids(self) -> set[int]:
        return {s.subject_id for s in self.subjects}

    def subject(self, subject_id: int) -> SubjectDescriptor:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)


class DiagnosticCode(Enum):
    TOKEN_INDEX_GAP = "token_index_gap"
    BAD_TAG = "bad_tag"
    UNKNOWN_ANCHOR = "unknown_anchor"
    DESCRIPTOR_OVERLAP = "descriptor_overlap"
    DESCRIPTOR_ORDER = "descriptor_order"
    SPEECH_PAIRING = "speech_pairing"
    EMPTY_SPEECH = "empty_speech"
    SPEAKER_MISMATCH = "speaker_mismatch"
    SECTION_ORDER = "section_order"


@dataclass(frozen=True)
class Diagnostic:
    code: DiagnosticCode
    span: Span
    message: str


def parse_caption(text: str) -> Caption:
    """Parse caption text into its token stream and structural spans.

    Raises EmptyInput, MalformedDescriptor, UnknownAnchor, UnterminatedSpeech,
    or MalformedSpeech on grammar violations.
    """
    pieces = text.split()
    if not pieces:
        raise EmptyInput("caption text is empty")
    tokens = tuple(Token.classify(t, i) for i, t in enumerate(pieces))

    subjects: list[SubjectDescriptor] = []
    pos = 0
    last_id = 0
    while pos < len(tokens):
        desc = _try_descriptor(tokens, pos, last_id)
        if desc is None:
            break
        subjects.append(desc)
        last_id = desc.subject_id
        pos = desc.span.end + 1

    declared = {s.subject_id for s in subjects}

    # Narrative runs until the sentence containing the first <S>.
    first_s = next(
        (i for i in range(pos, len(tokens)) if tokens[i].kind is TokenKind.SPEECH_START),
        None,
    )
    if first_s is None:
        speech_pos = len(tokens)
        stray = next(
            (t for t in tokens[pos:] if t.kind is TokenKind.SPEECH_END), None
        )
        if stray is not None:
            raise MalformedSpeech(
                f"'{SPEECH_END_TEXT}' without a preceding '{SPEECH_START_TEXT}'",
                stray.index,
            )
    else:
        speech_pos = pos
        for i in range(first_s - 1, pos - 1, -1):
            if tokens[i].text == PERIOD:
                speech_pos = i + 1
                break
            if tokens[i].kind is TokenKind.SPEECH_END:
                raise MalformedSpeech(
                    f"'{SPEECH_END_TEXT}' without a preceding '{SPEECH_START_TEXT}'",
                    tokens[i].index,
                )
    global_section = Span(pos, speech_pos - 1)
    for i in global_section.indices():
        if tokens[i].kind is TokenKind.SPEECH_END:
            raise MalformedSpeech(
                f"'{SPEECH_END_TEXT}' without a preceding '{SPEECH_START_TEXT}'", i
            )

    utterances = _parse_speech(tokens, speech_pos)

    for tok in tokens[global_section.start :]:
        if tok.kind is TokenKind.ANCHOR and tok.subject_id not in declared:
            raise UnknownAnchor(
                f"anchor '{tok.text}' used without a descriptor", tok.index
            )

    return Caption(tokens, tuple(subjects), global_section, tuple(utterances))


def _try_descriptor(
    tokens: tuple[Token, ...], pos: int, last_id: int
) -> SubjectDescriptor | None:
    """Parse one descriptor sentence at ``pos``.

    Returns None when the sentence does not open a new descriptor (narrative
    or speech begins); raises MalformedDescriptor when a new subject anchor
    is present but the sentence structure around it is broken.
    """
    end = next((i for i in range(pos, len(tokens)) if tokens[i].text == PERIOD), None)
    if end is None:
        return None
    sentence = tokens[pos:end]
    anchor = next((t for t in sentence if t.kind is TokenKind.ANCHOR), None)
    if anchor is None or anchor.subject_id is None:
        return None
    if anchor.subject_id <= last_id:
        return None  # re-mention of a declared subject: narrative has begun
    if any(t.kind in (TokenKind.SPEECH_START, TokenKind.SPEECH_END) for t in sentence):
        return None  # speech sentence, not a descriptor
    a = anchor.index
    if a + 1 > end - 1 or tokens[a + 1].text != "is":
        raise MalformedDescriptor(
            f"descriptor for subject {anchor.subject_id} missing 'is' after the anchor",
            a,
        )
    with_idx = next(
        (i for i in range(a + 2, end) if tokens[i].text == "with"), None
    )
    if with_idx is None:
        raise MalformedDescriptor(
            f"descriptor for subject {anchor.subject_id} missing 'with'", a
        )
    visual_end = with_idx - 1
    if visual_end >= a + 2 and tokens[visual_end].text == ",":
        visual_end -= 1
    visual = Span(a + 2, visual_end)
    acoustic = Span(with_idx + 1, end - 1)
    if visual.is_empty or acoustic.is_empty:
        raise MalformedDescriptor(
            f"descriptor for subject {anchor.subject_id} has an empty description", a
        )
    for sp in (visual, acoustic):
        for i in sp.indices():
            if tokens[i].kind is not TokenKind.WORD:
                raise MalformedDescriptor(
                    f"tag '{tokens[i].text}' inside a subject description", i
                )
    for i in range(pos, a):
        if tokens[i].kind is not TokenKind.WORD:
            raise MalformedDescriptor(
                f"tag '{tokens[i].text}' inside a descriptor label", i
            )
    return SubjectDescriptor(
        subject_id=anchor.subject_id,
        label=Span(pos, a - 1),
        visual_desc=visual,
        acoustic_desc=acoustic,
        span=Span(pos, end),
    )


def _parse_speech(
    tokens: tuple[Token, ...], pos: int
) -> list[SpeechUtterance]:
    """Parse the trailing speech sentences starting at ``pos``."""
    utterances: list[SpeechUtterance] = []
    per_speaker: dict[int, int] = {}
    n = len(tokens)
    while pos < n:
        s_idx = None
        for i in range(pos, n):
            kind = tokens[i].kind
            if kind is TokenKind.SPEECH_START:
                s_idx = i
                break
            if kind is TokenKind.SPEECH_END:
                raise MalformedSpeech(
                    f"'{SPEECH_END_TEXT}' without a preceding '{SPEECH_START_TEXT}'", i
                )
            if tokens[i].text == PERIOD:
                raise MalformedSpeech(
                    "narrative sentence after speech has begun", i
                )
        if s_idx is None:
            raise MalformedSpeech("trailing words after the last utterance", pos)

        e_idx = None
        for i in range(s_idx + 1, n):
            kind = tokens[i].kind
            if kind is TokenKind.SPEECH_END:
                e_idx = i
                break
            if kind is not TokenKind.WORD:
                raise MalformedSpeech(
                    f"tag '{tokens[i].text}' inside spoken content", i
                )
        if e_idx is None:
            raise UnterminatedSpeech(
                f"'{SPEECH_START_TEXT}' at token {s_idx} has no matching "
                f"'{SPEECH_END_TEXT}'",
                s_idx,
            )
        content = Span(s_idx + 1, e_idx - 1)
        if content.is_empty:
            raise MalformedSpeech("utterance content is empty", s_idx)

        speaker = None
        for i in range(s_idx - 1, -1, -1):
            if tokens[i].kind is TokenKind.ANCHOR:
                speaker = tokens[i].subject_id
                break
        if speaker is None:
            raise UnknownAnchor(
                "utterance has no preceding anchor to identify the speaker", s_idx
            )
        j = per_speaker.get(speaker, 0)
        per_speaker[speaker] = j + 1
        utterances.append(SpeechUtterance(speaker, content, j))

        pos = e_idx + 1
        if pos < n and tokens[pos].text == PERIOD:
            pos += 1
    return utterances


def serialize_caption(caption: Caption) -> str:
    """Whitespace-join the token texts; inverse of parse_caption on valid captions."""
    return " ".join(t.text for t in caption.tokens)


def validate_caption(caption: Caption) -> list[Diagnostic]:
    """Check every structural invariant; returns one diagnostic per violation."""
    diags: list[Diagnostic] = []
    toks = caption.tokens

    for i, tok in enumerate(toks):
        if tok.index != i:
            diags.append(
                Diagnostic(
                    DiagnosticCode.TOKEN_INDEX_GAP,
                    Span(i, i),
                    f"token {i} carries index {tok.index}",
                )
            )
        expected = Token.classify(tok.text, tok.index)
        if expected.kind is not tok.kind or expected.subject_id != tok.subject_id:
            diags.append(
                Diagnostic(
                    DiagnosticCode.BAD_TAG,
                    Span(i, i),
                    f"token '{tok.text}' tagged {tok.kind.value}, "
                    f"expected {expected.kind.value}",
                )
            )

    declared = caption.subject_ids()
    prev: SubjectDescriptor | None = None
    for sub in caption.subjects:
        s = sub.span
        if s.is_empty:
            diags.append(
                Diagnostic(
                    DiagnosticCode.DESCRIPTOR_ORDER,
                    s,
                    f"subject {sub.subject_id} has an empty descriptor span",
                )
            )
            continue
        anchor_idx = next(
            (
                i
                for i in s.indices()
                if i < len(toks)
                and toks[i].kind is TokenKind.ANCHOR
                and toks[i].subject_id == sub.subject_id
            ),
            None,
        )
        parts_ordered = (
            anchor_idx is not None
            and sub.label.end < anchor_idx
            and (sub.visual_desc.is_empty or anchor_idx < sub.visual_desc.start)
            and (
                sub.visual_desc.is_empty
                or sub.acoustic_desc.is_empty
                or sub.visual_desc.end < sub.acoustic_desc.start
            )
        )
        contained = (
            s.contains(sub.label)
            and s.contains(sub.visual_desc)
            and s.contains(sub.acoustic_desc)
        )
        if not (parts_ordered and contained):
            diags.append(
                Diagnostic(
                    DiagnosticCode.DESCRIPTOR_ORDER,
                    s,
                    f"subject {sub.subject_id} descriptor parts out of order",
                )
            )
        if prev is not None and prev.subject_id >= sub.subject_id:
            diags.append(
                Diagnostic(
                    DiagnosticCode.DESCRIPTOR_ORDER,
                    s,
                    f"subjects {prev.subject_id} and {sub.subject_id} "
                    "not ordered by id",
                )
            )
        prev = sub

    for i, a in enumerate(caption.subjects):
        for b in caption.subjects[i + 1 :]:
            if a.span.overlaps(b.span):
                diags.append(
                    Diagnostic(
                        DiagnosticCode.DESCRIPTOR_OVERLAP,
                        b.span,
                        f"descriptor spans of subjects {a.subject_id} and "
                        f"{b.subject_id} overlap",
                    )
                )

    n_starts = sum(1 for t in toks if t.kind is TokenKind.SPEECH_START)
    n_ends = sum(1 for t in toks if t.kind is TokenKind.SPEECH_END)
    if not (n_starts == n_ends == len(caption.utterances)):
        diags.append(
            Diagnostic(
                DiagnosticCode.SPEECH_PAIRING,
                Span(0, len(toks) - 1),
                f"{n_starts} '<S>', {n_ends} '<E>', "
                f"{len(caption.utterances)} utterances",
            )
        )

    for utt in caption.utterances:
        c = utt.content
        if c.is_empty:
            diags.append(
                Diagnostic(
                    DiagnosticCode.EMPTY_SPEECH, c, "utterance content is empty"
                )
            )
            continue
        before, after = c.start - 1, c.end + 1
        if (
            before < 0
            or after >= len(toks)
            or toks[before].kind is not TokenKind.SPEECH_START
            or toks[after].kind is not TokenKind.SPEECH_END
        ):
            diags.append(
                Diagnostic(
                    DiagnosticCode.SPEECH_PAIRING,
                    c,
                    "utterance content not bracketed by '<S>'/'<E>'",
                )
            )
            continue
        speaker = None
        speaker_idx = None
        for i in range(before - 1, -1, -1):
            if toks[i].kind is TokenKind.ANCHOR:
                speaker = toks[i].subject_id
                speaker_idx = i
                break
        if speaker is None:
            diags.append(
                Diagnostic(
                    DiagnosticCode.UNKNOWN_ANCHOR,
                    Span(before, before),
                    "no anchor precedes the utterance",
                )
            )
        elif speaker != utt.speaker_id:
            diags.append(
                Diagnostic(
                    DiagnosticCode.SPEAKER_MISMATCH,
                    Span(speaker_idx, speaker_idx),
                    f"nearest anchor is subject {speaker}, "
                    f"utterance claims {utt.speaker_id}",
                )
            )
        if utt.speaker_id not in declared:
            first = next(
                (
                    t.index
                    for t in toks
                    if t.kind is TokenKind.ANCHOR and t.subject_id == utt.speaker_id
                ),
                c.start,
            )
            diags.append(
                Diagnostic(
                    DiagnosticCode.UNKNOWN_ANCHOR,
                    Span(first, first),
                    f"utterance speaker {utt.speaker_id} has no descriptor",
                )
            )

    outside = caption.global_section.start
    for tok in toks[outside:]:
        if tok.kind is TokenKind.ANCHOR and tok.subject_id not in declared:
            diags.append(
                Diagnostic(
                    DiagnosticCode.UNKNOWN_ANCHOR,
                    Span(tok.index, tok.index),
                    f"anchor '{tok.text}' used without a descriptor",
                )
            )

    # Layout order: descriptors, then the global section, then speech.
    desc_end = max((s.span.end for s in caption.subjects), default=-1)
    g = caption.global_section
    if not g.is_empty and g.start <= desc_end:
        diags.append(
            Diagnostic(
                DiagnosticCode.SECTION_ORDER,
                g,
                "global section begins inside the descriptor region",
            )
        )
    section_end = g.end if not g.is_empty else max(desc_end, g.start - 1)
    for utt in caption.utterances:
        if utt.content.start <= section_end:
            diags.append(
                Diagnostic(
                    DiagnosticCode.SECTION_ORDER,
                    utt.content,
                    "utterance precedes the global section",
                )
            )

    return diags


def caption_to_json(caption: Caption) -> dict:
    """Plain-dict dump matching the documented JSON schema."""
    return {
        "tokens": [
            {"i": t.index, "text": t.text, "kind": t.kind.value} for t in caption.tokens
        ],
        "subjects": [
            {"id": s.subject_id, "s": s.span.start, "e": s.span.end}
            for s in caption.subjects
        ],
        "utterances": [
            {
                "speaker": u.speaker_id,
                "start": u.content.start,
                "end": u.content.end,
                "j": u.utterance_index,
            }
            for u in caption.utterances
        ],
        "global": {
            "start": caption.global_section.start,
            "end": caption.global_section.end,
        },
    }


def dump_caption_json(caption: Caption) -> str:
    return json.dumps(caption_to_json(caption), indent=2, sort_keys=True) + "\n"
