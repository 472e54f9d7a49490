"""Exception types shared across the package."""


class AvcondError(Exception):
    """Base class for all errors raised by this package."""


# -- caption grammar ---------------------------------------------------------


class CaptionError(AvcondError):
    """Base class for caption parse failures.

    Carries the token index of the offending token when known, so callers
    can report file/position-style locations.
    """

    def __init__(self, message: str, token_index: int | None = None):
        super().__init__(message)
        self.token_index = token_index


class EmptyInput(CaptionError):
    """Caption text is empty or whitespace-only."""


class UnterminatedSpeech(CaptionError):
    """A ``<S>`` marker has no matching ``<E>``."""


class UnknownAnchor(CaptionError):
    """An anchor tag references a subject with no descriptor."""


class MalformedDescriptor(CaptionError):
    """A descriptor sentence is missing its ``is``/``with`` structure."""


class MalformedSpeech(CaptionError):
    """The speech region violates the sentence layout (stray ``<E>``,
    nested ``<S>``, tags inside spoken content, empty content, or narrative
    text after speech has begun)."""


# -- positional engine -------------------------------------------------------


class MissingSubject(AvcondError):
    """A reference grid or audio length was supplied for an undeclared subject."""


class MissingUtterance(AvcondError):
    """A TTS token count was supplied for a nonexistent utterance."""


class InvalidSpan(AvcondError):
    """A temporal span has start > end."""


class DimMismatch(AvcondError):
    """Vector dimension or sequence length is inconsistent with the rotary config."""


# -- fusion / gate / denoiser ------------------------------------------------


class InvalidDim(AvcondError):
    """Embedding dimension incompatible with the requested head count."""


class ShapeMismatch(AvcondError):
    """Tensor shapes inconsistent with the declared sequence structure."""


class EmptyTtsWithActiveMask(AvcondError):
    """The speech mask has active positions but there are no TTS tokens to attend to."""


# -- training scheduler ------------------------------------------------------


class InvalidRatio(AvcondError):
    """A step-kind ratio lies outside [0, 1]."""


class OutOfRange(AvcondError):
    """A step index lies outside the schedule."""


class UnknownGroup(AvcondError):
    """A gradient key does not belong to any known parameter group."""


class CurriculumOrderError(AvcondError):
    """A cross-pair stage was placed before all in-pair stages."""
