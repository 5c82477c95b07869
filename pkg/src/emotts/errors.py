"""Exception types raised by the toolkit's public operations."""


class EmottsError(Exception):
    """Base class for all toolkit errors."""


# --- audio / dsp ---

class MissingFile(EmottsError, FileNotFoundError):
    pass


class UndecodableAudio(EmottsError, ValueError):
    pass


class EmptyAfterTrim(EmottsError, ValueError):
    """The whole signal fell below the trimming threshold."""


class RateMismatch(EmottsError, ValueError):
    pass


# --- corpus / text ---

class EmptyAfterNormalization(EmottsError, ValueError):
    pass


class UnencodableSymbol(EmottsError, ValueError):
    pass


class MissingIndex(EmottsError, FileNotFoundError):
    pass


class MissingRoot(EmottsError, FileNotFoundError):
    pass


class UnknownEmotion(EmottsError, ValueError):
    pass


class HoldoutTooLarge(EmottsError, ValueError):
    pass


# --- model / training ---

class ShapeMismatch(EmottsError, ValueError):
    pass


class EmptyBatch(EmottsError, ValueError):
    pass


class EmptyManifest(EmottsError, ValueError):
    pass


class ConfigMismatch(EmottsError, ValueError):
    """Init checkpoint was trained under different model/spectrogram configs."""


class NonFiniteLoss(EmottsError, ArithmeticError):
    """Training loss became NaN/Inf; carries the offending step."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


# --- synthesis ---

class EmptyText(EmottsError, ValueError):
    pass


class NoAlignment(EmottsError, RuntimeError):
    """Decoding hit the frame cap without ever attending the final character."""


class UnwritableOutput(EmottsError, OSError):
    pass


# --- evaluation ---

class EmptyReference(EmottsError, ValueError):
    pass


class LengthMismatch(EmottsError, ValueError):
    pass


class EmptyInput(EmottsError, ValueError):
    pass


class InvalidScore(EmottsError, ValueError):
    pass


class AsrTransportError(EmottsError, RuntimeError):
    """The ASR adapter failed to produce a hypothesis (process or network failure)."""


# --- MOS survey service ---

class EmptySurvey(EmottsError, ValueError):
    pass


class UnknownSession(EmottsError, KeyError):
    pass


class UnknownStimulus(EmottsError, KeyError):
    pass


class DuplicateRating(EmottsError, ValueError):
    pass
