"""Exception hierarchy shared across modules.

Every error carries a stable machine-readable ``code`` (the class name) so the
HTTP layer can map it one-to-one; see ``morphcollect.api``.
"""


class MorphError(Exception):
    """Base class; ``code`` is the class name unless overridden."""

    @property
    def code(self) -> str:
        return type(self).__name__


# domain
class EmptyInput(MorphError):
    pass


class NoPosTag(MorphError):
    pass


class UnknownVariety(MorphError):
    pass


class UnknownTag(MorphError):
    pass


# pattern engine
class UnbalancedBrace(MorphError):
    pass


class UnknownPlaceholder(MorphError):
    pass


class ZeroStemIndex(MorphError):
    pass


class MissingStem(MorphError):
    def __init__(self, index: int):
        super().__init__(f"lemma has no stem {index}")
        self.index = index


class MissingLayerMorpheme(MorphError):
    pass


class RegexCompileError(MorphError):
    pass


class DuplicateFeatureSet(MorphError):
    pass


# neural
class InsufficientData(MorphError):
    pass


class UntrainedModel(MorphError):
    pass


class ModelFormatError(MorphError):
    pass


# llm
class NoExemplars(MorphError):
    pass


class EmptyReply(MorphError):
    pass


# ensemble
class DuplicateSource(MorphError):
    pass


# workflow
class NotASpeaker(MorphError):
    pass


class InvalidState(MorphError):
    pass


class EmptyForm(MorphError):
    pass


class StaleVersion(MorphError):
    pass


class SelfVerification(MorphError):
    pass


class NotFlagged(MorphError):
    pass


# metrics
class EmptyReference(MorphError):
    pass


class MalformedGold(MorphError):
    pass


# storage
class NotFound(MorphError):
    pass


class PageTooLarge(MorphError):
    pass


class DependentEntriesExist(MorphError):
    pass


# io
class MissingHeader(MorphError):
    pass


class EncodingError(MorphError):
    pass


class FieldCharError(MorphError):
    """Raised when a field to be written contains a tab or newline."""


# api / cli
class ConfigError(MorphError):
    pass


class Forbidden(MorphError):
    pass


class UsageError(MorphError):
    pass
