"""Exception types shared across the matchers and the evaluation harness."""


class FingerprintError(Exception):
    """Base class for all errors raised by fpfusion."""


class ConstantImageWarning(UserWarning):
    """Raised as a warning when normalizing an image with zero variance."""


class ParseError(FingerprintError):
    pass


class NoLine(FingerprintError):
    """No Hough cell reached the vote threshold."""


class EmptyTemplate(FingerprintError):
    """Feature extraction left no usable ridge."""


class NoCandidate(FingerprintError):
    """Registration produced no alignment hypothesis."""


class MissingScore(FingerprintError):
    pass


class EmptySide(FingerprintError):
    """Genuine or impostor score list is empty."""


class CorpusShape(FingerprintError):
    """Corpus does not have the expected finger/session/sample layout."""
