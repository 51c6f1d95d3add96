"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes: configuration
problems (2), bad or inconsistent data (3) and numeric divergence (4).
"""


class DeepBoSEError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DeepBoSEError, ValueError):
    pass


class DataError(DeepBoSEError, ValueError):
    pass


class EmbeddingFormatError(DataError):
    pass


class LexiconFormatError(DataError):
    pass


class CorpusFormatError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class EmptyDocumentError(DataError):
    """A document has no tokens at all."""


class OOVDocumentError(DataError):
    """Every token of a document is missing from the embedding table."""


class MissingEmotionError(DataError):
    """An emotion of the lexicon has no word in the embedding table."""


class ModelMismatchError(DataError):
    """A model, codebook or embedding table do not fit together."""


class DivergenceError(DeepBoSEError, ArithmeticError):
    """A loss became non-finite during optimization."""
