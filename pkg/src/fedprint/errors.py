"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FedPrintError(Exception):
    exit_code = 4


class ConfigError(FedPrintError, ValueError):
    exit_code = 2


class ShapeError(FedPrintError, ValueError):
    pass


class DataError(FedPrintError, ValueError):
    pass


class ProtocolError(FedPrintError, RuntimeError):
    pass


class UndefinedSimilarityError(DataError):
    """Cosine similarity requested for a (numerically) zero vector."""


class ArtifactError(FedPrintError, OSError):
    """Expected output files are missing, or present and protected."""

    exit_code = 3


class OutputExistsError(ArtifactError):
    pass
