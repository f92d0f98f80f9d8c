"""Exception hierarchy shared by all stages.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError -> 2, DataError -> 3, TrainingDiverged -> 4.
"""


class CsclogError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CsclogError):
    """Invalid run configuration (unknown key, bad value, bad profile)."""


class DataError(CsclogError):
    """Unusable input data (missing file, unparseable log, degenerate split)."""


class TrainingDiverged(CsclogError):
    """Training produced a non-finite loss; carries the last good checkpoint path if any."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class ArtifactError(CsclogError):
    """Artifact store problem: version or fingerprint mismatch, broken manifest chain."""
