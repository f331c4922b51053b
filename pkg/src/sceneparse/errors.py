"""Exception hierarchy shared by all sceneparse modules.

Exit-code mapping used by the CLI: ValidationError -> 2, NumericError -> 3,
IOError-ish failures -> 4.
"""


class SceneParseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SceneParseError):
    """Bad inputs: shapes, configs, manifests, label references."""


class ShapeError(ValidationError):
    """Tensor shape mismatch; message names both offending shapes."""


class ManifestError(ValidationError):
    """Malformed or inconsistent dataset manifest."""


class ConfigError(ValidationError):
    """Invalid run configuration."""


class NumericError(SceneParseError):
    """Runtime numeric failure (NaN/Inf loss, divergence)."""


class IOFailure(SceneParseError):
    """Missing or undecodable file, failed write."""


class CheckpointError(SceneParseError):
    """Unreadable checkpoint or config-hash mismatch."""
