"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes: ``InputError`` -> 2,
``ConfigError`` -> 3, ``NumericError`` -> 4.
"""


class FFNMTError(Exception):
    """Base class for all package errors."""


class InputError(FFNMTError, ValueError):
    """Bad user-supplied data (missing files, mismatched line counts, empty corpora)."""


class ConfigError(FFNMTError, ValueError):
    """Invalid configuration value or combination."""


class DimensionError(FFNMTError, ValueError):
    """Tensor shapes do not agree."""


class DomainError(FFNMTError, ValueError):
    """Argument outside the operation's domain (empty sequence, id out of range)."""


class ContractError(FFNMTError, ValueError):
    """Operation called in a context it does not support."""


class UnsupportedVariantError(ContractError):
    """Feature requested on a model variant that cannot provide it."""


class StateError(FFNMTError, RuntimeError):
    """Object used in the wrong lifecycle state (e.g. backward before forward)."""


class NumericError(FFNMTError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""
