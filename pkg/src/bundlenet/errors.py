"""Exception types shared across the package."""


class BundleNetError(Exception):
    """Base class for package errors."""


class ShapeError(BundleNetError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(BundleNetError, ValueError):
    """A caller broke an operation's precondition."""


class LoadError(BundleNetError, ValueError):
    """Input data could not be parsed or is out of range."""


class FormatError(BundleNetError, ValueError):
    """A checkpoint or split file is corrupt or of the wrong version."""


class ConfigError(BundleNetError, ValueError):
    """Invalid configuration value or unknown key."""


class UnknownIdError(BundleNetError, LookupError):
    """An entity id is outside the known universe."""
