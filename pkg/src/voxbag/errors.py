"""Exception hierarchy shared by every stage of the pipeline.

Each family carries the process exit code the CLI maps it to.
"""


class VoxbagError(Exception):
    exit_code = 1


class ConfigError(VoxbagError, ValueError):
    exit_code = 2


class ShapeError(VoxbagError, ValueError):
    """Operands whose shapes do not satisfy an operation's contract."""

    exit_code = 3


class DataError(VoxbagError, ValueError):
    exit_code = 3


class NiftiError(DataError):
    pass


class NiftiMagicError(NiftiError):
    pass


class NiftiHeaderSizeError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class TruncatedDataError(NiftiError):
    pass


class ClassAbsentError(DataError):
    """Training data lacks one of the two classes."""


class NumericalError(VoxbagError, ArithmeticError):
    exit_code = 4


class PersistenceError(VoxbagError):
    exit_code = 5


class BundleMagicError(PersistenceError):
    pass


class BundleVersionError(PersistenceError):
    pass


class BundleCorruptError(PersistenceError):
    pass


class StageMismatchError(PersistenceError):
    """An artifact from an earlier stage does not match the current one."""
