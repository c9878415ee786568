"""Network construction, teacher pruning, parameter accounting and serialization."""

from .networks import *  # noqa: F401,F403
from .networks import __all__ as _net_all
from .serialize import (
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    TruncatedError,
    UnsupportedVersionError,
    from_bytes,
    load_model,
    restore_snapshot,
    save_model,
    state_snapshot,
    to_bytes,
)

__all__ = list(_net_all) + [
    "BadMagicError", "ChecksumError", "ModelFormatError", "TruncatedError",
    "UnsupportedVersionError", "from_bytes", "load_model", "restore_snapshot", "save_model",
    "state_snapshot", "to_bytes",
]
