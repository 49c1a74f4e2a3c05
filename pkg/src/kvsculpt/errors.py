"""Exception types shared across the package.

Plain ValueError is used for argument validation with the message acting as
the contract; the classes here exist where callers need to distinguish
failure modes programmatically (mainly the cache file reader).
"""


class KvsculptError(Exception):
    """Base class for package-specific failures."""


class KvdFormatError(KvsculptError):
    """Base class for cache-file parsing failures."""


class KvdBadMagic(KvdFormatError):
    """File does not start with the KVD1 magic bytes."""


class KvdVersionMismatch(KvdFormatError):
    """File declares a format version this reader does not support."""


class KvdTruncated(KvdFormatError):
    """File ends before the declared manifest or payload does."""


class KvdLayoutError(KvdFormatError):
    """Manifest tensor table is inconsistent with the payload layout."""


class DivergedError(KvsculptError):
    """An optimization run produced a non-finite or exploding loss."""
