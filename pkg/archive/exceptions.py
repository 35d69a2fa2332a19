from udss.exceptions import UDSSError


class ArchiveError(UDSSError):
    """Base class for pack/unpack errors"""


class EmptyRootfs(ArchiveError):
    """Nothing to pack"""


class DestCollision(ArchiveError):
    """The unpack destination already holds a directory of that name"""


class IoFailure(ArchiveError):
    """Reading or writing the archive or the destination failed (including a full tmpfs)"""


class ArchiveLayoutError(ArchiveError):
    """The archive does not have exactly one top-level directory"""
