from udss.exceptions import UDSSError


class ImageError(UDSSError):
    """Base class for image parsing and flattening errors"""


class UnknownFormat(ImageError):
    """Input is neither an OCI image layout nor a docker-save tar"""


class DigestMismatch(ImageError):
    """A blob's content hash differs from its declared digest"""


class MissingBlob(ImageError):
    """A referenced blob is absent from the blob store"""


class PathEscape(ImageError):
    """A normalized path leaves the root"""


class EmptyImage(ImageError):
    """The image has no layers"""


class HardlinkTargetMissing(ImageError):
    """A hardlink points at a path that does not exist (or was whited out)"""


class UnsupportedLayer(ImageError):
    """Layer compression or media type that cannot be read offline"""
