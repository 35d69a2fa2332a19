"""
Domain types for image parsing and flattening.

These are plain immutable values, not database tables: udss never opens a
database.
"""
import posixpath
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType

from .exceptions import HardlinkTargetMissing, ImageError, PathEscape

WHITEOUT_PREFIX = '.wh.'
OPAQUE_MARKER = '.wh..wh..opq'

# setuid and setgid are never carried into a flattened image.
PRIVILEGE_BITS = 0o6000
MODE_MASK = 0o7777


class EntryKind(str, Enum):
    FILE = 'file'
    DIR = 'dir'
    SYMLINK = 'symlink'
    HARDLINK = 'hardlink'
    WHITEOUT = 'whiteout'
    OPAQUE = 'opaque-dir-marker'


TREE_KINDS = frozenset({EntryKind.FILE, EntryKind.DIR, EntryKind.SYMLINK, EntryKind.HARDLINK})


def normalize_path(path):
    """
    Normalize a member path to the relative form used as tree key.

    Leading slashes and "./" are dropped; the image root itself becomes ''.

    Raises:
        PathEscape: the normalized path still has a '..' component
    """
    path = str(path).lstrip('/')
    if not path:
        return ''
    normalized = posixpath.normpath(path)
    if normalized == '.':
        return ''
    if normalized == '..' or normalized.startswith('../'):
        raise PathEscape(f"Path leaves the image root: {path}")
    return normalized


def parent_of(path):
    return posixpath.dirname(path)


@dataclass(frozen=True)
class LayerEntry:
    """One member of a layer: a file, directory, link, whiteout or opaque marker"""

    path: str
    kind: EntryKind
    mode: int = 0o644
    # bytes for files, link target for symlinks and hardlinks, None otherwise
    payload: bytes | str | None = None
    mtime: int = 0

    @property
    def size(self):
        if self.kind is EntryKind.FILE and self.payload is not None:
            return len(self.payload)
        return 0

    def moved_to(self, path):
        return replace(self, path=path)


@dataclass(frozen=True)
class LayerRef:
    """Reference to one layer blob: content digest, location in the blob store, media type"""

    digest: str
    location: str
    media_type: str

    @property
    def short_digest(self):
        return self.digest.split(':', 1)[-1][:12]


@dataclass(frozen=True)
class ImageManifest:
    """Ordered (base-first) layer references plus image metadata"""

    image_name: str
    layers: tuple
    config_env: tuple = ()
    config_workdir: str | None = None
    source_format: str = 'oci'

    @property
    def environment(self):
        """config_env as an ordered dict; malformed lines are dropped"""
        env = {}
        for line in self.config_env:
            key, sep, value = line.partition('=')
            if sep and key:
                env[key] = value
        return env


@dataclass(frozen=True, eq=True)
class FlattenedRootfs:
    """
    The squashed filesystem tree: relative path -> final LayerEntry.

    Build with from_tree(), which checks the invariants: no whiteouts or opaque
    markers, every parent directory present and every hardlink resolvable.
    """

    tree: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    @classmethod
    def from_tree(cls, tree):
        ordered = {}
        for path in sorted(tree):
            entry = tree[path]
            if entry.kind not in TREE_KINDS:
                raise ImageError(f"{entry.kind.value} entry survived flattening: {path}")
            parent = parent_of(path)
            if parent and (parent not in tree or tree[parent].kind is not EntryKind.DIR):
                raise ImageError(f"Parent directory missing for {path}")
            if entry.kind is EntryKind.HARDLINK:
                target = tree.get(entry.payload)
                if target is None or target.kind is not EntryKind.FILE:
                    raise HardlinkTargetMissing(f"Hardlink {path} -> {entry.payload} has no target")
            ordered[path] = entry
        return cls(tree=MappingProxyType(ordered))

    @property
    def total_size_bytes(self):
        return sum(entry.size for entry in self.tree.values())

    def __len__(self):
        return len(self.tree)

    def __iter__(self):
        return iter(self.tree.values())

    def __contains__(self, path):
        return path in self.tree

    def __getitem__(self, path):
        return self.tree[path]

    def with_entries(self, entries):
        """Return a copy with extra entries added (or replaced)"""
        tree = dict(self.tree)
        for entry in entries:
            tree[entry.path] = entry
        return FlattenedRootfs.from_tree(tree)
