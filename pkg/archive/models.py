import tarfile
from dataclasses import dataclass
from pathlib import Path

from images.exceptions import PathEscape
from images.models import normalize_path

from .exceptions import ArchiveLayoutError, IoFailure


@dataclass(frozen=True)
class ArchiveMember:
    """Per-entry metadata of an archive, compression stream excluded"""

    name: str
    type: str
    mode: int
    size: int
    mtime: int
    linkname: str


@dataclass(frozen=True)
class RootfsArchive:
    """A gzip-compressed pax tar holding one top-level directory"""

    path: Path
    top_level_name: str

    @classmethod
    def open(cls, path):
        """
        Inspect an existing archive and find its top-level directory.

        Raises:
            PathEscape: a member name is absolute or climbs out with '..'
            ArchiveLayoutError: zero or several top-level entries, or one that is
                not a directory
            IoFailure: the file cannot be read as a tar archive
        """
        tops = set()
        not_directories = set()
        for member in read_members(path):
            if member.name.startswith('/') or '..' in member.name.split('/'):
                raise PathEscape(f"Member name leaves the archive: {member.name}")
            name = normalize_path(member.name)
            if not name:
                continue
            top, _, below = name.partition('/')
            tops.add(top)
            if not below and not member.isdir():
                not_directories.add(top)
        if len(tops) != 1:
            raise ArchiveLayoutError(
                f"{path}: expected one top-level directory, found {len(tops)}: {sorted(tops)[:5]}"
            )
        top = tops.pop()
        if top in not_directories:
            raise ArchiveLayoutError(f"{path}: top-level entry {top} is not a directory")
        return cls(path=Path(path), top_level_name=top)

    def members(self):
        """Entry manifest: equal for two packs of the same tree"""
        return [
            ArchiveMember(
                name=member.name,
                type=member.type.decode() if isinstance(member.type, bytes) else str(member.type),
                mode=member.mode,
                size=member.size,
                mtime=int(member.mtime),
                linkname=member.linkname,
            )
            for member in read_members(self.path)
        ]


def read_members(path):
    try:
        with tarfile.open(path, mode='r:*') as tar:
            return tar.getmembers()
    except (OSError, tarfile.TarError) as e:
        raise IoFailure(f"Cannot read archive {path}: {e}") from e
