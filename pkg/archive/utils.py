"""
Utility functions for archive app: pack a FlattenedRootfs into a single
.tar.gz and unpack it safely to node-local storage.
"""
import io
import logging
import os
import shutil
import stat
import tarfile
import tempfile
from pathlib import Path

from images.exceptions import PathEscape
from images.models import MODE_MASK, PRIVILEGE_BITS, EntryKind, FlattenedRootfs, LayerEntry, normalize_path

from .exceptions import DestCollision, EmptyRootfs, IoFailure
from .models import RootfsArchive

logger = logging.getLogger(__name__)

TOP_LEVEL_MODE = 0o755


def top_level_name_for(image_name):
    """Image names may contain '/'; the archive's directory may not"""
    name = image_name.replace('/', '%').strip()
    if name in ('', '.', '..'):
        raise PathEscape(f"Unusable image name for the archive directory: {image_name!r}")
    return name


def _tarinfo(top, entry):
    info = tarfile.TarInfo(f'{top}/{entry.path}')
    info.mode = entry.mode & ~PRIVILEGE_BITS
    info.mtime = entry.mtime
    info.uid = info.gid = 0
    info.uname = info.gname = ''
    if entry.kind is EntryKind.DIR:
        info.type = tarfile.DIRTYPE
    elif entry.kind is EntryKind.SYMLINK:
        info.type = tarfile.SYMTYPE
        info.linkname = entry.payload
    elif entry.kind is EntryKind.HARDLINK:
        info.type = tarfile.LNKTYPE
        info.linkname = f'{top}/{entry.payload}'
    else:
        info.type = tarfile.REGTYPE
        info.size = entry.size
    return info


def ordered_entries(rootfs):
    """Path order with hardlinks last, so every link target precedes its links"""
    entries = sorted(rootfs, key=lambda entry: entry.path)
    return (
        [entry for entry in entries if entry.kind is not EntryKind.HARDLINK]
        + [entry for entry in entries if entry.kind is EntryKind.HARDLINK]
    )


def write_members(tar, rootfs, top):
    top_info = tarfile.TarInfo(top)
    top_info.type = tarfile.DIRTYPE
    top_info.mode = TOP_LEVEL_MODE
    top_info.mtime = max((entry.mtime for entry in rootfs), default=0)
    top_info.uname = top_info.gname = ''
    tar.addfile(top_info)
    for entry in ordered_entries(rootfs):
        info = _tarinfo(top, entry)
        logger.debug(f"pack {info.name}")
        if entry.kind is EntryKind.FILE:
            tar.addfile(info, io.BytesIO(entry.payload))
        else:
            tar.addfile(info)


def pack(rootfs, image_name, out_path, gzip_level=6):
    """
    Write rootfs as a gzip-compressed pax tar under one top-level directory.

    Args:
        rootfs: FlattenedRootfs
        image_name: name of the top-level directory ('/' becomes '%')
        out_path: archive to create; replaced atomically
        gzip_level: 0-9

    Returns:
        RootfsArchive
    """
    if not len(rootfs):
        raise EmptyRootfs("Refusing to pack an empty rootfs")
    top = top_level_name_for(image_name)
    out_path = Path(out_path)

    try:
        fd, temp_name = tempfile.mkstemp(prefix=f'.{out_path.name}.', dir=out_path.parent)
    except OSError as e:
        raise IoFailure(f"Cannot write to {out_path.parent}: {e}") from e
    try:
        with os.fdopen(fd, 'wb') as raw:
            with tarfile.open(fileobj=raw, mode='w:gz', compresslevel=gzip_level,
                              format=tarfile.PAX_FORMAT) as tar:
                write_members(tar, rootfs, top)
        os.chmod(temp_name, 0o644)
        os.replace(temp_name, out_path)
    except OSError as e:
        Path(temp_name).unlink(missing_ok=True)
        raise IoFailure(f"Cannot write archive {out_path}: {e}") from e
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise

    logger.info(f"[SUCCESS] packed {len(rootfs)} entries into {out_path} ({top}/)")
    return RootfsArchive(path=out_path, top_level_name=top)


def _inside(path, root):
    return os.path.commonpath([path, root]) == root


def contained_member(member, dest_path):
    """
    tarfile extraction filter: keeps every entry and every hardlink target
    inside dest_path, refuses to write through symlinks that point outside,
    drops device nodes and FIFOs and never restores ownership or setuid/setgid.
    """
    dest = os.path.realpath(dest_path)
    if member.name.startswith('/') or '..' in member.name.split('/'):
        raise PathEscape(f"Member name leaves the archive: {member.name}")
    name = normalize_path(member.name)
    target = os.path.realpath(os.path.join(dest, name))
    if not _inside(target, dest):
        raise PathEscape(f"Member {member.name} would be written to {target}")

    if member.islnk():
        if member.linkname.startswith('/'):
            raise PathEscape(f"Hardlink {member.name} to absolute path {member.linkname}")
        linked = os.path.realpath(os.path.join(dest, normalize_path(member.linkname)))
        if not _inside(linked, dest):
            raise PathEscape(f"Hardlink {member.name} points outside the archive: {member.linkname}")

    if member.isdev():
        logger.warning(f"Skipping device node or FIFO {member.name}")
        return None

    return member.replace(
        mode=member.mode & MODE_MASK & ~PRIVILEGE_BITS,
        uid=None, gid=None, uname=None, gname=None,
        deep=False,
    )


def make_removable(path):
    """Give the owner rwx on every directory below path so rmtree can descend"""
    for dirpath, dirnames, _ in os.walk(path):
        for name in dirnames:
            child = os.path.join(dirpath, name)
            if not os.path.islink(child):
                os.chmod(child, stat.S_IMODE(os.lstat(child).st_mode) | stat.S_IRWXU)
    os.chmod(path, stat.S_IMODE(os.lstat(path).st_mode) | stat.S_IRWXU)


def remove_tree(path):
    path = Path(path)
    if path.is_symlink() or not path.is_dir():
        path.unlink()
        return
    make_removable(path)
    shutil.rmtree(path)


def unpack(archive, dest, overwrite=False):
    """
    Extract archive below dest as dest/<top_level_name>.

    Extraction goes to a staging directory inside dest first; the result is
    renamed into place only when complete.

    Args:
        archive: RootfsArchive or path of the .tar.gz
        dest: existing directory (tmpfs or disk)
        overwrite: replace an existing dest/<top_level_name>

    Returns:
        Path of the unpacked rootfs

    Raises:
        DestCollision, PathEscape, IoFailure
    """
    # re-read the member list even for an archive we packed ourselves
    archive = RootfsArchive.open(archive.path if isinstance(archive, RootfsArchive) else archive)
    dest = Path(dest)
    if not dest.is_dir():
        raise IoFailure(f"Destination is not a directory: {dest}")

    final = dest / archive.top_level_name
    if os.path.lexists(final) and not overwrite:
        raise DestCollision(
            f"{final} already exists; remove it or pass --overwrite to replace it"
        )

    try:
        staging = Path(tempfile.mkdtemp(prefix=f'.{archive.top_level_name}.', dir=dest))
    except OSError as e:
        raise IoFailure(f"Cannot write to {dest}: {e}") from e

    try:
        logger.info(f"extracting {archive.path} into {dest}")
        with tarfile.open(archive.path, mode='r:*') as tar:
            tar.extractall(staging, filter=contained_member)
        if os.path.lexists(final):
            logger.warning(f"Replacing existing {final}")
            os.rename(final, staging / '.replaced')
        os.rename(staging / archive.top_level_name, final)
    except (OSError, tarfile.TarError) as e:
        raise IoFailure(f"Cannot unpack {archive.path} into {dest}: {e}") from e
    finally:
        try:
            remove_tree(staging)
        except OSError as e:
            logger.error(f"[ERROR] Could not clean up {staging}: {e}")

    logger.info(f"[SUCCESS] unpacked {archive.top_level_name} to {final}")
    return final


def load_directory(path):
    """
    Read an unpacked rootfs directory back into a FlattenedRootfs. Files
    sharing an inode become hardlinks to the first of them found.
    """
    root = Path(path)
    if not root.is_dir():
        raise IoFailure(f"Not a directory: {root}")
    tree = {}
    inodes = {}
    try:
        for dirpath, dirnames, filenames in os.walk(root):
            dirnames.sort()
            for name in sorted(dirnames + filenames):
                full = Path(dirpath) / name
                relative = full.relative_to(root).as_posix()
                info = full.lstat()
                mode = stat.S_IMODE(info.st_mode) & ~PRIVILEGE_BITS
                mtime = int(info.st_mtime)
                if stat.S_ISDIR(info.st_mode):
                    entry = LayerEntry(relative, EntryKind.DIR, mode=mode, mtime=mtime)
                elif stat.S_ISLNK(info.st_mode):
                    entry = LayerEntry(relative, EntryKind.SYMLINK, mode=0o777,
                                       payload=os.readlink(full), mtime=mtime)
                elif stat.S_ISREG(info.st_mode):
                    key = (info.st_dev, info.st_ino)
                    if info.st_nlink > 1 and key in inodes:
                        entry = LayerEntry(relative, EntryKind.HARDLINK, mode=mode,
                                           payload=inodes[key], mtime=mtime)
                    else:
                        inodes[key] = relative
                        entry = LayerEntry(relative, EntryKind.FILE, mode=mode,
                                           payload=full.read_bytes(), mtime=mtime)
                else:
                    logger.warning(f"Skipping special file {full}")
                    continue
                tree[relative] = entry
    except OSError as e:
        raise IoFailure(f"Cannot read {root}: {e}") from e
    return FlattenedRootfs.from_tree(tree)
