"""
Fixtures for runtime tests: a rootfs that borrows the host's binaries.

The image holds only mount points and the host's top-level symlinks
(bin -> usr/bin on merged-/usr systems); the host's /usr and friends are
bound read-only at launch, so coreutils and a shell exist inside.
"""
import os
from pathlib import Path

from images.layers import STANDARD_DIRS
from images.models import EntryKind, LayerEntry

from .models import Bind

HOST_TOOLCHAIN = ('bin', 'sbin', 'lib', 'lib32', 'lib64', 'libx32', 'usr')


def toolchain_entries():
    """Layer entries mirroring the host's toolchain directories"""
    entries = []
    for name in HOST_TOOLCHAIN:
        host = Path('/') / name
        if host.is_symlink():
            entries.append(LayerEntry(name, EntryKind.SYMLINK, mode=0o777, payload=os.readlink(host)))
        elif host.is_dir():
            entries.append(LayerEntry(name, EntryKind.DIR, mode=0o755))
    return entries


def toolchain_binds():
    return tuple(
        Bind(source=Path('/') / name, target=f'/{name}', read_only=True)
        for name in HOST_TOOLCHAIN
        if (Path('/') / name).is_dir() and not (Path('/') / name).is_symlink()
    )


def toolchain_rootfs(root):
    """Lay out a runnable rootfs directory at root; pair it with toolchain_binds()"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for directory in STANDARD_DIRS + ('etc',):
        (root / directory).mkdir(exist_ok=True)
    for entry in toolchain_entries():
        if entry.kind is EntryKind.SYMLINK:
            (root / entry.path).symlink_to(entry.payload)
        else:
            (root / entry.path).mkdir()
    return root
