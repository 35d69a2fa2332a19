"""
Layer reading and squashing.

Whiteouts follow the OCI layer rules: ``.wh.NAME`` deletes NAME from lower
layers, ``.wh..wh..opq`` hides every lower-layer child of its directory, and
neither marker affects entries of its own layer.
"""
import json
import logging
import posixpath
import tarfile
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .exceptions import EmptyImage, HardlinkTargetMissing, PathEscape, UnsupportedLayer
from .manifest import TarBlobStore, open_blob_store, parse_image
from .models import (
    OPAQUE_MARKER, PRIVILEGE_BITS, MODE_MASK, WHITEOUT_PREFIX,
    EntryKind, FlattenedRootfs, LayerEntry, normalize_path,
)

logger = logging.getLogger(__name__)

IMPLICIT_DIR_MODE = 0o755
MAX_SYMLINK_HOPS = 40

ZSTD_MAGIC = b'\x28\xb5\x2f\xfd'

METADATA_DIR = '.udss'
STANDARD_DIRS = ('dev', 'home', 'mnt', 'proc', 'sys', 'tmp')


def classify(entry):
    """Whiteout detection goes by basename, whatever kind the entry claims"""
    name = posixpath.basename(entry.path.rstrip('/'))
    if name == OPAQUE_MARKER:
        return EntryKind.OPAQUE
    if name.startswith(WHITEOUT_PREFIX):
        return EntryKind.WHITEOUT
    return entry.kind


def resolve_in_tree(tree, path):
    """
    Resolve symlinks among the components of path inside the tree, the way a
    chrooted lookup would: absolute targets restart at the image root and '..'
    stops at the root.
    """
    pending = [part for part in path.split('/') if part]
    resolved = []
    hops = 0
    while pending:
        part = pending.pop(0)
        if part == '.':
            continue
        if part == '..':
            if resolved:
                resolved.pop()
            continue
        candidate = '/'.join(resolved + [part])
        entry = tree.get(candidate)
        if entry is not None and entry.kind is EntryKind.SYMLINK:
            hops += 1
            if hops > MAX_SYMLINK_HOPS:
                raise PathEscape(f"Too many levels of symbolic links: {path}")
            target = entry.payload
            if target.startswith('/'):
                resolved = []
            pending = [p for p in target.split('/') if p] + pending
            continue
        resolved.append(part)
    return '/'.join(resolved)


class IndexedTree:
    """
    The tree a layer is applied to, with the children of every directory and
    the hardlinks to every file indexed, so removing a path costs the size of
    its subtree instead of the size of the tree.
    """

    def __init__(self, tree):
        self.entries = dict(tree)
        self.children = defaultdict(set)
        self.links = defaultdict(set)
        for path, entry in self.entries.items():
            self._index(path, entry)

    def _index(self, path, entry):
        self.children[posixpath.dirname(path)].add(path)
        if entry.kind is EntryKind.HARDLINK:
            self.links[entry.payload].add(path)

    def _unindex(self, path, entry):
        self.children[posixpath.dirname(path)].discard(path)
        if entry.kind is EntryKind.HARDLINK:
            linked = self.links[entry.payload]
            linked.discard(path)
            if not linked:
                del self.links[entry.payload]

    def __contains__(self, path):
        return path in self.entries

    def __getitem__(self, path):
        return self.entries[path]

    def get(self, path):
        return self.entries.get(path)

    def put(self, path, entry):
        previous = self.entries.get(path)
        if previous is not None:
            self._unindex(path, previous)
        self.entries[path] = entry
        self._index(path, entry)

    def pop(self, path):
        entry = self.entries.pop(path, None)
        if entry is not None:
            self._unindex(path, entry)
        return entry

    def subtree(self, path):
        """path itself, if present, and every entry below it ('' is the root)"""
        found = []
        pending = [path]
        while pending:
            current = pending.pop()
            if current in self.entries:
                found.append(current)
            pending.extend(self.children.get(current, ()))
        return found

    def links_to(self, path):
        if not self.links:
            return []
        return sorted(self.links.get(path, ()))


def _rehome_hardlinks(tree, path, doomed=()):
    """
    path is about to disappear: the first surviving hardlink to it takes over
    the file content and the remaining links point at that new holder.
    """
    links = [p for p in tree.links_to(path) if p not in doomed]
    if not links:
        return
    holder, *others = links
    tree.put(holder, tree[path].moved_to(holder))
    for link in others:
        tree.put(link, replace(tree[link], payload=holder))


def _drop(tree, paths, orphaned=None):
    """
    Remove paths. Hardlinks outside paths that pointed into them are rehomed
    and, for whiteouts, recorded in orphaned.
    """
    doomed = set(paths)
    if tree.links:
        for path in sorted(doomed):
            if tree[path].kind is not EntryKind.FILE:
                continue
            survivors = [p for p in tree.links_to(path) if p not in doomed]
            if survivors:
                _rehome_hardlinks(tree, path, doomed)
                if orphaned is not None:
                    orphaned.update(survivors)
    for path in doomed:
        tree.pop(path)


def _hide(tree, paths, added, orphaned):
    """
    Drop lower-layer paths for a whiteout or opaque marker. A dropped
    directory that still holds entries of the current layer comes back as an
    implicit directory.
    """
    _drop(tree, paths, orphaned)
    for path in sorted(paths, reverse=True):
        if path not in tree and tree.children.get(path):
            tree.put(path, LayerEntry(path, EntryKind.DIR, mode=IMPLICIT_DIR_MODE))
            added.add(path)


def _ensure_dir(tree, directory, added):
    """Create missing parents; a non-directory in the way is replaced"""
    if not directory:
        return
    parts = directory.split('/')
    for depth in range(1, len(parts) + 1):
        prefix = '/'.join(parts[:depth])
        existing = tree.get(prefix)
        if existing is not None and existing.kind is EntryKind.DIR:
            continue
        if existing is not None:
            logger.warning(f"Replacing {existing.kind.value} {prefix} with a directory")
            _drop(tree, [prefix])
        tree.put(prefix, LayerEntry(prefix, EntryKind.DIR, mode=IMPLICIT_DIR_MODE))
        added.add(prefix)


def apply_layer(tree, layer):
    """
    Apply one layer on top of the tree built from all lower layers.

    Args:
        tree: mapping path -> LayerEntry (empty for the base layer); not modified
        layer: LayerEntry sequence in archive order

    Returns:
        new dict path -> LayerEntry
    """
    result = IndexedTree(tree)
    added = set()
    # links whose target a whiteout removed; fine only if also removed or replaced
    orphaned = set()

    for entry in layer:
        path = normalize_path(entry.path)
        if not path:
            # the root directory itself ("./")
            continue
        kind = classify(entry)
        parent, name = posixpath.split(path)
        parent = resolve_in_tree(result, parent)

        if kind is EntryKind.OPAQUE:
            _ensure_dir(result, parent, added)
            hidden = [p for p in result.subtree(parent) if p != parent and p not in added]
            logger.debug(f"opaque directory {parent or '/'}: hiding {len(hidden)} entries")
            _hide(result, hidden, added, orphaned)
            continue

        if kind is EntryKind.WHITEOUT:
            target = posixpath.join(parent, name[len(WHITEOUT_PREFIX):])
            removed = [p for p in result.subtree(target) if p not in added]
            logger.debug(f"whiteout {target}: removing {len(removed)} entries")
            _hide(result, removed, added, orphaned)
            continue

        path = posixpath.join(parent, name)
        _ensure_dir(result, parent, added)

        mode = entry.mode & MODE_MASK
        if mode & PRIVILEGE_BITS:
            logger.warning(f"Stripping setuid/setgid bits from {path}")
            mode &= ~PRIVILEGE_BITS
        payload = entry.payload

        if kind is EntryKind.HARDLINK:
            target = resolve_in_tree(result, normalize_path(payload))
            linked = result.get(target)
            if linked is not None and linked.kind is EntryKind.HARDLINK:
                target = linked.payload
                linked = result.get(target)
            if linked is None or linked.kind is not EntryKind.FILE:
                raise HardlinkTargetMissing(f"Hardlink {path} -> {payload}: target does not exist")
            if target == path:
                continue
            payload = target
            mode = linked.mode

        existing = result.get(path)
        if existing is not None:
            if existing.kind is EntryKind.DIR and kind is not EntryKind.DIR:
                # directory replaced by a non-directory: subtree goes first
                _drop(result, result.subtree(path))
            elif existing.kind is EntryKind.FILE:
                _rehome_hardlinks(result, path)

        result.put(path, LayerEntry(path, kind, mode=mode, payload=payload, mtime=int(entry.mtime)))
        added.add(path)

    broken = sorted(p for p in orphaned if p in result and p not in added)
    if broken:
        raise HardlinkTargetMissing(f"Whiteout removed the target of hardlink {broken[0]}")
    return result.entries


def read_layer(fileobj, label='layer'):
    """
    Read a (possibly compressed) layer tar into LayerEntry values.

    Device nodes and FIFOs are skipped: an unprivileged user cannot create them.
    """
    head = fileobj.read(4)
    if head == ZSTD_MAGIC:
        raise UnsupportedLayer(f"{label}: zstd-compressed layers are not supported")
    fileobj.seek(0)

    entries = []
    try:
        with tarfile.open(fileobj=fileobj, mode='r|*') as tar:
            for member in tar:
                name = member.name
                basename = posixpath.basename(name.rstrip('/'))
                mode = member.mode & MODE_MASK
                mtime = int(member.mtime)
                if basename == OPAQUE_MARKER:
                    kind, payload = EntryKind.OPAQUE, None
                elif basename.startswith(WHITEOUT_PREFIX):
                    kind, payload = EntryKind.WHITEOUT, None
                elif member.isdir():
                    kind, payload = EntryKind.DIR, None
                elif member.issym():
                    kind, payload = EntryKind.SYMLINK, member.linkname
                elif member.islnk():
                    kind, payload = EntryKind.HARDLINK, member.linkname
                elif member.isreg():
                    kind, payload = EntryKind.FILE, tar.extractfile(member).read()
                elif member.ischr() or member.isblk() or member.isfifo():
                    logger.warning(f"{label}: skipping device node or FIFO {name}")
                    continue
                else:
                    logger.warning(f"{label}: skipping unsupported member type {member.type!r}: {name}")
                    continue
                entries.append(LayerEntry(name, kind, mode=mode, payload=payload, mtime=mtime))
    except tarfile.TarError as e:
        raise UnsupportedLayer(f"{label}: cannot read layer tar: {e}") from e
    return entries


def load_layer(blob_store, ref):
    with blob_store.open(ref.location) as fileobj:
        return read_layer(fileobj, label=ref.short_digest)


def flatten(manifest, blob_store, max_workers=None):
    """
    Squash the manifest's layers, base first, into a FlattenedRootfs.

    Blobs are decompressed concurrently; application is strictly in order.
    """
    if not manifest.layers:
        raise EmptyImage(f"Image {manifest.image_name} has no layers")

    total = len(manifest.layers)
    tree = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        pending = [pool.submit(load_layer, blob_store, ref) for ref in manifest.layers]
        for index, (ref, future) in enumerate(zip(manifest.layers, pending), start=1):
            entries = future.result()
            logger.info(f"layer {index}/{total}: {ref.short_digest}: applying {len(entries)} entries")
            tree = apply_layer(tree, entries)

    rootfs = FlattenedRootfs.from_tree(tree)
    logger.info(f"flattened {manifest.image_name}: {len(rootfs)} entries, {rootfs.total_size_bytes} bytes")
    return rootfs


def embed_metadata(rootfs, manifest):
    """
    Record image metadata inside the rootfs and make sure the standard mount
    points exist, so the runtime can bind into a read-only image.
    """
    extra = []
    for directory in STANDARD_DIRS + (METADATA_DIR,):
        if directory not in rootfs:
            extra.append(LayerEntry(directory, EntryKind.DIR, mode=IMPLICIT_DIR_MODE))
    metadata = {
        'image_name': manifest.image_name,
        'env': manifest.environment,
        'workdir': manifest.config_workdir or '/',
        'source_format': manifest.source_format,
        'layers': [ref.digest for ref in manifest.layers],
    }
    environment = ''.join(f"{key}={value}\n" for key, value in manifest.environment.items())
    extra.append(LayerEntry(
        f'{METADATA_DIR}/metadata.json', EntryKind.FILE, mode=0o644,
        payload=(json.dumps(metadata, indent=2, sort_keys=True) + '\n').encode(),
    ))
    extra.append(LayerEntry(
        f'{METADATA_DIR}/environment', EntryKind.FILE, mode=0o644, payload=environment.encode(),
    ))
    return rootfs.with_entries(extra)


def is_image_input(path):
    """True for a tar file or a directory holding an OCI layout or docker-save"""
    path = Path(path)
    if path.is_file():
        return True
    return (path / 'oci-layout').is_file() or (path / 'manifest.json').is_file()


def flatten_input(input_path, max_workers=None):
    """
    parse_image, flatten and embed_metadata for one image directory or tar.

    Returns:
        (ImageManifest, FlattenedRootfs)
    """
    blob_store = open_blob_store(input_path)
    try:
        manifest = parse_image(input_path, blob_store=blob_store)
        rootfs = flatten(manifest, blob_store, max_workers=max_workers)
    finally:
        if isinstance(blob_store, TarBlobStore):
            blob_store.close()
    return manifest, embed_metadata(rootfs, manifest)
