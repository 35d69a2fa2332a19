"""
Fixture generators shared by the test suites: layer tars, OCI layouts,
docker-save archives, hypothesis strategies for layer stacks and a naive
scratch-directory extractor used as the flattening oracle.
"""
import bz2
import gzip
import hashlib
import io
import json
import lzma
import os
import shutil
import stat
import tarfile
from pathlib import Path

from hypothesis import strategies as st

from .models import OPAQUE_MARKER, WHITEOUT_PREFIX, EntryKind, LayerEntry

FIXTURE_MTIME = 1_600_000_000


def file_entry(path, content=b'', mode=0o644):
    if isinstance(content, str):
        content = content.encode()
    return LayerEntry(path, EntryKind.FILE, mode=mode, payload=content, mtime=FIXTURE_MTIME)


def dir_entry(path, mode=0o755):
    return LayerEntry(path, EntryKind.DIR, mode=mode, mtime=FIXTURE_MTIME)


def symlink_entry(path, target):
    return LayerEntry(path, EntryKind.SYMLINK, mode=0o777, payload=target, mtime=FIXTURE_MTIME)


def hardlink_entry(path, target):
    return LayerEntry(path, EntryKind.HARDLINK, mode=0o644, payload=target, mtime=FIXTURE_MTIME)


def whiteout_entry(path):
    """whiteout_entry('a/f') hides a/f in lower layers"""
    head, _, name = path.rpartition('/')
    marker = f'{WHITEOUT_PREFIX}{name}'
    return LayerEntry(f'{head}/{marker}' if head else marker, EntryKind.WHITEOUT, mtime=FIXTURE_MTIME)


def opaque_entry(directory):
    return LayerEntry(f'{directory}/{OPAQUE_MARKER}', EntryKind.OPAQUE, mtime=FIXTURE_MTIME)


def layer_tar(entries, compression=''):
    """
    Serialize LayerEntry values into a layer tar.

    Args:
        entries: LayerEntry sequence, written in order
        compression: '', 'gz', 'bz2' or 'xz'
    """
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode=f'w:{compression}', format=tarfile.PAX_FORMAT) as tar:
        for entry in entries:
            info = tarfile.TarInfo(entry.path)
            info.mode = entry.mode
            info.mtime = entry.mtime
            data = None
            if entry.kind is EntryKind.DIR:
                info.type = tarfile.DIRTYPE
            elif entry.kind is EntryKind.SYMLINK:
                info.type = tarfile.SYMTYPE
                info.linkname = entry.payload
            elif entry.kind is EntryKind.HARDLINK:
                info.type = tarfile.LNKTYPE
                info.linkname = entry.payload
            elif entry.kind is EntryKind.FILE:
                data = entry.payload
                info.size = len(data)
            else:
                # whiteouts and opaque markers are empty regular files
                info.size = 0
            tar.addfile(info, io.BytesIO(data) if data else None)
    return buffer.getvalue()


def special_member_tar(name, member_type):
    """A layer holding one device node or FIFO"""
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode='w') as tar:
        info = tarfile.TarInfo(name)
        info.type = member_type
        tar.addfile(info)
    return buffer.getvalue()


def sha256_hex(data):
    return hashlib.sha256(data).hexdigest()


DECOMPRESS = {
    '': bytes,
    'gz': gzip.decompress,
    'bz2': bz2.decompress,
    'xz': lzma.decompress,
}

LAYER_MEDIA_SUFFIX = {'': '', 'gz': '+gzip', 'bz2': '+bzip2', 'xz': '+xz'}


def image_config(diff_ids, env=(), workdir=None):
    runtime = {'Env': list(env)}
    if workdir:
        runtime['WorkingDir'] = workdir
    return {
        'architecture': 'amd64',
        'os': 'linux',
        'config': runtime,
        'rootfs': {'type': 'layers', 'diff_ids': [f'sha256:{d}' for d in diff_ids]},
    }


def _json_bytes(document):
    return json.dumps(document, sort_keys=True).encode()


def build_oci_layout(root, layers, image_name='fixture:latest', env=(), workdir=None,
                     compression='gz', annotation='org.opencontainers.image.ref.name'):
    """
    Write an OCI image layout directory.

    Args:
        root: directory to create
        layers: list of LayerEntry lists, base first
        annotation: index annotation key carrying image_name (None for none)

    Returns:
        Path of the layout
    """
    root = Path(root)
    blobs = root / 'blobs' / 'sha256'
    blobs.mkdir(parents=True, exist_ok=True)

    def put(data):
        digest = sha256_hex(data)
        (blobs / digest).write_bytes(data)
        return digest, len(data)

    layer_descriptors = []
    diff_ids = []
    media_type = 'application/vnd.oci.image.layer.v1.tar' + LAYER_MEDIA_SUFFIX[compression]
    for entries in layers:
        blob = layer_tar(entries, compression=compression)
        diff_ids.append(sha256_hex(DECOMPRESS[compression](blob)))
        digest, size = put(blob)
        layer_descriptors.append({'mediaType': media_type, 'digest': f'sha256:{digest}', 'size': size})

    config_digest, config_size = put(_json_bytes(image_config(diff_ids, env, workdir)))
    manifest = {
        'schemaVersion': 2,
        'mediaType': 'application/vnd.oci.image.manifest.v1+json',
        'config': {
            'mediaType': 'application/vnd.oci.image.config.v1+json',
            'digest': f'sha256:{config_digest}',
            'size': config_size,
        },
        'layers': layer_descriptors,
    }
    manifest_digest, manifest_size = put(_json_bytes(manifest))
    descriptor = {
        'mediaType': 'application/vnd.oci.image.manifest.v1+json',
        'digest': f'sha256:{manifest_digest}',
        'size': manifest_size,
    }
    if annotation:
        descriptor['annotations'] = {annotation: image_name}
    (root / 'index.json').write_bytes(_json_bytes({'schemaVersion': 2, 'manifests': [descriptor]}))
    (root / 'oci-layout').write_bytes(_json_bytes({'imageLayoutVersion': '1.0.0'}))
    return root


def build_docker_save(path, layers, repo_tag='fixture:latest', env=(), workdir=None):
    """
    Write a docker-save tar (legacy layout: <id>/layer.tar, <config>.json,
    manifest.json).

    Returns:
        Path of the tar file
    """
    path = Path(path)
    members = {}
    locations = []
    diff_ids = []
    for entries in layers:
        blob = layer_tar(entries)
        digest = sha256_hex(blob)
        location = f'{digest}/layer.tar'
        members[location] = blob
        locations.append(location)
        diff_ids.append(digest)
    config = _json_bytes(image_config(diff_ids, env, workdir))
    config_name = f'{sha256_hex(config)}.json'
    members[config_name] = config
    manifest = [{'Config': config_name, 'RepoTags': [repo_tag] if repo_tag else None, 'Layers': locations}]
    members['manifest.json'] = _json_bytes(manifest)

    with tarfile.open(path, mode='w') as tar:
        for name, data in members.items():
            info = tarfile.TarInfo(name)
            info.size = len(data)
            info.mtime = FIXTURE_MTIME
            tar.addfile(info, io.BytesIO(data))
    return path


def tar_directory(source, path):
    """Pack a directory (e.g. an OCI layout) into a tar with relative names"""
    with tarfile.open(path, mode='w') as tar:
        for child in sorted(Path(source).iterdir()):
            tar.add(child, arcname=child.name)
    return Path(path)


# Snapshots: path -> (kind, mode, payload); symlink modes are not comparable
# on disk and are left out.

def tree_snapshot(rootfs):
    snapshot = {}
    for entry in rootfs:
        if entry.kind is EntryKind.SYMLINK:
            snapshot[entry.path] = ('symlink', None, entry.payload)
        elif entry.kind is EntryKind.DIR:
            snapshot[entry.path] = ('dir', entry.mode, None)
        elif entry.kind is EntryKind.HARDLINK:
            target = rootfs[entry.payload]
            snapshot[entry.path] = ('file', target.mode, target.payload)
        else:
            snapshot[entry.path] = ('file', entry.mode, entry.payload)
    return snapshot


def directory_snapshot(root):
    root = Path(root)
    snapshot = {}
    for dirpath, dirnames, filenames in os.walk(root):
        for name in dirnames + filenames:
            full = Path(dirpath) / name
            relative = full.relative_to(root).as_posix()
            st_result = full.lstat()
            mode = stat.S_IMODE(st_result.st_mode)
            if stat.S_ISLNK(st_result.st_mode):
                snapshot[relative] = ('symlink', None, os.readlink(full))
            elif stat.S_ISDIR(st_result.st_mode):
                snapshot[relative] = ('dir', mode, None)
            else:
                snapshot[relative] = ('file', mode, full.read_bytes())
    return snapshot


# Oracle: naive sequential extraction into a scratch directory.

def _remove(path):
    if path.is_symlink() or path.is_file():
        path.unlink()
    elif path.is_dir():
        shutil.rmtree(path)


def _make_dirs(root, relative):
    current = root
    for part in Path(relative).parts:
        current = current / part
        if current.is_symlink() or (current.exists() and not current.is_dir()):
            _remove(current)
        if not current.exists():
            current.mkdir()
            current.chmod(0o755)


def scratch_extract(layers, root):
    """
    Extract layers one after another into root, deleting whited-out paths.
    Only meant for the generated stacks, whose layers list whiteouts first.
    """
    root = Path(root)
    for entries in layers:
        for entry in entries:
            head, _, name = entry.path.rpartition('/')
            if entry.kind is EntryKind.OPAQUE:
                _make_dirs(root, head)
                for child in list((root / head).iterdir()):
                    _remove(child)
                continue
            if entry.kind is EntryKind.WHITEOUT:
                target = root / head / name[len(WHITEOUT_PREFIX):]
                if os.path.lexists(target):
                    _remove(target)
                continue
            target = root / entry.path
            if os.path.lexists(target):
                replaced_dir = target.is_dir() and not target.is_symlink()
                if entry.kind is not EntryKind.DIR or not replaced_dir:
                    _remove(target)
            if entry.kind is EntryKind.DIR:
                target.mkdir(exist_ok=True)
                target.chmod(entry.mode)
            elif entry.kind is EntryKind.SYMLINK:
                os.symlink(entry.payload, target)
            else:
                target.write_bytes(entry.payload)
                target.chmod(entry.mode)


# Hypothesis strategies for layer stacks. Names come from a small namespace so
# that overwrites, kind changes and whiteouts collide often. Symlinks live in
# their own names and never act as parent directories.

TREE_PATHS = ['a', 'a/b', 'a/b/f', 'a/g', 'c', 'c/h', 'top']
OPAQUE_DIRS = ['a', 'a/b', 'c']
SYMLINK_PATHS = ['ln', 'a/s', 'c/s']
SYMLINK_TARGETS = ['top', '../top', 'a/g', 'missing', 'b/f']
FILE_MODES = [0o644, 0o600, 0o755, 0o640]
DIR_MODES = [0o755, 0o700, 0o750]

contents = st.binary(max_size=64)


def _ancestors(path):
    parts = path.split('/')
    return ['/'.join(parts[:depth]) for depth in range(1, len(parts))]


@st.composite
def layers(draw):
    """One layer: whiteouts, then opaque markers, then regular entries parents first"""
    kinds = draw(st.dictionaries(st.sampled_from(TREE_PATHS), st.sampled_from(['file', 'dir']), max_size=len(TREE_PATHS)))
    links = draw(st.dictionaries(st.sampled_from(SYMLINK_PATHS), st.sampled_from(SYMLINK_TARGETS), max_size=3))
    whiteouts = draw(st.lists(st.sampled_from(TREE_PATHS + SYMLINK_PATHS), unique=True, max_size=3))
    opaques = draw(st.lists(st.sampled_from(OPAQUE_DIRS), unique=True, max_size=2))

    regular = {}
    for path, kind in list(kinds.items()) + [(path, 'symlink') for path in links]:
        ancestors = _ancestors(path)
        if any(kinds.get(parent) == 'file' for parent in ancestors):
            continue
        for parent in ancestors:
            if parent not in regular:
                regular[parent] = dir_entry(parent, draw(st.sampled_from(DIR_MODES)))
        if kind == 'file':
            regular[path] = file_entry(path, draw(contents), draw(st.sampled_from(FILE_MODES)))
        elif kind == 'dir':
            regular[path] = dir_entry(path, draw(st.sampled_from(DIR_MODES)))
        else:
            regular[path] = symlink_entry(path, links[path])

    entries = [whiteout_entry(path) for path in sorted(whiteouts)]
    entries += [opaque_entry(path) for path in sorted(opaques)]
    entries += [regular[path] for path in sorted(regular)]
    return entries


layer_stacks = st.lists(layers(), min_size=1, max_size=5)
