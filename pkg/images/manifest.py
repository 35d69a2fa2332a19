"""
Image input parsing: OCI image layouts and docker-save archives, either as a
directory or as a tar file, into an ImageManifest.
"""
import bz2
import gzip
import hashlib
import io
import json
import logging
import lzma
import os
import platform
import tarfile
import threading
from contextlib import contextmanager
from pathlib import Path

from .exceptions import DigestMismatch, ImageError, MissingBlob, PathEscape, UnknownFormat
from .models import ImageManifest, LayerRef, normalize_path
from .serializers import (
    OCI_INDEX_MEDIA_TYPES, REF_NAME_ANNOTATIONS,
    DockerSaveEntrySerializer, ImageConfigSerializer, OCIIndexSerializer,
    OCILayoutSerializer, OCIManifestSerializer,
)

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 20

DOCKER_LAYER_MEDIA_TYPE = 'application/vnd.docker.image.rootfs.diff.tar'

ARCHITECTURES = {
    'x86_64': 'amd64',
    'amd64': 'amd64',
    'aarch64': 'arm64',
    'arm64': 'arm64',
    'ppc64le': 'ppc64le',
    's390x': 's390x',
}

DECOMPRESSORS = [
    (b'\x1f\x8b', lambda fileobj: gzip.GzipFile(fileobj=fileobj)),
    (b'BZh', bz2.BZ2File),
    (b'\xfd7zXZ\x00', lzma.LZMAFile),
]


class DirectoryBlobStore:
    """Blobs as files below a directory (an unpacked layout or docker-save)"""

    def __init__(self, root):
        self.root = Path(root)

    def __repr__(self):
        return f'DirectoryBlobStore({str(self.root)!r})'

    def _path(self, location):
        return self.root / normalize_path(location)

    def exists(self, location):
        try:
            return self._path(location).is_file()
        except PathEscape:
            return False

    @contextmanager
    def open(self, location):
        path = self._path(location)
        try:
            fileobj = open(path, 'rb')
        except FileNotFoundError as e:
            raise MissingBlob(f"Blob not found: {location}") from e
        with fileobj:
            yield fileobj


class TarBlobStore:
    """
    Blobs as members of a tar file. Reads are serialized through one lock so
    layer loading can run from several threads.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self._tar = tarfile.open(self.path, mode='r:*')
            self._members = {}
            for member in self._tar.getmembers():
                try:
                    name = normalize_path(member.name)
                except PathEscape:
                    continue
                self._members[name] = member
        except tarfile.TarError as e:
            raise UnknownFormat(f"{self.path}: not a readable tar archive: {e}") from e

    def __repr__(self):
        return f'TarBlobStore({str(self.path)!r})'

    def close(self):
        self._tar.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def names(self):
        return set(self._members)

    def exists(self, location):
        try:
            return normalize_path(location) in self._members
        except PathEscape:
            return False

    @contextmanager
    def open(self, location):
        member = self._members.get(normalize_path(location))
        if member is None:
            raise MissingBlob(f"Blob not found in {self.path.name}: {location}")
        with self._lock:
            extracted = self._tar.extractfile(member)
            if extracted is None:
                raise MissingBlob(f"Not a regular file in {self.path.name}: {location}")
            data = extracted.read()
        yield io.BytesIO(data)


def open_blob_store(input_path):
    """Return a blob store for an image directory or tar file"""
    input_path = Path(input_path)
    if input_path.is_dir():
        return DirectoryBlobStore(input_path)
    if input_path.is_file() and tarfile.is_tarfile(input_path):
        return TarBlobStore(input_path)
    raise UnknownFormat(f"{input_path}: neither an image directory nor a tar archive")


def sha256_of(fileobj, decompress=False):
    """Hex sha256 of a stream, optionally of its decompressed content"""
    if decompress:
        head = fileobj.read(6)
        fileobj.seek(0)
        for magic, opener in DECOMPRESSORS:
            if head.startswith(magic):
                fileobj = opener(fileobj)
                break
    digest = hashlib.sha256()
    for chunk in iter(lambda: fileobj.read(CHUNK_SIZE), b''):
        digest.update(chunk)
    return digest.hexdigest()


def verify_blob(blob_store, location, digest, decompress=False):
    """
    Raises:
        MissingBlob: no blob at location
        DigestMismatch: content hash differs from digest
    """
    with blob_store.open(location) as fileobj:
        try:
            actual = 'sha256:' + sha256_of(fileobj, decompress=decompress)
        except (OSError, EOFError, lzma.LZMAError) as e:
            raise DigestMismatch(f"{location}: cannot read blob: {e}") from e
    if actual != digest:
        raise DigestMismatch(f"{location}: expected {digest}, content hashes to {actual}")
    logger.debug(f"verified {location} ({digest})")


def load_json(blob_store, location, digest=None):
    if digest is not None:
        verify_blob(blob_store, location, digest)
    with blob_store.open(location) as fileobj:
        try:
            return json.load(fileobj)
        except (ValueError, UnicodeDecodeError) as e:
            raise UnknownFormat(f"{location}: invalid JSON: {e}") from e


def validated(serializer_class, data, label):
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise UnknownFormat(f"{label}: {serializer.errors}")
    return serializer.validated_data


def blob_location(digest):
    algorithm, _, encoded = digest.partition(':')
    return f'blobs/{algorithm}/{encoded}'


def default_image_name(input_path):
    name = Path(input_path).name
    for suffix in ('.tar.gz', '.tgz', '.tar'):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return name


def detect_format(blob_store):
    """'docker-save' or 'oci'; docker-save wins when both index files exist"""
    if blob_store.exists('manifest.json'):
        return 'docker-save'
    if blob_store.exists('index.json') and blob_store.exists('oci-layout'):
        return 'oci'
    raise UnknownFormat(f"{blob_store!r}: no manifest.json and no OCI index.json/oci-layout")


def _pick_manifest(descriptors):
    """Prefer the descriptor matching the host architecture, else the first"""
    if len(descriptors) == 1:
        return descriptors[0]
    host = ARCHITECTURES.get(platform.machine(), platform.machine())
    for descriptor in descriptors:
        wanted = descriptor.get('platform') or {}
        if wanted.get('architecture') == host and wanted.get('os', 'linux') == 'linux':
            return descriptor
    logger.warning(f"{len(descriptors)} manifests in index, none for {host}; using the first")
    return descriptors[0]


def _ref_name(annotations):
    for key in REF_NAME_ANNOTATIONS:
        if annotations.get(key):
            return annotations[key]
    return None


def parse_oci(blob_store, input_path):
    validated(OCILayoutSerializer, load_json(blob_store, 'oci-layout'), 'oci-layout')
    index = validated(OCIIndexSerializer, load_json(blob_store, 'index.json'), 'index.json')

    image_name = None
    descriptor = _pick_manifest(index['manifests'])
    # nested indexes (multi-platform images) end at an image manifest
    for _ in range(8):
        image_name = image_name or _ref_name(descriptor['annotations'])
        if descriptor['mediaType'] not in OCI_INDEX_MEDIA_TYPES:
            break
        nested = load_json(blob_store, blob_location(descriptor['digest']), descriptor['digest'])
        nested = validated(OCIIndexSerializer, nested, descriptor['digest'])
        descriptor = _pick_manifest(nested['manifests'])
    else:
        raise UnknownFormat(f"{input_path}: image index nesting too deep")

    manifest_digest = descriptor['digest']
    manifest = validated(
        OCIManifestSerializer,
        load_json(blob_store, blob_location(manifest_digest), manifest_digest),
        manifest_digest,
    )
    config_digest = manifest['config']['digest']
    config = validated(
        ImageConfigSerializer,
        load_json(blob_store, blob_location(config_digest), config_digest),
        config_digest,
    )

    layers = []
    for layer in manifest['layers']:
        location = blob_location(layer['digest'])
        verify_blob(blob_store, location, layer['digest'])
        layers.append(LayerRef(digest=layer['digest'], location=location, media_type=layer['mediaType']))

    return ImageManifest(
        image_name=image_name or default_image_name(input_path),
        layers=tuple(layers),
        config_env=config['env'],
        config_workdir=config['workdir'],
        source_format='oci',
    )


def _config_digest(location):
    """docker-save names config blobs after their sha256 ('<hex>.json' or 'blobs/sha256/<hex>')"""
    stem = os.path.basename(location)
    if stem.endswith('.json'):
        stem = stem[:-len('.json')]
    if len(stem) == 64 and all(c in '0123456789abcdef' for c in stem):
        return f'sha256:{stem}'
    return None


def parse_docker_save(blob_store, input_path):
    entries = load_json(blob_store, 'manifest.json')
    if not isinstance(entries, list) or not entries:
        raise UnknownFormat(f"{input_path}: manifest.json lists no images")
    if len(entries) > 1:
        logger.warning(f"{input_path}: {len(entries)} images saved together; using the first")
    entry = validated(DockerSaveEntrySerializer, entries[0], 'manifest.json')

    config = validated(
        ImageConfigSerializer,
        load_json(blob_store, entry['Config'], _config_digest(entry['Config'])),
        entry['Config'],
    )
    diff_ids = config['diff_ids']
    if len(diff_ids) != len(entry['Layers']):
        raise UnknownFormat(
            f"{input_path}: {len(entry['Layers'])} layers but {len(diff_ids)} diff_ids in the image config"
        )

    layers = []
    for location, diff_id in zip(entry['Layers'], diff_ids):
        # diff_ids hash the uncompressed layer
        verify_blob(blob_store, location, diff_id, decompress=True)
        layers.append(LayerRef(digest=diff_id, location=location, media_type=DOCKER_LAYER_MEDIA_TYPE))

    tags = entry.get('RepoTags') or []
    return ImageManifest(
        image_name=tags[0] if tags else default_image_name(input_path),
        layers=tuple(layers),
        config_env=config['env'],
        config_workdir=config['workdir'],
        source_format='docker-save',
    )


PARSERS = {
    'oci': parse_oci,
    'docker-save': parse_docker_save,
}


def parse_image(input_path, blob_store=None):
    """
    Parse an OCI image layout or docker-save input, verifying every digest.

    Args:
        input_path: image directory or tar file
        blob_store: already opened store for input_path (opened here if None)

    Returns:
        ImageManifest with layers base-first

    Raises:
        UnknownFormat, DigestMismatch, MissingBlob
    """
    if blob_store is None:
        if not Path(input_path).exists():
            raise UnknownFormat(f"{input_path}: no such file or directory")
        store = open_blob_store(input_path)
        try:
            return parse_image(input_path, blob_store=store)
        finally:
            if isinstance(store, TarBlobStore):
                store.close()
    image_format = detect_format(blob_store)
    logger.info(f"parsing {input_path} as {image_format}")
    try:
        manifest = PARSERS[image_format](blob_store, input_path)
    except ImageError:
        raise
    except (KeyError, TypeError, AttributeError) as e:
        raise UnknownFormat(f"{input_path}: malformed {image_format} metadata: {e}") from e
    logger.info(f"{manifest.image_name}: {len(manifest.layers)} layers")
    return manifest
