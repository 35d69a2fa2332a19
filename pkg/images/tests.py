import io
import json
import shutil
import tarfile
import tempfile
import time
from pathlib import Path

from django.test import SimpleTestCase
from hypothesis import HealthCheck, given, settings

from .exceptions import (
    DigestMismatch, EmptyImage, HardlinkTargetMissing, ImageError, MissingBlob,
    PathEscape, UnknownFormat, UnsupportedLayer,
)
from .layers import apply_layer, embed_metadata, flatten, flatten_input, read_layer, resolve_in_tree
from .manifest import DirectoryBlobStore, TarBlobStore, parse_image
from .models import EntryKind, FlattenedRootfs, ImageManifest, LayerRef, normalize_path
from .testing import (
    build_docker_save, build_oci_layout, dir_entry, directory_snapshot, file_entry,
    hardlink_entry, layer_stacks, layer_tar, opaque_entry, scratch_extract,
    sha256_hex, special_member_tar, symlink_entry, tar_directory, tree_snapshot,
    whiteout_entry,
)


def tree_of(*entries):
    """A tree as apply_layer takes it: path -> LayerEntry"""
    return apply_layer({}, list(entries))


def payloads(tree):
    return {path: entry.payload for path, entry in tree.items() if entry.kind is EntryKind.FILE}


THREE_LAYERS = [
    [
        dir_entry('etc'), file_entry('etc/os-release', 'ID=base\n'),
        dir_entry('opt'), dir_entry('opt/app'), file_entry('opt/app/run.sh', '#!/bin/sh\n', 0o755),
        file_entry('opt/app/old.cfg', 'old'), dir_entry('var'), dir_entry('var/cache'),
        file_entry('var/cache/a', 'a'), file_entry('var/cache/b', 'b'),
    ],
    [
        whiteout_entry('opt/app/old.cfg'),
        opaque_entry('var/cache'),
        dir_entry('etc'), file_entry('etc/os-release', 'ID=tf\n'),
        dir_entry('var'), dir_entry('var/cache'), file_entry('var/cache/c', 'c'),
    ],
    [
        whiteout_entry('etc/os-release'),
        dir_entry('opt'), dir_entry('opt/app'), file_entry('opt/app/new.cfg', 'new', 0o600),
        symlink_entry('opt/current', 'app'),
    ],
]


class NormalizePathTests(SimpleTestCase):

    def test_strips_leading_slash_and_dot(self):
        self.assertEqual(normalize_path('/a/b'), 'a/b')
        self.assertEqual(normalize_path('./a/./b/'), 'a/b')
        self.assertEqual(normalize_path('./'), '')

    def test_dotdot_leaving_root_is_rejected(self):
        with self.assertRaises(PathEscape):
            normalize_path('../escape')
        with self.assertRaises(PathEscape):
            normalize_path('a/../../escape')

    def test_dotdot_inside_root_collapses(self):
        self.assertEqual(normalize_path('a/b/../c'), 'a/c')


class ParseImageTests(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(lambda: shutil.rmtree(self.tmp, ignore_errors=True))

    def test_single_layer_oci_layout(self):
        layout = build_oci_layout(self.tmp / 'hello', [[file_entry('hello.txt', 'hi\n')]],
                                  image_name='hello:1.0')
        manifest = parse_image(layout)
        self.assertEqual(manifest.image_name, 'hello:1.0')
        self.assertEqual(len(manifest.layers), 1)
        self.assertEqual(manifest.source_format, 'oci')

    def test_containerd_name_annotation(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x')]], image_name='docker.io/library/tf:2',
                                  annotation='io.containerd.image.name')
        self.assertEqual(parse_image(layout).image_name, 'docker.io/library/tf:2')

    def test_name_falls_back_to_directory(self):
        layout = build_oci_layout(self.tmp / 'mytf', [[file_entry('x')]], annotation=None)
        self.assertEqual(parse_image(layout).image_name, 'mytf')

    def test_docker_save_layers_base_first(self):
        layers = [[file_entry('base', 'b')], [file_entry('top', 't')]]
        path = build_docker_save(self.tmp / 'tf.tar', layers, repo_tag='tf:latest')
        manifest = parse_image(path)
        self.assertEqual(manifest.image_name, 'tf:latest')
        self.assertEqual(manifest.source_format, 'docker-save')
        self.assertEqual(
            [ref.digest for ref in manifest.layers],
            [f'sha256:{sha256_hex(layer_tar(layer))}' for layer in layers],
        )

    def test_image_config_env_and_workdir(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x')]],
                                  env=['PATH=/usr/bin:/bin', 'OMP_PROC_BIND=true'], workdir='/work')
        manifest = parse_image(layout)
        self.assertEqual(manifest.environment, {'PATH': '/usr/bin:/bin', 'OMP_PROC_BIND': 'true'})
        self.assertEqual(manifest.config_workdir, '/work')

    def test_oci_archive_tar(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x', '1')]], image_name='packed:1')
        path = tar_directory(layout, self.tmp / 'img.tar')
        manifest = parse_image(path)
        self.assertEqual(manifest.image_name, 'packed:1')
        with TarBlobStore(path) as store:
            rootfs = flatten(manifest, store)
        self.assertEqual(rootfs['x'].payload, b'1')

    def test_truncated_blob(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x', 'content' * 100)]])
        manifest = parse_image(layout)
        blob = layout / manifest.layers[0].location
        blob.write_bytes(blob.read_bytes()[:20])
        with self.assertRaises(DigestMismatch):
            parse_image(layout)

    def test_missing_blob(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x')]])
        manifest = parse_image(layout)
        (layout / manifest.layers[0].location).unlink()
        with self.assertRaises(MissingBlob):
            parse_image(layout)

    def test_unknown_formats(self):
        (self.tmp / 'empty').mkdir()
        (self.tmp / 'notes.txt').write_text('not an image')
        for path in (self.tmp / 'empty', self.tmp / 'notes.txt', self.tmp / 'absent'):
            with self.subTest(path=path.name), self.assertRaises(UnknownFormat):
                parse_image(path)

    def test_malformed_index(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x')]])
        (layout / 'index.json').write_text(json.dumps({'schemaVersion': 2, 'manifests': []}))
        with self.assertRaises(UnknownFormat):
            parse_image(layout)


class ApplyLayerTests(SimpleTestCase):

    def test_overwrite(self):
        tree = tree_of(dir_entry('a'), file_entry('a/f', '1'))
        result = apply_layer(tree, [file_entry('a/f', '2')])
        self.assertEqual(payloads(result), {'a/f': b'2'})

    def test_whiteout_removes_lower_file(self):
        tree = tree_of(dir_entry('a'), file_entry('a/f'), file_entry('a/g'))
        result = apply_layer(tree, [whiteout_entry('a/f')])
        self.assertEqual(sorted(result), ['a', 'a/g'])

    def test_whiteout_removes_directory_recursively(self):
        tree = tree_of(dir_entry('a'), dir_entry('a/b'), file_entry('a/b/f'), file_entry('keep'))
        result = apply_layer(tree, [whiteout_entry('a')])
        self.assertEqual(sorted(result), ['keep'])

    def test_opaque_marker_hides_lower_children(self):
        tree = tree_of(dir_entry('d'), file_entry('d/x'), file_entry('d/y'))
        result = apply_layer(tree, [opaque_entry('d'), file_entry('d/z')])
        self.assertEqual(sorted(result), ['d', 'd/z'])

    def test_markers_do_not_affect_their_own_layer(self):
        result = apply_layer({}, [dir_entry('a'), file_entry('a/f'), whiteout_entry('a/f'),
                                  file_entry('a/g'), opaque_entry('a')])
        self.assertEqual(sorted(result), ['a', 'a/f', 'a/g'])

    def test_input_tree_is_not_modified(self):
        tree = tree_of(file_entry('f', '1'))
        apply_layer(tree, [whiteout_entry('f')])
        self.assertIn('f', tree)

    def test_directory_replaced_by_file(self):
        tree = tree_of(dir_entry('a'), dir_entry('a/b'), file_entry('a/b/f'))
        result = apply_layer(tree, [file_entry('a', 'now a file')])
        self.assertEqual(payloads(result), {'a': b'now a file'})
        self.assertEqual(sorted(result), ['a'])

    def test_implicit_parent_directories(self):
        result = apply_layer({}, [file_entry('usr/local/bin/tool', 'x', 0o755)])
        self.assertEqual(result['usr'].kind, EntryKind.DIR)
        self.assertEqual(result['usr/local/bin'].mode, 0o755)

    def test_path_escape(self):
        with self.assertRaises(PathEscape):
            apply_layer({}, [file_entry('../escape', 'x')])

    def test_setuid_and_setgid_stripped(self):
        with self.assertLogs('images.layers', level='WARNING') as logs:
            result = apply_layer({}, [file_entry('su', 'x', 0o4755), file_entry('sg', 'x', 0o2755)])
        self.assertEqual(result['su'].mode, 0o755)
        self.assertEqual(result['sg'].mode, 0o755)
        self.assertTrue(any('setuid' in line for line in logs.output))

    def test_parent_symlink_resolved_within_tree(self):
        tree = tree_of(dir_entry('usr'), dir_entry('usr/lib'), symlink_entry('lib', 'usr/lib'),
                       symlink_entry('lib64', '/usr/lib'))
        result = apply_layer(tree, [file_entry('lib/libx.so', 'x'), file_entry('lib64/liby.so', 'y')])
        self.assertIn('usr/lib/libx.so', result)
        self.assertIn('usr/lib/liby.so', result)
        self.assertEqual(result['lib'].kind, EntryKind.SYMLINK)

    def test_symlink_resolution_clamped_at_root(self):
        tree = tree_of(symlink_entry('up', '../../../..'))
        self.assertEqual(resolve_in_tree(tree, 'up/etc'), 'etc')
        result = apply_layer(tree, [file_entry('up/passwd', 'x')])
        self.assertIn('passwd', result)

    def test_hardlink_points_at_file(self):
        result = apply_layer({}, [file_entry('a', 'data', 0o750), hardlink_entry('b', 'a')])
        self.assertEqual(result['b'].kind, EntryKind.HARDLINK)
        self.assertEqual(result['b'].payload, 'a')
        self.assertEqual(result['b'].mode, 0o750)

    def test_hardlink_to_missing_target(self):
        with self.assertRaises(HardlinkTargetMissing):
            apply_layer({}, [hardlink_entry('b', 'nowhere')])

    def test_whiteout_of_hardlink_target_is_an_error(self):
        tree = tree_of(file_entry('a', 'data'), hardlink_entry('b', 'a'))
        with self.assertRaises(HardlinkTargetMissing):
            apply_layer(tree, [whiteout_entry('a')])

    def test_whiteout_of_target_and_link(self):
        tree = tree_of(file_entry('a', 'data'), hardlink_entry('b', 'a'), file_entry('c'))
        result = apply_layer(tree, [whiteout_entry('a'), whiteout_entry('b')])
        self.assertEqual(sorted(result), ['c'])

    def test_overwritten_hardlink_target_rehomes_links(self):
        tree = tree_of(file_entry('a', 'old'), hardlink_entry('b', 'a'), hardlink_entry('c', 'a'))
        result = apply_layer(tree, [file_entry('a', 'new')])
        self.assertEqual(payloads(result), {'a': b'new', 'b': b'old'})
        self.assertEqual(result['c'].payload, 'b')

    def test_whiteout_keeps_directory_of_same_layer_entries(self):
        tree = tree_of(dir_entry('a'), file_entry('a/old'))
        result = apply_layer(tree, [file_entry('a/new', 'n'), whiteout_entry('a')])
        self.assertEqual(sorted(result), ['a', 'a/new'])
        self.assertEqual(result['a'].kind, EntryKind.DIR)
        self.assertIn('a/new', FlattenedRootfs.from_tree(result))

    def test_opaque_marker_keeps_directory_of_same_layer_entries(self):
        tree = tree_of(dir_entry('d'), dir_entry('d/sub'), file_entry('d/sub/old'), file_entry('d/x'))
        result = apply_layer(tree, [file_entry('d/sub/new'), opaque_entry('d')])
        self.assertEqual(sorted(result), ['d', 'd/sub', 'd/sub/new'])
        self.assertEqual(result['d/sub'].kind, EntryKind.DIR)
        FlattenedRootfs.from_tree(result)

    def test_whiteout_spares_paths_sharing_a_prefix(self):
        tree = tree_of(dir_entry('a'), file_entry('a/f'), file_entry('ab'), dir_entry('a.d'))
        result = apply_layer(tree, [whiteout_entry('a')])
        self.assertEqual(sorted(result), ['a.d', 'ab'])

    def test_overwriting_a_large_directory(self):
        count = 20000
        tree = tree_of(dir_entry('usr'), *(file_entry(f'usr/f{i}', 'old') for i in range(count)),
                       hardlink_entry('usr/link', 'usr/f0'))
        started = time.monotonic()
        result = apply_layer(tree, [file_entry(f'usr/f{i}', 'new') for i in range(count)])
        elapsed = time.monotonic() - started
        contents = payloads(result)
        self.assertEqual(contents['usr/link'], b'old')
        self.assertEqual({contents[f'usr/f{i}'] for i in range(count)}, {b'new'})
        self.assertLess(elapsed, 10)

        started = time.monotonic()
        result = apply_layer(result, [whiteout_entry('usr')])
        self.assertEqual(result, {})
        self.assertLess(time.monotonic() - started, 10)


class ReadLayerTests(SimpleTestCase):

    def test_device_nodes_and_fifos_skipped(self):
        for member_type in (tarfile.CHRTYPE, tarfile.BLKTYPE, tarfile.FIFOTYPE):
            with self.subTest(member_type=member_type):
                data = special_member_tar('dev/node', member_type)
                with self.assertLogs('images.layers', level='WARNING'):
                    entries = read_layer(io.BytesIO(data))
                self.assertEqual(entries, [])

    def test_whiteout_kinds(self):
        data = layer_tar([dir_entry('a'), whiteout_entry('a/f'), opaque_entry('a')])
        kinds = [entry.kind for entry in read_layer(io.BytesIO(data))]
        self.assertEqual(kinds, [EntryKind.DIR, EntryKind.WHITEOUT, EntryKind.OPAQUE])

    def test_zstd_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            blob = b'\x28\xb5\x2f\xfd' + b'\x00' * 32
            digest = sha256_hex(blob)
            blobs = Path(tmp) / 'blobs' / 'sha256'
            blobs.mkdir(parents=True)
            (blobs / digest).write_bytes(blob)
            manifest = ImageManifest('z', (LayerRef(f'sha256:{digest}', f'blobs/sha256/{digest}',
                                                    'application/vnd.oci.image.layer.v1.tar+zstd'),))
            with self.assertRaises(UnsupportedLayer):
                flatten(manifest, DirectoryBlobStore(tmp))


class FlattenTests(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(lambda: shutil.rmtree(self.tmp, ignore_errors=True))

    def flatten_layout(self, layers, name='img', **kwargs):
        layout = build_oci_layout(self.tmp / name, layers, **kwargs)
        return flatten(parse_image(layout), DirectoryBlobStore(layout))

    def test_empty_image(self):
        with self.assertRaises(EmptyImage):
            flatten(ImageManifest('empty', ()), DirectoryBlobStore(self.tmp))

    def test_single_layer_is_apply_layer_on_empty_tree(self):
        layer = [dir_entry('bin'), file_entry('bin/echo', 'x', 0o755), file_entry('etc-release', 'r')]
        self.assertEqual(self.flatten_layout([layer]), FlattenedRootfs.from_tree(apply_layer({}, layer)))

    def test_three_layers_match_scratch_extraction(self):
        rootfs = self.flatten_layout(THREE_LAYERS)
        scratch = self.tmp / 'scratch'
        scratch.mkdir()
        scratch_extract(THREE_LAYERS, scratch)
        self.assertEqual(tree_snapshot(rootfs), directory_snapshot(scratch))
        self.assertNotIn('etc/os-release', rootfs)
        self.assertEqual(sorted(p for p in rootfs.tree if p.startswith('var/cache/')), ['var/cache/c'])

    def test_formats_and_compressions_agree(self):
        expected = tree_snapshot(self.flatten_layout(THREE_LAYERS, name='gz'))
        for compression in ('', 'bz2', 'xz'):
            with self.subTest(compression=compression or 'none'):
                rootfs = self.flatten_layout(THREE_LAYERS, name=f'c{compression}', compression=compression)
                self.assertEqual(tree_snapshot(rootfs), expected)
        path = build_docker_save(self.tmp / 'save.tar', THREE_LAYERS)
        with TarBlobStore(path) as store:
            rootfs = flatten(parse_image(path, blob_store=store), store)
        self.assertEqual(tree_snapshot(rootfs), expected)

    def test_deterministic(self):
        layout = build_oci_layout(self.tmp / 'img', THREE_LAYERS)
        manifest = parse_image(layout)
        store = DirectoryBlobStore(layout)
        self.assertEqual(flatten(manifest, store), flatten(manifest, store, max_workers=1))

    def test_escape_fails_and_writes_nothing(self):
        with self.assertRaises(PathEscape):
            self.flatten_layout([[file_entry('ok', 'x')], [file_entry('../escape', 'x')]], name='bad')
        self.assertFalse((self.tmp / 'escape').exists())
        self.assertFalse((self.tmp / 'bad' / 'escape').exists())

    def test_embed_metadata(self):
        layout = build_oci_layout(self.tmp / 'img', [[file_entry('x')]], image_name='tf:2',
                                  env=['A=1'], workdir='/work')
        manifest, rootfs = flatten_input(layout)
        metadata = json.loads(rootfs['.udss/metadata.json'].payload)
        self.assertEqual(metadata['image_name'], 'tf:2')
        self.assertEqual(metadata['env'], {'A': '1'})
        self.assertEqual(metadata['workdir'], '/work')
        self.assertEqual(rootfs['.udss/environment'].payload, b'A=1\n')
        for directory in ('dev', 'proc', 'sys', 'tmp', 'home', 'mnt'):
            self.assertEqual(rootfs[directory].kind, EntryKind.DIR)
        self.assertEqual(rootfs, embed_metadata(rootfs, manifest))

    def test_rootfs_invariants(self):
        with self.assertRaises(ImageError):
            FlattenedRootfs.from_tree({'a/f': file_entry('a/f')})
        with self.assertRaises(ImageError):
            FlattenedRootfs.from_tree({'.wh.f': whiteout_entry('f')})

    @settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(layer_stacks)
    def test_random_stacks_match_scratch_extraction(self, stack):
        with tempfile.TemporaryDirectory() as tmp:
            layout = build_oci_layout(Path(tmp) / 'img', stack)
            rootfs = flatten(parse_image(layout), DirectoryBlobStore(layout))
            scratch = Path(tmp) / 'scratch'
            scratch.mkdir()
            scratch_extract(stack, scratch)
            self.assertEqual(tree_snapshot(rootfs), directory_snapshot(scratch))
            self.assertFalse([p for p in rootfs.tree if p.rsplit('/', 1)[-1].startswith('.wh.')])
