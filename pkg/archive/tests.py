import io
import os
import shutil
import stat
import tarfile
import tempfile
from dataclasses import replace
from pathlib import Path

from django.test import SimpleTestCase
from hypothesis import HealthCheck, assume, given, settings

from images.exceptions import PathEscape
from images.layers import apply_layer, read_layer
from images.models import EntryKind, FlattenedRootfs
from images.testing import (
    FIXTURE_MTIME, dir_entry, directory_snapshot, file_entry, hardlink_entry, layer_stacks,
    opaque_entry, scratch_extract, symlink_entry, tree_snapshot, whiteout_entry,
)

from .exceptions import ArchiveLayoutError, DestCollision, EmptyRootfs, IoFailure
from .models import RootfsArchive
from .utils import load_directory, pack, unpack


def rootfs_of(*layers):
    tree = {}
    for layer in layers:
        tree = apply_layer(tree, list(layer))
    return FlattenedRootfs.from_tree(tree)


FIXTURE_LAYERS = [
    [
        dir_entry('bin'), file_entry('bin/echo', '#!/bin/sh\necho "$@"\n', 0o755),
        dir_entry('etc'), file_entry('etc/os-release', 'ID=base\n'), file_entry('etc/stale', 's'),
        dir_entry('lib'), dir_entry('lib/ro', 0o750), file_entry('lib/ro/libc.so', 'elf', 0o444),
    ],
    [
        whiteout_entry('etc/stale'), opaque_entry('lib'),
        dir_entry('etc'), file_entry('etc/os-release', 'ID=tf\n', 0o600),
        dir_entry('lib'), file_entry('lib/libm.so', 'elf'),
    ],
    [
        symlink_entry('usr', '.'), symlink_entry('etc/localtime', '/usr/share/zoneinfo/UTC'),
        dir_entry('srv', 0o700), file_entry('srv/empty', ''),
    ],
]


def adversarial_archive(path, members):
    """members: (TarInfo-kwargs dict, bytes or None)"""
    with tarfile.open(path, mode='w:gz') as tar:
        for attrs, data in members:
            info = tarfile.TarInfo(attrs.pop('name'))
            for key, value in attrs.items():
                setattr(info, key, value)
            if data is not None:
                info.size = len(data)
            tar.addfile(info, io.BytesIO(data) if data is not None else None)
    return path


def dir_member(name):
    return ({'name': name, 'type': tarfile.DIRTYPE, 'mode': 0o755}, None)


def file_member(name, data=b'x'):
    return ({'name': name, 'mode': 0o644}, data)


class PackTests(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def test_entries_under_single_top_level_directory(self):
        rootfs = rootfs_of([dir_entry('bin'), file_entry('bin/echo', 'x', 0o755),
                            dir_entry('etc'), file_entry('etc/os-release', 'ID=tf\n')])
        archive = pack(rootfs, 'tf', self.tmp / 'tf.tar.gz')
        self.assertEqual(archive.top_level_name, 'tf')
        names = [member.name for member in archive.members()]
        self.assertEqual(names, ['tf', 'tf/bin', 'tf/bin/echo', 'tf/etc', 'tf/etc/os-release'])
        self.assertEqual(RootfsArchive.open(archive.path), archive)

    def test_slash_in_image_name(self):
        archive = pack(rootfs_of([file_entry('x')]), 'library/tf:2', self.tmp / 'out.tar.gz')
        self.assertEqual(archive.top_level_name, 'library%tf:2')

    def test_empty_rootfs(self):
        with self.assertRaises(EmptyRootfs):
            pack(FlattenedRootfs(), 'tf', self.tmp / 'tf.tar.gz')
        self.assertFalse((self.tmp / 'tf.tar.gz').exists())

    def test_unwritable_destination(self):
        with self.assertRaises(IoFailure):
            pack(rootfs_of([file_entry('x')]), 'tf', self.tmp / 'missing' / 'tf.tar.gz')

    def test_entry_manifest_is_deterministic(self):
        rootfs = rootfs_of(*FIXTURE_LAYERS)
        first = pack(rootfs, 'tf', self.tmp / 'a.tar.gz')
        second = pack(rootfs, 'tf', self.tmp / 'b.tar.gz', gzip_level=9)
        self.assertEqual(first.members(), second.members())

    def test_hardlinks_follow_their_targets(self):
        rootfs = rootfs_of([file_entry('z', 'data'), hardlink_entry('a', 'z')])
        members = pack(rootfs, 'tf', self.tmp / 'tf.tar.gz').members()
        self.assertEqual([m.name for m in members], ['tf', 'tf/z', 'tf/a'])
        self.assertEqual(members[-1].linkname, 'tf/z')

    def test_setuid_never_packed(self):
        rootfs = FlattenedRootfs.from_tree({'su': file_entry('su', 'x', 0o4755)})
        member = pack(rootfs, 'tf', self.tmp / 'tf.tar.gz').members()[-1]
        self.assertEqual(member.mode, 0o755)

    def test_reflatten_is_identity(self):
        rootfs = rootfs_of(*FIXTURE_LAYERS, [file_entry('etc/hosts', 'h'), hardlink_entry('etc/hosts2', 'etc/hosts')])
        archive = pack(rootfs, 'tf', self.tmp / 'tf.tar.gz')
        with open(archive.path, 'rb') as fileobj:
            entries = read_layer(fileobj)
        prefix = 'tf/'
        layer = []
        for entry in entries:
            if entry.path == 'tf':
                continue
            entry = entry.moved_to(entry.path[len(prefix):])
            if entry.kind is EntryKind.HARDLINK:
                entry = replace(entry, payload=entry.payload[len(prefix):])
            layer.append(entry)
        self.assertEqual(FlattenedRootfs.from_tree(apply_layer({}, layer)), rootfs)


class UnpackTests(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(self.cleanup)
        self.dest = self.tmp / 'dest'
        self.dest.mkdir()

    def cleanup(self):
        for dirpath, dirnames, _ in os.walk(self.tmp):
            for name in dirnames:
                path = os.path.join(dirpath, name)
                if not os.path.islink(path):
                    os.chmod(path, 0o700)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_round_trip_matches_scratch_extraction(self):
        archive = pack(rootfs_of(*FIXTURE_LAYERS), 'tf', self.tmp / 'tf.tar.gz')
        path = unpack(archive, self.dest)
        self.assertEqual(path, self.dest / 'tf')
        scratch = self.tmp / 'scratch'
        scratch.mkdir()
        scratch_extract(FIXTURE_LAYERS, scratch)
        self.assertEqual(directory_snapshot(path), directory_snapshot(scratch))
        self.assertEqual(os.listdir(self.dest), ['tf'])

    def test_timestamps_restored(self):
        archive = pack(rootfs_of(*FIXTURE_LAYERS), 'tf', self.tmp / 'tf.tar.gz')
        path = unpack(archive, self.dest)
        self.assertEqual(int((path / 'bin' / 'echo').stat().st_mtime), FIXTURE_MTIME)
        self.assertEqual(int((path / 'srv').stat().st_mtime), FIXTURE_MTIME)

    def test_second_unpack_collides(self):
        archive = pack(rootfs_of(*FIXTURE_LAYERS), 'tf', self.tmp / 'tf.tar.gz')
        unpack(archive, self.dest)
        with self.assertRaises(DestCollision):
            unpack(archive, self.dest)
        self.assertEqual(os.listdir(self.dest), ['tf'])

    def test_overwrite_replaces_stale_copy(self):
        archive = pack(rootfs_of(*FIXTURE_LAYERS), 'tf', self.tmp / 'tf.tar.gz')
        path = unpack(archive, self.dest)
        (path / 'stale.txt').write_text('left over')
        locked = path / 'locked'
        locked.mkdir()
        (locked / 'f').write_text('x')
        locked.chmod(0o500)
        unpack(archive, self.dest, overwrite=True)
        self.assertFalse((path / 'stale.txt').exists())
        self.assertFalse(locked.exists())
        self.assertEqual(os.listdir(self.dest), ['tf'])

    def test_hardlinks_preserved(self):
        rootfs = rootfs_of([dir_entry('d'), file_entry('d/a', 'data'), hardlink_entry('d/b', 'd/a')])
        path = unpack(pack(rootfs, 'tf', self.tmp / 'tf.tar.gz'), self.dest)
        self.assertEqual((path / 'd' / 'a').stat().st_ino, (path / 'd' / 'b').stat().st_ino)
        loaded = load_directory(path)
        self.assertEqual(loaded['d/b'].kind, EntryKind.HARDLINK)
        self.assertEqual(loaded['d/b'].payload, 'd/a')
        self.assertEqual(tree_snapshot(loaded), tree_snapshot(rootfs))

    def test_missing_destination(self):
        archive = pack(rootfs_of([file_entry('x')]), 'tf', self.tmp / 'tf.tar.gz')
        with self.assertRaises(IoFailure):
            unpack(archive, self.tmp / 'nowhere')

    def test_accepts_a_path(self):
        pack(rootfs_of([file_entry('x', '1')]), 'tf', self.tmp / 'tf.tar.gz')
        path = unpack(self.tmp / 'tf.tar.gz', self.dest)
        self.assertEqual((path / 'x').read_bytes(), b'1')

    def assert_contained(self, archive_path, error):
        outside = self.tmp / 'outside'
        outside.mkdir(exist_ok=True)
        before = sorted(os.listdir(self.tmp))
        with self.assertRaises(error):
            unpack(archive_path, self.dest)
        self.assertEqual(sorted(os.listdir(self.tmp)), before)
        self.assertEqual(os.listdir(outside), [])
        self.assertEqual(os.listdir(self.dest), [])

    def test_dotdot_member_rejected(self):
        path = adversarial_archive(self.tmp / 'evil.tar.gz', [
            dir_member('tf'), file_member('tf/../../outside/escape'),
        ])
        self.assert_contained(path, PathEscape)

    def test_absolute_member_rejected(self):
        target = self.tmp / 'outside' / 'escape'
        path = adversarial_archive(self.tmp / 'evil.tar.gz', [file_member(str(target))])
        self.assert_contained(path, PathEscape)

    def test_write_through_symlink_rejected(self):
        outside = self.tmp / 'outside'
        path = adversarial_archive(self.tmp / 'evil.tar.gz', [
            dir_member('tf'),
            ({'name': 'tf/link', 'type': tarfile.SYMTYPE, 'linkname': str(outside)}, None),
            file_member('tf/link/escape'),
        ])
        self.assert_contained(path, PathEscape)

    def test_relative_symlink_escape_rejected(self):
        path = adversarial_archive(self.tmp / 'evil.tar.gz', [
            dir_member('tf'),
            ({'name': 'tf/up', 'type': tarfile.SYMTYPE, 'linkname': '../../../outside'}, None),
            file_member('tf/up/escape'),
        ])
        self.assert_contained(path, PathEscape)

    def test_hardlink_outside_rejected(self):
        secret = self.tmp / 'secret'
        secret.write_text('secret')
        for linkname in (str(secret), 'tf/../../secret'):
            with self.subTest(linkname=linkname):
                path = adversarial_archive(self.tmp / 'evil.tar.gz', [
                    dir_member('tf'),
                    ({'name': 'tf/h', 'type': tarfile.LNKTYPE, 'linkname': linkname}, None),
                ])
                self.assert_contained(path, PathEscape)
                path.unlink()

    def test_several_top_level_entries_rejected(self):
        path = adversarial_archive(self.tmp / 'bomb.tar.gz', [file_member('a'), file_member('b')])
        self.assert_contained(path, ArchiveLayoutError)

    def test_top_level_entry_must_be_a_directory(self):
        for members in (
            [file_member('rootfs')],
            [({'name': 'rootfs', 'type': tarfile.SYMTYPE, 'linkname': '/etc'}, None)],
        ):
            with self.subTest(members=members):
                path = adversarial_archive(self.tmp / 'flat.tar.gz', members)
                self.assert_contained(path, ArchiveLayoutError)

    def test_implied_top_level_directory_accepted(self):
        path = adversarial_archive(self.tmp / 'implied.tar.gz', [file_member('tf/ok')])
        self.assertEqual(RootfsArchive.open(path).top_level_name, 'tf')

    def test_device_members_skipped(self):
        path = adversarial_archive(self.tmp / 'dev.tar.gz', [
            dir_member('tf'), dir_member('tf/dev'),
            ({'name': 'tf/dev/null', 'type': tarfile.CHRTYPE, 'devmajor': 1, 'devminor': 3}, None),
            file_member('tf/ok'),
        ])
        with self.assertLogs('archive.utils', level='WARNING'):
            rootfs = unpack(path, self.dest)
        self.assertEqual(sorted(os.listdir(rootfs)), ['dev', 'ok'])
        self.assertEqual(os.listdir(rootfs / 'dev'), [])

    def test_setuid_not_restored(self):
        path = adversarial_archive(self.tmp / 'su.tar.gz', [
            dir_member('tf'), ({'name': 'tf/su', 'mode': 0o4755}, b'x'),
        ])
        rootfs = unpack(path, self.dest)
        self.assertEqual(stat.S_IMODE((rootfs / 'su').stat().st_mode), 0o755)

    @settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(layer_stacks)
    def test_random_trees_round_trip(self, stack):
        rootfs = rootfs_of(*stack)
        assume(len(rootfs))
        with tempfile.TemporaryDirectory() as tmp:
            dest = Path(tmp) / 'dest'
            dest.mkdir()
            archive = pack(rootfs, 'tf', Path(tmp) / 'tf.tar.gz')
            path = unpack(archive, dest)
            self.assertEqual(directory_snapshot(path), tree_snapshot(rootfs))

    def test_read_only_directories(self):
        rootfs = rootfs_of([dir_entry('opt', 0o555), file_entry('opt/tool', 'x', 0o555)])
        path = unpack(pack(rootfs, 'tf', self.tmp / 'tf.tar.gz'), self.dest)
        self.assertEqual(directory_snapshot(path), tree_snapshot(rootfs))
        unpack(self.tmp / 'tf.tar.gz', self.dest, overwrite=True)
        self.assertEqual(os.listdir(self.dest), ['tf'])
