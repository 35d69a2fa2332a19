import io
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

from django.conf import settings as django_settings
from django.test import SimpleTestCase
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from udss.cli import dispatch

from .container import (
    RUNTIME_FAILURE_STATUS, container_environment, exit_status, read_image_metadata,
    resolve_in_rootfs, run, start,
)
from .exceptions import (
    BindSourceMissing, BindTargetMissing, ContainerSetupError, ExecNotFound, RootfsMissing,
)
from .models import DEPTH_VARIABLE, Bind, ContainerSpec, IdentityMap
from .probe import overlay_available, probe_support
from .testing import toolchain_binds, toolchain_rootfs


def run_captured(spec):
    """Run spec with stdout captured; returns (status, output)"""
    with tempfile.TemporaryFile() as out:
        status = run(replace(spec, stdout=out.fileno()))
        out.seek(0)
        return status, out.read().decode()


def status_field(status_text, name):
    for line in status_text.splitlines():
        key, _, value = line.partition(':')
        if key == name:
            return value.strip()
    return None


class BindParseTests(SimpleTestCase):

    def test_source_only_binds_at_same_path(self):
        bind = Bind.parse('/scratch')
        self.assertEqual(bind, Bind(Path('/scratch'), '/scratch', False))

    def test_target_and_read_only_flag(self):
        bind = Bind.parse('/work/data:/data:ro')
        self.assertEqual(bind.source, Path('/work/data'))
        self.assertEqual(bind.target, '/data')
        self.assertTrue(bind.read_only)

    def test_rejects_relative_target_and_unknown_flag(self):
        with self.assertRaises(ValueError):
            Bind.parse('/a:data')
        with self.assertRaises(ValueError):
            Bind.parse('/a:/b:noexec')


class IdentityMapTests(SimpleTestCase):

    def test_current_maps_the_invoking_user_onto_itself(self):
        identity = IdentityMap.current()
        self.assertEqual(identity.container_uid, os.geteuid())
        self.assertEqual(identity.uid_map, f"{os.geteuid()} {os.geteuid()} 1\n")
        self.assertEqual(identity.gid_map, f"{os.getegid()} {os.getegid()} 1\n")

    def test_non_identity_mapping_refused(self):
        with self.assertRaises(ContainerSetupError):
            IdentityMap(host_uid=1000, host_gid=1000, container_uid=0, container_gid=0)


class ContainerSpecTests(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp)

    def test_missing_rootfs(self):
        with self.assertRaises(RootfsMissing):
            ContainerSpec(rootfs=self.tmp / 'nope', command=['true']).validate()

    def test_missing_bind_source(self):
        spec = ContainerSpec(rootfs=self.tmp, command=['true'], binds=[('/no/such/dir', '/mnt')])
        with self.assertRaises(BindSourceMissing):
            spec.validate()

    def test_empty_command_and_unknown_policy(self):
        with self.assertRaises(ContainerSetupError):
            ContainerSpec(rootfs=self.tmp, command=[]).validate()
        with self.assertRaises(ContainerSetupError):
            ContainerSpec(rootfs=self.tmp, command=['true'], env_policy='host').validate()

    def test_missing_rootfs_is_reported_before_forking(self):
        with self.assertRaises(RootfsMissing):
            start(ContainerSpec(rootfs=self.tmp / 'nope', command=['true']))


class EnvironmentTests(SimpleTestCase):
    host = {'PATH': '/host/bin', 'PMI_RANK': '3', 'LANG': 'C'}
    metadata = {'env': {'PATH': '/opt/conda/bin:/usr/bin', 'LANG': 'C.UTF-8'}}

    def environment(self, policy, host=None):
        spec = ContainerSpec(rootfs='/', command=['true'], env_policy=policy)
        return container_environment(spec, self.metadata, self.host if host is None else host)

    def test_inherit_host_passes_launcher_variables(self):
        env = self.environment('inherit-host')
        self.assertEqual(env['PMI_RANK'], '3')
        self.assertEqual(env['PATH'], '/host/bin')

    def test_image_config_uses_image_env_only(self):
        env = self.environment('image-config')
        self.assertNotIn('PMI_RANK', env)
        self.assertEqual(env['PATH'], '/opt/conda/bin:/usr/bin')

    def test_merged_lets_image_override(self):
        env = self.environment('merged')
        self.assertEqual(env['PMI_RANK'], '3')
        self.assertEqual(env['LANG'], 'C.UTF-8')

    def test_depth_is_incremented(self):
        self.assertEqual(self.environment('inherit-host')[DEPTH_VARIABLE], '1')
        env = self.environment('image-config', host={DEPTH_VARIABLE: '2'})
        self.assertEqual(env[DEPTH_VARIABLE], '3')

    def test_default_path_when_image_has_none(self):
        spec = ContainerSpec(rootfs='/', command=['true'], env_policy='image-config')
        env = container_environment(spec, {}, {})
        self.assertIn('/usr/bin', env['PATH'])


class ResolveInRootfsTests(SimpleTestCase):

    def setUp(self):
        self.root = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.root)
        (self.root / 'usr' / 'bin').mkdir(parents=True)
        (self.root / 'bin').symlink_to('usr/bin')
        (self.root / 'abs').symlink_to('/usr')
        (self.root / 'up').symlink_to('../../../..')

    def test_relative_and_absolute_symlinks_stay_inside(self):
        root = os.path.realpath(self.root)
        self.assertEqual(resolve_in_rootfs(self.root, '/bin/sh'), os.path.join(root, 'usr/bin/sh'))
        self.assertEqual(resolve_in_rootfs(self.root, '/abs/bin'), os.path.join(root, 'usr/bin'))
        self.assertEqual(resolve_in_rootfs(self.root, '/up/etc'), os.path.join(root, 'etc'))

    def test_symlink_loop(self):
        (self.root / 'loop').symlink_to('loop')
        with self.assertRaises(ContainerSetupError):
            resolve_in_rootfs(self.root, '/loop/x')


class ExitStatusTests(SimpleTestCase):

    def test_exit_code_and_signal_convention(self):
        self.assertEqual(exit_status(42 << 8), 42)
        self.assertEqual(exit_status(0), 0)
        self.assertEqual(exit_status(signal.SIGTERM), 128 + signal.SIGTERM)


class ImageMetadataTests(SimpleTestCase):

    def setUp(self):
        self.root = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.root)

    def test_reads_metadata_written_by_flatten(self):
        (self.root / '.udss').mkdir()
        (self.root / '.udss' / 'metadata.json').write_text(
            '{"image_name": "tf:latest", "env": {"A": " spaced "}, "workdir": "/work"}'
        )
        metadata = read_image_metadata(self.root)
        self.assertEqual(metadata['env'], {'A': ' spaced '})
        self.assertEqual(metadata['workdir'], '/work')

    def test_foreign_or_broken_metadata_is_ignored(self):
        self.assertEqual(read_image_metadata(self.root), {})
        (self.root / '.udss').mkdir()
        (self.root / '.udss' / 'metadata.json').write_text('{not json')
        with self.assertLogs('runtime', 'WARNING'):
            self.assertEqual(read_image_metadata(self.root), {})


class ProbeSupportTests(SimpleTestCase):

    def test_report_is_consistent(self):
        report = probe_support()
        self.assertEqual(report.user_namespaces, not report.reason)
        self.assertEqual(report.kernel, os.uname().release)
        self.assertEqual(report.overlay, overlay_available())

    def test_nesting_depth_from_environment(self):
        self.assertEqual(probe_support(environ={DEPTH_VARIABLE: '2'}).nesting_depth, 2)
        self.assertEqual(probe_support(environ={}).nesting_depth, 0)

    def test_probe_command_json(self):
        out = io.StringIO()
        self.assertEqual(dispatch(['udss', 'probe', '--json'], stdout=out, stderr=io.StringIO()), 0)
        self.assertIn('"user_namespaces":', out.getvalue())


class RunCommandUsageTests(SimpleTestCase):

    def test_missing_command_is_a_usage_error(self):
        err = io.StringIO()
        self.assertEqual(dispatch(['udss', 'run', '/'], stdout=io.StringIO(), stderr=err), 1)
        self.assertIn('missing command', err.getvalue())

    def test_bad_bind_is_a_usage_error(self):
        err = io.StringIO()
        status = dispatch(['udss', 'run', '--bind', '/a:rel', '/', '--', 'true'],
                          stdout=io.StringIO(), stderr=err)
        self.assertEqual(status, 1)

    def test_missing_rootfs_exits_125(self):
        err = io.StringIO()
        status = dispatch(['udss', 'run', '/no/such/rootfs', '--', 'true'], stdout=io.StringIO(), stderr=err)
        self.assertEqual(status, RUNTIME_FAILURE_STATUS)
        self.assertIn('Rootfs is not a directory', err.getvalue())


class ContainerTests(SimpleTestCase):
    """Real containers; skipped where the kernel refuses unprivileged user namespaces"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        report = probe_support()
        if not report.user_namespaces:
            raise unittest.SkipTest(f"No unprivileged user namespaces: {report.reason}")
        cls.tmp = Path(tempfile.mkdtemp())
        cls.rootfs = toolchain_rootfs(cls.tmp / 'rootfs')
        cls.secret_dir = cls.tmp / 'host-only'
        cls.secret_dir.mkdir()
        cls.secret = cls.secret_dir / 'secret'
        cls.secret.write_text('do not read\n')

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def devnull(self):
        fd = os.open(os.devnull, os.O_WRONLY)
        self.addCleanup(os.close, fd)
        return fd

    def spec(self, *command, **kwargs):
        kwargs.setdefault('rootfs', self.rootfs)
        kwargs['binds'] = toolchain_binds() + tuple(kwargs.get('binds', ()))
        return ContainerSpec(command=command, **kwargs)

    def test_hello_world(self):
        status, out = run_captured(self.spec('echo', 'container hello world!'))
        self.assertEqual(status, 0)
        self.assertEqual(out, 'container hello world!\n')

    def test_identity_mapping(self):
        status, out = run_captured(self.spec('sh', '-c', 'id -u; id -g'))
        self.assertEqual(status, 0)
        self.assertEqual(out.split(), [str(os.geteuid()), str(os.getegid())])

    def test_exit_status_propagates(self):
        self.assertEqual(run(self.spec('sh', '-c', 'exit 42')), 42)

    def test_read_only_image(self):
        status = run(self.spec('sh', '-c', 'echo x > /newfile', stderr=self.devnull()))
        self.assertNotEqual(status, 0)
        self.assertFalse((self.rootfs / 'newfile').exists())

    def test_writable_image_persists_writes(self):
        rootfs = toolchain_rootfs(self.tmp / 'writable')
        status = run(self.spec('sh', '-c', 'echo kept > /newfile', rootfs=rootfs, writable=True))
        self.assertEqual(status, 0)
        self.assertEqual((rootfs / 'newfile').read_text(), 'kept\n')

    def test_no_new_privileges_and_host_files_hidden(self):
        status, out = run_captured(self.spec('cat', '/proc/self/status'))
        self.assertEqual(status, 0)
        self.assertEqual(status_field(out, 'NoNewPrivs'), '1')
        self.assertNotEqual(run(self.spec('cat', str(self.secret), stderr=self.devnull())), 0)

    def test_sigterm_is_forwarded(self):
        container = start(self.spec('sleep', '30'))
        if signal.SIGTERM not in container._saved_handlers:
            container.send_signal(signal.SIGKILL)
            container.wait()
            self.skipTest("signal forwarding needs the main thread")
        os.kill(os.getpid(), signal.SIGTERM)
        self.assertEqual(container.wait(), 128 + signal.SIGTERM)
        self.assertIsNotNone(container.poll())

    def test_exec_not_found(self):
        with self.assertRaises(ExecNotFound):
            start(self.spec('no-such-program-in-image'))

    def test_bind_target_must_exist(self):
        with self.assertRaises(BindTargetMissing):
            start(self.spec('true', binds=[Bind(self.secret_dir, '/no/such/target')]))

    def test_user_bind_and_depth(self):
        data = self.tmp / 'data'
        data.mkdir(exist_ok=True)
        (data / 'input.txt').write_text('42\n')
        status, out = run_captured(self.spec(
            'sh', '-c', f'cat /mnt/input.txt; echo ${DEPTH_VARIABLE}',
            binds=[Bind(data, '/mnt', read_only=True)],
        ))
        self.assertEqual(status, 0)
        self.assertEqual(out.split(), ['42', '1'])

    def test_launcher_style_concurrent_containers(self):
        """k launcher slots, each running the udss CLI; every contained process is its slot's child"""
        bind_flags = [word for bind in toolchain_binds() for word in ('-b', f'{bind.source}:{bind.target}:ro')]
        environ = dict(os.environ)
        environ['PYTHONPATH'] = os.pathsep.join(
            filter(None, [str(django_settings.BASE_DIR), os.environ.get('PYTHONPATH')])
        )
        slots = [
            subprocess.Popen(
                [sys.executable, '-m', 'udss', 'run', *bind_flags, str(self.rootfs), '--', 'sh', '-c', 'echo $PPID'],
                stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
                cwd=django_settings.BASE_DIR, env=environ,
            )
            for _ in range(3)
        ]
        for slot in slots:
            out, err = slot.communicate(timeout=120)
            self.assertEqual(slot.returncode, 0, err)
            self.assertEqual(out.strip(), str(slot.pid))

    @settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(
        writable=st.booleans(),
        env_policy=st.sampled_from(['inherit-host', 'image-config', 'merged']),
        workdir=st.sampled_from([None, '/', '/tmp', '/usr']),
        extra_bind=st.booleans(),
    )
    def test_no_escalation(self, writable, env_policy, workdir, extra_bind):
        binds = [Bind(self.tmp / 'rootfs' / 'etc', '/mnt', read_only=True)] if extra_bind else []
        spec = self.spec(
            'sh', '-c', f'id -u; cat /proc/self/status; cat {self.secret} 2>/dev/null && echo LEAKED',
            writable=writable, env_policy=env_policy, workdir=workdir, binds=binds,
        )
        status, out = run_captured(spec)
        self.assertNotIn('LEAKED', out)
        self.assertNotIn('do not read', out)
        self.assertEqual(out.split('\n', 1)[0], str(os.geteuid()))
        self.assertEqual(status_field(out, 'NoNewPrivs'), '1')
        self.assertEqual(status_field(out, 'Uid').split()[1], str(os.geteuid()))
        self.assertNotEqual(status, 0)
