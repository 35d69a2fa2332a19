import argparse
import contextlib
import io
import logging
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from django.conf import settings as django_settings
from django.core.management import load_command_class
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from images.testing import build_oci_layout, dir_entry, file_entry
from runtime.probe import probe_support
from runtime.testing import toolchain_binds, toolchain_entries

from .cli import SUBCOMMANDS, dispatch, split_global_flags
from .conf import LOG_LEVELS, configure_verbosity, load_config
from .exceptions import ConfigError
from .serializers import ENV_POLICIES


def udss(*args):
    out, err = io.StringIO(), io.StringIO()
    status = dispatch(['udss', *args], stdout=out, stderr=err)
    return status, out.getvalue(), err.getvalue()


def typed(values):
    """Values written as str(value) and read back unchanged"""
    return values.map(lambda value: (str(value), value))


def words(minimum=0):
    return st.lists(st.from_regex(r'-?[A-Za-z0-9_]{1,6}', fullmatch=True), min_size=minimum, max_size=4).map(
        lambda items: (' '.join(items), tuple(items))
    )


# settings with a command-line flag, as (text, coerced value) pairs
FLAG_SETTINGS = {
    'VERBOSITY': typed(st.integers(0, 3)),
    'DEFAULT_ENV_POLICY': typed(st.sampled_from(ENV_POLICIES)),
    'OVERHEAD_THRESHOLD': typed(st.floats(min_value=0, max_value=1)),
    'GZIP_LEVEL': typed(st.integers(0, 9)),
}

FILE_SETTINGS = {
    'SITE_BIND_DIRS': st.lists(st.from_regex(r'/[a-z]{1,8}', fullmatch=True), max_size=3).map(
        lambda dirs: (','.join(dirs), tuple(dirs))
    ),
    'THREAD_ENV_VAR': typed(st.from_regex(r'[A-Z_][A-Z0-9_]{0,10}', fullmatch=True)),
    'MPIRUN': typed(st.from_regex(r'[a-z][a-z0-9.-]{0,10}', fullmatch=True)),
    'MPIRUN_FLAGS': words(),
    'RUNTIME_PROGRAM': words(minimum=1),
    'MODULE_NAME': typed(st.from_regex(r'[a-z][a-z0-9/._-]{0,10}', fullmatch=True)),
    'MEMORY_SAMPLE_INTERVAL': typed(st.floats(min_value=0.001, max_value=10)),
}


class LoadConfigTests(SimpleTestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.config_file = Path(tmp.name) / 'udss.conf'
        self.config_file.write_text('')

    def test_defaults(self):
        config = load_config(config_file=self.config_file, environ={})
        self.assertEqual(config.default_env_policy, 'inherit-host')
        self.assertEqual(config.gzip_level, 6)
        self.assertEqual(config.thread_env_var, 'OMP_NUM_THREADS')
        self.assertEqual(config.runtime_program, ('udss',))
        self.assertEqual(config.overhead_threshold, 0.02)
        self.assertEqual(config.site_bind_dirs, ())
        self.assertEqual(config.config_file_path, self.config_file)

    def test_file_values_are_coerced(self):
        self.config_file.write_text(
            'SITE_BIND_DIRS=/scratch, /opt/site/\n'
            'UDSS_MPIRUN_FLAGS="-genv I_MPI_DEBUG 5"\n'
            'NOT_A_KEY=1\n'
        )
        config = load_config(config_file=self.config_file, environ={})
        self.assertEqual(config.site_bind_dirs, ('/scratch', '/opt/site'))
        self.assertEqual(config.mpirun_flags, ('-genv', 'I_MPI_DEBUG', '5'))

    def test_config_file_from_environment(self):
        self.config_file.write_text('MODULE_NAME=charlie\n')
        config = load_config(environ={'UDSS_CONFIG': str(self.config_file)})
        self.assertEqual(config.module_name, 'charlie')

    def test_invalid_values(self):
        for environ in ({'UDSS_GZIP_LEVEL': '12'}, {'UDSS_DEFAULT_ENV_POLICY': 'host'},
                        {'UDSS_SITE_BIND_DIRS': 'scratch'}, {'UDSS_THREAD_ENV_VAR': '1X'}):
            with self.assertRaises(ConfigError, msg=environ):
                load_config(config_file=self.config_file, environ=environ)

    def test_missing_explicit_file(self):
        with self.assertRaises(ConfigError):
            load_config(config_file=self.config_file.with_name('absent.conf'), environ={})

    def assert_precedence(self, key, flag, env, file_value):
        """flag, env and file_value are (text, coerced) pairs or None"""
        attribute = key.lower()
        self.config_file.write_text('')
        default = getattr(load_config(config_file=self.config_file, environ={}), attribute)
        self.config_file.write_text('' if file_value is None else f"{key}='{file_value[0]}'\n")
        environ = {} if env is None else {f'UDSS_{key}': env[0]}
        flags = {} if flag is None else {key: flag[1]}
        config = load_config(flags=flags, config_file=self.config_file, environ=environ)
        expected = next((layer[1] for layer in (flag, env, file_value) if layer is not None), default)
        self.assertEqual(getattr(config, attribute), expected)

    @settings(max_examples=200)
    @given(st.data())
    def test_flag_beats_environment_beats_file_beats_default(self, data):
        key = data.draw(st.sampled_from(sorted(FLAG_SETTINGS)))
        layer = st.one_of(st.none(), FLAG_SETTINGS[key])
        self.assert_precedence(key, data.draw(layer), data.draw(layer), data.draw(layer))

    @settings(max_examples=200)
    @given(st.data())
    def test_environment_beats_file_beats_default(self, data):
        key = data.draw(st.sampled_from(sorted(FILE_SETTINGS)))
        layer = st.one_of(st.none(), FILE_SETTINGS[key])
        self.assert_precedence(key, None, data.draw(layer), data.draw(layer))

    def test_every_setting_is_covered(self):
        self.assertEqual(set(FLAG_SETTINGS) | set(FILE_SETTINGS), set(django_settings.UDSS_DEFAULTS))


class DispatchTests(SimpleTestCase):

    def test_main_help(self):
        status, out, _ = udss('--help')
        self.assertEqual(status, 0)
        for name in SUBCOMMANDS:
            self.assertIn(f'  {name}\n', out)

    def test_no_subcommand(self):
        status, _, err = udss()
        self.assertEqual(status, 1)
        self.assertIn('usage:', err)

    def test_unknown_subcommand(self):
        status, _, err = udss('deploy')
        self.assertEqual(status, 1)
        self.assertIn("Unknown subcommand: 'deploy'", err)

    def test_usage_error(self):
        status, _, err = udss('unpack', 'only-one-argument')
        self.assertEqual(status, 1)
        self.assertIn('udss unpack:', err)

    def test_operation_error(self):
        status, _, err = udss('unpack', '/no/such/archive.tar.gz', tempfile.gettempdir())
        self.assertEqual(status, 2)

    def test_config_error(self):
        with mock.patch.dict('os.environ', {'UDSS_GZIP_LEVEL': '12'}):
            status, _, err = udss('scale-report', '/no/such.csv')
        self.assertEqual(status, 1)
        self.assertIn('GZIP_LEVEL', err)

    def test_global_flags_before_subcommand(self):
        self.assertEqual(
            split_global_flags(['-v', '3', '--config', 'a.conf', 'run', '-w', 'x']),
            (['-v', '3', '--config', 'a.conf'], ['run', '-w', 'x']),
        )

    def help_text(self, *args):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            status, _, _ = udss(*args, '--help')
        self.assertEqual(status, 0, args)
        return stdout.getvalue()

    def assert_help_lists_options(self, parser, *args):
        text = self.help_text(*args)
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for name, subparser in action.choices.items():
                    self.assertIn(name, text, args)
                    self.assert_help_lists_options(subparser, *args, name)
            elif action.help != argparse.SUPPRESS:
                for option in action.option_strings:
                    self.assertIn(option, text, args)

    def test_every_subcommand_help_lists_its_options(self):
        for name, (app, module) in SUBCOMMANDS.items():
            with self.subTest(subcommand=name):
                parser = load_command_class(app, module).create_parser('udss', name)
                self.assert_help_lists_options(parser, name)

    def test_run_help_lists_flags(self):
        text = self.help_text('run')
        for flag in ('--writable', '--bind', '--cd', '--env-policy', '--config', '--verbosity'):
            self.assertIn(flag, text)


class VerbosityTests(SimpleTestCase):

    def setUp(self):
        self.addCleanup(configure_verbosity, 1)

    def test_levels_apply_to_every_project_logger(self):
        for verbosity, level in LOG_LEVELS.items():
            configure_verbosity(verbosity)
            for name in django_settings.UDSS_LOGGERS:
                self.assertEqual(logging.getLogger(name).level, level, name)

    def test_flag_and_environment(self):
        udss('scale-report', '-v', '3', '/no/such.csv')
        self.assertEqual(logging.getLogger('bench').level, logging.DEBUG)
        with mock.patch.dict('os.environ', {'UDSS_VERBOSITY': '0'}):
            udss('scale-report', '/no/such.csv')
        self.assertEqual(logging.getLogger('images').level, logging.ERROR)

    def test_default_is_warning(self):
        configure_verbosity(3)
        with mock.patch.dict('os.environ', {'UDSS_LOG_LEVEL': 'DEBUG'}):
            udss('scale-report', '/no/such.csv')
        self.assertEqual(logging.getLogger('runtime').level, logging.WARNING)


class EndToEndTests(SimpleTestCase):
    """flatten -> unpack -> run, the way a cluster user deploys an image"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        report = probe_support()
        if not report.user_namespaces:
            raise unittest.SkipTest(f"No unprivileged user namespaces: {report.reason}")

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def test_deploy_and_run(self):
        layout = build_oci_layout(
            self.tmp / 'layout',
            [
                toolchain_entries() + [dir_entry('out'), dir_entry('srv')],
                [file_entry('srv/hello.txt', 'container hello world!\n')],
            ],
            image_name='hello:1.0', env=('GREETING=hi from the image',), workdir='/srv',
        )
        archive = self.tmp / 'hello.tar.gz'
        status, out, err = udss('flatten', str(layout), str(archive))
        self.assertEqual(status, 0, err)
        self.assertIn('hello:1.0: 2 layers', out)

        nodes = self.tmp / 'node-local'
        nodes.mkdir()
        status, out, err = udss('unpack', str(archive), str(nodes))
        self.assertEqual(status, 0, err)
        rootfs = Path(out.strip())
        self.assertEqual(rootfs, nodes / 'hello')

        results = self.tmp / 'results'
        results.mkdir()
        binds = [f'{bind.source}:{bind.target}:ro' for bind in toolchain_binds()]
        bind_flags = [word for bind in binds for word in ('-b', bind)]
        status, _, err = udss(
            'run', *bind_flags, '-b', f'{results}:/out', '--env-policy', 'merged', str(rootfs), '--',
            'sh', '-c', 'cat hello.txt > /out/hello; pwd > /out/pwd; echo "$GREETING" > /out/env',
        )
        self.assertEqual(status, 0, err)
        self.assertEqual((results / 'hello').read_text(), 'container hello world!\n')
        self.assertEqual((results / 'pwd').read_text(), '/srv\n')
        self.assertEqual((results / 'env').read_text(), 'hi from the image\n')

        status, _, err = udss('run', *bind_flags, str(rootfs), '--', 'sh', '-c', 'exit 7')
        self.assertEqual(status, 7)

        status, _, err = udss('unpack', str(archive), str(nodes))
        self.assertEqual(status, 2)
        self.assertIn('already exists', err)
