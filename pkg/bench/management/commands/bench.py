import argparse
from pathlib import Path

from django.core.management.base import CommandError
from rest_framework.renderers import JSONRenderer

from bench.analysis import overhead_report
from bench.emit import overhead_record_csv
from bench.measure import DEFAULT_REPETITIONS, DEFAULT_THROUGHPUT_PATTERN, measure_pair
from bench.serializers import OverheadRecordSerializer
from runtime.management.commands.run import bind_argument
from runtime.models import ContainerSpec
from udss.command import UDSSCommand
from udss.serializers import ENV_POLICIES


class Command(UDSSCommand):
    help = (
        'Run a workload natively and then inside an unpacked rootfs and record its '
        'throughput and the lowest free memory, e.g. "bench /tmp/tf -- python bench.py". '
        'Options go before ROOTFS.'
    )

    def add_arguments(self, parser):
        parser.add_argument('--repetitions', type=int, default=DEFAULT_REPETITIONS, help='runs per side')
        parser.add_argument(
            '--pattern', default=DEFAULT_THROUGHPUT_PATTERN,
            help='regex with one capture group around the throughput figure in the workload output',
        )
        parser.add_argument('--name', default=None, help='benchmark name (default: workload basename)')
        parser.add_argument(
            '-b', '--bind', action='append', type=bind_argument, default=[], metavar='SRC[:DST[:ro]]',
        )
        parser.add_argument('-w', '--writable', action='store_true')
        parser.add_argument('--env-policy', choices=ENV_POLICIES, default=None)
        parser.add_argument('--format', choices=['csv', 'json'], default='csv')
        parser.add_argument('-o', '--output', default=None, help='write the record here instead of stdout')
        parser.add_argument(
            '--append', action='store_true',
            help='add the record to an existing CSV written by earlier bench runs',
        )
        parser.add_argument('rootfs', help='unpacked image directory')
        parser.add_argument('workload', nargs=argparse.REMAINDER, help='-- CMD [ARGS...]')

    def config_flags(self, options):
        flags = super().config_flags(options)
        flags['DEFAULT_ENV_POLICY'] = options.get('env_policy')
        return flags

    def handle(self, *args, **options):
        workload = list(options['workload'])
        if workload[:1] == ['--']:
            workload = workload[1:]
        if not workload:
            raise CommandError("missing workload: bench ROOTFS -- CMD [ARGS...]", returncode=1)
        if options['repetitions'] < 1:
            raise CommandError("--repetitions must be at least 1", returncode=1)

        spec = ContainerSpec(
            rootfs=options['rootfs'],
            command=workload,
            binds=options['bind'],
            env_policy=self.config.default_env_policy,
            writable=options['writable'],
            site_bind_dirs=self.config.site_bind_dirs,
        )
        record = measure_pair(
            workload, spec,
            repetitions=options['repetitions'],
            pattern=options['pattern'],
            name=options['name'],
            sample_interval=self.config.memory_sample_interval,
        )

        if options['format'] == 'json':
            text = JSONRenderer().render(OverheadRecordSerializer(record).data).decode() + '\n'
        else:
            text = overhead_record_csv([record])
        output = Path(options['output']) if options['output'] else None
        if output and options['append'] and options['format'] == 'csv' and output.is_file() and output.stat().st_size:
            self.write_output(output, text.split('\n', 1)[1], append=True)
        elif output:
            self.write_output(output, text)
        else:
            self.stdout.write(text, ending='')
        self.stderr.write(overhead_report([record], threshold=self.config.overhead_threshold).verdict)
