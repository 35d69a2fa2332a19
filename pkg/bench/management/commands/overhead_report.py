from bench.analysis import overhead_report
from bench.emit import overhead_report_csv, overhead_report_json, parse_overhead_csv, read_input
from udss.command import UDSSCommand

FORMATTERS = {
    'csv': overhead_report_csv,
    'json': overhead_report_json,
}


class Command(UDSSCommand):
    help = (
        'Compare throughput and free memory with and without the container from a '
        'benchmark,tp_with,tp_without,mem_with,mem_without CSV.'
    )

    def add_arguments(self, parser):
        parser.add_argument('records', help="overhead CSV ('-' for stdin), e.g. as written by bench")
        parser.add_argument(
            '--threshold', type=float, default=None,
            help='relative throughput change counted as significant (default 0.02)',
        )
        parser.add_argument('--format', choices=sorted(FORMATTERS), default='csv')
        parser.add_argument('-o', '--output', default=None, help='write the report here instead of stdout')

    def config_flags(self, options):
        flags = super().config_flags(options)
        flags['OVERHEAD_THRESHOLD'] = options.get('threshold')
        return flags

    def handle(self, *args, **options):
        records = parse_overhead_csv(read_input(options['records']), where=options['records'])
        report = overhead_report(records, threshold=self.config.overhead_threshold)

        text = FORMATTERS[options['format']](report)
        if options['output']:
            self.write_output(options['output'], text)
        else:
            self.stdout.write(text, ending='')
        self.stderr.write(report.verdict)
