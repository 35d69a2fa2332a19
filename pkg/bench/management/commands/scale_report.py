from bench.analysis import scaling_report
from bench.emit import (
    parse_scaling_csv, plot_data_csv, read_input, scaling_plot_pdf, scaling_report_csv,
    scaling_report_json,
)
from udss.command import UDSSCommand, writing

FORMATTERS = {
    'csv': scaling_report_csv,
    'json': scaling_report_json,
}


class Command(UDSSCommand):
    help = (
        'Compute speedup and parallel efficiency from a nodes,epoch_time_s CSV, '
        'relative to a baseline node count.'
    )

    def add_arguments(self, parser):
        parser.add_argument('series', help="CSV with header nodes,epoch_time_s ('-' for stdin)")
        parser.add_argument(
            '--baseline', type=int, default=None, metavar='NODES',
            help='node count to normalize against (default: the smallest in the series)',
        )
        parser.add_argument('--format', choices=sorted(FORMATTERS), default='csv')
        parser.add_argument('-o', '--output', default=None, help='write the report here instead of stdout')
        parser.add_argument(
            '--plot-data', default=None, metavar='PATH',
            help='also write nodes,measured_speedup,linear_speedup for plotting',
        )
        parser.add_argument('--pdf', default=None, metavar='PATH', help='also draw the speedup plot as PDF')
        parser.add_argument('--title', default='Scaling', help='PDF title')

    def handle(self, *args, **options):
        records = parse_scaling_csv(read_input(options['series']), where=options['series'])
        report = scaling_report(records, baseline_nodes=options['baseline'])

        text = FORMATTERS[options['format']](report)
        if options['output']:
            self.write_output(options['output'], text)
        else:
            self.stdout.write(text, ending='')
        if options['plot_data']:
            self.write_output(options['plot_data'], plot_data_csv(report))
        if options['pdf']:
            with writing(options['pdf']) as pdf:
                scaling_plot_pdf(report, pdf, title=options['title'])
