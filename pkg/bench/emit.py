"""
Reading measurement CSVs and writing reports as CSV, JSON, plot data and PDF.

Floats are written with repr precision so that parsing an emitted report
gives back an equal report.
"""
import csv
import io
import json
import logging
import sys
from pathlib import Path

from rest_framework.renderers import JSONRenderer

from .exceptions import InvalidRecord
from .serializers import (
    OverheadRecordSerializer, OverheadReportSerializer, ScalingRecordSerializer,
    ScalingReportSerializer,
)

logger = logging.getLogger(__name__)

SCALING_INPUT_COLUMNS = ['nodes', 'epoch_time_s']
OVERHEAD_INPUT_COLUMNS = ['benchmark', 'tp_with', 'tp_without', 'mem_with', 'mem_without']
SCALING_REPORT_COLUMNS = ['nodes', 'epoch_time_s', 'speedup', 'efficiency', 'linear_speedup', 'baseline_nodes']
OVERHEAD_REPORT_COLUMNS = ['benchmark', 'throughput_delta', 'mem_delta_gb', 'significant', 'threshold']
PLOT_COLUMNS = ['nodes', 'measured_speedup', 'linear_speedup']


def _errors(errors):
    return '; '.join(
        f"{key}: {' '.join(str(m) for m in messages)}"
        for key, messages in (errors.items() if isinstance(errors, dict) else enumerate(errors))
    )


def _validated(serializer_class, data, where):
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise InvalidRecord(f"{where}: {_errors(serializer.errors)}")
    return serializer.save()


def _rows(text, columns, where):
    reader = csv.DictReader(io.StringIO(text), skipinitialspace=True)
    header = [name.strip() for name in reader.fieldnames or []]
    missing = [column for column in columns if column not in header]
    if missing:
        raise InvalidRecord(f"{where}: missing column(s) {', '.join(missing)}; expected {','.join(columns)}")
    reader.fieldnames = header
    for line, row in enumerate(reader, start=2):
        row = {key: (row.get(key) or '').strip() for key in columns}
        if any(row.values()):
            yield line, row


def parse_scaling_csv(text, where='scaling CSV'):
    """`nodes,epoch_time_s` rows -> list of ScalingRecord"""
    return [
        _validated(ScalingRecordSerializer, row, f"{where} line {line}")
        for line, row in _rows(text, SCALING_INPUT_COLUMNS, where)
    ]


def parse_overhead_csv(text, where='overhead CSV'):
    """`benchmark,tp_with,tp_without,mem_with,mem_without` rows -> list of OverheadRecord"""
    return [
        _validated(OverheadRecordSerializer, row, f"{where} line {line}")
        for line, row in _rows(text, OVERHEAD_INPUT_COLUMNS, where)
    ]


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return repr(value) if isinstance(value, float) else str(value)


def _csv(columns, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return out.getvalue()


def scaling_report_csv(report):
    return _csv(SCALING_REPORT_COLUMNS, (
        (row.nodes, row.epoch_time_s, row.speedup, row.efficiency, row.linear_speedup, report.baseline_nodes)
        for row in report.rows
    ))


def overhead_report_csv(report):
    return _csv(OVERHEAD_REPORT_COLUMNS, (
        (row.benchmark_name, row.throughput_delta, row.mem_delta_gb, row.significant, report.threshold)
        for row in report.rows
    ))


def overhead_record_csv(records):
    return _csv(OVERHEAD_INPUT_COLUMNS, (
        (r.benchmark_name, r.throughput_with, r.throughput_without, r.free_mem_with_gb, r.free_mem_without_gb)
        for r in records
    ))


def plot_data_csv(report):
    """The measured and the linear speedup curve, one row per node count"""
    return _csv(PLOT_COLUMNS, ((row.nodes, row.speedup, row.linear_speedup) for row in report.rows))


def report_json(serializer_class, report):
    return JSONRenderer().render(serializer_class(report).data).decode() + '\n'


def scaling_report_json(report):
    return report_json(ScalingReportSerializer, report)


def overhead_report_json(report):
    return report_json(OverheadReportSerializer, report)


def parse_scaling_report_csv(text):
    rows = list(_rows(text, SCALING_REPORT_COLUMNS, 'scaling report'))
    if not rows:
        raise InvalidRecord("scaling report: no rows")
    baselines = {row['baseline_nodes'] for _, row in rows}
    if len(baselines) != 1:
        raise InvalidRecord(f"scaling report: inconsistent baseline_nodes {sorted(baselines)}")
    data = {
        'baseline_nodes': baselines.pop(),
        'rows': [{key: value for key, value in row.items() if key != 'baseline_nodes'} for _, row in rows],
    }
    return _validated(ScalingReportSerializer, data, 'scaling report')


def parse_overhead_report_csv(text):
    rows = list(_rows(text, OVERHEAD_REPORT_COLUMNS, 'overhead report'))
    if not rows:
        raise InvalidRecord("overhead report: no rows")
    thresholds = {row['threshold'] for _, row in rows}
    if len(thresholds) != 1:
        raise InvalidRecord(f"overhead report: inconsistent threshold {sorted(thresholds)}")
    data = {
        'threshold': thresholds.pop(),
        'rows': [
            {
                'benchmark_name': row['benchmark'],
                'throughput_delta': row['throughput_delta'],
                'mem_delta_gb': row['mem_delta_gb'],
                'significant': row['significant'],
            }
            for _, row in rows
        ],
    }
    return _validated(OverheadReportSerializer, data, 'overhead report')


def parse_report_json(serializer_class, text):
    try:
        data = json.loads(text)
    except ValueError as e:
        raise InvalidRecord(f"Not a JSON report: {e}") from e
    return _validated(serializer_class, data, 'JSON report')


def parse_scaling_report_json(text):
    return parse_report_json(ScalingReportSerializer, text)


def parse_overhead_report_json(text):
    return parse_report_json(OverheadReportSerializer, text)


def scaling_plot_pdf(report, path, title='Scaling'):
    """
    One-page PDF: measured speedup against the linear reference, and the
    table of speedups and efficiencies.
    """
    from reportlab.graphics.charts.legends import LineLegend
    from reportlab.graphics.charts.lineplots import LinePlot
    from reportlab.graphics.shapes import Drawing
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.styles import getSampleStyleSheet
    from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

    measured = [(row.nodes, row.speedup) for row in report.rows]
    linear = [(row.nodes, row.linear_speedup) for row in report.rows]

    drawing = Drawing(420, 280)
    plot = LinePlot()
    plot.x, plot.y = 50, 50
    plot.width, plot.height = 340, 200
    plot.data = [measured, linear]
    plot.lines[0].strokeColor = colors.HexColor('#1f77b4')
    plot.lines[1].strokeColor = colors.HexColor('#ff7f0e')
    plot.lines[1].strokeDashArray = (4, 2)
    plot.xValueAxis.valueMin = 0
    plot.yValueAxis.valueMin = 0
    drawing.add(plot)

    legend = LineLegend()
    legend.x, legend.y = 60, 270
    legend.colorNamePairs = [
        (colors.HexColor('#1f77b4'), 'measured speedup'),
        (colors.HexColor('#ff7f0e'), 'linear scaling'),
    ]
    drawing.add(legend)

    styles = getSampleStyleSheet()
    table_data = [['Nodes', 'Time per epoch [s]', 'Speedup', 'Efficiency']] + [
        [str(row.nodes), f"{row.epoch_time_s:g}", f"{row.speedup:.4f}", f"{row.efficiency:.4f}"]
        for row in report.rows
    ]
    table = Table(table_data)
    table.setStyle(TableStyle([
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 10),
        ('ALIGN', (0, 0), (-1, -1), 'RIGHT'),
        ('LINEBELOW', (0, 0), (-1, 0), 0.5, colors.HexColor('#333333')),
        ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
    ]))

    doc = SimpleDocTemplate(str(path), pagesize=A4, title=title)
    doc.build([
        Paragraph(title, styles['Heading1']),
        Paragraph(f"Baseline: {report.baseline_nodes} nodes", styles['Normal']),
        Spacer(1, 12),
        drawing,
        Spacer(1, 12),
        table,
    ])
    logger.info(f"[SUCCESS] wrote scaling plot {path}")
    return path


def read_input(path):
    """Text of a CSV file, '-' meaning stdin"""
    if str(path) == '-':
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as e:
        raise InvalidRecord(f"Cannot read {path}: {e.strerror}") from e
