import io
import math
import os
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from runtime.models import DEPTH_VARIABLE, ContainerSpec
from runtime.probe import probe_support
from runtime.testing import toolchain_binds, toolchain_rootfs
from udss.cli import dispatch

from .analysis import overhead_report, scaling_report
from .emit import (
    overhead_report_csv, overhead_report_json, parse_overhead_csv, parse_overhead_report_csv,
    parse_overhead_report_json, parse_scaling_csv, parse_scaling_report_csv,
    parse_scaling_report_json, plot_data_csv, scaling_report_csv, scaling_report_json,
)
from .exceptions import (
    BenchError, DuplicateNodeCount, InvalidRecord, MissingBaseline, NoMeasurements,
    PatternNotFound, WorkloadFailed,
)
from .measure import compile_pattern, measure_pair, parse_throughput
from .models import OverheadRecord, ScalingRecord

# Time per epoch on 4 to 32 hyperthreaded nodes
EPOCH_TIMES = {4: 3806, 8: 1910, 16: 1001, 32: 504}

EPOCH_CSV = "nodes,epoch_time_s\n4,3806\n8,1910\n16,1001\n32,504\n"

OVERHEAD_CSV = (
    "benchmark,tp_with,tp_without,mem_with,mem_without\n"
    "AlexNet,1968,1973,331.29,331.33\n"
    "ResNet-50,75,74,324.47,324.89\n"
)


def epoch_series(times=EPOCH_TIMES):
    return [ScalingRecord(nodes, time) for nodes, time in times.items()]


def sign(value):
    return (value > 0) - (value < 0)


positive_times = st.floats(min_value=1e-3, max_value=1e6, allow_nan=False, allow_infinity=False)
series_maps = st.dictionaries(st.integers(min_value=1, max_value=1024), positive_times, min_size=1, max_size=12)
throughputs = st.floats(min_value=0.01, max_value=1e6, allow_nan=False, allow_infinity=False)
memories = st.one_of(st.none(), st.floats(min_value=0, max_value=1e4, allow_nan=False, allow_infinity=False))
benchmark_names = st.from_regex(r'[A-Za-z][A-Za-z0-9_-]{0,15}', fullmatch=True)


@st.composite
def overhead_records(draw):
    names = draw(st.lists(benchmark_names, min_size=1, max_size=6, unique=True))
    records = []
    for name in names:
        mem_with = draw(memories)
        records.append(OverheadRecord(
            benchmark_name=name,
            throughput_with=draw(throughputs),
            throughput_without=draw(throughputs),
            free_mem_with_gb=mem_with,
            free_mem_without_gb=None if mem_with is None else draw(memories.filter(lambda m: m is not None)),
        ))
    return records


class ScalingReportTests(SimpleTestCase):

    def test_epoch_series_from_four_nodes(self):
        report = scaling_report(epoch_series(), baseline_nodes=4)
        speedups = [row.speedup for row in report.rows]
        efficiencies = [row.efficiency for row in report.rows]
        for measured, expected in zip(speedups, [1, 1.99267, 3.80220, 7.55159]):
            self.assertAlmostEqual(measured, expected, places=4)
        for measured, expected in zip(efficiencies, [1, 0.99634, 0.95055, 0.94395]):
            self.assertAlmostEqual(measured, expected, places=4)
        self.assertEqual([row.linear_speedup for row in report.rows], [1.0, 2.0, 4.0, 8.0])

    def test_baseline_defaults_to_smallest(self):
        self.assertEqual(scaling_report(epoch_series()).baseline_nodes, 4)

    def test_single_point(self):
        row = scaling_report([ScalingRecord(4, 3806)], baseline_nodes=4).row(4)
        self.assertEqual((row.speedup, row.efficiency), (1.0, 1.0))

    def test_unsorted_input(self):
        report = scaling_report(list(reversed(epoch_series())))
        self.assertEqual([row.nodes for row in report.rows], [4, 8, 16, 32])

    def test_missing_baseline(self):
        with self.assertRaises(MissingBaseline):
            scaling_report(epoch_series({8: 1910, 16: 1001}), baseline_nodes=4)
        with self.assertRaises(MissingBaseline):
            scaling_report([])

    def test_duplicate_node_count(self):
        with self.assertRaises(DuplicateNodeCount):
            scaling_report([ScalingRecord(4, 3806), ScalingRecord(4, 3800)])

    def test_non_positive_points_are_invalid(self):
        for bad in (ScalingRecord(8, 0.0), ScalingRecord(8, -1.5), ScalingRecord(0, 120.0)):
            with self.subTest(bad=bad), self.assertRaises(InvalidRecord):
                scaling_report([ScalingRecord(4, 3806), bad])

    @given(series_maps, st.data())
    def test_baseline_row_is_exactly_one(self, times, data):
        baseline = data.draw(st.sampled_from(sorted(times)))
        row = scaling_report(epoch_series(times), baseline_nodes=baseline).row(baseline)
        self.assertEqual((row.speedup, row.efficiency, row.linear_speedup), (1.0, 1.0, 1.0))

    @given(series_maps, st.floats(min_value=0.01, max_value=100))
    def test_scale_invariance(self, times, factor):
        report = scaling_report(epoch_series(times))
        scaled = scaling_report(epoch_series({n: t * factor for n, t in times.items()}))
        for row, scaled_row in zip(report.rows, scaled.rows):
            self.assertTrue(math.isclose(row.speedup, scaled_row.speedup, rel_tol=1e-9))
            self.assertTrue(math.isclose(row.efficiency, scaled_row.efficiency, rel_tol=1e-9))

    @given(st.sets(st.integers(min_value=1, max_value=512), min_size=1, max_size=10), positive_times)
    def test_linear_series_is_fully_efficient(self, node_counts, base_time):
        base = min(node_counts)
        report = scaling_report([ScalingRecord(n, base_time * base / n) for n in node_counts])
        for row in report.rows:
            self.assertAlmostEqual(row.efficiency, 1.0, places=9)


class OverheadReportTests(SimpleTestCase):

    def records(self):
        return parse_overhead_csv(OVERHEAD_CSV)

    def test_throughput_deltas(self):
        report = overhead_report(self.records())
        self.assertAlmostEqual(report.row('AlexNet').throughput_delta, -0.002534, places=6)
        self.assertAlmostEqual(report.row('ResNet-50').throughput_delta, 0.013514, places=5)
        self.assertFalse(report.significant)
        self.assertIn('no significant overhead', report.verdict)

    def test_memory_deltas(self):
        report = overhead_report(self.records())
        self.assertAlmostEqual(report.row('AlexNet').mem_delta_gb, 0.04, places=6)
        self.assertAlmostEqual(report.row('ResNet-50').mem_delta_gb, 0.42, places=6)

    def test_threshold_is_configurable(self):
        report = overhead_report(self.records(), threshold=0.01)
        self.assertTrue(report.row('ResNet-50').significant)
        self.assertFalse(report.row('AlexNet').significant)
        self.assertIn('ResNet-50', report.verdict)

    def test_memory_only_record(self):
        report = overhead_report([OverheadRecord('idle', free_mem_with_gb=10.0, free_mem_without_gb=10.5)])
        self.assertIsNone(report.row('idle').throughput_delta)
        self.assertEqual(report.row('idle').mem_delta_gb, 0.5)

    def test_no_measurements(self):
        with self.assertRaises(NoMeasurements):
            overhead_report([OverheadRecord('half', throughput_with=10.0)])
        with self.assertRaises(NoMeasurements):
            overhead_report([])

    @given(throughputs, throughputs)
    def test_swapping_sides_flips_the_sign(self, first, second):
        forward = overhead_report([OverheadRecord('x', throughput_with=first, throughput_without=second)])
        swapped = overhead_report([OverheadRecord('x', throughput_with=second, throughput_without=first)])
        self.assertEqual(
            sign(forward.row('x').throughput_delta), -sign(swapped.row('x').throughput_delta),
        )


class EmitTests(SimpleTestCase):

    def test_plot_data(self):
        lines = plot_data_csv(scaling_report(epoch_series())).splitlines()
        self.assertEqual(lines[0], 'nodes,measured_speedup,linear_speedup')
        self.assertEqual(lines[1], '4,1.0,1.0')
        self.assertEqual(lines[-1].split(',')[2], '8.0')

    def test_blank_cells_are_unmeasured(self):
        record, = parse_overhead_csv("benchmark,tp_with,tp_without,mem_with,mem_without\nidle,,,10,10.5\n")
        self.assertIsNone(record.throughput_with)
        self.assertEqual(record.free_mem_without_gb, 10.5)

    def test_bad_rows(self):
        with self.assertRaises(InvalidRecord):
            parse_scaling_csv("nodes,epoch_time_s\n4,-1\n")
        with self.assertRaises(InvalidRecord):
            parse_scaling_csv("nodes,seconds\n4,1\n")
        with self.assertRaises(InvalidRecord):
            parse_overhead_csv("benchmark,tp_with,tp_without,mem_with,mem_without\nx,fast,1,,\n")

    @settings(max_examples=50)
    @given(series_maps)
    def test_scaling_report_round_trip(self, times):
        report = scaling_report(epoch_series(times))
        self.assertEqual(parse_scaling_report_csv(scaling_report_csv(report)), report)
        self.assertEqual(parse_scaling_report_json(scaling_report_json(report)), report)

    @settings(max_examples=50)
    @given(overhead_records(), st.floats(min_value=0, max_value=1))
    def test_overhead_report_round_trip(self, records, threshold):
        report = overhead_report(records, threshold=threshold)
        self.assertEqual(parse_overhead_report_csv(overhead_report_csv(report)), report)
        self.assertEqual(parse_overhead_report_json(overhead_report_json(report)), report)


class ReportCommandTests(SimpleTestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def udss(self, *args):
        out, err = io.StringIO(), io.StringIO()
        status = dispatch(['udss', *args], stdout=out, stderr=err)
        return status, out.getvalue(), err.getvalue()

    def write(self, name, text):
        path = self.tmp / name
        path.write_text(text)
        return str(path)

    def test_scale_report(self):
        status, out, _ = self.udss('scale-report', '--baseline', '4', self.write('table.csv', EPOCH_CSV))
        self.assertEqual(status, 0)
        header, *rows = out.splitlines()
        self.assertEqual(header, 'nodes,epoch_time_s,speedup,efficiency,linear_speedup,baseline_nodes')
        self.assertAlmostEqual(float(rows[-1].split(',')[3]), 0.944, places=3)

    def test_scale_report_plot_files(self):
        plot, pdf = self.tmp / 'plot.csv', self.tmp / 'scaling.pdf'
        status, _, _ = self.udss(
            'scale-report', '--format', 'json', '--plot-data', str(plot), '--pdf', str(pdf),
            self.write('table.csv', EPOCH_CSV),
        )
        self.assertEqual(status, 0)
        self.assertTrue(plot.read_text().startswith('nodes,measured_speedup,linear_speedup\n'))
        self.assertEqual(pdf.read_bytes()[:5], b'%PDF-')

    def test_scale_report_missing_baseline_exits_2(self):
        status, _, err = self.udss('scale-report', '--baseline', '2', self.write('table.csv', EPOCH_CSV))
        self.assertEqual(status, 2)
        self.assertIn('Baseline of 2 nodes', err)

    def test_unwritable_outputs_exit_2(self):
        series = self.write('table.csv', EPOCH_CSV)
        target = self.tmp / 'missing' / 'report.csv'
        for flag in ('-o', '--plot-data'):
            with self.subTest(flag=flag):
                status, _, err = self.udss('scale-report', flag, str(target), series)
                self.assertEqual(status, 2)
                self.assertIn(f'Cannot write {target}', err)
        status, _, err = self.udss('overhead-report', '-o', str(target), self.write('overhead.csv', OVERHEAD_CSV))
        self.assertEqual(status, 2)
        self.assertIn(f'Cannot write {target}', err)
        self.assertFalse(target.parent.exists())

    def test_overhead_report(self):
        status, out, err = self.udss('overhead-report', self.write('overhead.csv', OVERHEAD_CSV))
        self.assertEqual(status, 0)
        self.assertTrue(out.startswith('benchmark,throughput_delta,mem_delta_gb,significant,threshold\n'))
        self.assertIn('no significant overhead', err)

    def test_overhead_threshold_from_environment(self):
        with mock.patch.dict(os.environ, {'UDSS_OVERHEAD_THRESHOLD': '0.01'}):
            status, _, err = self.udss('overhead-report', self.write('overhead.csv', OVERHEAD_CSV))
        self.assertEqual(status, 0)
        self.assertIn('overhead above 1.0%: ResNet-50', err)

    def test_bench_needs_a_workload(self):
        status, _, err = self.udss('bench', str(self.tmp))
        self.assertEqual(status, 1)
        self.assertIn('missing workload', err)

    def test_bench_native_failure_exits_2(self):
        status, _, err = self.udss('bench', '--repetitions', '1', str(self.tmp), '--', 'false')
        self.assertEqual(status, 2)
        self.assertIn('exited with status 1 (native)', err)


class ThroughputPatternTests(SimpleTestCase):

    def test_last_match_wins(self):
        regex = compile_pattern(r'throughput:\s*([0-9.]+)')
        self.assertEqual(parse_throughput(regex, 'throughput: 10\nthroughput: 12.5 img/s\n', 'w'), 12.5)

    def test_no_match(self):
        with self.assertRaises(PatternNotFound):
            parse_throughput(compile_pattern(r'rate=(\d+)'), 'done\n', 'w')

    def test_pattern_needs_one_group(self):
        with self.assertRaises(BenchError):
            compile_pattern(r'\d+')
        with self.assertRaises(BenchError):
            compile_pattern(r'(\d+) (\d+)')
        with self.assertRaises(BenchError):
            compile_pattern(r'(')


class MeasurePairNativeTests(SimpleTestCase):
    """Failures on the native side surface before any container starts"""

    def spec(self):
        return ContainerSpec(rootfs=tempfile.gettempdir(), command=['true'])

    def test_native_failure(self):
        with self.assertRaises(WorkloadFailed) as raised:
            measure_pair(['sh', '-c', 'exit 3'], self.spec(), repetitions=1)
        self.assertEqual(raised.exception.status, 3)
        self.assertFalse(raised.exception.contained)

    def test_missing_program(self):
        with self.assertRaises(WorkloadFailed) as raised:
            measure_pair(['/nonexistent/udss-workload'], self.spec(), repetitions=1)
        self.assertEqual(raised.exception.status, 127)

    def test_pattern_not_found(self):
        with self.assertRaises(PatternNotFound):
            measure_pair(['echo', 'nothing to see'], self.spec(), repetitions=1)

    def test_repetitions_must_be_positive(self):
        with self.assertRaises(BenchError):
            measure_pair(['true'], self.spec(), repetitions=0)


class MeasurePairTests(SimpleTestCase):
    """Native against contained runs; skipped without unprivileged user namespaces"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        report = probe_support()
        if not report.user_namespaces:
            raise unittest.SkipTest(f"No unprivileged user namespaces: {report.reason}")
        cls.tmp = Path(tempfile.mkdtemp())
        cls.rootfs = toolchain_rootfs(cls.tmp / 'rootfs')
        cls.host_depth = int(os.environ.get(DEPTH_VARIABLE, '0'))

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def spec(self):
        return ContainerSpec(rootfs=self.rootfs, command=['true'], binds=toolchain_binds())

    def workload(self, native_sleep, contained_sleep):
        """1000 images over the sleep; contained runs see a deeper nesting level"""
        script = (
            'start=$(date +%s%N); '
            f'if [ "${{{DEPTH_VARIABLE}:-0}}" -gt {self.host_depth} ]; '
            f'then sleep {contained_sleep}; else sleep {native_sleep}; fi; '
            'end=$(date +%s%N); '
            'echo "throughput: $((1000000000000 / (end - start))) img/s"'
        )
        return ['sh', '-c', script]

    def test_same_workload_shows_no_overhead(self):
        record = measure_pair(self.workload(0.3, 0.3), self.spec(), repetitions=3, name='sleep')
        self.assertEqual(record.benchmark_name, 'sleep')
        delta = overhead_report([record]).row('sleep').throughput_delta
        self.assertLess(abs(delta), 0.05)
        self.assertGreater(record.free_mem_with_gb, 0)
        self.assertGreater(record.free_mem_without_gb, 0)

    def test_injected_slowdown_is_detected(self):
        record = measure_pair(self.workload(0.5, 0.625), self.spec(), repetitions=3, name='slowed')
        delta = overhead_report([record]).row('slowed').throughput_delta
        self.assertGreater(delta, -0.22)
        self.assertLess(delta, -0.18)

    def test_contained_failure_carries_status(self):
        script = f'[ "${{{DEPTH_VARIABLE}:-0}}" -gt {self.host_depth} ] && exit 3; echo "throughput: 1"'
        with self.assertRaises(WorkloadFailed) as raised:
            measure_pair(['sh', '-c', script], self.spec(), repetitions=1)
        self.assertEqual(raised.exception.status, 3)
        self.assertTrue(raised.exception.contained)
