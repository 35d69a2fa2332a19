"""
Scaling and overhead arithmetic. Pure functions over records.
"""
import logging

from .exceptions import DuplicateNodeCount, InvalidRecord, MissingBaseline, NoMeasurements
from .models import OverheadReport, OverheadRow, ScalingReport, ScalingRow

logger = logging.getLogger(__name__)

DEFAULT_OVERHEAD_THRESHOLD = 0.02


def scaling_report(series, baseline_nodes=None):
    """
    Speedup and parallel efficiency of each point relative to a baseline.

    speedup(n) = T(baseline) / T(n); efficiency(n) = speedup(n) / (n / baseline).

    Args:
        series: iterable of ScalingRecord
        baseline_nodes: node count to normalize against (default: the smallest)

    Returns:
        ScalingReport with rows sorted by node count

    Raises:
        MissingBaseline, DuplicateNodeCount, InvalidRecord
    """
    records = sorted(series, key=lambda record: record.nodes)
    seen = set()
    for record in records:
        if record.nodes < 1 or not record.epoch_time_s > 0:
            raise InvalidRecord(f"Invalid scaling point: {record.nodes} nodes, {record.epoch_time_s} s per epoch")
        if record.nodes in seen:
            raise DuplicateNodeCount(f"Node count {record.nodes} appears more than once")
        seen.add(record.nodes)
    if not records:
        raise MissingBaseline("Empty scaling series")
    if baseline_nodes is None:
        baseline_nodes = records[0].nodes
    baseline = next((record for record in records if record.nodes == baseline_nodes), None)
    if baseline is None:
        raise MissingBaseline(
            f"Baseline of {baseline_nodes} nodes not in the series ({', '.join(str(n) for n in sorted(seen))})"
        )

    rows = []
    for record in records:
        if record.nodes == baseline_nodes:
            speedup = efficiency = linear = 1.0
        else:
            speedup = baseline.epoch_time_s / record.epoch_time_s
            linear = record.nodes / baseline_nodes
            efficiency = (baseline.epoch_time_s * baseline_nodes) / (record.epoch_time_s * record.nodes)
        rows.append(ScalingRow(
            nodes=record.nodes,
            epoch_time_s=record.epoch_time_s,
            speedup=speedup,
            efficiency=efficiency,
            linear_speedup=linear,
        ))
        logger.debug(f"{record.nodes} nodes: speedup {speedup:.4f}, efficiency {efficiency:.4f}")
    return ScalingReport(baseline_nodes=baseline_nodes, rows=tuple(rows))


def overhead_report(records, threshold=DEFAULT_OVERHEAD_THRESHOLD):
    """
    Relative throughput change and memory cost of running in the container.

    Args:
        records: iterable of OverheadRecord
        threshold: |throughput_delta| above this marks a row significant

    Returns:
        OverheadReport

    Raises:
        NoMeasurements: no record has a throughput pair or a memory pair
    """
    rows = []
    for record in records:
        if not (record.has_throughput or record.has_memory):
            logger.warning(f"{record.benchmark_name}: no with/without pair, skipped")
            continue
        delta = None
        if record.has_throughput:
            if record.throughput_without == 0:
                raise NoMeasurements(f"{record.benchmark_name}: zero native throughput")
            delta = (record.throughput_with - record.throughput_without) / record.throughput_without
        mem_delta = None
        if record.has_memory:
            mem_delta = record.free_mem_without_gb - record.free_mem_with_gb
        rows.append(OverheadRow(
            benchmark_name=record.benchmark_name,
            throughput_delta=delta,
            mem_delta_gb=mem_delta,
            significant=delta is not None and abs(delta) > threshold,
        ))
    if not rows:
        raise NoMeasurements("No record has both a with and a without measurement")
    return OverheadReport(threshold=threshold, rows=tuple(rows))
