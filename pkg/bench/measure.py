"""
Run one workload natively and in the container and record throughput and
free memory for both sides.
"""
import logging
import re
import statistics
import subprocess
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import psutil

from runtime.container import start

from .exceptions import BenchError, PatternNotFound, WorkloadFailed
from .models import OverheadRecord

logger = logging.getLogger(__name__)

DEFAULT_THROUGHPUT_PATTERN = r'throughput:\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)'
DEFAULT_REPETITIONS = 3
DEFAULT_SAMPLE_INTERVAL = 0.05

# Free memory is reported in GiB, as `free -g` does.
BYTES_PER_GB = 1024 ** 3


def compile_pattern(pattern):
    """The throughput regex must have exactly one capture group"""
    try:
        regex = re.compile(pattern)
    except re.error as e:
        raise BenchError(f"Invalid throughput pattern {pattern!r}: {e}") from e
    if regex.groups != 1:
        raise BenchError(f"Throughput pattern {pattern!r} must have exactly one capture group, has {regex.groups}")
    return regex


def parse_throughput(regex, output, where):
    """Last match wins; frameworks print a running figure per step"""
    matches = regex.findall(output)
    if not matches:
        raise PatternNotFound(f"{where}: no match for {regex.pattern!r} in the workload output")
    try:
        return float(matches[-1])
    except ValueError as e:
        raise PatternNotFound(f"{where}: {matches[-1]!r} is not a number") from e


def _lowest_available_memory(process, interval):
    """Poll until the process ends; returns (exit status, lowest free bytes seen)"""
    lowest = psutil.virtual_memory().available
    while process.poll() is None:
        time.sleep(interval)
        lowest = min(lowest, psutil.virtual_memory().available)
    return process.returncode, lowest


def _run_native(workload, output, interval):
    try:
        process = subprocess.Popen(workload, stdout=output, stdin=subprocess.DEVNULL)
    except OSError as e:
        raise WorkloadFailed(f"Cannot start {workload[0]} natively: {e}", status=127) from e
    status, lowest = _lowest_available_memory(process, interval)
    # Popen reports death by signal N as -N
    return (128 - status if status < 0 else status), lowest


def _run_contained(workload, spec, output, interval):
    container = start(replace(spec, command=tuple(workload), stdout=output.fileno()), forward_signals=False)
    return _lowest_available_memory(container, interval)


def _one_run(workload, spec, regex, interval, contained):
    side = 'container' if contained else 'native'
    with tempfile.TemporaryFile() as output:
        started = time.monotonic()
        if contained:
            status, lowest = _run_contained(workload, spec, output, interval)
        else:
            status, lowest = _run_native(workload, output, interval)
        elapsed = time.monotonic() - started
        output.seek(0)
        text = output.read().decode(errors='replace')
    if status != 0:
        raise WorkloadFailed(
            f"{workload[0]} exited with status {status} ({side})", status=status, contained=contained,
        )
    throughput = parse_throughput(regex, text, f"{workload[0]} ({side})")
    logger.info(f"{side}: {throughput:g} in {elapsed:.2f}s, lowest free memory {lowest / BYTES_PER_GB:.2f} GB")
    return throughput, lowest


def measure_pair(workload, spec, repetitions=DEFAULT_REPETITIONS, pattern=DEFAULT_THROUGHPUT_PATTERN,
                 name=None, sample_interval=DEFAULT_SAMPLE_INTERVAL):
    """
    Measure one workload without and then with the container.

    All native repetitions run before the containerized ones, one process
    at a time. Each side reports the median throughput and the median of
    the per-run lowest free system memory.

    Args:
        workload: argv list; must exist on the host and in spec.rootfs
        spec: ContainerSpec giving rootfs, binds and policies; its command
            is replaced by the workload
        repetitions: runs per side, >= 1
        pattern: regex with one capture group around the throughput figure
        name: benchmark name (default: the workload's basename)
        sample_interval: seconds between free-memory samples

    Returns:
        OverheadRecord

    Raises:
        WorkloadFailed, PatternNotFound, RuntimeFailure
    """
    workload = [str(word) for word in workload]
    if not workload:
        raise BenchError("Empty workload")
    if repetitions < 1:
        raise BenchError(f"Repetitions must be at least 1, got {repetitions}")
    regex = compile_pattern(pattern)
    name = name or Path(workload[0]).name

    sides = {}
    for contained in (False, True):
        runs = []
        for repetition in range(1, repetitions + 1):
            logger.info(f"{name}: {'container' if contained else 'native'} run {repetition}/{repetitions}")
            runs.append(_one_run(workload, spec, regex, sample_interval, contained))
        sides[contained] = (
            statistics.median(throughput for throughput, _ in runs),
            statistics.median(lowest for _, lowest in runs) / BYTES_PER_GB,
        )

    record = OverheadRecord(
        benchmark_name=name,
        throughput_with=sides[True][0],
        throughput_without=sides[False][0],
        free_mem_with_gb=sides[True][1],
        free_mem_without_gb=sides[False][1],
    )
    logger.info(f"{name}: {record.throughput_with:g} with, {record.throughput_without:g} without")
    return record

