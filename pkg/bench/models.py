"""
Measurement records and the reports computed from them.
"""
from dataclasses import dataclass


@dataclass(frozen=True)
class ScalingRecord:
    """Time per epoch measured on a number of nodes"""

    nodes: int
    epoch_time_s: float


@dataclass(frozen=True)
class ScalingRow:
    nodes: int
    epoch_time_s: float
    speedup: float
    efficiency: float
    # n / baseline, the ideal speedup
    linear_speedup: float


@dataclass(frozen=True)
class ScalingReport:
    baseline_nodes: int
    rows: tuple

    def row(self, nodes):
        return next(row for row in self.rows if row.nodes == nodes)


@dataclass(frozen=True)
class OverheadRecord:
    """
    One benchmark measured with and without the container. Either pair may
    be missing when only throughput or only memory was measured.
    """

    benchmark_name: str
    throughput_with: float | None = None
    throughput_without: float | None = None
    free_mem_with_gb: float | None = None
    free_mem_without_gb: float | None = None

    @property
    def has_throughput(self):
        return self.throughput_with is not None and self.throughput_without is not None

    @property
    def has_memory(self):
        return self.free_mem_with_gb is not None and self.free_mem_without_gb is not None


@dataclass(frozen=True)
class OverheadRow:
    benchmark_name: str
    # (with - without) / without
    throughput_delta: float | None
    # free_without - free_with; positive when the container used memory
    mem_delta_gb: float | None
    significant: bool


@dataclass(frozen=True)
class OverheadReport:
    threshold: float
    rows: tuple

    def row(self, benchmark_name):
        return next(row for row in self.rows if row.benchmark_name == benchmark_name)

    @property
    def significant(self):
        return any(row.significant for row in self.rows)

    @property
    def verdict(self):
        if not self.significant:
            return f"no significant overhead (threshold {self.threshold:.1%})"
        names = ', '.join(row.benchmark_name for row in self.rows if row.significant)
        return f"overhead above {self.threshold:.1%}: {names}"
