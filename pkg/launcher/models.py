from dataclasses import dataclass
from datetime import timedelta

from .exceptions import PlanMismatch


@dataclass(frozen=True)
class LaunchTools:
    """Site-specific names the rendered lines use; see GlobalConfig"""

    runtime_program: tuple = ('udss',)
    mpirun: str = 'mpirun'
    mpirun_flags: tuple = ()
    thread_env_var: str = 'OMP_NUM_THREADS'
    module_name: str = 'udss'

    @classmethod
    def from_config(cls, config):
        return cls(
            runtime_program=tuple(config.runtime_program),
            mpirun=config.mpirun,
            mpirun_flags=tuple(config.mpirun_flags),
            thread_env_var=config.thread_env_var,
            module_name=config.module_name,
        )


@dataclass(frozen=True)
class LaunchPlan:
    """
    Hybrid MPI + threads layout: ranks_per_node ranks on each of nodes
    nodes, each rank running threads on its share of the hardware threads.
    """

    nodes: int
    ranks_per_node: int
    physical_cores_per_node: int
    threads_per_core: int
    container: str
    command: tuple
    job_name: str = 'udss'
    walltime: timedelta = timedelta(hours=1)
    partition: str | None = None
    account: str | None = None

    def __post_init__(self):
        object.__setattr__(self, 'command', tuple(self.command))
        for name in ('nodes', 'ranks_per_node', 'physical_cores_per_node', 'threads_per_core'):
            if getattr(self, name) < 1:
                raise PlanMismatch(f"{name} must be positive, got {getattr(self, name)}")
        if not self.command:
            raise PlanMismatch("The plan has no command")
        if self.walltime <= timedelta(0):
            raise PlanMismatch(f"Walltime must be positive, got {self.walltime}")

    @property
    def total_ranks(self):
        return self.nodes * self.ranks_per_node

    @property
    def hardware_threads_per_node(self):
        return self.physical_cores_per_node * self.threads_per_core

    @property
    def threads_per_rank(self):
        """Hardware threads per rank; raises PlanMismatch unless the division is exact"""
        threads, remainder = divmod(self.hardware_threads_per_node, self.ranks_per_node)
        if remainder or not threads:
            raise PlanMismatch(
                f"{self.hardware_threads_per_node} hardware threads per node "
                f"({self.physical_cores_per_node} cores x {self.threads_per_core}) "
                f"do not divide evenly among {self.ranks_per_node} ranks"
            )
        return threads
