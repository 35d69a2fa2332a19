"""
Render launch plans as shell text: a single-node command line, an mpirun
line and a Slurm batch script. The MPI launcher always wraps the runtime,
never the reverse, so each rank is one container.
"""
import logging
import shlex

from django.template.loader import render_to_string

from .exceptions import PlanMismatch
from .models import LaunchTools

logger = logging.getLogger(__name__)

DEFAULT_TOOLS = LaunchTools()


def format_walltime(walltime):
    """Slurm's [D-]HH:MM:SS"""
    total = int(walltime.total_seconds())
    days, rest = divmod(total, 86400)
    hours, rest = divmod(rest, 3600)
    minutes, seconds = divmod(rest, 60)
    clock = f"{hours:02d}:{minutes:02d}:{seconds:02d}"
    return f"{days}-{clock}" if days else clock


def runtime_words(plan, tools):
    return [*tools.runtime_program, 'run', plan.container, '--', *plan.command]


def render_single_node(plan, tools=DEFAULT_TOOLS):
    """
    One container on one node with the thread count set in its environment,
    e.g. ``OMP_NUM_THREADS=96 udss run tf -- python train.py``.

    Raises:
        PlanMismatch: more than one node, or threads do not divide evenly
    """
    if plan.nodes != 1:
        raise PlanMismatch(f"A single-node command line cannot run on {plan.nodes} nodes; use mpi or slurm")
    return f"{tools.thread_env_var}={plan.threads_per_rank} {shlex.join(runtime_words(plan, tools))}"


def render_mpi(plan, tools=DEFAULT_TOOLS):
    """
    ``mpirun -n <nodes x ranks_per_node> [flags] udss run <container> -- <command>``

    Raises:
        PlanMismatch: threads do not divide evenly
    """
    threads = plan.threads_per_rank
    logger.debug(f"mpi: {plan.total_ranks} ranks x {threads} threads")
    words = [tools.mpirun, '-n', str(plan.total_ranks), *tools.mpirun_flags, *runtime_words(plan, tools)]
    return shlex.join(words)


def render_slurm(plan, tools=DEFAULT_TOOLS):
    """
    Batch script for the plan. A single rank is started directly, anything
    larger through render_mpi. Identical plans give identical text.

    Raises:
        PlanMismatch: threads do not divide evenly
    """
    threads = plan.threads_per_rank
    launch_line = render_single_node(plan, tools) if plan.total_ranks == 1 else render_mpi(plan, tools)
    directives = []
    if plan.partition:
        directives.append(f"--partition={plan.partition}")
    if plan.account:
        directives.append(f"--account={plan.account}")
    context = {
        'job_name': plan.job_name,
        'nodes': plan.nodes,
        'ranks_per_node': plan.ranks_per_node,
        'threads_per_rank': threads,
        'walltime': format_walltime(plan.walltime),
        'extra_directives': directives,
        'module_name': shlex.quote(tools.module_name),
        'thread_env_var': tools.thread_env_var,
        'launch_line': launch_line,
    }
    logger.debug(f"rendering Slurm script for {plan.total_ranks} ranks x {threads} threads")
    return render_to_string('launcher/slurm_job.sh', context)
