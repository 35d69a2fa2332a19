import argparse

from django.core.management.base import CommandError

from launcher.models import LaunchTools
from launcher.render import render_mpi, render_single_node, render_slurm
from launcher.serializers import LaunchPlanSerializer
from udss.command import UDSSCommand

RENDERERS = {
    'cmdline': render_single_node,
    'mpi': render_mpi,
    'slurm': render_slurm,
}

PLAN_FIELDS = (
    'nodes', 'ranks_per_node', 'cores', 'smt', 'container', 'command',
    'job_name', 'walltime', 'partition', 'account',
)


class Command(UDSSCommand):
    help = (
        'Generate launch lines and Slurm batch scripts for one MPI rank per node '
        'with threads filling the hyperthreaded cores. Nothing is submitted.'
    )

    def add_arguments(self, parser):
        actions = parser.add_subparsers(dest='action', required=True, metavar='plan')
        plan = actions.add_parser(
            'plan', help='render a launch plan',
            description='e.g. launch plan --nodes 32 --cores 48 --smt 2 --container /tmp/tf --emit slurm -- python train.py',
        )
        plan.add_argument('--nodes', type=int, required=True)
        plan.add_argument('--ranks-per-node', type=int, default=None)
        plan.add_argument('--cores', type=int, required=True, help='physical cores per node')
        plan.add_argument('--smt', type=int, default=None, help='hardware threads per core (default 1)')
        plan.add_argument('--container', required=True, help='unpacked rootfs path on the compute nodes')
        plan.add_argument('--emit', choices=sorted(RENDERERS), default='cmdline')
        plan.add_argument('--job-name', default=None)
        plan.add_argument('--walltime', default=None, help='Slurm time limit, e.g. 02:00:00 or 1-00:00:00')
        plan.add_argument('--partition', default=None)
        plan.add_argument('--account', default=None)
        plan.add_argument('-o', '--output', default=None, help='write to this file instead of stdout')
        plan.add_argument('command', nargs=argparse.REMAINDER, help='-- CMD [ARGS...]')

    def handle(self, *args, **options):
        command = list(options['command'])
        if command[:1] == ['--']:
            command = command[1:]
        data = {key: options.get(key) for key in PLAN_FIELDS if options.get(key) is not None}
        data['command'] = command

        serializer = LaunchPlanSerializer(data=data)
        if not serializer.is_valid():
            details = '; '.join(
                f"{key}: {' '.join(str(m) for m in messages)}" for key, messages in serializer.errors.items()
            )
            raise CommandError(f"Invalid plan: {details}", returncode=1)
        plan = serializer.save()

        text = RENDERERS[options['emit']](plan, LaunchTools.from_config(self.config))
        if not text.endswith('\n'):
            text += '\n'
        if options['output']:
            self.write_output(options['output'], text, mode=0o755 if options['emit'] == 'slurm' else None)
        else:
            self.stdout.write(text, ending='')
