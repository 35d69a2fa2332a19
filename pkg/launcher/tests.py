import io
import os
import shlex
import tempfile
from datetime import timedelta
from pathlib import Path
from unittest import mock

from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from udss.cli import dispatch

from .exceptions import PlanMismatch
from .models import LaunchPlan, LaunchTools
from .render import format_walltime, render_mpi, render_single_node, render_slurm
from .serializers import LaunchPlanSerializer


def make_plan(**overrides):
    values = {
        'nodes': 4,
        'ranks_per_node': 1,
        'physical_cores_per_node': 48,
        'threads_per_core': 2,
        'container': 'my_container',
        'command': ['mpi_hello_world'],
        'job_name': 'tf-train',
        'walltime': timedelta(hours=2),
    }
    values.update(overrides)
    return LaunchPlan(**values)


FOUR_NODE_SCRIPT = """#!/bin/bash
#SBATCH --job-name=tf-train
#SBATCH --nodes=4
#SBATCH --ntasks-per-node=1
#SBATCH --cpus-per-task=96
#SBATCH --time=02:00:00

module load udss

export OMP_NUM_THREADS=96

mpirun -n 4 udss run my_container -- mpi_hello_world
"""


@st.composite
def plans(draw):
    cores = draw(st.integers(min_value=1, max_value=128))
    smt = draw(st.integers(min_value=1, max_value=4))
    divisors = [n for n in range(1, cores * smt + 1) if (cores * smt) % n == 0]
    return make_plan(
        nodes=draw(st.integers(min_value=1, max_value=64)),
        ranks_per_node=draw(st.sampled_from(divisors)),
        physical_cores_per_node=cores,
        threads_per_core=smt,
        command=draw(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=4)),
    )


class LaunchPlanTests(SimpleTestCase):

    def test_hyperthreaded_node_gives_96_threads(self):
        plan = make_plan(nodes=32)
        self.assertEqual(plan.total_ranks, 32)
        self.assertEqual(plan.threads_per_rank, 96)

    def test_unit_plan(self):
        plan = make_plan(nodes=1, physical_cores_per_node=1, threads_per_core=1)
        self.assertEqual(plan.threads_per_rank, 1)

    def test_inexact_division(self):
        with self.assertRaises(PlanMismatch):
            make_plan(ranks_per_node=5).threads_per_rank

    def test_non_positive_counts(self):
        with self.assertRaises(PlanMismatch):
            make_plan(nodes=0)
        with self.assertRaises(PlanMismatch):
            make_plan(command=[])


class RenderTests(SimpleTestCase):

    def test_single_node(self):
        plan = make_plan(nodes=1, command=['python', 'train.py', '--epochs', '5'])
        self.assertEqual(
            render_single_node(plan),
            'OMP_NUM_THREADS=96 udss run my_container -- python train.py --epochs 5',
        )

    def test_single_node_refuses_several_nodes(self):
        with self.assertRaises(PlanMismatch):
            render_single_node(make_plan(nodes=2))

    def test_mpi_line(self):
        self.assertEqual(render_mpi(make_plan()), 'mpirun -n 4 udss run my_container -- mpi_hello_world')
        self.assertEqual(
            render_mpi(make_plan(nodes=1)), 'mpirun -n 1 udss run my_container -- mpi_hello_world',
        )

    def test_mpi_line_with_site_tools(self):
        tools = LaunchTools(
            runtime_program=('/opt/udss/bin/udss',), mpirun='mpiexec',
            mpirun_flags=('-genv', 'I_MPI_DEBUG', '5'), thread_env_var='NUM_THREADS',
        )
        self.assertEqual(
            render_mpi(make_plan(command=['sh', '-c', 'echo $RANK']), tools),
            "mpiexec -n 4 -genv I_MPI_DEBUG 5 /opt/udss/bin/udss run my_container -- sh -c 'echo $RANK'",
        )

    def test_mpi_inexact_division(self):
        with self.assertRaises(PlanMismatch):
            render_mpi(make_plan(ranks_per_node=5))

    def test_slurm_golden(self):
        self.assertEqual(render_slurm(make_plan()), FOUR_NODE_SCRIPT)

    def test_slurm_optional_directives(self):
        script = render_slurm(make_plan(partition='general', account='pn72'))
        self.assertIn('#SBATCH --time=02:00:00\n#SBATCH --partition=general\n#SBATCH --account=pn72\n\n', script)

    def test_slurm_single_rank_uses_single_node_line(self):
        plan = make_plan(nodes=1)
        self.assertEqual(render_slurm(plan).splitlines()[-1], render_single_node(plan))

    def test_slurm_inexact_division(self):
        with self.assertRaises(PlanMismatch):
            render_slurm(make_plan(ranks_per_node=5))

    def test_walltime_format(self):
        self.assertEqual(format_walltime(timedelta(minutes=90)), '01:30:00')
        self.assertEqual(format_walltime(timedelta(days=1, hours=3, minutes=4, seconds=5)), '1-03:04:05')

    @settings(max_examples=200)
    @given(plans())
    def test_rank_and_thread_arithmetic(self, plan):
        words = shlex.split(render_mpi(plan))
        self.assertEqual(words[:3], ['mpirun', '-n', str(plan.nodes * plan.ranks_per_node)])
        self.assertEqual(words[3:5], ['udss', 'run'])
        self.assertEqual(words[words.index('--') + 1:], list(plan.command))
        self.assertEqual(
            plan.ranks_per_node * plan.threads_per_rank,
            plan.physical_cores_per_node * plan.threads_per_core,
        )

    @settings(max_examples=50)
    @given(plans())
    def test_slurm_is_deterministic(self, plan):
        self.assertEqual(render_slurm(plan), render_slurm(make_plan(**{
            field: getattr(plan, field) for field in plan.__dataclass_fields__
        })))


class LaunchPlanSerializerTests(SimpleTestCase):

    def plan(self, **data):
        values = {'nodes': 4, 'cores': 48, 'smt': 2, 'container': 'c', 'command': ['x']}
        values.update(data)
        serializer = LaunchPlanSerializer(data=values)
        serializer.is_valid(raise_exception=True)
        return serializer.save()

    def test_walltime_forms(self):
        self.assertEqual(self.plan(walltime='90').walltime, timedelta(minutes=90))
        self.assertEqual(self.plan(walltime='30:00').walltime, timedelta(minutes=30))
        self.assertEqual(self.plan(walltime='02:00:00').walltime, timedelta(hours=2))
        self.assertEqual(self.plan(walltime='1-12').walltime, timedelta(days=1, hours=12))
        self.assertEqual(self.plan(walltime='2-00:30:00').walltime, timedelta(days=2, minutes=30))
        self.assertEqual(self.plan(walltime='P1DT2H').walltime, timedelta(days=1, hours=2))

    def test_defaults(self):
        plan = self.plan()
        self.assertEqual(plan.ranks_per_node, 1)
        self.assertEqual(plan.walltime, timedelta(hours=1))
        self.assertIsNone(plan.partition)

    def test_rejects_bad_values(self):
        for data in ({'nodes': 0}, {'walltime': 'soon'}, {'walltime': '0'},
                     {'job_name': 'a b'}, {'command': []}):
            serializer = LaunchPlanSerializer(data={
                'nodes': 4, 'cores': 48, 'container': 'c', 'command': ['x'], **data,
            })
            self.assertFalse(serializer.is_valid(), data)


class LaunchCommandTests(SimpleTestCase):

    def launch(self, *args):
        out, err = io.StringIO(), io.StringIO()
        status = dispatch(['udss', 'launch', 'plan', *args], stdout=out, stderr=err)
        return status, out.getvalue(), err.getvalue()

    def test_mpi_emit(self):
        status, out, _ = self.launch(
            '--nodes', '4', '--cores', '48', '--smt', '2', '--container', 'my_container',
            '--emit', 'mpi', '--', 'mpi_hello_world',
        )
        self.assertEqual(status, 0)
        self.assertEqual(out, 'mpirun -n 4 udss run my_container -- mpi_hello_world\n')

    def test_slurm_to_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'job.sh'
            status, out, _ = self.launch(
                '--nodes', '4', '--cores', '48', '--smt', '2', '--container', 'my_container',
                '--job-name', 'tf-train', '--walltime', '02:00:00', '--emit', 'slurm',
                '-o', str(path), '--', 'mpi_hello_world',
            )
            self.assertEqual(status, 0)
            self.assertEqual(out, '')
            self.assertEqual(path.read_text(), FOUR_NODE_SCRIPT)
            self.assertTrue(os.access(path, os.X_OK))

    def test_unwritable_output_exits_2(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'missing' / 'job.sh'
            status, out, err = self.launch(
                '--nodes', '4', '--cores', '48', '--container', 'c', '--emit', 'slurm',
                '-o', str(path), '--', 'x',
            )
        self.assertEqual(status, 2)
        self.assertEqual(out, '')
        self.assertIn(f'Cannot write {path}', err)

    def test_plan_mismatch_exits_2(self):
        status, _, err = self.launch(
            '--nodes', '1', '--ranks-per-node', '5', '--cores', '48', '--smt', '2',
            '--container', 'c', '--', 'x',
        )
        self.assertEqual(status, 2)
        self.assertIn('do not divide evenly', err)

    def test_missing_command_exits_1(self):
        status, _, err = self.launch('--nodes', '1', '--cores', '4', '--container', 'c')
        self.assertEqual(status, 1)
        self.assertIn('command', err)

    def test_environment_sets_thread_variable(self):
        with mock.patch.dict(os.environ, {'UDSS_THREAD_ENV_VAR': 'NUM_THREADS'}):
            status, out, _ = self.launch('--nodes', '1', '--cores', '8', '--container', 'c', '--', 'x')
        self.assertEqual(status, 0)
        self.assertEqual(out, 'NUM_THREADS=8 udss run c -- x\n')
