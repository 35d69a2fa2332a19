"""
Single entry point: ``udss <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 operation error; ``run`` exits with
the contained process's status (125 when the runtime itself fails).
"""
import os
import sys

from django.core.management import load_command_class
from django.core.management.base import CommandError

EXIT_USAGE = 1

# subcommand -> (app, command module)
SUBCOMMANDS = {
    'flatten': ('images', 'flatten'),
    'pack': ('archive', 'pack'),
    'unpack': ('archive', 'unpack'),
    'run': ('runtime', 'run'),
    'probe': ('runtime', 'probe'),
    'launch': ('launcher', 'launch'),
    'bench': ('bench', 'bench'),
    'scale-report': ('bench', 'scale_report'),
    'overhead-report': ('bench', 'overhead_report'),
}

GLOBAL_VALUE_FLAGS = {'--config', '-v', '--verbosity'}


def main_help(prog):
    lines = [
        f"usage: {prog} [--config PATH] [-v {{0,1,2,3}}] <subcommand> [options]",
        "",
        "Deploy container images on air-gapped HPC clusters without a daemon.",
        "",
        "subcommands:",
    ]
    lines += [f"  {name}" for name in SUBCOMMANDS]
    lines += ["", f"Type '{prog} <subcommand> --help' for help on a subcommand."]
    return '\n'.join(lines) + '\n'


def split_global_flags(args):
    """
    Separate global flags given before the subcommand name.

    Returns:
        (global flag words, remaining words starting at the subcommand)
    """
    leading = []
    index = 0
    while index < len(args) and args[index].startswith('-'):
        word = args[index]
        leading.append(word)
        if word in GLOBAL_VALUE_FLAGS and index + 1 < len(args):
            leading.append(args[index + 1])
            index += 1
        index += 1
    return leading, list(args[index:])


def dispatch(argv, stdout=None, stderr=None):
    """
    Run one subcommand.

    Args:
        argv: full argument vector, argv[0] being the program name
        stdout, stderr: streams for command output (default: sys streams)

    Returns:
        process exit code
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(argv)
    prog = os.path.basename(argv[0]) if argv else 'udss'
    if prog in ('__main__.py', '-m'):
        prog = 'udss'

    leading, rest = split_global_flags(argv[1:])
    if not rest:
        if '-h' in leading or '--help' in leading:
            stdout.write(main_help(prog))
            return 0
        stderr.write(main_help(prog))
        return EXIT_USAGE

    subcommand, tail = rest[0], rest[1:]
    if subcommand == 'help':
        stdout.write(main_help(prog))
        return 0
    if subcommand not in SUBCOMMANDS:
        stderr.write(f"Unknown subcommand: '{subcommand}'\n")
        stderr.write(f"Type '{prog} --help' for usage.\n")
        return EXIT_USAGE

    app_name, module_name = SUBCOMMANDS[subcommand]
    command = load_command_class(app_name, module_name)
    parser = command.create_parser(prog, subcommand)
    try:
        options = parser.parse_args(leading + tail)
    except CommandError as e:
        stderr.write(f"{prog} {subcommand}: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return e.code or 0

    cmd_options = vars(options)
    args = cmd_options.pop('args', ())
    try:
        command.execute(*args, stdout=stdout, stderr=stderr, **cmd_options)
    except CommandError as e:
        stderr.write(f"{prog} {subcommand}: {e}\n")
        return e.returncode
    return command.exit_code
