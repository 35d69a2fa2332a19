"""
Start a command inside an unpacked rootfs.

The runtime forks once. The child enters new user and mount namespaces,
bind-mounts the rootfs and the host resources, pivots into the rootfs,
forbids new privileges and execs the command, so the contained process is a
direct child of the runtime (and of whatever MPI launcher started it). Setup
errors travel back to the parent over a close-on-exec pipe.
"""
import json
import logging
import os
import posixpath
import signal
import threading
from pathlib import Path

from images.layers import MAX_SYMLINK_HOPS, METADATA_DIR

from . import libc
from .exceptions import (
    CHILD_ERRORS, BindSourceMissing, BindTargetMissing, ContainerSetupError, ExecNotFound,
    RuntimeFailure,
)
from .models import DEPTH_VARIABLE, IdentityMap
from .namespaces import enter_namespaces
from .serializers import ImageMetadataSerializer

logger = logging.getLogger(__name__)

# status of a container whose runtime failed before the command ran
RUNTIME_FAILURE_STATUS = 125

FORWARDED_SIGNALS = (
    signal.SIGTERM, signal.SIGINT, signal.SIGHUP,
    signal.SIGQUIT, signal.SIGUSR1, signal.SIGUSR2,
)

DEFAULT_PATH = '/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin'

# recursive binds made for every container
SYSTEM_BINDS = ('/dev', '/proc', '/sys')


def exit_status(wait_status):
    """Shell convention: exit code, or 128+N for death by signal N"""
    code = os.waitstatus_to_exitcode(wait_status)
    return 128 - code if code < 0 else code


def read_image_metadata(rootfs):
    """Metadata flatten embedded in the rootfs, or {} for a foreign tree"""
    path = Path(rootfs) / METADATA_DIR / 'metadata.json'
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        return {}
    except (OSError, ValueError) as e:
        logger.warning(f"Ignoring unreadable image metadata {path}: {e}")
        return {}
    serializer = ImageMetadataSerializer(data=data)
    if not serializer.is_valid():
        logger.warning(f"Ignoring invalid image metadata {path}: {serializer.errors}")
        return {}
    return serializer.validated_data


def container_environment(spec, metadata, host_environ=None):
    """
    Environment of the contained process.

    inherit-host: the host environment, so MPI launcher variables reach
    every rank. image-config: the image's Env only. merged: host
    environment overridden by the image's Env.
    """
    host = dict(os.environ if host_environ is None else host_environ)
    image = dict(metadata.get('env') or {})
    if spec.env_policy == 'inherit-host':
        env = host
    elif spec.env_policy == 'image-config':
        env = image
    else:
        env = {**host, **image}
    env.setdefault('PATH', DEFAULT_PATH)
    try:
        depth = int(host.get(DEPTH_VARIABLE, '0'))
    except ValueError:
        depth = 0
    env[DEPTH_VARIABLE] = str(depth + 1)
    return env


def resolve_in_rootfs(rootfs, path):
    """
    Host path of a container path, following symlinks the way they will
    resolve after pivot_root: absolute targets restart at the rootfs and
    '..' stops at it. Missing components are kept as-is.
    """
    rootfs = os.path.realpath(rootfs)
    pending = [part for part in path.split('/') if part]
    resolved = []
    hops = 0
    while pending:
        part = pending.pop(0)
        if part == '.':
            continue
        if part == '..':
            if resolved:
                resolved.pop()
            continue
        candidate = os.path.join(rootfs, *resolved, part)
        if os.path.islink(candidate):
            hops += 1
            if hops > MAX_SYMLINK_HOPS:
                raise ContainerSetupError(f"Too many symlinks resolving {path} in {rootfs}")
            target = os.readlink(candidate)
            if target.startswith('/'):
                resolved = []
            pending = [p for p in target.split('/') if p] + pending
            continue
        resolved.append(part)
    return os.path.join(rootfs, *resolved)


def _bind(source, target, read_only=False):
    libc.mount(source, target, None, libc.MS_BIND | libc.MS_REC)
    if read_only:
        libc.mount(
            None, target, None,
            libc.MS_REMOUNT | libc.MS_BIND | libc.MS_RDONLY | libc.locked_flags(target),
        )


def _bind_home(rootfs, home):
    """
    Bind the user's home at the same path. When the image lacks it but has
    /home, a tmpfs over /home provides the mount point without touching
    the image.
    """
    target = resolve_in_rootfs(rootfs, home)
    if not os.path.isdir(target):
        home_parent = resolve_in_rootfs(rootfs, posixpath.dirname(home))
        if posixpath.dirname(home) != '/home' or not os.path.isdir(home_parent):
            logger.warning(f"Not binding {home}: no such directory in the image")
            return
        libc.mount('tmpfs', home_parent, 'tmpfs', libc.MS_NOSUID | libc.MS_NODEV, 'mode=0755')
        os.mkdir(target, 0o700)
    _bind(home, target)


def _mount_binds(rootfs, spec):
    for path in SYSTEM_BINDS:
        target = resolve_in_rootfs(rootfs, path)
        if os.path.isdir(target):
            _bind(path, target)
        else:
            logger.warning(f"Not binding {path}: no such directory in the image")

    home = os.environ.get('HOME')
    if home and os.path.isabs(home) and os.path.isdir(home):
        _bind_home(rootfs, posixpath.normpath(home))

    for path in spec.site_bind_dirs:
        target = resolve_in_rootfs(rootfs, path)
        if not os.path.isdir(path):
            logger.warning(f"Site directory {path} does not exist on this node; not binding it")
        elif not os.path.isdir(target):
            logger.warning(f"Site directory {path} has no mount point in the image; not binding it")
        else:
            _bind(path, target)

    for bind in spec.binds:
        if not bind.source.exists():
            raise BindSourceMissing(f"Bind source does not exist: {bind.source}")
        target = resolve_in_rootfs(rootfs, bind.target)
        if not os.path.exists(target):
            raise BindTargetMissing(f"Bind target {bind.target} does not exist in {spec.rootfs}")
        _bind(os.fspath(bind.source), target, read_only=bind.read_only)


def _setup_container(spec, identity, workdir):
    """Runs in the forked child; on return the process is inside the container"""
    rootfs = os.path.realpath(spec.rootfs)
    enter_namespaces(identity)
    try:
        libc.mount(rootfs, rootfs, None, libc.MS_BIND | libc.MS_REC)
        _mount_binds(rootfs, spec)
        if not spec.writable:
            libc.mount(
                None, rootfs, None,
                libc.MS_REMOUNT | libc.MS_BIND | libc.MS_RDONLY | libc.locked_flags(rootfs),
            )
        os.chdir(rootfs)
        libc.pivot_root('.', '.')
        libc.umount2('/', libc.MNT_DETACH)
    except OSError as e:
        raise ContainerSetupError(f"Mount setup failed: {e}") from e

    try:
        os.chdir(workdir)
    except OSError as e:
        raise ContainerSetupError(f"Cannot change to working directory {workdir}: {e}") from e

    libc.set_no_new_privs()


def _redirect_stdio(spec):
    for fd, target in ((spec.stdin, 0), (spec.stdout, 1), (spec.stderr, 2)):
        if fd is not None and fd != target:
            os.dup2(fd, target)


def _child(spec, identity, environ, workdir, error_fd):
    """Never returns"""
    try:
        _redirect_stdio(spec)
        for signum in FORWARDED_SIGNALS + (signal.SIGPIPE, signal.SIGXFSZ):
            signal.signal(signum, signal.SIG_DFL)
        _setup_container(spec, identity, workdir)
        try:
            os.execvpe(spec.command[0], list(spec.command), environ)
        except (FileNotFoundError, PermissionError, NotADirectoryError) as e:
            raise ExecNotFound(f"{spec.command[0]}: cannot execute inside the image: {e.strerror}") from e
    except RuntimeFailure as e:
        report = {'error': type(e).__name__, 'message': str(e)}
    except BaseException as e:
        report = {'error': ContainerSetupError.__name__, 'message': f"{type(e).__name__}: {e}"}
    try:
        os.write(error_fd, json.dumps(report).encode())
    finally:
        os._exit(RUNTIME_FAILURE_STATUS)


class Container:
    """A started contained process; reap it with wait() or poll()"""

    def __init__(self, pid, spec, forward_signals=True):
        self.pid = pid
        self.spec = spec
        self.returncode = None
        self._saved_handlers = {}
        if forward_signals and threading.current_thread() is threading.main_thread():
            for signum in FORWARDED_SIGNALS:
                self._saved_handlers[signum] = signal.signal(signum, self._forward)

    def _forward(self, signum, frame):
        logger.debug(f"Forwarding signal {signum} to {self.pid}")
        self.send_signal(signum)

    def send_signal(self, signum):
        if self.returncode is None:
            try:
                os.kill(self.pid, signum)
            except ProcessLookupError:
                pass

    def _reaped(self, wait_status):
        self.returncode = exit_status(wait_status)
        for signum, handler in self._saved_handlers.items():
            signal.signal(signum, handler)
        self._saved_handlers = {}
        logger.info(f"Container process {self.pid} exited with status {self.returncode}")
        return self.returncode

    def poll(self):
        """Exit status if the process has ended, else None"""
        if self.returncode is None:
            pid, wait_status = os.waitpid(self.pid, os.WNOHANG)
            if pid == self.pid:
                self._reaped(wait_status)
        return self.returncode

    def wait(self):
        if self.returncode is None:
            _, wait_status = os.waitpid(self.pid, 0)
            self._reaped(wait_status)
        return self.returncode


def start(spec, forward_signals=True):
    """
    Launch spec.command inside spec.rootfs and return once it has been
    exec'd.

    Args:
        spec: ContainerSpec
        forward_signals: relay SIGTERM, SIGINT, SIGHUP, SIGQUIT, SIGUSR1 and
            SIGUSR2 to the contained process until it is reaped (main
            thread only)

    Returns:
        Container

    Raises:
        RuntimeFailure subclasses for everything that goes wrong before exec
    """
    spec.validate()
    identity = IdentityMap.current()
    metadata = read_image_metadata(spec.rootfs)
    environ = container_environment(spec, metadata, spec.environ)
    workdir = spec.workdir or metadata.get('workdir') or '/'
    logger.info(
        f"Starting {spec.command[0]} in {spec.rootfs} "
        f"(uid {identity.host_uid}, {'writable' if spec.writable else 'read-only'}, env {spec.env_policy})"
    )

    try:
        read_fd, write_fd = os.pipe()
        pid = os.fork()
    except OSError as e:
        raise ContainerSetupError(f"Cannot fork the container process: {e}") from e
    if pid == 0:
        os.close(read_fd)
        _child(spec, identity, environ, workdir, write_fd)
    os.close(write_fd)
    with os.fdopen(read_fd, 'rb') as pipe:
        report = pipe.read()
    if report:
        os.waitpid(pid, 0)
        try:
            info = json.loads(report)
            error = CHILD_ERRORS.get(info['error'], ContainerSetupError)(info['message'])
        except (ValueError, KeyError, TypeError):
            error = ContainerSetupError(report.decode(errors='replace'))
        raise error
    return Container(pid, spec, forward_signals=forward_signals)


def run(spec):
    """
    Run spec.command to completion in the container.

    Returns:
        exit status of the contained process (128+N after signal N)
    """
    return start(spec).wait()

