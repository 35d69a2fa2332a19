"""
Domain types for the container runtime.
"""
import os
from dataclasses import dataclass, field
from pathlib import Path

from udss.serializers import ENV_POLICIES

from .exceptions import BindSourceMissing, ContainerSetupError, RootfsMissing

DEPTH_VARIABLE = 'UDSS_CONTAINER_DEPTH'


@dataclass(frozen=True)
class Bind:
    source: Path
    target: str
    read_only: bool = False

    @classmethod
    def parse(cls, text):
        """
        SRC, SRC:DST or SRC:DST:ro as given to --bind; DST defaults to SRC.
        """
        source, _, rest = text.partition(':')
        target, _, flag = rest.partition(':')
        if not source or flag not in ('', 'ro', 'rw'):
            raise ValueError(f"Expected SRC[:DST[:ro]], got {text!r}")
        target = target or source
        if not target.startswith('/'):
            raise ValueError(f"Bind target must be an absolute container path: {target}")
        return cls(source=Path(source), target=os.path.normpath(target), read_only=flag == 'ro')


@dataclass(frozen=True)
class IdentityMap:
    """Single-id mapping: the invoking user is the same user inside"""

    host_uid: int
    host_gid: int
    container_uid: int
    container_gid: int

    def __post_init__(self):
        if (self.container_uid, self.container_gid) != (self.host_uid, self.host_gid):
            raise ContainerSetupError("Only identity UID/GID mappings are supported")

    @classmethod
    def current(cls):
        uid, gid = os.geteuid(), os.getegid()
        return cls(host_uid=uid, host_gid=gid, container_uid=uid, container_gid=gid)

    @property
    def uid_map(self):
        return f"{self.container_uid} {self.host_uid} 1\n"

    @property
    def gid_map(self):
        return f"{self.container_gid} {self.host_gid} 1\n"


@dataclass(frozen=True)
class ContainerSpec:
    """
    Everything needed to start one contained process.

    binds are user binds; the default binds (/dev, /proc, /sys, $HOME and
    site_bind_dirs) are added at launch. workdir None means the image's
    working directory, else '/'. The std* fields are host file descriptors
    for the contained process (None inherits ours).
    """

    rootfs: Path
    command: tuple
    binds: tuple = ()
    env_policy: str = 'inherit-host'
    workdir: str | None = None
    writable: bool = False
    site_bind_dirs: tuple = ()
    stdin: int | None = None
    stdout: int | None = None
    stderr: int | None = None
    environ: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'rootfs', Path(self.rootfs))
        object.__setattr__(self, 'command', tuple(self.command))
        object.__setattr__(self, 'binds', tuple(
            bind if isinstance(bind, Bind) else Bind(Path(bind[0]), bind[1])
            for bind in self.binds
        ))

    def validate(self):
        """
        Check what can be checked before any namespace exists.

        Raises:
            RootfsMissing, BindSourceMissing, ContainerSetupError
        """
        if not self.command:
            raise ContainerSetupError("No command given")
        if self.env_policy not in ENV_POLICIES:
            raise ContainerSetupError(
                f"Unknown environment policy {self.env_policy!r}; expected one of {', '.join(ENV_POLICIES)}"
            )
        if not self.rootfs.is_dir():
            raise RootfsMissing(f"Rootfs is not a directory: {self.rootfs}")
        for bind in self.binds:
            if not bind.source.exists():
                raise BindSourceMissing(f"Bind source does not exist: {bind.source}")
        if self.workdir is not None and not self.workdir.startswith('/'):
            raise ContainerSetupError(f"Working directory must be absolute: {self.workdir}")
        return self


@dataclass(frozen=True)
class SupportReport:
    """Outcome of probe_support; negative findings carry a reason"""

    user_namespaces: bool
    reason: str
    kernel: str
    unprivileged_userns_clone: str | None = None
    max_user_namespaces: int | None = None
    apparmor_restricted: bool = False
    overlay: bool = False
    nesting_depth: int = 0
    privileged: bool = False
