"""
probe_support: can this node run containers without privileges?
"""
import logging
import os
from pathlib import Path

from .exceptions import RuntimeFailure
from .models import DEPTH_VARIABLE, IdentityMap, SupportReport
from .namespaces import (
    SYSCTL_APPARMOR_RESTRICT, SYSCTL_MAX_USER_NAMESPACES, SYSCTL_USERNS_CLONE, enter_namespaces,
    read_sysctl,
)

logger = logging.getLogger(__name__)


def overlay_available():
    try:
        filesystems = Path('/proc/filesystems').read_text().split('\n')
    except OSError:
        return False
    return any(line.split()[-1:] == ['overlay'] for line in filesystems)


def try_namespaces():
    """
    Create the container namespaces in a throwaway child.

    Returns:
        '' on success, else the reason they could not be created
    """
    identity = IdentityMap.current()
    read_fd, write_fd = os.pipe()
    pid = os.fork()
    if pid == 0:
        status = 0
        try:
            os.close(read_fd)
            enter_namespaces(identity)
        except RuntimeFailure as e:
            os.write(write_fd, str(e).encode())
            status = 1
        except BaseException as e:
            os.write(write_fd, f"{type(e).__name__}: {e}".encode())
            status = 1
        finally:
            os._exit(status)
    os.close(write_fd)
    with os.fdopen(read_fd, 'rb') as pipe:
        reason = pipe.read().decode(errors='replace')
    _, wait_status = os.waitpid(pid, 0)
    if not reason and os.waitstatus_to_exitcode(wait_status) != 0:
        reason = f"namespace trial exited with status {os.waitstatus_to_exitcode(wait_status)}"
    return reason


def probe_support(environ=None):
    """
    Inspect the kernel's support for unprivileged containers. Nothing
    persists: the namespaces tried here die with a forked child.

    Returns:
        SupportReport
    """
    environ = os.environ if environ is None else environ
    userns_clone = read_sysctl(SYSCTL_USERNS_CLONE)
    max_namespaces = read_sysctl(SYSCTL_MAX_USER_NAMESPACES)
    max_namespaces = int(max_namespaces) if max_namespaces and max_namespaces.isdigit() else None
    apparmor = read_sysctl(SYSCTL_APPARMOR_RESTRICT) == '1'
    try:
        depth = int(environ.get(DEPTH_VARIABLE, '0'))
    except ValueError:
        depth = 0

    if userns_clone == '0':
        reason = "kernel.unprivileged_userns_clone is 0"
    elif max_namespaces == 0:
        reason = "user.max_user_namespaces is 0"
    else:
        try:
            reason = try_namespaces()
        except OSError as e:
            reason = f"Cannot fork a namespace trial: {e}"

    report = SupportReport(
        user_namespaces=not reason,
        reason=reason,
        kernel=os.uname().release,
        unprivileged_userns_clone=userns_clone,
        max_user_namespaces=max_namespaces,
        apparmor_restricted=apparmor,
        overlay=overlay_available(),
        nesting_depth=depth,
        privileged=os.geteuid() == 0,
    )
    logger.info(f"probe: user namespaces {'available' if report.user_namespaces else 'unavailable'}")
    return report
