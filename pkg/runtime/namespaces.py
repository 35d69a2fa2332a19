"""
Creating the user and mount namespaces a container lives in.
"""
import errno
import os
from pathlib import Path

from . import libc
from .exceptions import ContainerSetupError, NoUserNamespaces

SYSCTL_USERNS_CLONE = '/proc/sys/kernel/unprivileged_userns_clone'
SYSCTL_MAX_USER_NAMESPACES = '/proc/sys/user/max_user_namespaces'
SYSCTL_APPARMOR_RESTRICT = '/proc/sys/kernel/apparmor_restrict_unprivileged_userns'


def read_sysctl(path):
    try:
        return Path(path).read_text().strip()
    except OSError:
        return None


def write_proc(path, text):
    """Single write(2); a buffered open() would issue extra calls the kernel rejects"""
    fd = os.open(path, os.O_WRONLY)
    try:
        os.write(fd, text.encode('ascii'))
    finally:
        os.close(fd)


def apparmor_restricted(error):
    """Ubuntu's AppArmor restriction shows up as EPERM/EACCES with this sysctl set"""
    return (
        error.errno in (errno.EPERM, errno.EACCES)
        and read_sysctl(SYSCTL_APPARMOR_RESTRICT) == '1'
    )


def userns_hint(error):
    """Actionable explanation for a failed unshare(CLONE_NEWUSER)"""
    if read_sysctl(SYSCTL_USERNS_CLONE) == '0':
        cause = "kernel.unprivileged_userns_clone is 0 (set it to 1)"
    elif read_sysctl(SYSCTL_MAX_USER_NAMESPACES) == '0':
        cause = "user.max_user_namespaces is 0 (raise it)"
    elif apparmor_restricted(error):
        cause = "kernel.apparmor_restrict_unprivileged_userns is 1 (set it to 0 or add an AppArmor profile)"
    elif error.errno == errno.ENOSPC:
        cause = "the user namespace limit (user.max_user_namespaces) is exhausted"
    elif error.errno == errno.EINVAL:
        cause = "the process is multithreaded or the kernel lacks CONFIG_USER_NS"
    else:
        cause = error.strerror or str(error)
    return f"Cannot create an unprivileged user namespace: {cause}"


def enter_namespaces(identity):
    """
    Move the calling (single-threaded) process into new user and mount
    namespaces with an identity mapping, and make every mount private so
    nothing propagates back to the host.

    Raises:
        NoUserNamespaces: the kernel refused the user namespace
        ContainerSetupError: mapping or mount propagation change failed
    """
    try:
        libc.unshare(libc.CLONE_NEWUSER | libc.CLONE_NEWNS)
    except OSError as e:
        raise NoUserNamespaces(userns_hint(e)) from e

    try:
        write_proc('/proc/self/setgroups', 'deny')
    except FileNotFoundError:
        # kernels before 3.19 have no setgroups file and need no deny
        pass
    except OSError as e:
        raise ContainerSetupError(f"Cannot write /proc/self/setgroups: {e}") from e

    for name, text in (('uid_map', identity.uid_map), ('gid_map', identity.gid_map)):
        try:
            write_proc(f'/proc/self/{name}', text)
        except OSError as e:
            if apparmor_restricted(e):
                raise NoUserNamespaces(userns_hint(e)) from e
            raise ContainerSetupError(f"Cannot write /proc/self/{name} ({text.strip()}): {e}") from e

    try:
        libc.mount(None, '/', None, libc.MS_REC | libc.MS_PRIVATE)
    except OSError as e:
        raise ContainerSetupError(f"Cannot make mounts private: {e}") from e
