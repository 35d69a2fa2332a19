"""
Thin ctypes wrappers for the Linux calls Python's os module lacks.

Every wrapper raises OSError carrying errno, like the os functions do.
"""
import ctypes
import os
from ctypes import util as c_util

# linux/sched.h
CLONE_NEWNS = 0x00020000
CLONE_NEWUSER = 0x10000000

# linux/mount.h
MS_RDONLY = 1
MS_NOSUID = 2
MS_NODEV = 4
MS_NOEXEC = 8
MS_REMOUNT = 32
MS_NOATIME = 1024
MS_NODIRATIME = 2048
MS_BIND = 4096
MS_REC = 16384
MS_PRIVATE = 1 << 18
MS_RELATIME = 1 << 21

# sys/mount.h
MNT_DETACH = 2

# linux/prctl.h
PR_SET_NO_NEW_PRIVS = 38

# statvfs flags of a mount -> the mount flag that must be repeated on remount.
# Inside a user namespace these are locked: dropping one fails with EPERM.
LOCKED_MOUNT_FLAGS = {
    os.ST_NOSUID: MS_NOSUID,
    os.ST_NODEV: MS_NODEV,
    os.ST_NOEXEC: MS_NOEXEC,
    os.ST_NOATIME: MS_NOATIME,
    os.ST_NODIRATIME: MS_NODIRATIME,
    os.ST_RELATIME: MS_RELATIME,
}

_libc = ctypes.CDLL(c_util.find_library('c'), use_errno=True)

_libc.mount.argtypes = (ctypes.c_char_p, ctypes.c_char_p, ctypes.c_char_p, ctypes.c_ulong, ctypes.c_void_p)
_libc.umount2.argtypes = (ctypes.c_char_p, ctypes.c_int)
_libc.prctl.argtypes = (ctypes.c_int, ctypes.c_ulong, ctypes.c_ulong, ctypes.c_ulong, ctypes.c_ulong)
_libc.syscall.restype = ctypes.c_long


def _encode(value):
    if value is None or isinstance(value, bytes):
        return value
    return os.fsencode(value)


def _check(result, *args):
    if result < 0:
        errno = ctypes.get_errno()
        raise OSError(errno, os.strerror(errno), *[os.fsdecode(arg) for arg in args if arg])
    return result


def mount(source, target, fstype, flags, data=None):
    _check(
        _libc.mount(_encode(source), _encode(target), _encode(fstype), flags, _encode(data)),
        target,
    )


def umount2(target, flags=0):
    _check(_libc.umount2(_encode(target), flags), target)


# glibc has no pivot_root wrapper before 2.28; go through syscall(2).
_SYS_PIVOT_ROOT = {'x86_64': 155, 'aarch64': 41, 'ppc64le': 203, 's390x': 217, 'riscv64': 41}


def pivot_root(new_root, put_old):
    new_root, put_old = _encode(new_root), _encode(put_old)
    if hasattr(_libc, 'pivot_root'):
        _libc.pivot_root.argtypes = (ctypes.c_char_p, ctypes.c_char_p)
        _check(_libc.pivot_root(new_root, put_old), new_root)
        return
    number = _SYS_PIVOT_ROOT.get(os.uname().machine)
    if number is None:
        raise OSError(38, f"pivot_root unavailable on {os.uname().machine}")
    _check(_libc.syscall(number, ctypes.c_char_p(new_root), ctypes.c_char_p(put_old)), new_root)


def unshare(flags):
    if hasattr(os, 'unshare'):
        os.unshare(flags)
        return
    # Python < 3.12
    _check(_libc.unshare(ctypes.c_int(flags)))


def prctl(option, arg2=0, arg3=0, arg4=0, arg5=0):
    return _check(_libc.prctl(option, arg2, arg3, arg4, arg5))


def set_no_new_privs():
    """Irrevocably forbid gaining privileges through execve, for this process and its children"""
    prctl(PR_SET_NO_NEW_PRIVS, 1)


def locked_flags(path):
    """Mount flags of the mount holding path that a remount has to keep"""
    flags = os.statvfs(path).f_flag
    return sum(ms for st, ms in LOCKED_MOUNT_FLAGS.items() if flags & st)
