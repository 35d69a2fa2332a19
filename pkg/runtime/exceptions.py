from udss.exceptions import UDSSError


class RuntimeFailure(UDSSError):
    """Base class for container launch errors"""


class NoUserNamespaces(RuntimeFailure):
    """The kernel refuses unprivileged user namespaces"""


class RootfsMissing(RuntimeFailure):
    """The rootfs path is not a directory"""


class BindSourceMissing(RuntimeFailure):
    """A bind mount source does not exist on the host"""


class BindTargetMissing(RuntimeFailure):
    """A bind mount target does not exist inside the image"""


class ExecNotFound(RuntimeFailure):
    """The command cannot be found or executed inside the image"""


class ContainerSetupError(RuntimeFailure):
    """Namespace or mount setup failed after the namespaces were created"""


# Names the container child may report back over its error pipe.
CHILD_ERRORS = {
    cls.__name__: cls
    for cls in (
        NoUserNamespaces, RootfsMissing, BindSourceMissing,
        BindTargetMissing, ExecNotFound, ContainerSetupError,
    )
}
