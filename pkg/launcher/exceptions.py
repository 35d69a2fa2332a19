from udss.exceptions import UDSSError


class LaunchError(UDSSError):
    """Base class for launch plan errors"""


class PlanMismatch(LaunchError):
    """The plan does not fit the requested rendering or does not divide evenly"""
