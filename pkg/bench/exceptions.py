from udss.exceptions import UDSSError


class BenchError(UDSSError):
    """Base class for measurement and report errors"""


class MissingBaseline(BenchError):
    """The baseline node count is not in the series"""


class DuplicateNodeCount(BenchError):
    """A node count appears twice in one scaling series"""


class NoMeasurements(BenchError):
    """No record carries a with/without pair"""


class InvalidRecord(BenchError):
    """An input row or report file does not validate"""


class WorkloadFailed(BenchError):
    """The workload exited non-zero"""

    def __init__(self, message, status, contained=False):
        super().__init__(message)
        self.status = status
        self.contained = contained


class PatternNotFound(BenchError):
    """The throughput pattern did not match the workload's output"""
