"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
BackendError -> 4, anything else -> 5.
"""


class TempalignError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TempalignError):
    """Bad or missing configuration (unset paths, invalid parameter values)."""


class DataError(TempalignError):
    """Malformed or inconsistent input data (corpora, stores, pair files)."""


class BackendError(TempalignError):
    """Completion backend failure (transport, HTTP status, replay miss)."""


class ReplayMissError(BackendError):
    """Strict replay lookup failed; carries the request fingerprint."""

    def __init__(self, fingerprint: str):
        super().__init__(f"no recorded response for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class TrainingDivergedError(TempalignError):
    """Training hit a non-finite loss or gradient.

    Carries the last epoch that completed with finite values, the head
    snapshot taken at the end of that epoch, and the partial report.
    """

    def __init__(self, last_good_epoch: int, head, report):
        super().__init__(
            f"training diverged (non-finite loss/gradient); "
            f"last good epoch: {last_good_epoch}"
        )
        self.last_good_epoch = last_good_epoch
        self.head = head
        self.report = report
