"""Exception taxonomy mirroring the CLI exit codes.

Kept free of third-party imports so the entry point can classify failures and
pin threading environment variables before numpy ever loads.
"""


class UsageError(Exception):
    """Bad invocation or configuration (exit code 1)."""


class DataError(Exception):
    """A dataset file or its contents is unusable (exit code 2)."""


class CheckpointError(Exception):
    """A checkpoint file cannot be loaded: bad version, corrupt, wrong shapes
    (exit code 2)."""
