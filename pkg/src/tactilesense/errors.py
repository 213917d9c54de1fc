"""Exception types raised across the toolkit.

The CLI maps the three families to exit codes: configuration problems to 2,
numeric failures to 3 and target failures to 4.
"""


class TactileError(Exception):
    """Base class for every typed failure in the package."""


class ConfigError(TactileError):
    """Invalid or unreadable experiment configuration (exit code 2)."""


class DegenerateGrid(ConfigError):
    """Grid spacing leaves no waypoint inside the ROI."""


class NumericFailure(TactileError):
    """Base for numeric failures (exit code 3)."""


class NonFiniteLoss(NumericFailure):
    pass


class RankDeficient(NumericFailure):
    pass


class DegenerateForceRange(NumericFailure):
    pass


class DivisionByZeroDI(NumericFailure):
    pass


class EmptyWindow(NumericFailure):
    pass


class TargetFailure(TactileError):
    """Base for failures to reach or measure a target (exit code 4)."""


class OutOfRoi(TargetFailure):
    """A commanded probe target left the region of interest."""


class NoContact(TargetFailure):
    """No frame entered the recording force window within the step budget."""


class LostTarget(TargetFailure):
    pass


class NonConvergent(TargetFailure):
    pass


def exit_code(err: BaseException) -> int:
    if isinstance(err, ConfigError):
        return 2
    if isinstance(err, NumericFailure):
        return 3
    if isinstance(err, TargetFailure):
        return 4
    return 1
