"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class DarccnError(Exception):
    exit_code = 1


class InvalidArgument(DarccnError, ValueError):
    exit_code = 1


class ShapeMismatch(DarccnError, ValueError):
    exit_code = 3


class ConfigError(DarccnError, ValueError):
    exit_code = 3


class NumericalDegenerate(DarccnError, ArithmeticError):
    exit_code = 3


class DegenerateInput(DarccnError, ValueError):
    exit_code = 1


class ProtocolViolation(DarccnError, RuntimeError):
    exit_code = 1


class AudioFormatError(DarccnError, IOError):
    exit_code = 2


class WeightsFormatError(DarccnError, IOError):
    exit_code = 2


class TrainingDiverged(DarccnError, FloatingPointError):
    exit_code = 4
