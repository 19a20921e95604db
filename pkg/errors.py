# errors.py
"""
Error hierarchy shared by every module.

Each error carries an ``exit_code`` the CLI returns when it escapes a command:
  1 = verification failure, 2 = configuration error, 3 = runtime failure.

Errors raised from pydantic validators (InvalidConfig, InvalidCodeSpec,
NonDivisibleWidth) must not subclass ValueError, or pydantic re-wraps them
as ValidationError.
"""

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_FAILURE = 3


class TableFreeError(Exception):
    exit_code = EXIT_RUNTIME_FAILURE


# -----------------------------
# GF(2) / codes
# -----------------------------
class SingularMatrix(TableFreeError, ValueError):
    pass


class DimensionMismatch(TableFreeError, ValueError):
    pass


class SamplingFailure(TableFreeError):
    pass


class TokenOutOfRange(TableFreeError, ValueError):
    pass


class NonDivisibleWidth(TableFreeError):
    exit_code = EXIT_CONFIG_ERROR


class NotFullVocabulary(TableFreeError, ValueError):
    pass


class InvalidCodeSpec(TableFreeError):
    exit_code = EXIT_CONFIG_ERROR


# -----------------------------
# Numeric kernel
# -----------------------------
class ShapeMismatch(TableFreeError, ValueError):
    pass


class OddHeadDim(TableFreeError, ValueError):
    pass


class TargetOutOfRange(TableFreeError, ValueError):
    pass


class NonFiniteValue(TableFreeError, ArithmeticError):
    pass


# -----------------------------
# Model / training
# -----------------------------
class InvalidConfig(TableFreeError):
    exit_code = EXIT_CONFIG_ERROR


class NonFiniteLoss(TableFreeError, ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class EmptyStream(TableFreeError, ValueError):
    pass


# -----------------------------
# Data
# -----------------------------
class EmptyCorpus(TableFreeError, ValueError):
    exit_code = EXIT_CONFIG_ERROR


class InsufficientData(TableFreeError, ValueError):
    pass


# -----------------------------
# CLI / files
# -----------------------------
class InvalidArgs(TableFreeError, ValueError):
    exit_code = EXIT_CONFIG_ERROR


class MissingRuns(TableFreeError):
    exit_code = EXIT_CONFIG_ERROR


class IoFailure(TableFreeError, OSError):
    pass


class VerificationFailed(TableFreeError):
    exit_code = EXIT_VERIFY_FAILED
