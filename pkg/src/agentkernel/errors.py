"""Exception taxonomy shared by every layer of the kernel.

Each error carries a ``code`` that the execution layer copies verbatim into
``ActionResult.error_code`` so tool results and exceptions use one vocabulary.
"""

from __future__ import annotations


class KernelError(Exception):
    code = "KernelError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# snapshot layer
class EmptyTree(KernelError):
    code = "EmptyTree"


class StaleRef(KernelError):
    code = "StaleRef"

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(
            f"Ref is stale: it names snapshot version {got} but the current "
            f"snapshot is version {expected}; re-read the snapshot"
        )


class UnknownRef(KernelError):
    code = "UnknownRef"


class EmptyRange(KernelError):
    code = "EmptyRange"


class ParseError(KernelError):
    code = "ParseError"


# virtual web
class ElementObscured(KernelError):
    code = "ElementObscured"


class ElementDisabled(KernelError):
    code = "ElementDisabled"


class NotInteractive(KernelError):
    code = "NotInteractive"


class UnknownTemplate(KernelError):
    code = "UnknownTemplate"


class InvalidParams(KernelError):
    code = "InvalidParams"


class NoDialogPending(KernelError):
    code = "NoDialogPending"


class NoSuchTab(KernelError):
    code = "NoSuchTab"


class Timeout(KernelError):
    code = "Timeout"


# execution layer
class InvalidAction(KernelError):
    code = "InvalidAction"


class InvalidBulk(KernelError):
    code = "InvalidBulk"


class PolicyDenied(KernelError):
    code = "PolicyDenied"


class ConfirmationRequired(KernelError):
    code = "ConfirmationRequired"


# safety
class MalformedUrl(KernelError):
    code = "MalformedUrl"


class ProfileError(KernelError):
    code = "ProfileError"


# context
class MissingMemory(KernelError):
    code = "MissingMemory"


class InvalidDirective(KernelError):
    code = "InvalidDirective"


# budget
class InvalidLedger(KernelError):
    code = "InvalidLedger"


# harness
class ScenarioError(KernelError):
    code = "ScenarioError"

    def __init__(self, message: str, step: int | None = None, cause: str | None = None):
        super().__init__(message)
        self.step = step
        self.cause = cause


class IncomparableRuns(KernelError):
    code = "IncomparableRuns"
