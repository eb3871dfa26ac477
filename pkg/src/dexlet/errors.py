"""Exception hierarchy shared by every pass.

User-facing errors carry a short code (``E001``...) and an optional source
location; the CLI renders them as ``file:line:col: error[CODE]: message``.
"""

from __future__ import annotations


class DexError(Exception):
    code = "E000"

    def __init__(self, message: str, loc: tuple[int, int] | None = None):
        super().__init__(message)
        self.message = message
        self.loc = loc

    def __str__(self) -> str:
        return self.message


class ParseError(DexError):
    code = "E001"

    def __init__(self, message, loc=None, expected=()):
        super().__init__(message, loc)
        self.expected = frozenset(expected)


class UnboundVariable(DexError):
    code = "E002"


class DexTypeError(DexError):
    code = "E003"


class EffectError(DexTypeError):
    code = "E004"


class ConstraintError(DexTypeError):
    code = "E005"

    def __init__(self, judgement: str, ty, loc=None):
        from .printer import show_value

        super().__init__(f"constraint {judgement} not satisfied by {show_value(ty)}", loc)
        self.judgement = judgement
        self.type = ty


class UnannotatedBinder(DexError):
    code = "E006"


class TelescopeError(DexError):
    code = "E007"


class UnsupportedTangent(DexError):
    code = "E008"


class NotLinear(DexError):
    code = "E009"


class OutOfBounds(DexError):
    code = "E010"

    def __init__(self, index: int, size: int):
        super().__init__(f"ordinal {index} out of bounds for index set of size {size}")
        self.index = index
        self.size = size


class UnresolvedSize(DexError):
    code = "E011"


class StateInParallel(DexError):
    code = "E012"


class EscapedRef(DexError):
    code = "E013"


class NonVSpaceResult(DexError):
    code = "E014"


class InternalError(Exception):
    """An invariant of the compiler itself was violated (exit code 2)."""
