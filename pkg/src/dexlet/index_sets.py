"""Index sets: Unit, Fin n, pairs and Either.

Members are represented by their runtime values: ``()`` for Unit, a plain
int ordinal for ``Fin n``, a tuple for pairs and a ``Sum`` for Either.  Pairs
enumerate row-major (left component is the major axis) and every Left member
precedes every Right member.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import core_ir as ir
from .errors import ConstraintError, OutOfBounds, UnresolvedSize


@dataclass(frozen=True, slots=True)
class Sum:
    is_left: bool
    payload: object

    def __repr__(self):
        return f"{'Left' if self.is_left else 'Right'} {self.payload!r}"


class IndexSet:
    __slots__ = ("size",)

    def ordinal(self, v) -> int:
        raise NotImplementedError

    def from_ordinal(self, i: int):
        if not 0 <= i < self.size:
            raise OutOfBounds(i, self.size)
        return self._member(i)

    def _member(self, i):
        raise NotImplementedError

    def enumerate(self) -> list:
        return [self._member(i) for i in range(self.size)]

    def reverse(self, v):
        return self._member(self.size - 1 - self.ordinal(v))

    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self), self._key()))


class UnitSet(IndexSet):
    __slots__ = ()

    def __init__(self):
        self.size = 1

    def ordinal(self, v):
        return 0

    def _member(self, i):
        return ()

    def _key(self):
        return ()

    def __repr__(self):
        return "Unit"


class FinSet(IndexSet):
    __slots__ = ()

    def __init__(self, n: int):
        if n < 0:
            raise UnresolvedSize(f"negative index set size {n}")
        self.size = n

    def ordinal(self, v):
        return v

    def _member(self, i):
        return i

    def enumerate(self):
        return list(range(self.size))

    def _key(self):
        return self.size

    def __repr__(self):
        return f"Fin {self.size}"


class PairSet(IndexSet):
    __slots__ = ("left", "right")

    def __init__(self, left: IndexSet, right: IndexSet):
        self.left, self.right = left, right
        self.size = left.size * right.size

    def ordinal(self, v):
        return self.left.ordinal(v[0]) * self.right.size + self.right.ordinal(v[1])

    def _member(self, i):
        q, r = divmod(i, self.right.size)
        return (self.left._member(q), self.right._member(r))

    def _key(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"({self.left!r}, {self.right!r})"


class EitherSet(IndexSet):
    __slots__ = ("left", "right")

    def __init__(self, left: IndexSet, right: IndexSet):
        self.left, self.right = left, right
        self.size = left.size + right.size

    def ordinal(self, v):
        if v.is_left:
            return self.left.ordinal(v.payload)
        return self.left.size + self.right.ordinal(v.payload)

    def _member(self, i):
        if i < self.left.size:
            return Sum(True, self.left._member(i))
        return Sum(False, self.right._member(i - self.left.size))

    def _key(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"Either {self.left!r} {self.right!r}"


UNIT_SET = UnitSet()


def is_index_set(ty) -> bool:
    """The IdxSet judgement on a type value (sizes need not be resolved)."""
    match ty:
        case ir.Meta() if ty.solution is not None:
            return is_index_set(ty.solution)
        case ir.BaseType("Unit") | ir.FinType(_):
            return True
        case ir.PairType(a, b) | ir.EitherType(a, b):
            return is_index_set(a) and is_index_set(b)
    return False


def descriptor(ty) -> IndexSet:
    """Descriptor for an index-set type whose Fin sizes are literals."""
    match ty:
        case ir.Meta() if ty.solution is not None:
            return descriptor(ty.solution)
        case ir.BaseType("Unit"):
            return UNIT_SET
        case ir.FinType(ir.Lit("Int", n)):
            return FinSet(n)
        case ir.FinType(size):
            raise UnresolvedSize(f"index set size is not resolved: {size!r}")
        case ir.PairType(a, b):
            return PairSet(descriptor(a), descriptor(b))
        case ir.EitherType(a, b):
            return EitherSet(descriptor(a), descriptor(b))
    raise ConstraintError("IdxSet", ty)


def set_type(d: IndexSet) -> ir.Value:
    match d:
        case UnitSet():
            return ir.UNIT_T
        case FinSet():
            return ir.FinType(ir.int_lit(d.size))
        case PairSet():
            return ir.PairType(set_type(d.left), set_type(d.right))
        case EitherSet():
            return ir.EitherType(set_type(d.left), set_type(d.right))
    raise TypeError(d)


def member_value(v, d: IndexSet) -> ir.Value:
    """The core IR value denoting a runtime member of ``d``."""
    match d:
        case UnitSet():
            return ir.UNIT
        case FinSet():
            return ir.FinLit(v, ir.int_lit(d.size))
        case PairSet():
            return ir.Pair(member_value(v[0], d.left), member_value(v[1], d.right))
        case EitherSet():
            if v.is_left:
                return ir.InjLeft(set_type(d.right), member_value(v.payload, d.left))
            return ir.InjRight(set_type(d.left), member_value(v.payload, d.right))
    raise TypeError(d)


# Module-level spellings of the interface.

def size(d: IndexSet) -> int:
    return d.size


def ordinal(v, d: IndexSet) -> int:
    return d.ordinal(v)


def from_ordinal(i: int, d: IndexSet):
    return d.from_ordinal(i)


def reverse_index(v, d: IndexSet):
    return d.reverse(v)


def enumerate_set(d: IndexSet) -> list:
    return d.enumerate()
