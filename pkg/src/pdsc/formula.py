"""Sorted first-order terms over integers, booleans and arrays.

Formulas are immutable trees shared freely between components. The variable
algebra (copy indexing for product programs, priming for post-states) and the
SMT-LIB2 wire rendering live here; everything downstream manipulates these
trees and never raw solver text.

Wire naming convention: copy index ``i`` renders as ``$i`` and a primed
variable as a ``_next`` suffix, so the copy-2 post-state of ``x`` is
``x$2_next``. ``'`` is not a legal SMT-LIB2 symbol character.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .sexpr import SNode, SexprError, parse_one


class SortError(Exception):
    """Operator applied to operands of the wrong sort."""


class FormulaError(Exception):
    """Structurally invalid formula operation (bad rename, bad substitution)."""


# ---------------------------------------------------------------------------
# sorts and variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sort:
    name: str
    params: tuple["Sort", ...] = ()

    @property
    def is_array(self) -> bool:
        return self.name == "Array"

    def wire(self) -> str:
        if self.params:
            return "(" + self.name + " " + " ".join(p.wire() for p in self.params) + ")"
        return self.name

    def __repr__(self) -> str:
        return self.wire()


INT = Sort("Int")
BOOL = Sort("Bool")


def array_sort(index: Sort, element: Sort) -> Sort:
    return Sort("Array", (index, element))


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class Var:
    """A program variable; (base, copy, primed) identifies it uniquely."""

    base: str
    copy: int | None
    primed: bool
    sort: Sort

    def __post_init__(self):
        if not _IDENT.match(self.base):
            raise FormulaError(f"illegal variable name {self.base!r}")
        if self.copy is not None and self.copy < 1:
            raise FormulaError(f"copy index must be >= 1, got {self.copy}")

    def wire(self) -> str:
        name = self.base
        if self.copy is not None:
            name += f"${self.copy}"
        if self.primed:
            name += "_next"
        return name

    def with_copy(self, i: int) -> "Var":
        return Var(self.base, i, self.primed, self.sort)

    def with_primed(self, primed: bool = True) -> "Var":
        return Var(self.base, self.copy, primed, self.sort)

    def __repr__(self) -> str:
        return self.wire()


# ---------------------------------------------------------------------------
# formula nodes
# ---------------------------------------------------------------------------

# ops and their rendered SMT-LIB2 heads; 'var', 'int', 'bool' are leaves
_WIRE_HEAD = {
    "and": "and", "or": "or", "not": "not", "implies": "=>", "iff": "=",
    "=": "=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
    "+": "+", "-": "-", "neg": "-", "*": "*",
    "select": "select", "store": "store",
}

_BOOL_CONNECTIVES = frozenset({"and", "or", "not", "implies", "iff"})
_COMPARISONS = frozenset({"=", "<", "<=", ">", ">="})
_INEQUALITIES = frozenset({"<", "<=", ">", ">="})


@dataclass(frozen=True)
class Formula:
    op: str
    args: tuple
    sort: Sort

    @property
    def is_var(self) -> bool:
        return self.op == "var"

    @property
    def var(self) -> Var:
        return self.args[0]

    def __repr__(self) -> str:
        return to_wire(self)


TRUE = Formula("bool", (True,), BOOL)
FALSE = Formula("bool", (False,), BOOL)


def mk_bool(value: bool) -> Formula:
    return TRUE if value else FALSE


def num(value: int) -> Formula:
    return Formula("int", (int(value),), INT)


def var(v: Var) -> Formula:
    return Formula("var", (v,), v.sort)


def _require(cond: bool, msg: str):
    if not cond:
        raise SortError(msg)


def f_and(*args: Formula) -> Formula:
    flat = []
    for a in args:
        _require(a.sort == BOOL, f"'and' needs Bool operands, got {a.sort}")
        if a == FALSE:
            return FALSE
        if a != TRUE:
            flat.append(a)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return Formula("and", tuple(flat), BOOL)


def f_or(*args: Formula) -> Formula:
    flat = []
    for a in args:
        _require(a.sort == BOOL, f"'or' needs Bool operands, got {a.sort}")
        if a == TRUE:
            return TRUE
        if a != FALSE:
            flat.append(a)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Formula("or", tuple(flat), BOOL)


def f_not(a: Formula) -> Formula:
    _require(a.sort == BOOL, f"'not' needs a Bool operand, got {a.sort}")
    if a == TRUE:
        return FALSE
    if a == FALSE:
        return TRUE
    return Formula("not", (a,), BOOL)


def implies(a: Formula, b: Formula) -> Formula:
    _require(a.sort == BOOL and b.sort == BOOL, "'=>' needs Bool operands")
    if a == TRUE:
        return b
    if a == FALSE or b == TRUE:
        return TRUE
    if b == FALSE:
        return f_not(a)
    return Formula("implies", (a, b), BOOL)


def iff(a: Formula, b: Formula) -> Formula:
    _require(a.sort == BOOL and b.sort == BOOL, "'iff' needs Bool operands")
    if a == TRUE:
        return b
    if b == TRUE:
        return a
    if a == FALSE:
        return f_not(b)
    if b == FALSE:
        return f_not(a)
    return Formula("iff", (a, b), BOOL)


def eq(a: Formula, b: Formula) -> Formula:
    _require(a.sort == b.sort, f"'=' needs matching sorts, got {a.sort} and {b.sort}")
    if a.sort == BOOL:
        return iff(a, b)
    return Formula("=", (a, b), BOOL)


def _cmp(op: str, a: Formula, b: Formula) -> Formula:
    _require(a.sort == INT and b.sort == INT, f"'{op}' needs Int operands")
    return Formula(op, (a, b), BOOL)


def lt(a, b) -> Formula:
    return _cmp("<", a, b)


def le(a, b) -> Formula:
    return _cmp("<=", a, b)


def gt(a, b) -> Formula:
    return _cmp(">", a, b)


def ge(a, b) -> Formula:
    return _cmp(">=", a, b)


def add(*args: Formula) -> Formula:
    _require(len(args) >= 2, "'+' needs at least two operands")
    for a in args:
        _require(a.sort == INT, "'+' needs Int operands")
    return Formula("+", tuple(args), INT)


def sub(a: Formula, b: Formula) -> Formula:
    _require(a.sort == INT and b.sort == INT, "'-' needs Int operands")
    return Formula("-", (a, b), INT)


def neg(a: Formula) -> Formula:
    _require(a.sort == INT, "unary '-' needs an Int operand")
    if a.op == "int":
        return num(-a.args[0])
    return Formula("neg", (a,), INT)


def mul(a: Formula, b: Formula) -> Formula:
    """Scalar multiplication; one operand must be an integer literal."""
    _require(a.sort == INT and b.sort == INT, "'*' needs Int operands")
    _require(a.op == "int" or b.op == "int",
             "nonlinear product: one '*' operand must be a constant")
    return Formula("*", (a, b), INT)


def select(arr: Formula, idx: Formula) -> Formula:
    _require(arr.sort.is_array, f"'select' needs an array, got {arr.sort}")
    _require(idx.sort == arr.sort.params[0], "'select' index sort mismatch")
    return Formula("select", (arr, idx), arr.sort.params[1])


def store(arr: Formula, idx: Formula, val: Formula) -> Formula:
    _require(arr.sort.is_array, f"'store' needs an array, got {arr.sort}")
    _require(idx.sort == arr.sort.params[0], "'store' index sort mismatch")
    _require(val.sort == arr.sort.params[1], "'store' value sort mismatch")
    return Formula("store", (arr, idx, val), arr.sort)


# ---------------------------------------------------------------------------
# traversals
# ---------------------------------------------------------------------------

def free_vars(f: Formula) -> frozenset[Var]:
    out: set[Var] = set()
    stack = [f]
    while stack:
        g = stack.pop()
        if g.op == "var":
            out.add(g.args[0])
        elif g.op not in ("int", "bool"):
            stack.extend(g.args)
    return frozenset(out)


def _map_vars(f: Formula, fn) -> Formula:
    if f.op == "var":
        return var(fn(f.args[0]))
    if f.op in ("int", "bool"):
        return f
    return Formula(f.op, tuple(_map_vars(a, fn) for a in f.args), f.sort)


def rename_copy(f: Formula, i: int) -> Formula:
    """Relabel every variable with copy index ``i``; input must be copy-free."""
    for v in free_vars(f):
        if v.copy is not None:
            raise FormulaError(f"variable {v} already carries a copy index")
    return _map_vars(f, lambda v: v.with_copy(i))


def prime(f: Formula) -> Formula:
    """Mark every variable as a post-state variable; input must be unprimed."""
    for v in free_vars(f):
        if v.primed:
            raise FormulaError(f"variable {v} is already primed")
    return _map_vars(f, lambda v: v.with_primed(True))


def substitute(f: Formula, mapping: dict[Var, Formula]) -> Formula:
    """Simultaneous substitution of variables by terms; sort-preserving."""
    for v, t in mapping.items():
        if v.sort != t.sort:
            raise SortError(f"substituting {v} : {v.sort} by a term of sort {t.sort}")
    if f.op == "var":
        return mapping.get(f.args[0], f)
    if f.op in ("int", "bool"):
        return f
    return Formula(f.op, tuple(substitute(a, mapping) for a in f.args), f.sort)


def atoms(f: Formula):
    """Yield the maximal non-connective boolean subformulas, in preorder."""
    if f.op in _BOOL_CONNECTIVES:
        for a in f.args:
            yield from atoms(a)
    elif f.op == "bool":
        return
    elif f.sort == BOOL:
        yield f
    # non-boolean terms only occur below atoms


def is_atom(f: Formula) -> bool:
    return f.sort == BOOL and f.op not in _BOOL_CONNECTIVES and f.op != "bool"


# ---------------------------------------------------------------------------
# wire format
# ---------------------------------------------------------------------------

def to_wire(f: Formula) -> str:
    """Render to SMT-LIB2 text; deterministic (same tree, same bytes)."""
    if f.op == "var":
        return f.args[0].wire()
    if f.op == "int":
        v = f.args[0]
        return str(v) if v >= 0 else f"(- {-v})"
    if f.op == "bool":
        return "true" if f.args[0] else "false"
    head = _WIRE_HEAD[f.op]
    return "(" + head + " " + " ".join(to_wire(a) for a in f.args) + ")"


def parse_wire(text: str, env: dict[str, Var]) -> Formula:
    """Parse wire text back into a formula; ``env`` maps wire names to Vars."""
    return build_formula(parse_one(text), env)


_INT_TOKEN = re.compile(r"-?[0-9]+\Z")


def build_formula(node: SNode, env: dict[str, Var]) -> Formula:
    """Build a formula from an s-expression node against a variable table."""
    if node.is_atom:
        text = node.text
        if text == "true":
            return TRUE
        if text == "false":
            return FALSE
        if _INT_TOKEN.match(text):
            return num(int(text))
        if text in env:
            return var(env[text])
        raise SexprError(f"{node.pos()}: unknown symbol {text!r}")
    if not node.items:
        raise SexprError(f"{node.pos()}: empty application")
    head = node.items[0]
    if head.is_atom is False:
        raise SexprError(f"{head.pos()}: operator must be a symbol")
    op = head.text
    args = [build_formula(a, env) for a in node.items[1:]]
    try:
        return apply_op(op, args, node)
    except SortError as e:
        raise SexprError(f"{node.pos()}: {e}") from e


def apply_op(op: str, args: list[Formula], node: SNode) -> Formula:
    """Apply a wire-format operator symbol; shared with the problem parser."""
    def arity(n):
        if len(args) != n:
            raise SexprError(f"{node.pos()}: '{op}' expects {n} operands, got {len(args)}")

    if op == "and":
        return f_and(*args)
    if op == "or":
        return f_or(*args)
    if op == "not":
        arity(1)
        return f_not(args[0])
    if op == "=>":
        arity(2)
        return implies(args[0], args[1])
    if op == "=":
        arity(2)
        return eq(args[0], args[1])
    if op in ("<", "<=", ">", ">="):
        arity(2)
        return _cmp(op, args[0], args[1])
    if op == "+":
        return add(*args)
    if op == "-":
        if len(args) == 1:
            return neg(args[0])
        arity(2)
        return sub(args[0], args[1])
    if op == "*":
        arity(2)
        return mul(args[0], args[1])
    if op == "select":
        arity(2)
        return select(args[0], args[1])
    if op == "store":
        arity(3)
        return store(args[0], args[1], args[2])
    raise SexprError(f"{node.pos()}: unknown operator {op!r}")


# ---------------------------------------------------------------------------
# canonical keys (used for predicate identity and lift matching)
# ---------------------------------------------------------------------------

_COMMUTATIVE = frozenset({"and", "or", "iff", "=", "+"})
_FLIP = {">": "<", ">=": "<="}


def canon(f: Formula) -> Formula:
    """Normalize orientation of comparisons and commutative operand order.

    Only used to decide structural identity (predicate dedup, lift matching);
    never substituted back into user-visible formulas.
    """
    if f.op in ("var", "int", "bool"):
        return f
    args = tuple(canon(a) for a in f.args)
    op = f.op
    if op in _FLIP:
        op = _FLIP[op]
        args = (args[1], args[0])
    if op in _COMMUTATIVE:
        args = tuple(sorted(args, key=to_wire))
    return Formula(op, args, f.sort)


def canon_key(f: Formula) -> str:
    return to_wire(canon(f))


# ---------------------------------------------------------------------------
# concrete evaluation (finite-domain interpreters and boolean-level checks)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrayVal:
    """Total array value: finite exceptions over a default element."""

    default: int
    entries: tuple[tuple[int, int], ...] = ()

    def get(self, idx: int) -> int:
        for k, v in self.entries:
            if k == idx:
                return v
        return self.default

    def put(self, idx: int, val: int) -> "ArrayVal":
        items = tuple((k, v) for k, v in self.entries if k != idx)
        if val != self.default:
            items += ((idx, val),)
        return ArrayVal(self.default, tuple(sorted(items)))

    def normalized(self) -> "ArrayVal":
        return ArrayVal(self.default,
                        tuple(sorted((k, v) for k, v in self.entries if v != self.default)))


def evaluate(f: Formula, env: dict[Var, object]):
    """Evaluate under a total assignment; values are int, bool or ArrayVal."""
    op = f.op
    if op == "var":
        v = f.args[0]
        if v not in env:
            raise FormulaError(f"no value for {v}")
        return env[v]
    if op in ("int", "bool"):
        return f.args[0]
    if op == "and":
        return all(evaluate(a, env) for a in f.args)
    if op == "or":
        return any(evaluate(a, env) for a in f.args)
    if op == "not":
        return not evaluate(f.args[0], env)
    if op == "implies":
        return (not evaluate(f.args[0], env)) or evaluate(f.args[1], env)
    if op == "iff":
        return evaluate(f.args[0], env) == evaluate(f.args[1], env)
    vals = [evaluate(a, env) for a in f.args]
    if op == "=":
        a, b = vals
        if isinstance(a, ArrayVal) and isinstance(b, ArrayVal):
            return a.normalized() == b.normalized()
        return a == b
    if op == "<":
        return vals[0] < vals[1]
    if op == "<=":
        return vals[0] <= vals[1]
    if op == ">":
        return vals[0] > vals[1]
    if op == ">=":
        return vals[0] >= vals[1]
    if op == "+":
        return sum(vals)
    if op == "-":
        return vals[0] - vals[1]
    if op == "neg":
        return -vals[0]
    if op == "*":
        return vals[0] * vals[1]
    if op == "select":
        return vals[0].get(vals[1])
    if op == "store":
        return vals[0].put(vals[1], vals[2])
    raise FormulaError(f"cannot evaluate operator {op!r}")
