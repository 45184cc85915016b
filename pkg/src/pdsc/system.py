"""Verification problem instances and the checks the engine's soundness
assumes: terminal-state discipline of the transition relation, and adequacy
of the predicate language for the pre/post/terminal conditions."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import formula as fm
from .formula import Formula, Var
from .solver import SolverSession


class SystemError_(Exception):
    """Ill-formed problem instance (scoping, duplicate declarations)."""


@dataclass(frozen=True)
class TransitionSystem:
    """Symbolic transition system: variables, step relation, terminal states.

    ``trans`` ranges over the variables and their primed post-state copies;
    ``terminal`` over the unprimed variables only. Terminal states are
    expected to self-loop and do nothing else; that law is solver-checked by
    :func:`check_wellformed`, not assumed.
    """

    vars: tuple[Var, ...]
    trans: Formula
    terminal: Formula

    def __post_init__(self):
        names = [v.base for v in self.vars]
        if len(set(names)) != len(names):
            raise SystemError_("duplicate variable names in transition system")
        for v in self.vars:
            if v.copy is not None or v.primed:
                raise SystemError_(f"system variable {v} must be copy-free and unprimed")
        allowed = set(self.vars) | {v.with_primed() for v in self.vars}
        for v in fm.free_vars(self.trans):
            if v not in allowed:
                raise SystemError_(f"trans mentions out-of-scope variable {v}")
        for v in fm.free_vars(self.terminal):
            if v not in set(self.vars):
                raise SystemError_(f"terminal mentions out-of-scope variable {v}")

    def terminal_for_copy(self, i: int) -> Formula:
        return fm.rename_copy(self.terminal, i)

    def composed_vars(self, k: int) -> list[Var]:
        return [v.with_copy(i) for i in range(1, k + 1) for v in self.vars]


@dataclass(frozen=True)
class KSafetyProperty:
    """Pre/post specification over k copies of the program variables."""

    k: int
    pre: Formula
    post: Formula

    def __post_init__(self):
        if self.k < 1:
            raise SystemError_(f"k must be >= 1, got {self.k}")
        for name, f in (("pre", self.pre), ("post", self.post)):
            for v in fm.free_vars(f):
                if v.primed or v.copy is None or v.copy > self.k:
                    raise SystemError_(
                        f"{name} must mention only copy-indexed unprimed variables "
                        f"with copy <= {self.k}; offending: {v}")


class PredicateSet:
    """Fixed, ordered predicate list with one boolean tracking variable each.

    Order is frozen for the whole run; duplicates (modulo comparison
    orientation and commutative operand order) are dropped on construction.
    """

    def __init__(self, preds):
        self.preds: tuple[Formula, ...] = ()
        self._index: dict[str, int] = {}
        out = []
        for p in preds:
            if p.sort != fm.BOOL:
                raise SystemError_(f"predicate {p} is not boolean")
            key = fm.canon_key(p)
            if key not in self._index:
                self._index[key] = len(out)
                out.append(p)
        self.preds = tuple(out)
        self._bools = tuple(
            Var(f"__b{i}", None, False, fm.BOOL) for i in range(len(out)))

    def __len__(self) -> int:
        return len(self.preds)

    def __iter__(self):
        return iter(self.preds)

    def __getitem__(self, i: int) -> Formula:
        return self.preds[i]

    def index_of(self, f: Formula) -> int | None:
        return self._index.get(fm.canon_key(f))

    def bool_var(self, i: int) -> Var:
        return self._bools[i]

    @property
    def bool_vars(self) -> tuple[Var, ...]:
        return self._bools

    @property
    def primed_bool_vars(self) -> tuple[Var, ...]:
        return tuple(b.with_primed() for b in self._bools)

    def definitions(self) -> list[Formula]:
        """b_p <-> p for every predicate."""
        return [fm.iff(fm.var(b), p) for b, p in zip(self._bools, self.preds)]

    def primed_definitions(self) -> list[Formula]:
        """b_p' <-> p' for every predicate."""
        return [fm.iff(fm.var(b.with_primed()), fm.prime(p))
                for b, p in zip(self._bools, self.preds)]


# ---------------------------------------------------------------------------
# well-formedness
# ---------------------------------------------------------------------------

@dataclass
class WellformedReport:
    terminal_frozen: bool | None   # F(V) and R(V,V') entail V = V'
    terminal_self_loop: bool | None  # F(V) entails R(V,V)

    @property
    def ok(self) -> bool:
        return self.terminal_frozen is True and self.terminal_self_loop is True

    @property
    def undetermined(self) -> bool:
        return self.terminal_frozen is None or self.terminal_self_loop is None


def check_wellformed(T: TransitionSystem, session: SolverSession) -> WellformedReport:
    """Verify that terminal states self-loop and take no other transition."""
    frame = fm.f_and(*[fm.eq(fm.var(v), fm.var(v.with_primed())) for v in T.vars]) \
        if T.vars else fm.TRUE
    frozen = session.is_valid(
        fm.implies(fm.f_and(T.terminal, T.trans), frame))
    stutter = fm.substitute(
        T.trans, {v.with_primed(): fm.var(v) for v in T.vars})
    self_loop = session.is_valid(fm.implies(T.terminal, stutter))
    return WellformedReport(frozen, self_loop)


# ---------------------------------------------------------------------------
# adequacy
# ---------------------------------------------------------------------------

def check_adequacy(f: Formula, P: PredicateSet, session: SolverSession,
                   *, witness: list | None = None) -> bool | None:
    """True iff ``f`` splits no abstract state of the predicate language.

    Checked by one query: two fresh copies of the composed variables that
    agree on every predicate but disagree on ``f`` must be unsatisfiable.
    None when the solver answers unknown. When ``witness`` is passed, the
    splitting predicate valuation is appended to it on failure.
    """
    vs = set(fm.free_vars(f))
    for p in P:
        vs |= fm.free_vars(p)
    sub_a = {v: fm.var(Var(v.base + "__l", v.copy, v.primed, v.sort)) for v in vs}
    sub_b = {v: fm.var(Var(v.base + "__r", v.copy, v.primed, v.sort)) for v in vs}
    parts = [fm.substitute(f, sub_a), fm.f_not(fm.substitute(f, sub_b))]
    agree = [fm.iff(fm.substitute(p, sub_a), fm.substitute(p, sub_b)) for p in P]
    res = session.check_sat(parts + agree)
    if res.is_unsat:
        return True
    if res.is_unknown:
        return None
    if witness is not None:
        bits = []
        env = {}
        for v, t in sub_a.items():
            name = t.args[0]
            if name in res.model:
                env[v] = res.model[name]
        for p in P:
            try:
                bits.append("1" if fm.evaluate(p, env) else "0")
            except fm.FormulaError:
                bits.append("?")
        witness.append("".join(bits))
    return False


# ---------------------------------------------------------------------------
# predicate mining
# ---------------------------------------------------------------------------

def mine_predicates(T: TransitionSystem, prop: KSafetyProperty,
                    extra=()) -> PredicateSet:
    """Assemble the predicate language for a problem instance.

    Three rules, in stable order: (a) every atom of the pre- and
    post-condition; (b) cross-copy equalities v^i = v^j for every integer
    variable occurring in a terminal atom or an inequality guard of the
    transition relation; (c) every terminal atom replayed in each copy.
    User-supplied predicates are appended after the mined ones.
    """
    k = prop.k
    mined: list[Formula] = []
    mined.extend(fm.atoms(prop.pre))
    mined.extend(fm.atoms(prop.post))

    guard_vars: set[str] = set()
    for a in fm.atoms(T.terminal):
        for v in fm.free_vars(a):
            if v.sort == fm.INT:
                guard_vars.add(v.base)
    for a in fm.atoms(T.trans):
        if a.op in ("<", "<=", ">", ">="):
            for v in fm.free_vars(a):
                if v.sort == fm.INT:
                    guard_vars.add(v.base)
    by_base = {v.base: v for v in T.vars}
    for base in sorted(guard_vars):
        v = by_base.get(base)
        if v is None:
            continue
        for i in range(1, k + 1):
            for j in range(i + 1, k + 1):
                mined.append(fm.eq(fm.var(v.with_copy(i)), fm.var(v.with_copy(j))))

    for a in fm.atoms(T.terminal):
        for i in range(1, k + 1):
            mined.append(fm.rename_copy(a, i))

    return PredicateSet(list(mined) + list(extra))
