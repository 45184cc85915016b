"""Predicate abstraction of the composed program.

Abstract states are total valuations of the boolean tracking variables, one
per predicate. Successor computation is exact all-SAT over the composed step
relation, and reachability is an explicit breadth-first search that returns
either the reachable set (as an invariant over the tracking variables) or a
shortest counterexample trace annotated with the schedule taken at each step.

Successor sets depend only on the source cube and the stepped copies, never
on the current composition function, so they are memoized for the lifetime
of an :class:`Abstractor` and shared by every candidate composition.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from enum import Enum

from . import formula as fm
from .composition import CompositionFunction, Schedule, step_formula, value_of
from .formula import Formula, Var
from .solver import SolverSession
from .system import KSafetyProperty, PredicateSet, TransitionSystem


class LiftError(Exception):
    """Formula is not a boolean combination of the predicate set."""


class AbstractionLimit(Exception):
    """State cap or wall-clock budget exhausted during reachability."""


class SoundnessError(Exception):
    """An internal consistency check failed; results must not be trusted."""


# ---------------------------------------------------------------------------
# abstract states and traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class AbstractState:
    """Total boolean valuation of the predicate set, packed into an int.

    Bit i holds the value of predicate i; bitstrings print predicate 0
    leftmost.
    """

    bits: int
    width: int

    @classmethod
    def of(cls, values) -> "AbstractState":
        values = tuple(values)
        bits = 0
        for i, b in enumerate(values):
            if b:
                bits |= 1 << i
        return cls(bits, len(values))

    def bit(self, i: int) -> bool:
        return bool(self.bits >> i & 1)

    def values(self) -> tuple[bool, ...]:
        return tuple(self.bit(i) for i in range(self.width))

    def bitstring(self) -> str:
        return "".join("1" if self.bit(i) else "0" for i in range(self.width))

    def env(self, P: PredicateSet) -> dict[Var, bool]:
        return {P.bool_var(i): self.bit(i) for i in range(self.width)}

    def cube_bool(self, P: PredicateSet) -> Formula:
        """Conjunction of tracking-variable literals describing this state."""
        lits = [fm.var(P.bool_var(i)) if self.bit(i) else fm.f_not(fm.var(P.bool_var(i)))
                for i in range(self.width)]
        return fm.f_and(*lits)

    def cube_concrete(self, P: PredicateSet) -> Formula:
        """The predicate cube: its satisfying states are the concretization."""
        lits = [P[i] if self.bit(i) else fm.f_not(P[i]) for i in range(self.width)]
        return fm.f_and(*lits)

    def __repr__(self) -> str:
        return f"#{self.bitstring()}"


@dataclass(frozen=True)
class TraceStep:
    state: AbstractState
    schedule: Schedule | None


@dataclass(frozen=True)
class AbstractTrace:
    steps: tuple[TraceStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise SoundnessError("empty abstract trace")
        if self.steps[-1].schedule is not None:
            raise SoundnessError("final trace entry must carry no schedule")
        for st in self.steps[:-1]:
            if st.schedule is None:
                raise SoundnessError("interior trace entry missing its schedule")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> tuple[AbstractState, ...]:
        return tuple(st.state for st in self.steps)


class CexKind(Enum):
    S1 = "S1-violation"   # terminal state falsifying the postcondition
    S2 = "S2-violation"   # state in the accumulated unreachable set


@dataclass
class ReachResult:
    safe: bool
    inv: Formula | None = None                 # over the tracking variables
    visited: frozenset[AbstractState] = frozenset()
    trace: AbstractTrace | None = None
    kind: CexKind | None = None


# ---------------------------------------------------------------------------
# lifting between the predicate language and the boolean language
# ---------------------------------------------------------------------------

_CONNECTIVES = ("and", "or", "not", "implies", "iff")


def lift(psi: Formula, P: PredicateSet) -> Formula:
    """Substitute each predicate occurrence by its tracking variable.

    The input must be a boolean combination of predicate-set members
    (matched modulo comparison orientation and commutative operand order).
    """
    idx = P.index_of(psi)
    if idx is not None:
        return fm.var(P.bool_var(idx))
    if psi.op == "bool":
        return psi
    if psi.op in _CONNECTIVES:
        return Formula(psi.op, tuple(lift(a, P) for a in psi.args), fm.BOOL)
    raise LiftError(f"atom outside the predicate language: {fm.to_wire(psi)}")


def lower(phi: Formula, P: PredicateSet) -> Formula:
    """Substitute each tracking variable by its predicate."""
    index = {b: i for i, b in enumerate(P.bool_vars)}
    def walk(g: Formula) -> Formula:
        if g.op == "var":
            v = g.args[0]
            if v in index:
                return P[index[v]]
            raise LiftError(f"not a tracking variable: {v}")
        if g.op == "bool":
            return g
        if g.op in _CONNECTIVES:
            return Formula(g.op, tuple(walk(a) for a in g.args), fm.BOOL)
        raise LiftError(f"not a boolean-level formula: {fm.to_wire(g)}")
    return walk(phi)


# ---------------------------------------------------------------------------
# one-shot abstraction queries
# ---------------------------------------------------------------------------

def abstract_states_of(session: SolverSession, phi: Formula, P: PredicateSet,
                       *, cap: int = 1 << 20) -> frozenset[AbstractState]:
    """All abstract states whose concretization intersects ``phi``."""
    models = session.all_models(phi, list(P.bool_vars), cap=cap,
                                extra=P.definitions())
    return frozenset(AbstractState.of(bits) for bits in models)


def abstract_successors(session: SolverSession, state: AbstractState,
                        M: Schedule, T: TransitionSystem,
                        f: CompositionFunction, P: PredicateSet,
                        *, cap: int = 1 << 20) -> frozenset[AbstractState]:
    """Exact abstract successor set of ``state`` when the copies in M step."""
    body = fm.f_and(state.cube_concrete(P), f.condition(M),
                    step_formula(T, f.k, M))
    models = session.all_models(body, list(P.primed_bool_vars), cap=cap,
                                extra=P.primed_definitions())
    return frozenset(AbstractState.of(bits) for bits in models)


# ---------------------------------------------------------------------------
# incremental abstraction context
# ---------------------------------------------------------------------------

class Abstractor:
    """Owns one solver scope for a verification run.

    Declarations and the tracking-variable definitions are asserted once;
    per-query work happens under push/pop. Close (or use as a context
    manager) to release the scope so the session can be reused.
    """

    def __init__(self, session: SolverSession, T: TransitionSystem,
                 prop: KSafetyProperty, P: PredicateSet, *,
                 max_states: int | None = None, model_cap: int = 1 << 20,
                 deadline: float | None = None):
        self.session = session
        self.T = T
        self.prop = prop
        self.P = P
        self.max_states = max_states if max_states is not None else 1 << len(P)
        self.model_cap = model_cap
        self.deadline = deadline
        self.term_bits = [lift(T.terminal_for_copy(i), P)
                          for i in range(1, prop.k + 1)]
        self.post_bit = lift(prop.post, P)
        self._succ_cache: dict[tuple[int, int], frozenset[AbstractState]] = {}
        self._init: frozenset[AbstractState] | None = None
        self._step_wire: dict[Schedule, str] = {}
        self.states_enumerated = 0
        self.last_edges: list[tuple[AbstractState, Schedule, AbstractState]] = []
        self.last_visited: frozenset[AbstractState] = frozenset()
        self._open = False
        self._setup()

    def _setup(self):
        s = self.session
        s.push()
        self._open = True
        k = self.prop.k
        composed = self.T.composed_vars(k)
        s.declare(composed)
        s.declare(v.with_primed() for v in composed)
        s.declare(self.P.bool_vars)
        s.declare(self.P.primed_bool_vars)
        for d in self.P.definitions():
            s.assert_formula(d)
        for d in self.P.primed_definitions():
            s.assert_formula(d)

    def close(self):
        if self._open:
            self.session.pop()
            self._open = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check_deadline(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise AbstractionLimit("wall-clock budget exhausted")

    # -- queries ---------------------------------------------------------------

    def initial_states(self) -> frozenset[AbstractState]:
        if self._init is None:
            s = self.session
            s.push()
            try:
                s.assert_formula(self.prop.pre)
                models = s._enumerate(list(self.P.bool_vars), self.model_cap)
            finally:
                s.pop()
            self._init = frozenset(AbstractState.of(m) for m in models)
            self.states_enumerated += len(self._init)
        return self._init

    def states_of(self, phi: Formula) -> frozenset[AbstractState]:
        s = self.session
        s.push()
        try:
            s.assert_formula(phi)
            models = s._enumerate(list(self.P.bool_vars), self.model_cap)
        finally:
            s.pop()
        return frozenset(AbstractState.of(m) for m in models)

    def successors(self, state: AbstractState, M: Schedule
                   ) -> frozenset[AbstractState]:
        key = (state.bits, M.mask)
        cached = self._succ_cache.get(key)
        if cached is not None:
            return cached
        self._check_deadline()
        s = self.session
        wire = self._step_wire.get(M)
        if wire is None:
            wire = fm.to_wire(step_formula(self.T, self.prop.k, M))
            self._step_wire[M] = wire
        s.push()
        try:
            s.assert_formula(state.cube_bool(self.P))
            s.assert_text(wire)
            models = s._enumerate(list(self.P.primed_bool_vars), self.model_cap)
        finally:
            s.pop()
        result = frozenset(AbstractState.of(m) for m in models)
        self._succ_cache[key] = result
        self.states_enumerated += len(result)
        return result

    # -- reachability ------------------------------------------------------------

    def abs_reach(self, f: CompositionFunction,
                  unreach: frozenset[AbstractState] | set[AbstractState],
                  lifted: dict[Schedule, Formula] | None = None) -> ReachResult:
        """Breadth-first reachability over the abstraction of the composed
        program; shortest bad trace, or the exact reachable set when safe."""
        if lifted is None:
            from .composition import lifted_conditions
            lifted = lifted_conditions(f, self.P)

        def badness(s: AbstractState) -> CexKind | None:
            if s in unreach:
                return CexKind.S2
            env = s.env(self.P)
            if all(fm.evaluate(t, env) for t in self.term_bits) and \
                    not fm.evaluate(self.post_bit, env):
                return CexKind.S1
            return None

        parent: dict[AbstractState, tuple[AbstractState, Schedule] | None] = {}
        sched_of: dict[AbstractState, Schedule] = {}
        edges: list[tuple[AbstractState, Schedule, AbstractState]] = []

        def trace_to(s: AbstractState, kind: CexKind) -> ReachResult:
            chain: list[AbstractState] = [s]
            while parent[chain[-1]] is not None:
                chain.append(parent[chain[-1]][0])
            chain.reverse()
            steps = []
            for idx, st in enumerate(chain):
                if idx + 1 < len(chain):
                    steps.append(TraceStep(st, parent[chain[idx + 1]][1]))
                else:
                    steps.append(TraceStep(st, None))
            self.last_edges = edges
            self.last_visited = frozenset(parent)
            return ReachResult(False, trace=AbstractTrace(tuple(steps)), kind=kind)

        init = sorted(self.initial_states())
        queue: deque[AbstractState] = deque()
        for s in init:
            parent[s] = None
            kind = badness(s)
            if kind is not None:
                return trace_to(s, kind)
            queue.append(s)

        while queue:
            self._check_deadline()
            s = queue.popleft()
            M = value_of(f, s, self.P, lifted)
            if M is None:
                raise SoundnessError(
                    f"no schedule condition holds on reachable state "
                    f"{s.bitstring()} outside the unreachable set")
            sched_of[s] = M
            for t in sorted(self.successors(s, M)):
                edges.append((s, M, t))
                if t in parent:
                    continue
                parent[t] = (s, M)
                kind = badness(t)
                if kind is not None:
                    return trace_to(t, kind)
                if len(parent) > self.max_states:
                    raise AbstractionLimit(
                        f"more than {self.max_states} abstract states")
                queue.append(t)

        visited = frozenset(parent)
        self._audit_safe(visited, unreach, sched_of)
        self.last_edges = edges
        self.last_visited = visited
        inv = fm.f_or(*[s.cube_bool(self.P) for s in sorted(visited)])
        return ReachResult(True, inv=inv, visited=visited)

    def _audit_safe(self, visited, unreach, sched_of):
        """The four facts a safe verdict rests on, revalidated from caches."""
        if not self.initial_states() <= visited:
            raise SoundnessError("initial abstract states escaped the search")
        for s in visited:
            env = s.env(self.P)
            if all(fm.evaluate(t, env) for t in self.term_bits) and \
                    not fm.evaluate(self.post_bit, env):
                raise SoundnessError("safe verdict with a property-violating state")
            if s in unreach:
                raise SoundnessError("safe verdict with a blocked state reached")
            if not self.successors(s, sched_of[s]) <= visited:
                raise SoundnessError("reachable set is not successor-closed")

    # -- debugging ------------------------------------------------------------

    def dot_graph(self) -> str:
        """DOT rendering of the abstract graph explored by the last search."""
        lines = ["digraph absreach {"]
        for s in sorted(self.last_visited):
            lines.append(f'  "{s.bitstring()}";')
        for s, M, t in self.last_edges:
            lines.append(f'  "{s.bitstring()}" -> "{t.bitstring()}" '
                         f'[label="{M.label()}"];')
        lines.append("}")
        return "\n".join(lines)
