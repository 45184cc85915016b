"""The inference loop: candidate compositions are repaired against abstract
counterexamples until the abstraction is safe or the blocked-state set meets
an initial state.

Every safe result is re-validated end to end by :func:`check_pair`, five
solver validity queries that do not depend on how the search ran. A failure
there is an internal soundness error, never a user-facing verdict.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

from . import formula as fm
from .abstraction import (AbstractionLimit, AbstractState, AbstractTrace,
                          Abstractor, CexKind, SoundnessError, lift, lower)
from .composition import (CompositionFunction, Schedule, all_schedules,
                          fairness_holds, is_starving, lifted_conditions,
                          lockstep, modify, step_formula, value_of)
from .formula import Formula, Var
from .solver import EnumerationLimit, SolverSession
from .system import KSafetyProperty, PredicateSet, TransitionSystem


class ExclusionSet:
    """Insertion-ordered set of (abstract state, schedule) constraints."""

    def __init__(self):
        self._items: dict[tuple[AbstractState, Schedule], int] = {}

    def add(self, state: AbstractState, M: Schedule):
        key = (state, M)
        if key in self._items:
            raise SoundnessError(
                f"constraint ({state.bitstring()}, {M.label()}) excluded twice")
        self._items[key] = len(self._items)

    def __contains__(self, key) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return list(self._items)


@dataclass
class PdscState:
    """Mutable loop state; exposed for inspection and tests."""

    f: CompositionFunction
    excluded: ExclusionSet
    unreach: list[AbstractState]
    iterations: int = 0

    def unreach_formula(self, P: PredicateSet) -> Formula:
        return fm.f_or(*[s.cube_bool(P) for s in self.unreach])


class VerdictKind(Enum):
    VERIFIED = "verified"
    NO_SOLUTION = "no_solution"
    RESOURCE_LIMIT = "resource_limit"


@dataclass
class Verdict:
    kind: VerdictKind
    composition: CompositionFunction | None = None
    invariant: Formula | None = None          # in the predicate language
    invariant_bits: Formula | None = None     # over the tracking variables
    iterations: int = 0
    excluded: int = 0
    unreach_cubes: int = 0
    states_explored: int = 0
    wall_ms: int = 0
    check_pair_report: "CheckPairReport | None" = None
    bmc_witness: list[dict[str, object]] | None = None
    reason: str = ""
    iteration_log: list[dict] = field(default_factory=list)
    graph: str | None = None

    @property
    def verified(self) -> bool:
        return self.kind == VerdictKind.VERIFIED


# ---------------------------------------------------------------------------
# trace plumbing
# ---------------------------------------------------------------------------

def last_step(trace: AbstractTrace) -> tuple[AbstractState, Schedule]:
    """The state before last and the schedule taken there."""
    if len(trace) < 2:
        raise SoundnessError("last_step on a length-1 trace")
    step = trace.steps[-2]
    return step.state, step.schedule


def remove_last_step(trace: AbstractTrace) -> AbstractTrace:
    """Drop the final state; the new last state loses its schedule."""
    if len(trace) < 2:
        raise SoundnessError("remove_last_step on a length-1 trace")
    from .abstraction import TraceStep
    steps = trace.steps[:-2] + (TraceStep(trace.steps[-2].state, None),)
    return AbstractTrace(steps)


def all_excluded_or_starving(state: AbstractState, excluded: ExclusionSet,
                             term_bits: list[Formula], P: PredicateSet,
                             k: int) -> bool:
    """No schedule remains that is fair and not yet ruled out for ``state``."""
    return all(
        is_starving(state, M, term_bits, P) or (state, M) in excluded
        for M in all_schedules(k))


# ---------------------------------------------------------------------------
# the composition-invariant pair oracle
# ---------------------------------------------------------------------------

@dataclass
class CheckPairReport:
    """Outcome of the five validity queries; None entries mean unknown."""

    initiation: bool | None
    consecution: dict[str, bool | None]
    safety: bool | None
    coverage: bool | None
    fairness: dict[str, bool | None]

    @property
    def passed(self) -> bool:
        return (self.initiation is True and self.safety is True
                and self.coverage is True
                and all(v is True for v in self.consecution.values())
                and all(v is True for v in self.fairness.values()))

    @property
    def inconclusive(self) -> bool:
        verdicts = [self.initiation, self.safety, self.coverage,
                    *self.consecution.values(), *self.fairness.values()]
        return any(v is None for v in verdicts)

    def as_dict(self) -> dict:
        return {
            "initiation": self.initiation,
            "consecution": dict(self.consecution),
            "safety": self.safety,
            "coverage": self.coverage,
            "fairness": dict(self.fairness),
            "passed": self.passed,
        }


def check_pair(T: TransitionSystem, prop: KSafetyProperty,
               f: CompositionFunction, inv: Formula,
               session: SolverSession) -> CheckPairReport:
    """Validity of initiation, per-schedule consecution, safety, coverage
    and fairness for a candidate composition-invariant pair."""
    k = prop.k
    terms = [T.terminal_for_copy(i) for i in range(1, k + 1)]
    all_terminal = fm.f_and(*terms)
    inv_next = fm.prime(inv)

    initiation = session.is_valid(fm.implies(prop.pre, inv))
    consecution: dict[str, bool | None] = {}
    for M, cond in f.conditions:
        body = fm.f_and(inv, cond, step_formula(T, k, M))
        consecution[M.label()] = session.is_valid(fm.implies(body, inv_next))
    safety = session.is_valid(
        fm.implies(inv, fm.implies(all_terminal, prop.post)))
    coverage = session.is_valid(
        fm.implies(inv, fm.f_or(*[cond for _, cond in f.conditions])))
    fairness: dict[str, bool | None] = {}
    some_unfinished = fm.f_or(*[fm.f_not(t) for t in terms])
    for M, cond in f.conditions:
        scheduled_unfinished = fm.f_or(*[fm.f_not(terms[j - 1]) for j in M.members])
        fairness[M.label()] = session.is_valid(
            fm.implies(fm.f_and(cond, some_unfinished), scheduled_unfinished))
    return CheckPairReport(initiation, consecution, safety, coverage, fairness)


# ---------------------------------------------------------------------------
# bounded concrete counterexample check
# ---------------------------------------------------------------------------

@dataclass
class BmcResult:
    feasible: bool | None                       # None when the solver is unsure
    witness: list[dict[str, object]] | None = None

    @property
    def spurious(self) -> bool:
        return self.feasible is False


def bmc_check(T: TransitionSystem, prop: KSafetyProperty, trace: AbstractTrace,
              P: PredicateSet, session: SolverSession) -> BmcResult:
    """Unroll the composed step relation along a trace's cubes and schedules.

    Satisfiable means the trace concretizes to a genuine property violation:
    the final state is all-terminal and falsifies the postcondition while the
    first satisfies the precondition. The witness lists per-step values.
    """
    k = prop.k
    composed = T.composed_vars(k)
    n = len(trace.steps)

    def at(t: int) -> dict[Var, Formula]:
        return {v: fm.var(Var(f"{v.base}__t{t}", v.copy, False, v.sort))
                for v in composed}

    subs = [at(t) for t in range(n)]
    constraints = [fm.substitute(prop.pre, subs[0])]
    for t, step in enumerate(trace.steps):
        constraints.append(fm.substitute(step.state.cube_concrete(P), subs[t]))
        if step.schedule is not None:
            rel = step_formula(T, k, step.schedule)
            mapping = dict(subs[t])
            for v, tgt in subs[t + 1].items():
                mapping[v.with_primed()] = tgt
            constraints.append(fm.substitute(rel, mapping))
    final = subs[n - 1]
    all_terminal = fm.f_and(*[T.terminal_for_copy(i) for i in range(1, k + 1)])
    constraints.append(fm.substitute(all_terminal, final))
    constraints.append(fm.f_not(fm.substitute(prop.post, final)))

    res = session.check_sat(constraints)
    if res.is_unknown:
        return BmcResult(None)
    if res.is_unsat:
        return BmcResult(False)
    steps = []
    for t in range(n):
        row: dict[str, object] = {}
        for v in composed:
            sv = subs[t][v].args[0]
            if sv in res.model:
                row[v.wire()] = res.model[sv]
        steps.append(row)
    return BmcResult(True, steps)


# ---------------------------------------------------------------------------
# the main loop
# ---------------------------------------------------------------------------

def verify(T: TransitionSystem, prop: KSafetyProperty, P: PredicateSet,
           session: SolverSession, *,
           max_iters: int | None = None,
           timeout_secs: float | None = None,
           max_abstract_states: int | None = None,
           bmc_each_cex: bool = False,
           collect_graph: bool = False) -> Verdict:
    """Infer a composition-invariant pair, or show none exists in the
    predicate language, starting from the lock-step composition.

    Well-formedness and adequacy are assumed checked by the caller.
    """
    start = time.monotonic()
    deadline = start + timeout_secs if timeout_secs else None
    k = prop.k
    bound = (1 << len(P)) * ((1 << k) - 1)

    state = PdscState(f=lockstep(k), excluded=ExclusionSet(), unreach=[])
    unreach_set: set[AbstractState] = set()
    s1_traces: list[AbstractTrace] = []
    log: list[dict] = []
    states_explored = 0
    last_graph: str | None = None

    def wall_ms() -> int:
        return int((time.monotonic() - start) * 1000)

    def finish(verdict: Verdict) -> Verdict:
        verdict.iterations = state.iterations
        verdict.excluded = len(state.excluded)
        verdict.unreach_cubes = len(state.unreach)
        verdict.states_explored = states_explored
        verdict.wall_ms = wall_ms()
        verdict.iteration_log = log
        verdict.composition = verdict.composition or state.f
        verdict.graph = last_graph
        return verdict

    def no_solution() -> Verdict:
        witness = None
        seen = set()
        for tr in sorted(s1_traces, key=len):
            if tr.states in seen:
                continue
            seen.add(tr.states)
            res = bmc_check(T, prop, tr, P, session)
            if res.feasible:
                witness = res.witness
                break
        return finish(Verdict(VerdictKind.NO_SOLUTION, bmc_witness=witness))

    with Abstractor(session, T, prop, P, max_states=max_abstract_states,
                    deadline=deadline) as abstractor:
        term_bits = abstractor.term_bits
        init_states = abstractor.initial_states()

        while True:
            state.iterations += 1
            if state.iterations > bound:
                raise SoundnessError(
                    f"iteration count exceeded the {bound} bound")
            if max_iters is not None and state.iterations > max_iters:
                return finish(Verdict(VerdictKind.RESOURCE_LIMIT,
                                      reason=f"iteration limit {max_iters}"))
            if deadline is not None and time.monotonic() > deadline:
                return finish(Verdict(VerdictKind.RESOURCE_LIMIT,
                                      reason=f"timeout after {timeout_secs}s"))

            lifted = lifted_conditions(state.f, P)
            if not fairness_holds(state.f, P, term_bits, session):
                raise SoundnessError("candidate composition is unfair")

            prev_excluded = len(state.excluded)
            try:
                res = abstractor.abs_reach(state.f, unreach_set, lifted)
            except (AbstractionLimit, EnumerationLimit) as e:
                return finish(Verdict(VerdictKind.RESOURCE_LIMIT, reason=str(e)))
            states_explored += len(abstractor.last_visited)
            if collect_graph:
                last_graph = abstractor.dot_graph()

            if res.safe:
                log.append({"iteration": state.iterations, "result": "safe"})
                inv = lower(res.inv, P)
                report = check_pair(T, prop, state.f, inv, session)
                if report.inconclusive:
                    return finish(Verdict(
                        VerdictKind.RESOURCE_LIMIT, check_pair_report=report,
                        reason="solver returned unknown during final validation"))
                if not report.passed:
                    raise SoundnessError(
                        f"final validation failed: {report.as_dict()}")
                return finish(Verdict(
                    VerdictKind.VERIFIED, composition=state.f, invariant=inv,
                    invariant_bits=res.inv, check_pair_report=report))

            trace = res.trace
            log.append({"iteration": state.iterations, "result": "cex",
                        "kind": res.kind.value, "trace_len": len(trace)})
            if res.kind == CexKind.S1:
                s1_traces.append(trace)
                if bmc_each_cex:
                    concrete = bmc_check(T, prop, trace, P, session)
                    if concrete.feasible:
                        return finish(Verdict(VerdictKind.NO_SOLUTION,
                                              bmc_witness=concrete.witness))

            if len(trace) == 1:
                # An initial abstract state is itself bad: no schedule to
                # blame, so it goes straight to the blocked set, where it
                # meets the precondition and forces the no-solution verdict.
                s0 = trace.steps[0].state
                if s0 not in unreach_set:
                    unreach_set.add(s0)
                    state.unreach.append(s0)
                return no_solution()

            s, M = last_step(trace)
            state.excluded.add(s, M)
            while all_excluded_or_starving(s, state.excluded, term_bits, P, k):
                if s not in unreach_set:
                    unreach_set.add(s)
                    state.unreach.append(s)
                if s in init_states:
                    return no_solution()
                trace = remove_last_step(trace)
                s, M = last_step(trace)
                state.excluded.add(s, M)

            if len(state.excluded) <= prev_excluded:
                raise SoundnessError("exclusion set failed to grow")
            state.f = modify(state.f, s, M, state.excluded, P, term_bits)
