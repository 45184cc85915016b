"""Schedule conditions for product programs and their repair algebra.

A composition function maps every composed state to the nonempty set of
copies that step next, encoded as one condition per schedule set. The
conditions are kept a strict partition by construction: the repair step moves
one predicate cube from the condition that produced a counterexample to a
freshly chosen schedule, so two conditions can never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import formula as fm
from .formula import Formula, Var


class CompositionError(Exception):
    """Violated precondition in the composition algebra."""


@dataclass(frozen=True, order=True)
class Schedule:
    """Nonempty subset of {1..k}, canonically a bitmask of width k."""

    mask: int
    k: int

    def __post_init__(self):
        if not (0 < self.mask < (1 << self.k)):
            raise CompositionError(f"schedule mask {self.mask} out of range for k={self.k}")

    @classmethod
    def of(cls, members, k: int) -> "Schedule":
        mask = 0
        for i in members:
            if not 1 <= i <= k:
                raise CompositionError(f"copy index {i} out of range for k={k}")
            mask |= 1 << (i - 1)
        return cls(mask, k)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.k + 1) if self.mask >> (i - 1) & 1)

    def __contains__(self, i: int) -> bool:
        return 1 <= i <= self.k and bool(self.mask >> (i - 1) & 1)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")

    def label(self) -> str:
        return "{" + ",".join(str(i) for i in self.members) + "}"

    def __repr__(self) -> str:
        return f"Schedule{self.label()}"


def all_schedules(k: int) -> list[Schedule]:
    return [Schedule(m, k) for m in range(1, 1 << k)]


@dataclass(frozen=True)
class CompositionFunction:
    """Conditions per schedule; a schedule with no entry has condition false."""

    k: int
    conditions: tuple[tuple[Schedule, Formula], ...]

    @classmethod
    def of(cls, k: int, mapping: dict[Schedule, Formula]) -> "CompositionFunction":
        items = tuple(sorted(
            ((M, cond) for M, cond in mapping.items() if cond != fm.FALSE),
            key=lambda mc: mc[0].mask))
        for M, _ in items:
            if M.k != k:
                raise CompositionError(f"schedule {M} does not match k={k}")
        return cls(k, items)

    def condition(self, M: Schedule) -> Formula:
        for sched, cond in self.conditions:
            if sched == M:
                return cond
        return fm.FALSE

    @property
    def defined_schedules(self) -> tuple[Schedule, ...]:
        return tuple(M for M, _ in self.conditions)

    def as_dict(self) -> dict[Schedule, Formula]:
        return dict(self.conditions)


def lockstep(k: int) -> CompositionFunction:
    """All copies step together, everywhere."""
    if k < 1:
        raise CompositionError("k must be >= 1")
    return CompositionFunction.of(k, {Schedule((1 << k) - 1, k): fm.TRUE})


def sequential(k: int, terminal: Formula) -> CompositionFunction:
    """Copies run one after the other, ordered by index.

    Copy i steps while it has not terminated and all earlier copies have;
    the last copy also absorbs the all-terminated states.
    """
    if k < 1:
        raise CompositionError("k must be >= 1")
    term = [fm.rename_copy(terminal, i) for i in range(1, k + 1)]
    conds: dict[Schedule, Formula] = {}
    for i in range(1, k + 1):
        earlier = fm.f_and(*[term[j - 1] for j in range(1, i)])
        if i < k:
            conds[Schedule.of([i], k)] = fm.f_and(fm.f_not(term[i - 1]), earlier)
        else:
            conds[Schedule.of([i], k)] = earlier
    return CompositionFunction.of(k, conds)


def step_formula(T, k: int, M: Schedule) -> Formula:
    """Transition of the copies in M, frame equalities for the rest."""
    parts = []
    for j in range(1, k + 1):
        if j in M:
            parts.append(fm.rename_copy(T.trans, j))
        else:
            for v in T.vars:
                vj = v.with_copy(j)
                parts.append(fm.eq(fm.var(vj.with_primed()), fm.var(vj)))
    return fm.f_and(*parts)


def compose_transition(T, f: CompositionFunction) -> Formula:
    """Full transition relation of the composed program under f."""
    return fm.f_or(*[
        fm.f_and(cond, step_formula(T, f.k, M)) for M, cond in f.conditions])


# ---------------------------------------------------------------------------
# evaluation on abstract states
# ---------------------------------------------------------------------------
# Abstract states enter as duck-typed objects exposing env(P) (boolean
# variable assignment) and cube_concrete(P) (the full predicate cube).

def lifted_conditions(f: CompositionFunction, P) -> dict[Schedule, Formula]:
    from .abstraction import lift
    return {M: lift(cond, P) for M, cond in f.conditions}


def value_of(f: CompositionFunction, state, P,
             lifted: dict[Schedule, Formula] | None = None):
    """The unique schedule whose condition holds on ``state``, or None.

    Two conditions holding at once means the disjointness invariant broke;
    that is an internal error, not a user-facing condition.
    """
    if lifted is None:
        lifted = lifted_conditions(f, P)
    env = state.env(P)
    holder = None
    for M, cond in lifted.items():
        if fm.evaluate(cond, env):
            if holder is not None:
                raise CompositionError(
                    f"conditions for {holder.label()} and {M.label()} overlap "
                    f"on state {state.bitstring()}")
            holder = M
    return holder


def is_starving(state, M: Schedule, term_bits: list[Formula], P) -> bool:
    """True when some copy is unfinished but every copy in M is finished."""
    env = state.env(P)
    unfinished = [not fm.evaluate(t, env) for t in term_bits]
    if not any(unfinished):
        return False
    return not any(unfinished[j - 1] for j in M.members)


def modify(f: CompositionFunction, state, M_old: Schedule, excluded,
           P, term_bits: list[Formula]) -> CompositionFunction:
    """Reroute one abstract state to a fresh schedule.

    The state's cube is removed from the condition of ``M_old`` and added to
    the condition of the selected replacement: the non-starving schedule not
    excluded for this state with the most copies, ties broken by ascending
    bitmask. Every other condition is untouched, so disjointness and the
    values on all other abstract states are preserved.
    """
    candidates = [
        M for M in all_schedules(f.k)
        if (state, M) not in excluded and not is_starving(state, M, term_bits, P)]
    if not candidates:
        raise CompositionError(
            f"no admissible schedule left for state {state.bitstring()}; "
            "it belongs in the unreachable set")
    M_new = max(candidates, key=lambda M: (M.size, -M.mask))
    cube = state.cube_concrete(P)
    conds = f.as_dict()
    conds[M_old] = fm.f_and(f.condition(M_old), fm.f_not(cube))
    conds[M_new] = fm.f_or(f.condition(M_new), cube)
    return CompositionFunction.of(f.k, conds)


def normalize(conditions: dict[Schedule, Formula], k: int) -> CompositionFunction:
    """Turn arbitrary conditions into a disjoint, covering partition.

    Conditions are disjoined away from all lower-mask conditions, and the
    all-copies schedule absorbs whatever no condition covers.
    """
    order = all_schedules(k)
    given = {M: conditions.get(M, fm.FALSE) for M in order}
    out: dict[Schedule, Formula] = {}
    for idx, M in enumerate(order):
        cond = given[M]
        for N in order[:idx]:
            cond = fm.f_and(cond, fm.f_not(given[N]))
        out[M] = cond
    everything = Schedule((1 << k) - 1, k)
    covered = fm.f_or(*[given[M] for M in order])
    out[everything] = fm.f_or(out[everything], fm.f_not(covered))
    return CompositionFunction.of(k, out)


def fairness_holds(f: CompositionFunction, P, term_bits: list[Formula],
                   session=None, *, max_enum_vars: int = 16) -> bool:
    """Check that no condition schedules only finished copies.

    For every defined schedule M: C_M and (some copy unfinished) must entail
    (some copy in M unfinished), at the boolean level. Uses the solver when a
    session is given, otherwise enumerates assignments of the occurring
    boolean variables.
    """
    from .abstraction import lift
    any_unfinished = fm.f_or(*[fm.f_not(t) for t in term_bits])
    for M, cond in f.conditions:
        lifted = lift(cond, P)
        m_unfinished = fm.f_or(*[fm.f_not(term_bits[j - 1]) for j in M.members])
        claim = fm.implies(fm.f_and(lifted, any_unfinished), m_unfinished)
        if session is not None:
            if session.is_valid(claim) is not True:
                return False
        else:
            if not _enum_valid(claim, max_enum_vars):
                return False
    return True


def _enum_valid(f: Formula, max_vars: int) -> bool:
    vs = sorted(fm.free_vars(f), key=lambda v: v.wire())
    if any(v.sort != fm.BOOL for v in vs):
        raise CompositionError("boolean-level check on a non-boolean formula")
    if len(vs) > max_vars:
        raise CompositionError(
            f"{len(vs)} boolean variables exceed the enumeration budget; "
            "pass a solver session")
    for bits in range(1 << len(vs)):
        env = {v: bool(bits >> i & 1) for i, v in enumerate(vs)}
        if not fm.evaluate(f, env):
            return False
    return True


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_pseudocode(f: CompositionFunction) -> str:
    """Human-readable if/else cascade; report output only, never parsed."""
    lines = []
    first = True
    branches = [(M, c) for M, c in f.conditions if c != fm.TRUE]
    defaults = [(M, c) for M, c in f.conditions if c == fm.TRUE]
    for M, cond in branches:
        kw = "if" if first else "else if"
        lines.append(f"{kw} {fm.to_wire(cond)}")
        lines.append(f"    step({','.join(str(i) for i in M.members)});")
        first = False
    for M, _ in defaults:
        kw = "step" if first else "else step"
        lines.append(f"{kw}({','.join(str(i) for i in M.members)});")
        first = False
    if not f.conditions:
        lines.append("<undefined everywhere>")
    return "\n".join(lines)


def render_smt(f: CompositionFunction) -> dict[str, str]:
    return {M.label(): fm.to_wire(cond) for M, cond in f.conditions}
