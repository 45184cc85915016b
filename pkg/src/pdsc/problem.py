"""Problem-file parser.

A ``.pdsc`` file declares a transition system, a k-safety property and
optionally extra predicates and engine options, as s-expressions::

    (vars (x Int) (A (Array Int Int)))
    (trans <formula over names and (next name)>)
    (terminal <formula over names>)
    (property (k 2) (pre <formula over (copy i name)>) (post <...>))
    (predicates <formula> ...)        ; optional, merged after mined ones
    (option <key> <value>)            ; optional, repeatable

``(next v)`` marks the post-state value and is legal only inside ``trans``;
``(copy i v)`` picks a copy and is required in property and predicate
formulas. ``(next (copy i v))`` is illegal everywhere: priming is internal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import formula as fm
from .formula import Formula, Var
from .sexpr import SexprError, SNode, parse_all
from .system import KSafetyProperty, SystemError_, TransitionSystem


class ProblemError(Exception):
    """Malformed problem file; messages carry line:column positions."""


@dataclass
class ProblemFile:
    name: str
    system: TransitionSystem
    property: KSafetyProperty
    predicates: list[Formula] = field(default_factory=list)
    options: dict[str, str] = field(default_factory=dict)


_SORT_NAMES = {"Int": fm.INT, "Bool": fm.BOOL}


def _parse_sort(node: SNode):
    if node.is_atom:
        sort = _SORT_NAMES.get(node.text)
        if sort is None:
            raise ProblemError(f"{node.pos()}: unknown sort {node.text!r}")
        return sort
    if (node.items and node.items[0].is_atom and node.items[0].text == "Array"
            and len(node.items) == 3):
        return fm.array_sort(_parse_sort(node.items[1]), _parse_sort(node.items[2]))
    raise ProblemError(f"{node.pos()}: unknown sort")


def _build(node: SNode, vartab: dict[str, Var], mode: str, k: int) -> Formula:
    """Build a formula; mode is 'trans', 'single' or 'composed'."""
    if node.is_atom:
        text = node.text
        if text in vartab:
            if mode == "composed":
                raise ProblemError(
                    f"{node.pos()}: variable {text!r} needs a (copy i {text}) "
                    "reference here")
            return fm.var(vartab[text])
        try:
            return fm.build_formula(node, {})
        except SexprError as e:
            raise ProblemError(str(e)) from e
    if node.items and node.items[0].is_atom:
        head = node.items[0].text
        if head == "next":
            if mode != "trans":
                raise ProblemError(f"{node.pos()}: (next ...) is only legal in trans")
            if len(node.items) != 2 or not node.items[1].is_atom:
                raise ProblemError(
                    f"{node.pos()}: (next ...) takes exactly one variable name")
            name = node.items[1].text
            if name not in vartab:
                raise ProblemError(f"{node.pos()}: unknown variable {name!r}")
            return fm.var(vartab[name].with_primed())
        if head == "copy":
            if mode != "composed":
                raise ProblemError(
                    f"{node.pos()}: (copy ...) is only legal in property "
                    "and predicate formulas")
            if (len(node.items) != 3 or not node.items[1].is_atom
                    or not node.items[2].is_atom):
                raise ProblemError(f"{node.pos()}: (copy ...) takes an index and a name")
            try:
                idx = int(node.items[1].text)
            except ValueError:
                raise ProblemError(f"{node.pos()}: copy index must be an integer") from None
            if not 1 <= idx <= k:
                raise ProblemError(
                    f"{node.pos()}: copy index {idx} out of range for k={k}")
            name = node.items[2].text
            if name not in vartab:
                raise ProblemError(f"{node.pos()}: unknown variable {name!r}")
            return fm.var(vartab[name].with_copy(idx))
        args = [_build(a, vartab, mode, k) for a in node.items[1:]]
        try:
            return fm.apply_op(head, args, node)
        except (SexprError, fm.SortError) as e:
            raise ProblemError(str(e)) from e
    raise ProblemError(f"{node.pos()}: malformed formula")


def parse_problem(text: str, name: str = "<problem>") -> ProblemFile:
    try:
        forms = parse_all(text)
    except SexprError as e:
        raise ProblemError(str(e)) from e

    seen: dict[str, SNode] = {}
    options: dict[str, str] = {}
    predicate_nodes: list[SNode] = []
    for form in forms:
        if form.is_atom or not form.items or not form.items[0].is_atom:
            raise ProblemError(f"{form.pos()}: expected a named top-level form")
        head = form.items[0].text
        if head == "option":
            if len(form.items) != 3 or not all(n.is_atom for n in form.items[1:]):
                raise ProblemError(f"{form.pos()}: (option <key> <value>)")
            options[form.items[1].text] = form.items[2].text
            continue
        if head == "predicates":
            predicate_nodes.extend(form.items[1:])
            continue
        if head not in ("vars", "trans", "terminal", "property"):
            raise ProblemError(f"{form.pos()}: unknown form {head!r}")
        if head in seen:
            raise ProblemError(f"{form.pos()}: duplicate {head!r} form")
        seen[head] = form
    for required in ("vars", "trans", "terminal", "property"):
        if required not in seen:
            raise ProblemError(f"missing ({required} ...) form")

    vartab: dict[str, Var] = {}
    for decl in seen["vars"].items[1:]:
        if decl.is_atom or len(decl.items) != 2 or not decl.items[0].is_atom:
            raise ProblemError(f"{decl.pos()}: variable declaration is (<name> <sort>)")
        vname = decl.items[0].text
        if vname in vartab:
            raise ProblemError(f"{decl.pos()}: duplicate variable {vname!r}")
        try:
            vartab[vname] = Var(vname, None, False, _parse_sort(decl.items[1]))
        except fm.FormulaError as e:
            raise ProblemError(f"{decl.pos()}: {e}") from e

    prop_form = seen["property"]
    fields: dict[str, SNode] = {}
    for item in prop_form.items[1:]:
        if item.is_atom or not item.items or not item.items[0].is_atom:
            raise ProblemError(f"{item.pos()}: malformed property field")
        fields[item.items[0].text] = item
    for required in ("k", "pre", "post"):
        if required not in fields:
            raise ProblemError(f"{prop_form.pos()}: property needs ({required} ...)")
    know = fields["k"]
    if len(know.items) != 2 or not know.items[1].is_atom:
        raise ProblemError(f"{know.pos()}: (k <integer>)")
    try:
        k = int(know.items[1].text)
    except ValueError:
        raise ProblemError(f"{know.pos()}: (k <integer>)") from None
    if not (fields["pre"].items and len(fields["pre"].items) == 2):
        raise ProblemError(f"{fields['pre'].pos()}: (pre <formula>)")
    if not (fields["post"].items and len(fields["post"].items) == 2):
        raise ProblemError(f"{fields['post'].pos()}: (post <formula>)")

    def guard(fn, *args):
        try:
            return fn(*args)
        except (fm.SortError, fm.FormulaError, SystemError_) as e:
            raise ProblemError(str(e)) from e

    trans = _build(seen["trans"].items[1], vartab, "trans", k) \
        if len(seen["trans"].items) == 2 else None
    if trans is None:
        raise ProblemError(f"{seen['trans'].pos()}: (trans <formula>)")
    terminal = _build(seen["terminal"].items[1], vartab, "single", k) \
        if len(seen["terminal"].items) == 2 else None
    if terminal is None:
        raise ProblemError(f"{seen['terminal'].pos()}: (terminal <formula>)")

    system = guard(TransitionSystem, tuple(vartab.values()), trans, terminal)
    pre = _build(fields["pre"].items[1], vartab, "composed", k)
    post = _build(fields["post"].items[1], vartab, "composed", k)
    prop = guard(KSafetyProperty, k, pre, post)
    predicates = [_build(n, vartab, "composed", k) for n in predicate_nodes]
    for p in predicates:
        if p.sort != fm.BOOL:
            raise ProblemError(f"predicate {fm.to_wire(p)} is not boolean")
    return ProblemFile(name, system, prop, predicates, options)


def load_problem(path: str) -> ProblemFile:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ProblemError(f"cannot read {path}: {e}") from e
    return parse_problem(text, name=path)
