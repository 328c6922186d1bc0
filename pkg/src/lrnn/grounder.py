"""Least Herbrand model computation with full derivation bookkeeping.

``ground`` runs bottom-up semi-naive evaluation over hash indexes on the
bound argument positions of each body literal. Every satisfying total
substitution of every rule is recorded as a :class:`GroundRuleInstance`;
the compiler turns those into rule nodes.

``ground_naive_oracle`` computes the same model by enumerating every
assignment of constants to rule variables (vectorised with numpy) and is used
only to check ``ground``.
"""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import GroundingError
from .logic import Atom, Constant, Predicate, Substitution, Variable, apply, constants_of
from .parser import Example, RuleAst, Template

DEFAULT_ATOM_CAP = 10**6


@dataclass(frozen=True)
class GroundRuleInstance:
    rule_index: int
    rule: RuleAst = field(compare=False, repr=False)
    subst: Substitution
    head: Atom
    body: Tuple[Atom, ...]

    def sort_key(self) -> Tuple:
        return (self.rule_index, self.subst.sort_key())


@dataclass
class HerbrandModel:
    atoms: Set[Atom]
    derivations: Dict[Atom, List[GroundRuleInstance]]
    fact_atoms: Set[Atom]
    fact_values: Dict[Atom, np.ndarray] = field(default_factory=dict)
    example_id: str = ""

    def derived_atoms(self) -> Set[Atom]:
        return self.atoms - self.fact_atoms

    def instances(self) -> List[GroundRuleInstance]:
        out = [g for head in self.sorted_atoms() for g in self.derivations.get(head, [])]
        return out

    def sorted_atoms(self) -> List[Atom]:
        return sorted(self.atoms, key=Atom.sort_key)

    def __contains__(self, a: Atom) -> bool:
        return a in self.atoms


def _distinct_rule(rule: RuleAst) -> bool:
    # crisp structural patterns (e.g. rings) bind pairwise-distinct constants
    return rule.crisp


class _Relation:
    """Atoms of one predicate with the iteration stamp they appeared in."""

    __slots__ = ("rows", "indexes")

    def __init__(self) -> None:
        self.rows: List[Tuple[Atom, int]] = []
        self.indexes: Dict[Tuple[int, ...], Dict[Tuple, List[Tuple[Atom, int]]]] = {}

    def add(self, a: Atom, stamp: int) -> None:
        row = (a, stamp)
        self.rows.append(row)
        for positions, idx in self.indexes.items():
            idx.setdefault(tuple(a.args[p] for p in positions), []).append(row)

    def lookup(self, positions: Tuple[int, ...], key: Tuple) -> List[Tuple[Atom, int]]:
        if not positions:
            return self.rows
        idx = self.indexes.get(positions)
        if idx is None:
            idx = {}
            for row in self.rows:
                idx.setdefault(tuple(row[0].args[p] for p in positions), []).append(row)
            self.indexes[positions] = idx
        return idx.get(key, [])


def _plan(body: Sequence[Atom], first: int) -> List[int]:
    """Join order: the delta literal first, then greedily the most-bound literal."""
    order = [first]
    bound = set(body[first].variables())
    rest = [j for j in range(len(body)) if j != first]
    while rest:
        best = max(rest, key=lambda j: (sum(v in bound for v in body[j].variables()), -j))
        order.append(best)
        rest.remove(best)
        bound.update(body[best].variables())
    return order


def ground(template: Template, example: Example, atom_cap: int = DEFAULT_ATOM_CAP) -> HerbrandModel:
    """Least Herbrand model of ``template`` ∪ ``example`` with all derivations."""
    relations: Dict[Predicate, _Relation] = defaultdict(_Relation)
    stamps: Dict[Atom, int] = {}
    fact_values: Dict[Atom, np.ndarray] = {}
    for value, a in example.facts:
        if not a.is_ground:
            raise GroundingError(f"example {example.id}: non-ground fact {a}")
        if a not in stamps:
            stamps[a] = 0
            relations[a.predicate].add(a, 0)
        fact_values[a] = np.asarray(value, dtype=np.float64)
    fact_atoms = set(stamps)

    rules = list(enumerate(template.rules))
    plans: Dict[Tuple[int, int], List[int]] = {}
    split: Dict[int, Tuple[List[Atom], List[Atom]]] = {}
    for ri, rule in rules:
        regular = [b for b in rule.body if not b.predicate.builtin]
        builtins = [b for b in rule.body if b.predicate.builtin]
        split[ri] = (regular, builtins)
        for i in range(len(regular)):
            plans[ri, i] = _plan(regular, i)

    derivations: Dict[Atom, List[GroundRuleInstance]] = defaultdict(list)
    iteration = 0
    delta_preds = {a.predicate for a in fact_atoms}
    n_derived = 0
    while delta_preds:
        new_atoms: List[Atom] = []
        for ri, rule in rules:
            regular, builtins = split[ri]
            distinct = _distinct_rule(rule)
            for i, lit in enumerate(regular):
                if lit.predicate not in delta_preds:
                    continue
                for binding in _join(regular, plans[ri, i], i, relations, iteration, distinct):
                    if builtins and not _builtins_hold(builtins, binding):
                        continue
                    subst = Substitution(binding)
                    head = apply(subst, rule.head)
                    body = tuple(apply(subst, b) for b in rule.body)
                    derivations[head].append(GroundRuleInstance(ri, rule, subst, head, body))
                    if head not in stamps:
                        stamps[head] = iteration + 1
                        new_atoms.append(head)
                        n_derived += 1
                        if n_derived > atom_cap:
                            raise GroundingError(
                                f"example {example.id}: derived-atom count exceeds cap "
                                f"{atom_cap}; runaway template?"
                            )
        iteration += 1
        for a in new_atoms:
            relations[a.predicate].add(a, iteration)
        delta_preds = {a.predicate for a in new_atoms}

    for insts in derivations.values():
        insts.sort(key=GroundRuleInstance.sort_key)
    return HerbrandModel(set(stamps), dict(derivations), fact_atoms, fact_values, example.id)


def _join(body: List[Atom], order: List[int], delta_pos: int,
          relations: Dict[Predicate, _Relation], iteration: int,
          distinct: bool) -> Iterator[Dict[Variable, Constant]]:
    """Enumerate bindings where body[delta_pos] is new in ``iteration``,
    earlier literals are strictly older, and later ones are at most as new."""
    n = len(order)

    def rec(k: int, binding: Dict[Variable, Constant]) -> Iterator[Dict[Variable, Constant]]:
        if k == n:
            yield binding
            return
        j = order[k]
        lit = body[j]
        rel = relations.get(lit.predicate)
        if rel is None:
            return
        positions = []
        key = []
        for p, t in enumerate(lit.args):
            if isinstance(t, Variable):
                if t in binding:
                    positions.append(p)
                    key.append(binding[t])
            else:
                positions.append(p)
                key.append(t)
        for a, stamp in rel.lookup(tuple(positions), tuple(key)):
            if j == delta_pos:
                if stamp != iteration:
                    continue
            elif j < delta_pos:
                if stamp >= iteration:
                    continue
            elif stamp > iteration:
                continue
            ext = _bind(lit, a, binding, distinct)
            if ext is not None:
                yield from rec(k + 1, ext)

    yield from rec(0, {})


def _bind(pattern: Atom, ground_atom: Atom, binding: Dict[Variable, Constant],
          distinct: bool) -> Optional[Dict[Variable, Constant]]:
    out = None
    for t, c in zip(pattern.args, ground_atom.args):
        if not isinstance(t, Variable):
            continue
        cur = (out or binding).get(t)
        if cur is None:
            if distinct and c in (out or binding).values():
                return None
            if out is None:
                out = dict(binding)
            out[t] = c  # type: ignore[assignment]
        elif cur != c:
            return None
    return out if out is not None else dict(binding)


def _builtins_hold(builtins: List[Atom], binding: Dict[Variable, Constant]) -> bool:
    for b in builtins:
        vals = [binding.get(t, t) if isinstance(t, Variable) else t for t in b.args]
        if any(isinstance(v, Variable) for v in vals):
            raise GroundingError(f"builtin {b} has unbound arguments")
        if len(set(vals)) != len(vals):
            return False
    return True


# ---------------------------------------------------------------------------
# brute-force oracle

ORACLE_MAX_CONSTANTS = 30
ORACLE_MAX_VARIABLES = 6
_ORACLE_CHUNK = 1 << 20


def ground_naive_oracle(template: Template, example: Example) -> HerbrandModel:
    """Same model as :func:`ground`, by exhaustive substitution enumeration.

    Every assignment of universe constants to a rule's variables is tested
    against the current model until nothing new is derived; derivations are
    then read off the final model. Intended for small test programs only.
    """
    facts = {a for _, a in example.facts}
    rule_consts = constants_of(a for r in template.rules for a in (r.head, *r.body))
    universe = sorted(set(constants_of(facts)) | set(rule_consts), key=lambda c: c.symbol)
    n_const = len(universe)
    if n_const > ORACLE_MAX_CONSTANTS:
        raise GroundingError(f"oracle limited to {ORACLE_MAX_CONSTANTS} constants, got {n_const}")
    for r in template.rules:
        if len(r.variables()) > ORACLE_MAX_VARIABLES:
            raise GroundingError(
                f"oracle limited to {ORACLE_MAX_VARIABLES} variables per rule ({r.head})"
            )
    cidx = {c: i for i, c in enumerate(universe)}
    base = max(n_const, 1)

    def encode(a: Atom) -> int:
        k = 0
        for t in a.args:
            k = k * base + cidx[t]  # type: ignore[index]
        return k

    model: Set[Atom] = set(facts)

    def relation_keys() -> Dict[Predicate, np.ndarray]:
        rel: Dict[Predicate, List[int]] = defaultdict(list)
        for a in model:
            rel[a.predicate].append(encode(a))
        return {p: np.unique(np.array(v, dtype=np.int64)) for p, v in rel.items()}

    def satisfying(rule: RuleAst, rel: Dict[Predicate, np.ndarray]) -> Iterator[np.ndarray]:
        variables = rule.variables()
        col = {v: i for i, v in enumerate(variables)}
        nv = len(variables)
        total = n_const ** nv
        for start in range(0, total, _ORACLE_CHUNK):
            flat = np.arange(start, min(total, start + _ORACLE_CHUNK), dtype=np.int64)
            if nv:
                assign = np.stack(np.unravel_index(flat, (n_const,) * nv), axis=1)
            else:
                assign = np.zeros((len(flat), 0), dtype=np.int64)
            ok = np.ones(len(flat), dtype=bool)
            if rule.crisp and nv > 1:
                for a_, b_ in itertools.combinations(range(nv), 2):
                    ok &= assign[:, a_] != assign[:, b_]
            for lit in rule.body:
                cols = [assign[:, col[t]] if isinstance(t, Variable)
                        else np.full(len(flat), cidx.get(t, -1)) for t in lit.args]
                if lit.predicate.builtin:
                    for a_, b_ in itertools.combinations(range(len(cols)), 2):
                        ok &= cols[a_] != cols[b_]
                    continue
                keys = rel.get(lit.predicate)
                if keys is None or any((c < 0).any() for c in cols):
                    ok[:] = False
                    break
                k = np.zeros(len(flat), dtype=np.int64)
                for c in cols:
                    k = k * base + c
                ok &= np.isin(k, keys)
            yield assign[ok]

    def instantiate(rule: RuleAst, row: np.ndarray) -> Substitution:
        return Substitution({v: universe[int(row[i])] for i, v in enumerate(rule.variables())})

    while True:
        rel = relation_keys()
        new: Set[Atom] = set()
        for rule in template.rules:
            for rows in satisfying(rule, rel):
                for row in rows:
                    h = apply(instantiate(rule, row), rule.head)
                    if h not in model:
                        new.add(h)
        if not new:
            break
        model |= new

    rel = relation_keys()
    derivations: Dict[Atom, List[GroundRuleInstance]] = defaultdict(list)
    for ri, rule in enumerate(template.rules):
        for rows in satisfying(rule, rel):
            for row in rows:
                s = instantiate(rule, row)
                h = apply(s, rule.head)
                derivations[h].append(
                    GroundRuleInstance(ri, rule, s, h, tuple(apply(s, b) for b in rule.body))
                )
    for insts in derivations.values():
        insts.sort(key=GroundRuleInstance.sort_key)
    values = {a: np.asarray(v, dtype=np.float64) for v, a in example.facts}
    return HerbrandModel(model, dict(derivations), set(facts), values, example.id)


# ---------------------------------------------------------------------------
# dump format


def dump_derivations(model: HerbrandModel) -> str:
    """One line per derivation: ``head <- rule#k {X/c1, Y/c2}`` (k is 1-based)."""
    lines = []
    for head in model.sorted_atoms():
        for g in model.derivations.get(head, []):
            lines.append(f"{head} <- rule#{g.rule_index + 1} {g.subst}")
    return "\n".join(lines) + ("\n" if lines else "")
