"""Function-free first-order vocabulary: constants, variables, predicates, atoms.

Constants and variables are interned through a :class:`SymbolTable`, so that
every symbol has a stable integer id within one engine instance. The ids are
what the grounder sorts on to produce reproducible derivation orders.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union


class SymbolTable:
    """Interns symbol strings to dense integer ids (first-seen order)."""

    def __init__(self) -> None:
        self._ids: Dict[str, int] = {}
        self._symbols: List[str] = []
        self._lock = threading.Lock()

    def intern(self, symbol: str) -> int:
        sid = self._ids.get(symbol)
        if sid is not None:
            return sid
        with self._lock:
            sid = self._ids.get(symbol)
            if sid is None:
                sid = len(self._symbols)
                self._symbols.append(symbol)
                self._ids[symbol] = sid
        return sid

    def symbol(self, sid: int) -> str:
        return self._symbols[sid]

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids


#: process-wide default table; all terms built without an explicit table use it
SYMBOLS = SymbolTable()


@dataclass(frozen=True, slots=True)
class Constant:
    symbol: str

    def __post_init__(self) -> None:
        SYMBOLS.intern(self.symbol)

    @property
    def id(self) -> int:
        return SYMBOLS.intern(self.symbol)

    def __str__(self) -> str:
        return self.symbol

    def __lt__(self, other: "Constant") -> bool:
        return self.id < other.id


@dataclass(frozen=True, slots=True)
class Variable:
    symbol: str

    def __str__(self) -> str:
        return self.symbol

    def __lt__(self, other: "Variable") -> bool:
        return self.symbol < other.symbol


Term = Union[Constant, Variable]


def is_variable_token(token: str) -> bool:
    """Lexical convention: variables start with an uppercase letter."""
    return bool(token) and token[0].isupper()


def term(token: str) -> Term:
    return Variable(token) if is_variable_token(token) else Constant(token)


@dataclass(frozen=True, slots=True)
class Predicate:
    name: str
    arity: int
    layer: Optional[int] = None
    #: symbolic layer offset in unexpanded templates: 0 for ``^(n)``, -1 for ``^(n-1)``
    offset: Optional[int] = None

    @property
    def crisp(self) -> bool:
        """Underscore-prefixed predicates are structural gates with no value."""
        return self.name.startswith("_")

    @property
    def builtin(self) -> bool:
        return self.name == "distinct" and self.layer is None

    @property
    def display_name(self) -> str:
        if self.offset is not None:
            mark = "n" if self.offset == 0 else f"n{self.offset:+d}"
            return f"{self.name}^({mark})"
        if self.layer is not None:
            return f"{self.name}^({self.layer})"
        return self.name

    def __str__(self) -> str:
        return f"{self.display_name}/{self.arity}"


@dataclass(frozen=True, slots=True)
class Atom:
    predicate: Predicate
    args: Tuple[Term, ...] = ()

    def __post_init__(self) -> None:
        if len(self.args) != self.predicate.arity:
            raise ValueError(
                f"predicate {self.predicate} expects {self.predicate.arity} "
                f"arguments, got {len(self.args)}"
            )

    @property
    def is_ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)

    def variables(self) -> List[Variable]:
        out: List[Variable] = []
        for a in self.args:
            if isinstance(a, Variable) and a not in out:
                out.append(a)
        return out

    def sort_key(self) -> Tuple:
        p = self.predicate
        return (
            p.name,
            p.arity,
            -1 if p.layer is None else p.layer,
            tuple(a.id if isinstance(a, Constant) else -1 for a in self.args),
        )

    def __str__(self) -> str:
        name = self.predicate.display_name
        if not self.args:
            return name
        return f"{name}({','.join(str(a) for a in self.args)})"


def atom(name: str, *args: str, layer: Optional[int] = None) -> Atom:
    """Convenience constructor: ``atom("b", "h1", "o1")`` -> ``b(h1,o1)``."""
    return Atom(Predicate(name, len(args), layer), tuple(term(a) for a in args))


class Substitution(Mapping[Variable, Constant]):
    """Immutable variable -> constant bindings."""

    __slots__ = ("_bindings", "_hash")

    def __init__(self, bindings: Optional[Mapping[Variable, Constant]] = None) -> None:
        self._bindings: Dict[Variable, Constant] = dict(bindings or {})
        self._hash: Optional[int] = None

    def __getitem__(self, var: Variable) -> Constant:
        return self._bindings[var]

    def __iter__(self):
        return iter(self._bindings)

    def __len__(self) -> int:
        return len(self._bindings)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._bindings.items()))
        return self._hash

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Substitution):
            return self._bindings == other._bindings
        if isinstance(other, Mapping):
            return self._bindings == dict(other)
        return NotImplemented

    def extend(self, var: Variable, value: Constant) -> "Substitution":
        new = dict(self._bindings)
        new[var] = value
        return Substitution(new)

    def union(self, other: Mapping[Variable, Constant]) -> "Substitution":
        new = dict(self._bindings)
        for k, v in other.items():
            if k in new and new[k] != v:
                raise ValueError(f"conflicting bindings for {k}: {new[k]} vs {v}")
            new[k] = v
        return Substitution(new)

    def sorted_items(self) -> List[Tuple[Variable, Constant]]:
        return sorted(self._bindings.items(), key=lambda kv: kv[0].symbol)

    def sort_key(self) -> Tuple:
        return tuple((v.symbol, c.id) for v, c in self.sorted_items())

    def __repr__(self) -> str:
        return "{" + ", ".join(f"{v}/{c}" for v, c in self.sorted_items()) + "}"

    __str__ = __repr__


def match(pattern: Atom, ground: Atom, seed: Optional[Substitution] = None) -> Optional[Substitution]:
    """Extend ``seed`` minimally so that ``pattern`` instantiates to ``ground``.

    Returns ``None`` when no such extension exists. ``seed`` is never mutated.
    """
    if pattern.predicate != ground.predicate:
        return None
    bindings: Dict[Variable, Constant] = dict(seed._bindings) if seed else {}
    for p, g in zip(pattern.args, ground.args):
        if isinstance(p, Variable):
            bound = bindings.get(p)
            if bound is None:
                bindings[p] = g  # type: ignore[assignment]
            elif bound != g:
                return None
        elif p != g:
            return None
    return Substitution(bindings)


def apply(subst: Mapping[Variable, Constant], a: Atom) -> Atom:
    """Replace every bound variable of ``a``; unbound variables are left in place."""
    if not subst:
        return a
    args = tuple(subst.get(t, t) if isinstance(t, Variable) else t for t in a.args)
    return Atom(a.predicate, args)


def constants_of(atoms: Iterable[Atom]) -> List[Constant]:
    seen: Dict[Constant, None] = {}
    for a in atoms:
        for t in a.args:
            if isinstance(t, Constant):
                seen.setdefault(t, None)
    return list(seen)
