"""Recursive-descent parser for weighted templates (``.tmpl``) and examples (``.facts``).

Grammar (see ``docs/template-language.md`` for the full description)::

    program    := { base_decl | rule }
    base_decl  := NAME '^' '(' '0' ')' '=' NAME '.'
    rule       := [ weight '::' ] atom ':-' literal { ',' literal } '.'
    literal    := [ weight ':' ] atom
    fact       := [ tensor '::' ] atom '.'
    weight     := NAME | tensor
    atom       := NAME [ '^' '(' layer ')' ] [ '(' term { ',' term } ')' ]
    layer      := 'n' | 'n' '-' INT | INT
    tensor     := NUMBER | '[' tensor { ',' tensor } ']'
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError, TemplateError
from .logic import Atom, Constant, Predicate, Variable, term

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<number>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>::|:-|[:,.()\[\]^=\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # name | number | op | eof
    text: str
    line: int
    column: int


def tokenize(text: str, source: Optional[str] = None, line_offset: int = 0) -> List[Token]:
    tokens: List[Token] = []
    pos, line, line_start = 0, 1 + line_offset, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError("unexpected character", line, pos - line_start + 1,
                             text[pos], source)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "<end of input>", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class WeightSpec:
    """How a head or body literal is weighted.

    ``kind`` is ``"learnable"`` (named, shared by name), ``"fixed"`` (a literal
    tensor, not trained) or ``"absent"`` (identity on heads, a pure gate on
    body literals).
    """

    kind: str = "absent"
    name: Optional[str] = None
    init: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind == "learnable" and not self.name:
            raise ValueError("learnable weight needs a name")
        if self.kind == "fixed" and self.init is None:
            raise ValueError("fixed weight needs a value")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightSpec):
            return NotImplemented
        if self.kind != other.kind or self.name != other.name:
            return False
        if self.init is None or other.init is None:
            return self.init is None and other.init is None
        return self.init.shape == other.init.shape and bool(np.array_equal(self.init, other.init))

    def __hash__(self) -> int:
        return hash((self.kind, self.name))

    @property
    def absent(self) -> bool:
        return self.kind == "absent"

    def renamed(self, suffix: str) -> "WeightSpec":
        if self.kind != "learnable":
            return self
        return WeightSpec("learnable", f"{self.name}{suffix}")


ABSENT = WeightSpec()


@dataclass(frozen=True)
class RuleAst:
    head_weight: WeightSpec
    head: Atom
    body_weights: Tuple[WeightSpec, ...]
    body: Tuple[Atom, ...]

    def __post_init__(self) -> None:
        if len(self.body_weights) != len(self.body):
            raise ValueError("one weight spec per body literal required")

    @property
    def crisp(self) -> bool:
        return self.head.predicate.crisp

    @property
    def marked(self) -> bool:
        return any(a.predicate.offset is not None for a in (self.head, *self.body))

    def variables(self) -> List[Variable]:
        out: List[Variable] = []
        for a in (self.head, *self.body):
            for v in a.variables():
                if v not in out:
                    out.append(v)
        return out

    def weights(self) -> Iterator[WeightSpec]:
        yield self.head_weight
        yield from self.body_weights

    def __str__(self) -> str:
        return render_rule(self)


@dataclass
class Template:
    rules: List[RuleAst] = field(default_factory=list)
    #: ``name -> base predicate name`` for ``p^(0) = base.`` declarations
    layer_bases: Dict[str, str] = field(default_factory=dict)

    @property
    def parameters(self) -> Dict[str, WeightSpec]:
        """Learnable weight names in first-use order."""
        params: Dict[str, WeightSpec] = {}
        for r in self.rules:
            for w in r.weights():
                if w.kind == "learnable":
                    params.setdefault(w.name, w)
        return params

    def parameter_shapes(self, d: int) -> Dict[str, Tuple[int, int]]:
        return {name: (d, d) for name in self.parameters}

    def predicates(self) -> List[Predicate]:
        seen: Dict[Predicate, None] = {}
        for r in self.rules:
            for a in (r.head, *r.body):
                seen.setdefault(a.predicate, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.rules)


@dataclass
class Example:
    id: str
    facts: List[Tuple[np.ndarray, Atom]] = field(default_factory=list)
    label: Optional[float] = None

    @property
    def atoms(self) -> List[Atom]:
        return [a for _, a in self.facts]


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, tokens: List[Token], source: Optional[str]) -> None:
        self.tokens = tokens
        self.pos = 0
        self.source = source

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.column, tok.text, self.source)

    def at(self, text: str) -> bool:
        return self.tok.kind == "op" and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def expect_name(self, what: str = "name") -> Token:
        if self.tok.kind != "name":
            raise self.error(f"expected {what}")
        tok = self.tok
        self.pos += 1
        return tok

    # -- tensors -----------------------------------------------------------

    def tensor(self) -> np.ndarray:
        start = self.tok
        value = self._tensor_value()
        try:
            arr = np.array(value, dtype=np.float64)
        except ValueError:
            raise self.error("malformed tensor literal (ragged nesting)", start) from None
        if arr.dtype == object or arr.ndim > 2:
            raise self.error("malformed tensor literal (at most 2 dimensions)", start)
        if not np.all(np.isfinite(arr)):
            raise self.error("non-finite tensor entry", start)
        return arr

    def _tensor_value(self):
        if self.tok.kind == "number":
            v = float(self.tok.text)
            self.pos += 1
            return v
        if self.at("-") and self.peek().kind == "number":
            self.pos += 1
            v = -float(self.tok.text)
            self.pos += 1
            return v
        if self.at("["):
            self.pos += 1
            items = [self._tensor_value()]
            while self.at(","):
                self.pos += 1
                items.append(self._tensor_value())
            if not self.at("]"):
                raise self.error("malformed tensor literal: expected ',' or ']'")
            self.pos += 1
            kinds = {isinstance(i, list) for i in items}
            if len(kinds) > 1:
                raise self.error("malformed tensor literal: mixed scalars and lists")
            return items
        raise self.error("malformed tensor literal")

    # -- atoms ---------------------------------------------------------------

    def atom(self) -> Atom:
        name_tok = self.expect_name("predicate name")
        name = name_tok.text
        if name[0].isupper():
            raise self.error("predicate names must not start with an uppercase letter", name_tok)
        layer: Optional[int] = None
        offset: Optional[int] = None
        if self.at("^"):
            self.pos += 1
            self.expect("(")
            if self.tok.kind == "name" and self.tok.text == "n":
                self.pos += 1
                offset = 0
                if self.at("-"):
                    self.pos += 1
                    if self.tok.kind != "number" or not self.tok.text.isdigit():
                        raise self.error("expected layer offset")
                    offset = -int(self.tok.text)
                    self.pos += 1
                elif self.tok.kind == "number" and self.tok.text.startswith("-"):
                    # "n-1" lexes as name 'n' followed by number '-1'
                    if not self.tok.text[1:].isdigit():
                        raise self.error("expected layer offset")
                    offset = int(self.tok.text)
                    self.pos += 1
            elif self.tok.kind == "number" and self.tok.text.isdigit():
                layer = int(self.tok.text)
                self.pos += 1
            else:
                raise self.error("expected layer index 'n', 'n-k' or an integer")
            self.expect(")")
        args: List = []
        if self.at("("):
            self.pos += 1
            args.append(self.term())
            while self.at(","):
                self.pos += 1
                args.append(self.term())
            self.expect(")")
        return Atom(Predicate(name, len(args), layer, offset), tuple(args))

    def term(self):
        tok = self.tok
        if tok.kind == "name":
            self.pos += 1
            return term(tok.text)
        if tok.kind == "number":
            self.pos += 1
            return Constant(tok.text)
        raise self.error("expected a term")

    # -- weights -------------------------------------------------------------

    def _weight_ahead(self, sep: str) -> bool:
        """True if the tokens at the cursor form ``weight <sep>``."""
        tok = self.tok
        if tok.kind == "name":
            nxt = self.peek()
            return nxt.kind == "op" and nxt.text == sep
        if tok.kind == "number" or (tok.kind == "op" and tok.text in ("[", "-")):
            return True
        return False

    def weight(self) -> WeightSpec:
        if self.tok.kind == "name":
            name = self.tok.text
            self.pos += 1
            return WeightSpec("learnable", name)
        return WeightSpec("fixed", init=self.tensor())

    # -- statements -----------------------------------------------------------

    def rule(self) -> RuleAst:
        head_weight = ABSENT
        if self._weight_ahead("::"):
            head_weight = self.weight()
            self.expect("::")
        head = self.atom()
        if self.at("."):
            raise self.error("expected ':-' (template statements must be rules)")
        self.expect(":-")
        weights: List[WeightSpec] = []
        body: List[Atom] = []
        while True:
            w = ABSENT
            if self._weight_ahead(":") or self._weight_ahead("::"):
                w = self.weight()
                if self.at("::"):
                    raise self.error("'::' is not allowed inside a rule body; use ':'")
                self.expect(":")
            weights.append(w)
            body.append(self.atom())
            if self.at(","):
                self.pos += 1
                continue
            break
        if self.tok.kind == "eof":
            raise self.error("expected '.' at end of rule")
        self.expect(".")
        return RuleAst(head_weight, head, tuple(weights), tuple(body))

    def base_decl(self) -> Tuple[str, str]:
        name = self.expect_name().text
        self.expect("^")
        self.expect("(")
        if self.tok.text != "0":
            raise self.error("layer base declarations must use '^(0)'")
        self.pos += 1
        self.expect(")")
        self.expect("=")
        base = self.expect_name("base predicate name").text
        self.expect(".")
        return name, base

    def _is_base_decl(self) -> bool:
        toks = [self.peek(k) for k in range(6)]
        return (toks[0].kind == "name" and toks[1].text == "^" and toks[2].text == "("
                and toks[3].text == "0" and toks[4].text == ")" and toks[5].text == "=")

    def template(self) -> Template:
        t = Template()
        while self.tok.kind != "eof":
            if self._is_base_decl():
                name, base = self.base_decl()
                t.layer_bases[name] = base
            else:
                t.rules.append(self.rule())
        return t

    def fact(self) -> Tuple[np.ndarray, Atom]:
        value = np.array(1.0)
        if self._weight_ahead("::"):
            if self.tok.kind == "name":
                raise self.error("fact values must be numeric tensors")
            value = self.tensor()
            self.expect("::")
        start = self.tok
        a = self.atom()
        if a.predicate.offset is not None:
            raise self.error("facts cannot carry symbolic layer markers", start)
        if not a.is_ground:
            raise self.error(f"non-ground fact {a}", start)
        if self.tok.kind == "eof":
            raise self.error("expected '.' at end of fact")
        self.expect(".")
        return value, a


# ---------------------------------------------------------------------------
# validation


def _check_template(t: Template, source: Optional[str]) -> None:
    arities: Dict[str, int] = {}
    where = f"{source}: " if source else ""
    for idx, r in enumerate(t.rules):
        for a in (r.head, *r.body):
            prev = arities.setdefault(a.predicate.name, a.predicate.arity)
            if prev != a.predicate.arity:
                raise TemplateError(
                    f"{where}rule {idx + 1}: predicate {a.predicate.name!r} used with "
                    f"arities {prev} and {a.predicate.arity}"
                )
        body_vars = {v for b in r.body if not b.predicate.builtin for v in b.variables()}
        unbound = [v.symbol for v in r.head.variables() if v not in body_vars]
        if unbound:
            raise TemplateError(
                f"{where}rule {idx + 1} ({r.head}): head variable(s) {', '.join(unbound)} "
                "do not occur in the body"
            )
        if r.head.predicate.builtin:
            raise TemplateError(f"{where}rule {idx + 1}: cannot define builtin 'distinct'")
        if r.crisp and not all(w.absent for w in r.weights()):
            raise TemplateError(f"{where}rule {idx + 1}: crisp rule {r.head} cannot carry weights")
        for w, b in zip(r.body_weights, r.body):
            if not w.absent and (b.predicate.crisp or b.predicate.builtin):
                raise TemplateError(
                    f"{where}rule {idx + 1}: crisp literal {b} cannot carry a weight"
                )


def parse_template(text: str, source: Optional[str] = None) -> Template:
    """Parse template text into a :class:`Template`."""
    t = _Parser(tokenize(text, source), source).template()
    _check_template(t, source)
    return t


_HEADER_RE = re.compile(r"^\s*example\s+(\S+)\s+(\S+)\s*$")


def parse_examples(text: str, source: Optional[str] = None) -> List[Example]:
    """Parse a fact corpus.

    Examples are delimited by ``example <id> <label>`` header lines when any
    are present, otherwise by blank lines (ids ``e1``, ``e2``, ... and no label).
    """
    lines = text.split("\n")
    use_headers = any(_HEADER_RE.match(ln) for ln in lines)
    blocks: List[Tuple[str, Optional[float], int, List[str]]] = []
    current: Optional[List] = None
    for lineno, ln in enumerate(lines):
        m = _HEADER_RE.match(ln) if use_headers else None
        if m:
            try:
                label = float(m.group(2))
            except ValueError:
                raise ParseError("example label must be a number", lineno + 1, 1,
                                 m.group(2), source) from None
            current = [m.group(1), label, lineno + 1, []]
            blocks.append(current)  # type: ignore[arg-type]
            continue
        stripped = ln.split("//", 1)[0].strip()
        if not stripped:
            if not use_headers:
                current = None
            continue
        if current is None:
            if use_headers:
                raise ParseError("fact before the first 'example' header", lineno + 1, 1,
                                 stripped, source)
            current = [f"e{len(blocks) + 1}", None, lineno, []]
            blocks.append(current)  # type: ignore[arg-type]
        current[3].append((lineno, ln))

    examples: List[Example] = []
    for ex_id, label, _, body in blocks:
        ex = Example(ex_id, [], label)
        for lineno, ln in body:
            p = _Parser(tokenize(ln, source, line_offset=lineno), source)
            while p.tok.kind != "eof":
                ex.facts.append(p.fact())
        examples.append(ex)
    return examples


def parse_atom(text: str) -> Atom:
    p = _Parser(tokenize(text), None)
    a = p.atom()
    if p.tok.kind != "eof":
        raise p.error("trailing input after atom")
    return a


# ---------------------------------------------------------------------------
# rendering


def render_tensor(value: np.ndarray) -> str:
    value = np.asarray(value)
    if value.ndim == 0:
        return repr(float(value))
    return "[" + ", ".join(render_tensor(v) for v in value) + "]"


def render_weight(w: WeightSpec) -> str:
    if w.kind == "learnable":
        return w.name  # type: ignore[return-value]
    if w.kind == "fixed":
        return render_tensor(w.init)  # type: ignore[arg-type]
    return ""


def render_rule(r: RuleAst) -> str:
    head = f"{render_weight(r.head_weight)} :: {r.head}" if not r.head_weight.absent else str(r.head)
    parts = []
    for w, b in zip(r.body_weights, r.body):
        parts.append(f"{render_weight(w)} : {b}" if not w.absent else str(b))
    return f"{head} :- {', '.join(parts)}."


def render(t: Template) -> str:
    lines = [f"{name}^(0) = {base}." for name, base in t.layer_bases.items()]
    lines.extend(render_rule(r) for r in t.rules)
    return "\n".join(lines) + "\n"


def render_example(ex: Example) -> str:
    label = "" if ex.label is None else repr(float(ex.label))
    lines = [f"example {ex.id} {label}".rstrip()]
    for value, a in ex.facts:
        if np.ndim(value) == 0 and float(value) == 1.0:
            lines.append(f"{a}.")
        else:
            lines.append(f"{render_tensor(value)} :: {a}.")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# layer unrolling


def expand_layers(template: Template, n_layers: int) -> Template:
    """Unroll ``^(n)`` / ``^(n-1)`` markers into concrete layers ``1..n_layers``.

    Each marked rule is copied once per layer with its learnable weights
    renamed ``<name>_L<k>`` (names are kept as written when ``n_layers`` is
    1); unmarked rules are kept once. A reference to
    layer 0 resolves to the declared base predicate (``p^(0) = base.``) or to
    the unlayered ``p``. A weighted literal that resolves to a crisp base
    becomes a gate.
    """
    if n_layers < 1:
        raise TemplateError("n_layers must be a positive integer")
    for idx, r in enumerate(template.rules):
        for a in (r.head, *r.body):
            off = a.predicate.offset
            if off is not None and off < -1:
                raise TemplateError(
                    f"rule {idx + 1}: {a} refers to layer n{off}; only one-step layering is supported"
                )
        if r.head.predicate.offset not in (None, 0):
            raise TemplateError(f"rule {idx + 1}: rule heads may only use the '^(n)' marker")

    out = Template(rules=[], layer_bases=dict(template.layer_bases))
    for r in template.rules:
        if not r.marked:
            out.rules.append(r)
            continue
        for layer in range(1, n_layers + 1):
            suffix = f"_L{layer}" if n_layers > 1 else ""
            out.rules.append(_instantiate_layer(r, layer, suffix, template.layer_bases))
    return out


def _resolve(a: Atom, layer: int, bases: Mapping[str, str]) -> Atom:
    p = a.predicate
    if p.offset is None:
        return a
    k = layer + p.offset
    if k == 0:
        return Atom(Predicate(bases.get(p.name, p.name), p.arity), a.args)
    return Atom(Predicate(p.name, p.arity, k), a.args)


def _instantiate_layer(r: RuleAst, layer: int, suffix: str, bases: Mapping[str, str]) -> RuleAst:
    body: List[Atom] = []
    weights: List[WeightSpec] = []
    for w, b in zip(r.body_weights, r.body):
        nb = _resolve(b, layer, bases)
        body.append(nb)
        weights.append(ABSENT if nb.predicate.crisp else w.renamed(suffix))
    return replace(
        r,
        head_weight=r.head_weight.renamed(suffix),
        head=_resolve(r.head, layer, bases),
        body_weights=tuple(weights),
        body=tuple(body),
    )


def structurally_equal(a: Template, b: Template) -> bool:
    return a.rules == b.rules and a.layer_bases == b.layer_bases


def load_template(path: str) -> Template:
    with open(path, encoding="utf-8") as fh:
        return parse_template(fh.read(), source=path)


def load_examples(path: str) -> List[Example]:
    with open(path, encoding="utf-8") as fh:
        return parse_examples(fh.read(), source=path)
