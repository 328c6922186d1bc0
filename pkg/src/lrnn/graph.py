"""Compilation of a Herbrand model into a per-example computation graph.

Node kinds follow the four logical constructs:

* ``fact``: a ground fact; its value lifted to a d-vector.
* ``rule``: one ground rule instance; ``tanh(sum_i W_i x_i)`` over the
  weighted body literals (crisp literals only gate its existence).
* ``agg``: all instances of one rule sharing a ground head; elementwise mean.
* ``atom``: a derived ground atom; ``tanh(sum_r W_r agg_r)`` with each rule's
  head weight on its aggregation edge.

Graphs are flattened into index arrays (:class:`FlatGraph`) for the numeric
kernels in :mod:`lrnn.kernels`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import CompileError, ShapeError
from .grounder import GroundRuleInstance, HerbrandModel
from .logic import Atom
from .parser import RuleAst, Template, WeightSpec, render_tensor

FACT, RULE, AGG, ATOM = "fact", "rule", "agg", "atom"
_KIND_ORDER = {FACT: 0, RULE: 1, AGG: 2, ATOM: 3}


def weight_ref(w: WeightSpec) -> Optional[str]:
    """Parameter-store key for a weight spec (``None`` for identity/gate)."""
    if w.kind == "learnable":
        return w.name
    if w.kind == "fixed":
        return "fixed:" + render_tensor(w.init)
    return None


def bias_ref(rule_index: int) -> str:
    return f"bias:{rule_index + 1}"


@dataclass
class Node:
    kind: str
    label: str
    inputs: Tuple[Tuple[int, Optional[str]], ...] = ()
    atom: Optional[Atom] = None
    rule_index: Optional[int] = None
    subst: Optional[str] = None
    value: Optional[np.ndarray] = field(default=None, repr=False)
    bias: Optional[str] = None


@dataclass
class ComputationGraph:
    nodes: List[Node]
    output: int
    example_id: str
    d: int
    _flat: Optional["FlatGraph"] = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)

    def edges(self) -> List[Tuple[int, int, Optional[str]]]:
        return [(src, i, p) for i, n in enumerate(self.nodes) for src, p in n.inputs]

    def parameter_names(self) -> List[str]:
        names: Dict[str, None] = {}
        for n in self.nodes:
            for _, p in n.inputs:
                if p is not None:
                    names.setdefault(p, None)
            if n.bias is not None:
                names.setdefault(n.bias, None)
        return list(names)

    def flat(self) -> "FlatGraph":
        if self._flat is None:
            self._flat = flatten([self])
        return self._flat


# ---------------------------------------------------------------------------
# compile


def lift_fact(value: np.ndarray, d: int, what: object) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        return np.full(d, float(v))
    flat = v.ravel()
    if v.ndim > 2 or (v.ndim == 2 and 1 not in v.shape):
        raise ShapeError(f"fact {what}: value of shape {v.shape} cannot be lifted to a {d}-vector")
    if flat.size == 1:
        return np.full(d, float(flat[0]))
    if flat.size != d:
        raise ShapeError(f"fact {what}: vector value has length {flat.size}, expected {d} or 1")
    return flat.copy()


class _Builder:
    def __init__(self, model: HerbrandModel, template: Template, params, bias: bool) -> None:
        self.model = model
        self.template = template
        self.params = params
        self.d = params.d
        self.bias = bias
        self.nodes: List[Node] = []
        self.level: List[int] = []
        self.atom_nodes: Dict[Atom, int] = {}

    def _add(self, node: Node) -> int:
        lvl = 1 + max((self.level[s] for s, _ in node.inputs), default=-1 if node.kind == FACT else 0)
        self.nodes.append(node)
        self.level.append(lvl)
        return len(self.nodes) - 1

    def _check_param(self, name: Optional[str], rule: RuleAst, shape: Tuple[int, ...]) -> None:
        if name is None:
            return
        if name not in self.params:
            raise CompileError(f"rule '{rule}': parameter {name!r} is not initialised")
        actual = self.params[name].shape
        if actual != shape:
            raise ShapeError(
                f"rule '{rule}': parameter {name!r} has shape {actual}, expected {shape}"
            )

    def fact_node(self, a: Atom) -> int:
        value = lift_fact(self.model.fact_values.get(a, np.array(1.0)), self.d, a)
        return self._add(Node(FACT, f"F_{{{a}}}", atom=a, value=value))

    def atom_node(self, a: Atom) -> int:
        if a in self.atom_nodes:
            return self.atom_nodes[a]
        insts = [g for g in self.model.derivations.get(a, []) if not g.rule.crisp]
        if not insts:
            if a not in self.model.fact_atoms:
                raise CompileError(f"atom {a} has neither a fact nor a derivation")
            nid = self.fact_node(a)
        else:
            by_rule: Dict[int, List[GroundRuleInstance]] = {}
            for g in insts:
                by_rule.setdefault(g.rule_index, []).append(g)
            inputs: List[Tuple[int, Optional[str]]] = []
            for ri in sorted(by_rule):
                rule = by_rule[ri][0].rule
                agg = self.agg_node(ri, rule, a, by_rule[ri])
                ref = weight_ref(rule.head_weight)
                self._check_param(ref, rule, (self.d, self.d))
                inputs.append((agg, ref))
            if a in self.model.fact_atoms:
                inputs.append((self.fact_node(a), None))
            nid = self._add(Node(ATOM, f"A_{{{a}}}", tuple(inputs), atom=a))
        self.atom_nodes[a] = nid
        return nid

    def agg_node(self, ri: int, rule: RuleAst, head: Atom, insts: List[GroundRuleInstance]) -> int:
        inputs = tuple((self.rule_node(ri, rule, g), None) for g in insts)
        return self._add(Node(AGG, f"G_{{α{ri + 1}}}^{{{head}}}", inputs, atom=head, rule_index=ri))

    def rule_node(self, ri: int, rule: RuleAst, g: GroundRuleInstance) -> int:
        inputs: List[Tuple[int, Optional[str]]] = []
        for w, lit, ground_lit in zip(rule.body_weights, rule.body, g.body):
            if w.absent or lit.predicate.crisp or lit.predicate.builtin:
                continue
            ref = weight_ref(w)
            self._check_param(ref, rule, (self.d, self.d))
            inputs.append((self.atom_node(ground_lit), ref))
        b = None
        if self.bias:
            b = bias_ref(ri)
            self._check_param(b, rule, (self.d,))
        subst = "[" + ",".join(f"{v}/{c}" for v, c in g.subst.sorted_items()) + "]"
        return self._add(Node(RULE, f"R_{{α{ri + 1}}}^{{{g.head}}}", tuple(inputs),
                              atom=g.head, rule_index=ri, subst=subst, bias=b))

    def finish(self, out: int) -> Tuple[List[Node], int]:
        order = sorted(range(len(self.nodes)),
                       key=lambda i: (self.level[i], _KIND_ORDER[self.nodes[i].kind], i))
        remap = {old: new for new, old in enumerate(order)}
        nodes: List[Node] = []
        theta = 0
        for old in order:
            n = self.nodes[old]
            n.inputs = tuple((remap[s], p) for s, p in n.inputs)
            if n.kind == RULE:
                theta += 1
                n.label = n.label.replace("}^{", f"θ{theta}}}^{{", 1) + n.subst
            nodes.append(n)
        return nodes, remap[out]


def compile_graph(model: HerbrandModel, template: Template, query: Atom, params,
                  bias: bool = False) -> ComputationGraph:
    """Project the derivations reachable from ``query`` onto graph nodes."""
    if query not in model.atoms:
        raise CompileError(f"example {model.example_id}: query {query} is not derivable")
    if query.predicate.crisp:
        raise CompileError(f"query {query} is a crisp pattern and has no value")
    b = _Builder(model, template, params, bias)
    out = b.atom_node(query)
    nodes, out = b.finish(out)
    return ComputationGraph(nodes, out, model.example_id, params.d)


# ---------------------------------------------------------------------------
# flat representation


@dataclass
class FlatGraph:
    """Concatenated index arrays for one or more graphs (node ids offset)."""

    kind: np.ndarray        # int8: 0 fact, 1 weighted-sum+tanh, 2 mean
    fact_values: np.ndarray  # (N, d)
    in_ptr: np.ndarray      # (N + 1,) int64, CSR over inputs
    in_src: np.ndarray      # (E,) int64
    in_param: np.ndarray    # (E,) int64 into matrix params, -1 identity
    bias_idx: np.ndarray    # (N,) int64 into bias params, -1 none
    outputs: np.ndarray     # (G,) int64 output node per graph
    matrix_names: List[str]
    bias_names: List[str]
    d: int
    plan: Optional[object] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.kind)


def flatten(graphs: Sequence[ComputationGraph]) -> FlatGraph:
    if not graphs:
        raise CompileError("cannot flatten an empty graph list")
    d = graphs[0].d
    mat_names: Dict[str, int] = {}
    bias_names: Dict[str, int] = {}
    kinds: List[int] = []
    values: List[np.ndarray] = []
    ptr = [0]
    src: List[int] = []
    par: List[int] = []
    bias: List[int] = []
    outputs: List[int] = []
    zero = np.zeros(d)
    offset = 0
    for g in graphs:
        if g.d != d:
            raise ShapeError("graphs with different dimensions cannot be batched")
        for n in g.nodes:
            kinds.append({FACT: 0, RULE: 1, ATOM: 1, AGG: 2}[n.kind])
            values.append(n.value if n.kind == FACT else zero)
            for s, p in n.inputs:
                src.append(s + offset)
                par.append(-1 if p is None else mat_names.setdefault(p, len(mat_names)))
            ptr.append(len(src))
            bias.append(-1 if n.bias is None else bias_names.setdefault(n.bias, len(bias_names)))
        outputs.append(g.output + offset)
        offset += len(g.nodes)
    return FlatGraph(
        kind=np.array(kinds, dtype=np.int8),
        fact_values=np.array(values, dtype=np.float64).reshape(len(kinds), d),
        in_ptr=np.array(ptr, dtype=np.int64),
        in_src=np.array(src, dtype=np.int64),
        in_param=np.array(par, dtype=np.int64),
        bias_idx=np.array(bias, dtype=np.int64),
        outputs=np.array(outputs, dtype=np.int64),
        matrix_names=list(mat_names),
        bias_names=list(bias_names),
        d=d,
    )


def stacked_params(flat: FlatGraph, params) -> Tuple[np.ndarray, np.ndarray]:
    d = flat.d
    W = np.empty((len(flat.matrix_names), d, d))
    for i, name in enumerate(flat.matrix_names):
        W[i] = params[name]
    B = np.empty((len(flat.bias_names), d))
    for i, name in enumerate(flat.bias_names):
        B[i] = params[name]
    return W, B


def forward_values(flat: FlatGraph, params) -> np.ndarray:
    """All node values, shape (N, d)."""
    W, B = stacked_params(flat, params)
    return kernels.forward(flat, W, B)


def forward(graph: ComputationGraph, params, tape=None) -> np.ndarray:
    """Output d-vector of ``graph``; records node values on ``tape`` if given."""
    flat = graph.flat()
    values = forward_values(flat, params)
    if tape is not None:
        tape.record(graph, values)
    return values[graph.output].copy()


# ---------------------------------------------------------------------------
# export


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(graph: ComputationGraph) -> str:
    """Graphviz DOT text; one statement per node, edges labelled by parameter."""
    lines = [f'digraph "{_dot_escape(graph.example_id)}" {{', "  rankdir=LR;",
             "  node [shape=box, style=rounded];"]
    for i, n in enumerate(graph.nodes):
        shape = "" if n.kind != AGG else ", shape=ellipse"
        peripheries = ", peripheries=2" if i == graph.output else ""
        lines.append(f'  n{i} [label="{_dot_escape(n.label)}", kind={n.kind}{shape}{peripheries}];')
    for i, n in enumerate(graph.nodes):
        for s, p in n.inputs:
            lab = f' [label="{_dot_escape(p)}"]' if p is not None else ""
            lines.append(f"  n{s} -> n{i}{lab};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(graph: ComputationGraph, params=None) -> str:
    """JSON dump with ``nodes``, ``edges`` and ``params`` arrays."""
    nodes = []
    for i, n in enumerate(graph.nodes):
        entry = {"id": i, "kind": n.kind, "label": n.label}
        if n.kind == FACT:
            entry["value"] = [float(x) for x in n.value]
        if n.bias is not None:
            entry["bias"] = n.bias
        nodes.append(entry)
    edges = [{"src": s, "dst": t, "param": p} for s, t, p in graph.edges()]
    plist = []
    if params is not None:
        for name in graph.parameter_names():
            v = np.asarray(params[name])
            plist.append({"name": name, "shape": list(v.shape), "data": v.ravel().tolist()})
    doc = {"example": graph.example_id, "d": graph.d, "output": graph.output,
           "nodes": nodes, "edges": edges, "params": plist}
    return json.dumps(doc, indent=1, ensure_ascii=False)
