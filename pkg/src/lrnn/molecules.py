"""Molecule corpora, the bundled templates, and synthetic graph generators."""
from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import DataError, TemplateError
from .logic import Atom, Constant, Predicate
from .parser import Example, Template, expand_layers, parse_examples, parse_template

log = logging.getLogger(__name__)

BUILTIN_TEMPLATES = ("gnn", "rings", "rings+gnn")
RING_SIZES = (5, 6)

_NAME_RE = re.compile(r"^[a-z0-9][A-Za-z0-9_]*$")


@dataclass
class MoleculeRecord:
    id: str
    label: float
    atoms: List[Tuple[str, str, Optional[np.ndarray]]] = field(default_factory=list)
    bonds: List[Tuple[str, str, Optional[str]]] = field(default_factory=list)

    def validate(self) -> None:
        names: Set[str] = set()
        for name, _, _ in self.atoms:
            if name in names:
                raise DataError(f"molecule {self.id}: duplicate atom name {name!r}")
            names.add(name)
        for a, b, _ in self.bonds:
            for end in (a, b):
                if end not in names:
                    raise DataError(f"molecule {self.id}: bond {a}-{b} refers to undeclared atom {end!r}")

    def to_example(self, element_facts: bool = True) -> Example:
        self.validate()
        facts: List[Tuple[np.ndarray, Atom]] = []
        for name, element, features in self.atoms:
            c = Constant(name)
            if element_facts:
                facts.append((np.array(1.0), Atom(Predicate(element, 1), (c,))))
            value = np.array(1.0) if features is None else np.asarray(features, dtype=np.float64)
            facts.append((value, Atom(Predicate("a", 1), (c,))))
        b = Predicate("b", 2)
        for x, y, _ in self.bonds:
            facts.append((np.array(1.0), Atom(b, (Constant(x), Constant(y)))))
            facts.append((np.array(1.0), Atom(b, (Constant(y), Constant(x)))))
        if not facts:
            log.warning("molecule %s has no atoms; it contributes no facts", self.id)
        return Example(self.id, facts, self.label)


def parse_native(text: str, source: str = "<string>") -> List[MoleculeRecord]:
    """``molecule <id> <label>`` / ``atom <name> <element> [v ...]`` / ``bond <n1> <n2> [type]``."""
    records: List[MoleculeRecord] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{source}:{lineno}"
        head = parts[0]
        if head == "molecule":
            if len(parts) != 3:
                raise DataError(f"{where}: expected 'molecule <id> <label>'")
            try:
                label = float(parts[2])
            except ValueError:
                raise DataError(f"{where}: label {parts[2]!r} is not a number") from None
            records.append(MoleculeRecord(parts[1], label))
            continue
        if not records:
            raise DataError(f"{where}: {head!r} line before any 'molecule' header")
        rec = records[-1]
        if head == "atom":
            if len(parts) < 3:
                raise DataError(f"{where}: expected 'atom <name> <element> [features]'")
            name, element = parts[1], parts[2].lower()
            for tok in (name, element):
                if not _NAME_RE.match(tok):
                    raise DataError(f"{where}: {tok!r} is not a valid lowercase constant")
            feats = None
            if len(parts) > 3:
                try:
                    feats = np.array([float(v) for v in parts[3:]])
                except ValueError:
                    raise DataError(f"{where}: non-numeric feature value") from None
            rec.atoms.append((name, element, feats))
        elif head == "bond":
            if len(parts) not in (3, 4):
                raise DataError(f"{where}: expected 'bond <n1> <n2> [type]'")
            rec.bonds.append((parts[1], parts[2], parts[3] if len(parts) == 4 else None))
        else:
            raise DataError(f"{where}: unknown record type {head!r}")
    for rec in records:
        rec.validate()
    return records


def load_corpus(path: str, format: str = "native", element_facts: bool = True) -> List[Example]:
    """Load ``path`` as ``native`` (``.mol.txt``) or ``fact-file`` (``.facts``)."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if format == "native":
        return [r.to_example(element_facts) for r in parse_native(text, path)]
    if format in ("fact-file", "facts"):
        return parse_examples(text, source=path)
    raise DataError(f"unknown corpus format {format!r} (expected 'native' or 'fact-file')")


def guess_format(path: str) -> str:
    return "fact-file" if path.endswith(".facts") else "native"


def toy_corpus_path() -> str:
    return str(resources.files("lrnn") / "data" / "toy.mol.txt")


# ---------------------------------------------------------------------------
# bundled templates


def template_text(name: str) -> str:
    return (resources.files("lrnn") / "templates" / f"{name}.tmpl").read_text(encoding="utf-8")


def builtin_template_text(name: str, ring_sizes: Iterable[int] = RING_SIZES) -> str:
    sizes = sorted(set(ring_sizes))
    bad = [k for k in sizes if k not in RING_SIZES]
    if bad:
        raise TemplateError(f"unsupported ring size(s) {bad}; choose from {RING_SIZES}")
    if name == "gnn":
        return template_text("gnn")
    if name not in ("rings", "rings+gnn"):
        raise TemplateError(f"unknown builtin template {name!r}; choose from {', '.join(BUILTIN_TEMPLATES)}")
    parts = [template_text("rings")] + [template_text(f"ring{k}") for k in reversed(sizes)]
    if name == "rings+gnn":
        parts.append(template_text("gnn"))
    return "\n".join(parts)


def builtin_template(name: str, layers: int = 3, ring_sizes: Iterable[int] = RING_SIZES) -> Template:
    """Parse and unroll one of ``gnn``, ``rings``, ``rings+gnn``.

    Rules that occur in several fragments (the shared readout) are kept once.
    """
    t = parse_template(builtin_template_text(name, ring_sizes), source=f"<builtin {name}>")
    unique = []
    for r in t.rules:
        if r not in unique:
            unique.append(r)
    t.rules = unique
    return expand_layers(t, layers)


def resolve_template(spec: str, layers: int = 3, ring_sizes: Iterable[int] = RING_SIZES) -> Template:
    """A builtin name or a path to a ``.tmpl`` file."""
    if spec in BUILTIN_TEMPLATES:
        return builtin_template(spec, layers, ring_sizes)
    try:
        with open(spec, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise TemplateError(f"{spec}: {exc.strerror}") from None
    return expand_layers(parse_template(text, source=spec), layers)


# ---------------------------------------------------------------------------
# synthetic graphs


def graph_example(ex_id: str, n_nodes: int, edges: Iterable[Tuple[int, int]], label: float) -> Example:
    rec = MoleculeRecord(ex_id, label)
    rec.atoms = [(f"c{i + 1}", "c", None) for i in range(n_nodes)]
    rec.bonds = [(f"c{i + 1}", f"c{j + 1}", None) for i, j in sorted(edges)]
    return rec.to_example()


def _cycle_edges(nodes: Sequence[int]) -> List[Tuple[int, int]]:
    return [(min(a, b), max(a, b)) for a, b in zip(nodes, list(nodes[1:]) + [nodes[0]])]


def has_cycle_of_length(n_nodes: int, edges: Iterable[Tuple[int, int]], k: int,
                        chordless: bool) -> bool:
    """DFS over simple paths; a closed path of ``k`` distinct nodes is a k-cycle."""
    adj: Dict[int, Set[int]] = {i: set() for i in range(n_nodes)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)

    def chordfree(path: List[int]) -> bool:
        pos = {v: i for i, v in enumerate(path)}
        for i, v in enumerate(path):
            for w in adj[v]:
                j = pos.get(w)
                if j is not None and (j - i) % k not in (1, k - 1):
                    return False
        return True

    def extend(path: List[int]) -> bool:
        if len(path) == k:
            return path[0] in adj[path[-1]] and (not chordless or chordfree(path))
        for w in adj[path[-1]]:
            if w > path[0] and w not in path:
                path.append(w)
                if extend(path):
                    return True
                path.pop()
        return False

    return any(extend([s]) for s in range(n_nodes))


def _random_connected(rng: np.random.Generator, n: int, plant_ring: bool, extra: int) -> Set[Tuple[int, int]]:
    perm = rng.permutation(n)
    edges: Set[Tuple[int, int]] = set()
    if plant_ring:
        edges.update(_cycle_edges([int(v) for v in perm[:6]]))
        placed = [int(v) for v in perm[:6]]
        rest = perm[6:]
    else:
        placed = [int(perm[0])]
        rest = perm[1:]
    for v in rest:
        u = placed[int(rng.integers(len(placed)))]
        edges.add((min(u, int(v)), max(u, int(v))))
        placed.append(int(v))
    candidates = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges]
    for idx in rng.permutation(len(candidates))[:extra]:
        edges.add(candidates[int(idx)])
    return edges


def generate_synthetic(kind: str, n: int, seed: int = 42) -> List[Example]:
    """``cycle`` (C6, +1), ``two-triangles`` (2×C3, -1) or ``random-ring-task``.

    Ring-task graphs have 6–12 nodes and are labelled +1 iff a chordless
    6-cycle exists; labels alternate so the corpus is balanced. Graphs with a
    6-cycle but no chordless one are resampled, as are graphs whose label
    differs from the slot's target.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "cycle":
        return [graph_example(f"cycle{i + 1}", 6, _cycle_edges(list(range(6))), 1.0) for i in range(n)]
    if kind == "two-triangles":
        edges = _cycle_edges([0, 1, 2]) + _cycle_edges([3, 4, 5])
        return [graph_example(f"triangles{i + 1}", 6, edges, -1.0) for i in range(n)]
    if kind != "random-ring-task":
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = np.random.default_rng(seed)
    out: List[Example] = []
    for i in range(n):
        want = i % 2 == 0
        while True:
            size = int(rng.integers(6, 13))
            extra = int(rng.integers(0, 3)) + (0 if want else 1)
            edges = _random_connected(rng, size, want, extra)
            chordless = has_cycle_of_length(size, edges, 6, chordless=True)
            if chordless != want:
                continue
            if not chordless and has_cycle_of_length(size, edges, 6, chordless=False):
                continue
            break
        out.append(graph_example(f"g{i + 1}", size, edges, 1.0 if want else -1.0))
    return out
