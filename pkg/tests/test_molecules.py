import itertools
import logging

import pytest

from helpers import WATER_FACTS
from lrnn.errors import DataError, TemplateError
from lrnn.molecules import (BUILTIN_TEMPLATES, MoleculeRecord, builtin_template, builtin_template_text,
                            generate_synthetic, guess_format, has_cycle_of_length, load_corpus,
                            parse_native, resolve_template, toy_corpus_path)
from lrnn.parser import parse_examples, parse_template

WATER = "molecule water -1\natom o1 O\natom h1 H\natom h2 H\nbond o1 h1\nbond o1 h2\n"


def fact_set(ex):
    return {str(a) for _, a in ex.facts}


def test_water_record_gives_bond_graph_facts():
    (rec,) = parse_native(WATER)
    bond_graph = fact_set(parse_examples(WATER_FACTS)[0])
    assert fact_set(rec.to_example(element_facts=False)) == bond_graph
    assert len(rec.to_example(element_facts=False).facts) == 7
    full = rec.to_example()
    assert fact_set(full) == bond_graph | {"o(o1)", "h(h1)", "h(h2)"}


def test_toy_corpus_water_and_hydrogen():
    corpus = {ex.id: ex for ex in load_corpus(toy_corpus_path())}
    assert len(corpus) == 20
    assert {"water", "hydrogen", "benzene"} <= set(corpus)
    assert {a for a in fact_set(corpus["water"]) if a[0] in "ab"} == fact_set(parse_examples(WATER_FACTS)[0])


def test_toy_corpus_has_both_labels():
    labels = [ex.label for ex in load_corpus(toy_corpus_path())]
    assert set(labels) == {-1.0, 1.0}


def test_directed_pair_closure():
    for ex in load_corpus(toy_corpus_path()):
        bonds = {tuple(c.symbol for c in a.args) for _, a in ex.facts if a.predicate.name == "b"}
        assert all((y, x) in bonds for x, y in bonds)


def test_feature_vectors_become_values():
    (rec,) = parse_native("molecule m 1\natom c1 C 0.5 1.5 2.5\n")
    vals = {str(a): v for v, a in rec.to_example().facts}
    assert list(vals["a(c1)"]) == [0.5, 1.5, 2.5]


def test_empty_molecule_warns(caplog):
    (rec,) = parse_native("molecule nothing 1\n")
    with caplog.at_level(logging.WARNING):
        ex = rec.to_example()
    assert ex.facts == [] and "no atoms" in caplog.text


def test_dangling_bond():
    with pytest.raises(DataError, match="undeclared"):
        parse_native("molecule m 1\natom c1 C\nbond c1 c9\n")


def test_duplicate_atom():
    with pytest.raises(DataError, match="duplicate"):
        MoleculeRecord("m", 1, atoms=[("c1", "c", None), ("c1", "o", None)]).validate()


@pytest.mark.parametrize("bad", ["atom c1 C\n", "molecule m\n", "molecule m 1\nfoo c1\n",
                                 "molecule m x\n", "molecule m 1\natom C1 C\n"])
def test_native_format_errors(bad):
    with pytest.raises(DataError):
        parse_native(bad)


def test_unknown_format(tmp_path):
    p = tmp_path / "x.mol.txt"
    p.write_text(WATER)
    with pytest.raises(DataError, match="format"):
        load_corpus(str(p), "sdf")


def test_fact_file_format(tmp_path):
    p = tmp_path / "w.facts"
    p.write_text("example water -1\n" + WATER_FACTS)
    assert guess_format(str(p)) == "fact-file"
    (ex,) = load_corpus(str(p), "fact-file")
    assert ex.id == "water" and len(ex.facts) == 7


def test_gnn_three_layers():
    t = builtin_template("gnn", 3)
    neighbour = [r for r in t.rules if r.head.predicate.name == "h"]
    readout = [r for r in t.rules if r.head.predicate.name == "q"]
    assert len(neighbour) == 3 and all(len(list(r.weights())) == 3 for r in neighbour)
    assert len(readout) == 3
    assert len(t.parameters) == 3 * 5


def test_rings_single_size_single_layer():
    t = builtin_template("rings", 1, (6,))
    crisp = [r for r in t.rules if r.crisp]
    assert len(crisp) == 1
    (r,) = crisp
    assert r.head.predicate.name == "_ring6" and len(r.body) == 6
    assert all(b.predicate.name == "b" for b in r.body)
    assert not any(r.head.predicate.name.startswith("_ring5") for r in t.rules)


def test_fallback_rule_present():
    t = builtin_template("rings", 3)
    fallback = [r for r in t.rules if r.head.predicate.name == "q" and not r.marked
                and [b.predicate.name for b in r.body] == ["a", "a", "b"]]
    assert len(fallback) == 1


def test_rings_plus_gnn_is_union():
    rings = builtin_template("rings", 3)
    gnn = builtin_template("gnn", 3)
    both = builtin_template("rings+gnn", 3)
    neighbour = [r for r in gnn.rules if r.head.predicate.name == "h"]
    assert set(map(str, both.rules)) == set(map(str, rings.rules)) | set(map(str, neighbour))
    assert not {w.name for r in neighbour for w in r.weights()} & set(rings.parameters)


@pytest.mark.parametrize("name", BUILTIN_TEMPLATES)
def test_builtins_parse_as_text(name):
    assert parse_template(builtin_template_text(name)).rules


def test_unknown_template_name():
    with pytest.raises(TemplateError, match="unknown builtin"):
        builtin_template_text("transformer")
    with pytest.raises(TemplateError, match="ring size"):
        builtin_template("rings", 1, (7,))
    with pytest.raises(TemplateError, match="missing.tmpl"):
        resolve_template("missing.tmpl")


# -- synthetic graphs --------------------------------------------------------------


def bond_pairs(ex):
    return [tuple(c.symbol for c in a.args) for _, a in ex.facts if a.predicate.name == "b"]


def test_cycle_shape():
    (ex,) = generate_synthetic("cycle", 1)
    assert ex.label == 1.0
    assert sum(1 for _, a in ex.facts if a.predicate.name == "a") == 6
    assert len(bond_pairs(ex)) == 12


def test_two_triangles_shape():
    (ex,) = generate_synthetic("two-triangles", 1)
    assert ex.label == -1.0
    assert sum(1 for _, a in ex.facts if a.predicate.name == "a") == 6
    assert len(bond_pairs(ex)) == 12
    nodes = sorted({x for x, _ in bond_pairs(ex)})
    edges = {(nodes.index(x), nodes.index(y)) for x, y in bond_pairs(ex) if x < y}
    assert not has_cycle_of_length(6, edges, 6, chordless=False)


def induced_six_cycle(ex):
    """Brute force: some 6-vertex subset induces a connected 2-regular subgraph."""
    pairs = {frozenset(p) for p in bond_pairs(ex)}
    nodes = sorted({x for p in pairs for x in p})
    for subset in itertools.combinations(nodes, 6):
        inside = [p for p in pairs if p <= set(subset)]
        if len(inside) != 6:
            continue
        deg = {v: sum(v in p for p in inside) for v in subset}
        if any(d != 2 for d in deg.values()):
            continue
        seen, stack = {subset[0]}, [subset[0]]
        while stack:
            v = stack.pop()
            for p in inside:
                if v in p:
                    (w,) = p - {v}
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
        if len(seen) == 6:
            return True
    return False


@pytest.mark.parametrize("seed", range(100))
def test_ring_task_labels_match_brute_force(seed):
    for ex in generate_synthetic("random-ring-task", 2, seed):
        n = sum(1 for _, a in ex.facts if a.predicate.name == "a")
        assert 6 <= n <= 12
        assert (ex.label == 1.0) == induced_six_cycle(ex)


def test_ring_task_corpus_balanced_and_sound():
    corpus = generate_synthetic("random-ring-task", 200, 42)
    assert sum(ex.label > 0 for ex in corpus) == 100
    assert all((ex.label == 1.0) == induced_six_cycle(ex) for ex in corpus)


def test_synthetic_errors():
    with pytest.raises(ValueError):
        generate_synthetic("cycle", 0)
    with pytest.raises(ValueError):
        generate_synthetic("petersen", 1)
