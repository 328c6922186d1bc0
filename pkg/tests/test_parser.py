import numpy as np
import pytest

from lrnn.errors import ParseError, TemplateError
from lrnn.logic import Predicate
from lrnn.molecules import BUILTIN_TEMPLATES, builtin_template, builtin_template_text
from lrnn.parser import (expand_layers, parse_examples, parse_template, render, render_example,
                         structurally_equal)

EX1 = "W_h1 :: h(X) :- W_a : a(Y), W_b : b(X,Y)."
RING6 = "_ring6(A,B,C,D,E,F) :- bond(A,B), bond(B,C), bond(C,D), bond(D,E), bond(E,F), bond(F,A)."


def test_parse_gnn_rule():
    t = parse_template(EX1)
    assert len(t.rules) == 1
    r = t.rules[0]
    assert r.head.predicate == Predicate("h", 1)
    assert [b.predicate for b in r.body] == [Predicate("a", 1), Predicate("b", 2)]
    assert set(t.parameters) == {"W_h1", "W_a", "W_b"}
    assert r.head_weight.name == "W_h1"
    assert [w.name for w in r.body_weights] == ["W_a", "W_b"]


def test_parse_crisp_ring_rule():
    t = parse_template(RING6)
    (r,) = t.rules
    assert r.crisp
    assert len(r.body) == 6
    assert all(w.absent for w in r.weights())
    assert not t.parameters


def test_missing_period_reports_end_of_input():
    with pytest.raises(ParseError) as info:
        parse_template("W :: q :- W : h(X)")
    assert info.value.token == "<end of input>"
    assert info.value.line == 1


def test_syntax_error_position():
    with pytest.raises(ParseError) as info:
        parse_template("W :: q :- W : h(X).\nW :: q :- , h(X).")
    assert (info.value.line, info.value.column) == (2, 11)


def test_arity_conflict():
    with pytest.raises(TemplateError, match="arities"):
        parse_template("W :: q :- V : h(X).\nW :: q :- V : h(X, Y).")


def test_range_restriction():
    with pytest.raises(TemplateError, match="head variable"):
        parse_template("W :: h(X) :- V : a(Y).")


def test_double_colon_forbidden_in_body():
    with pytest.raises(ParseError, match="not allowed inside a rule body"):
        parse_template("W :: h(X) :- V :: a(X).")


def test_weights_on_crisp_rules_rejected():
    with pytest.raises(TemplateError):
        parse_template("W :: _r(X) :- a(X).")
    with pytest.raises(TemplateError):
        parse_template("W :: h(X) :- V : _r(X), a(X).")


def test_fixed_weights_and_comments():
    t = parse_template("// comment\n0.5 :: h(X) :- [[1, 0], [0, 1]] : a(X). // trailing\n")
    r = t.rules[0]
    assert r.head_weight.kind == "fixed" and float(r.head_weight.init) == 0.5
    assert r.body_weights[0].init.shape == (2, 2)
    assert not t.parameters


def test_parse_examples_values():
    (ex,) = parse_examples("2.35 :: ionEnergy(c1, level2).\n[2.7, -1] :: bond(c1, o2).\na(h1).")
    (v1, a1), (v2, a2), (v3, a3) = ex.facts
    assert float(v1) == 2.35 and str(a1) == "ionEnergy(c1,level2)"
    assert np.array_equal(v2, [2.7, -1.0]) and str(a2) == "bond(c1,o2)"
    assert float(v3) == 1.0 and str(a3) == "a(h1)"


def test_parse_examples_headers_and_blank_lines():
    text = "example water -1\na(o1).\n\na(h1).\nexample h2 1\na(h1).\n"
    exs = parse_examples(text)
    assert [(e.id, e.label, len(e.facts)) for e in exs] == [("water", -1.0, 2), ("h2", 1.0, 1)]
    exs = parse_examples("a(x).\nb(x,y).\n\n\na(z).\n")
    assert [(e.id, e.label, len(e.facts)) for e in exs] == [("e1", None, 2), ("e2", None, 1)]


def test_parse_examples_order_preserving():
    lines = [f"{i}.0 :: p(c{i})." for i in range(30)]
    (ex,) = parse_examples("\n".join(lines))
    assert [float(v) for v, _ in ex.facts] == [float(i) for i in range(30)]


def test_non_ground_fact_rejected():
    with pytest.raises(ParseError, match="non-ground"):
        parse_examples("b(X, o1).")


@pytest.mark.parametrize("bad", ["[1, [2]] :: p(c).", "[[1, 2], [3]] :: p(c).", "[1, 2 :: p(c)."])
def test_malformed_tensor(bad):
    with pytest.raises(ParseError, match="tensor"):
        parse_examples(bad)


def test_example_roundtrip():
    text = "example m1 1.0\n2.5 :: a(c1).\n[1.0, 2.0, 3.0] :: b(c1,c2).\nb(c2,c1).\n"
    (ex,) = parse_examples(text)
    (again,) = parse_examples(render_example(ex))
    assert again.id == ex.id and again.label == ex.label
    assert [a for _, a in again.facts] == [a for _, a in ex.facts]
    assert all(np.array_equal(x, y) for (x, _), (y, _) in zip(again.facts, ex.facts))


# -- layer expansion ------------------------------------------------------------

GNN_MARKED = "h^(0) = a.\nW_h1 :: h^(n)(X) :- W_a : h^(n-1)(Y), W_b : b(X,Y).\n"


def test_expand_gnn_three_layers_disjoint_weights():
    t = expand_layers(parse_template(GNN_MARKED), 3)
    assert [r.head.predicate for r in t.rules] == [Predicate("h", 1, k) for k in (1, 2, 3)]
    names = [{w.name for w in r.weights()} for r in t.rules]
    assert all(not (a & b) for i, a in enumerate(names) for b in names[i + 1:])
    assert t.rules[0].body[0].predicate == Predicate("a", 1)
    assert t.rules[1].body[0].predicate == Predicate("h", 1, 1)


def test_expand_single_layer_maps_to_base():
    t = expand_layers(parse_template(GNN_MARKED), 1)
    (r,) = t.rules
    assert r.body[0].predicate == Predicate("a", 1)
    assert r.head.predicate == Predicate("h", 1, 1)


def test_expand_without_base_declaration_strips_index():
    t = expand_layers(parse_template("W :: g^(n)(X) :- V : g^(n-1)(X)."), 1)
    assert t.rules[0].body[0].predicate == Predicate("g", 1)


def test_ring_two_layers_hand_expanded():
    text = builtin_template_text("rings", [6])
    got = expand_layers(parse_template(text), 2)
    expected = parse_template(
        "h^(0) = a.\nring6^(0) = _ring6.\n"
        "W_q_L1 :: q :- W_h2_L1 : h^(1)(X).\n"
        "W_q_L2 :: q :- W_h2_L2 : h^(2)(X).\n"
        "W_q0 :: q :- W_1 : a(A), W_2 : a(B), b(A,B).\n"
        "_ring6(A,B,C,D,E,F) :- b(A,B), b(B,C), b(C,D), b(D,E), b(E,F), b(F,A).\n"
        "W_r6_L1 :: ring6^(1)(A,B,C,D,E,F) :- _ring6(A,B,C,D,E,F), W_r6a_L1 : a(A), W_r6b_L1 : a(B), "
        "W_r6c_L1 : a(C), W_r6d_L1 : a(D), W_r6e_L1 : a(E), W_r6f_L1 : a(F).\n"
        "W_r6_L2 :: ring6^(2)(A,B,C,D,E,F) :- W_rr6_L2 : ring6^(1)(A,B,C,D,E,F), W_r6a_L2 : h^(1)(A), "
        "W_r6b_L2 : h^(1)(B), W_r6c_L2 : h^(1)(C), W_r6d_L2 : h^(1)(D), W_r6e_L2 : h^(1)(E), "
        "W_r6f_L2 : h^(1)(F).\n"
        "W_a6_L1 :: h^(1)(A) :- W_ra6_L1 : ring6^(1)(A,B,C,D,E,F).\n"
        "W_a6_L2 :: h^(2)(A) :- W_ra6_L2 : ring6^(2)(A,B,C,D,E,F).\n"
    )
    assert sorted(map(str, got.rules)) == sorted(map(str, expected.rules))


def test_expand_rejects_deeper_references():
    with pytest.raises(TemplateError, match="one-step"):
        expand_layers(parse_template("W :: g^(n)(X) :- V : g^(n-2)(X)."), 3)


@pytest.mark.parametrize("name", BUILTIN_TEMPLATES)
@pytest.mark.parametrize("layers", [1, 2, 3])
def test_expand_rule_count(name, layers):
    raw = parse_template(builtin_template_text(name))
    unique = []
    for r in raw.rules:
        if r not in unique:
            unique.append(r)
    marked = sum(r.marked for r in unique)
    assert len(builtin_template(name, layers)) == layers * marked + (len(unique) - marked)


@pytest.mark.parametrize("name", BUILTIN_TEMPLATES)
@pytest.mark.parametrize("layers", [None, 3])
def test_render_parse_roundtrip(name, layers):
    t = parse_template(builtin_template_text(name))
    if layers:
        t = expand_layers(t, layers)
    again = parse_template(render(t))
    assert structurally_equal(t, again)


def test_render_roundtrip_fixed_weights():
    t = parse_template("0.1 :: h(X) :- [0.25, -3.5] : a(X), W : b(X, Y).")
    assert structurally_equal(t, parse_template(render(t)))
