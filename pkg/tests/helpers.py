"""Shared fixtures and independent reference implementations for the tests."""
import json
import math
import random
from collections import Counter

import numpy as np

from lrnn.molecules import MoleculeRecord
from lrnn.parser import parse_examples, parse_template

WATER_FACTS = "a(o1).\na(h1).\na(h2).\nb(h1,o1).\nb(o1,h1).\nb(h2,o1).\nb(o1,h2).\n"
HYDROGEN_FACTS = "a(h1).\na(h2).\nb(h1,h2).\nb(h2,h1).\n"


def water():
    return parse_examples("example water -1\n" + WATER_FACTS)[0]


def hydrogen():
    return parse_examples("example hydrogen -1\n" + HYDROGEN_FACTS)[0]


def derivation_multiset(model):
    return Counter(
        (g.rule_index, g.head, g.body, tuple(g.subst.sorted_items()))
        for insts in model.derivations.values() for g in insts
    )


def random_program(seed, max_preds=5, max_consts=20, max_rules=4):
    """Random range-restricted program text and fact text, possibly recursive."""
    rng = random.Random(seed)
    n_preds = rng.randint(2, max_preds)
    n_consts = rng.randint(1, max_consts)
    consts = [f"c{i}" for i in range(n_consts)]
    preds = []
    for i in range(n_preds):
        name = f"_s{i}" if rng.random() < 0.15 else f"p{i}"
        preds.append((name, rng.randint(1, 2)))
    pool = ["X", "Y", "Z", "W"]
    rules = []
    for _ in range(rng.randint(1, max_rules)):
        body = []
        used = []
        for _ in range(rng.randint(1, 3)):
            name, ar = rng.choice(preds)
            args = []
            for _ in range(ar):
                if rng.random() < 0.1:
                    args.append(rng.choice(consts))
                else:
                    v = rng.choice(pool)
                    args.append(v)
                    used.append(v)
            body.append(f"{name}({','.join(args)})")
        if not used:
            name, ar = rng.choice(preds)
            body.append(f"{name}({','.join(['X'] * ar)})")
            used.append("X")
        if len(set(used)) >= 2 and rng.random() < 0.2:
            a, b = rng.sample(sorted(set(used)), 2)
            body.append(f"distinct({a},{b})")
        hname, har = rng.choice(preds)
        hargs = [rng.choice(used) if rng.random() < 0.9 else rng.choice(consts) for _ in range(har)]
        rules.append(f"{hname}({','.join(hargs)}) :- {', '.join(body)}.")
    facts = []
    for name, ar in preds:
        for _ in range(rng.randint(0, 2 * n_consts)):
            facts.append(f"{name}({','.join(rng.choice(consts) for _ in range(ar))}).")
    return "\n".join(rules) + "\n", "\n".join(facts) + "\n"


def random_program_pair(seed):
    tmpl, facts = random_program(seed)
    (ex,) = parse_examples(f"example prog{seed} 0\n" + facts)
    return parse_template(tmpl), ex


def random_molecule(seed, n_atoms=8, elements=("c", "n", "o"), extra_bonds=2, label=1.0, ring=0):
    """Connected random molecule: a random tree plus a few extra bonds.

    ``ring=k`` closes atoms 0..k-1 into a k-cycle first.
    """
    rng = np.random.default_rng(seed)
    rec = MoleculeRecord(f"mol{seed}", label)
    rec.atoms = [(f"x{i}", str(rng.choice(elements)), None) for i in range(n_atoms)]
    edges = {(i, i + 1) for i in range(ring - 1)} | ({(0, ring - 1)} if ring else set())
    for v in range(max(1, ring), n_atoms):
        u = int(rng.integers(v))
        edges.add((u, v))
    cands = [(i, j) for i in range(n_atoms) for j in range(i + 1, n_atoms) if (i, j) not in edges]
    for k in rng.permutation(len(cands))[:extra_bonds]:
        edges.add(cands[int(k)])
    rec.bonds = [(f"x{i}", f"x{j}", None) for i, j in sorted(edges)]
    return rec.to_example()


def interpret_json(doc_text):
    """Straight-line evaluation of a JSON graph dump with plain Python floats."""
    doc = json.loads(doc_text)
    d = doc["d"]
    params = {}
    for p in doc["params"]:
        data = p["data"]
        if len(p["shape"]) == 2:
            params[p["name"]] = [data[r * d:(r + 1) * d] for r in range(d)]
        else:
            params[p["name"]] = list(data)
    incoming = {}
    for e in doc["edges"]:
        incoming.setdefault(e["dst"], []).append((e["src"], e["param"]))
    value = {}
    for node in sorted(doc["nodes"], key=lambda n: n["id"]):
        i = node["id"]
        ins = incoming.get(i, [])
        if node["kind"] == "fact":
            value[i] = list(node["value"])
        elif node["kind"] == "agg":
            value[i] = [sum(value[s][k] for s, _ in ins) / len(ins) for k in range(d)]
        else:
            acc = [0.0] * d
            for s, p in ins:
                x = value[s]
                if p is None:
                    y = x
                else:
                    W = params[p]
                    y = [sum(W[r][c] * x[c] for c in range(d)) for r in range(d)]
                acc = [a + b for a, b in zip(acc, y)]
            if "bias" in node:
                acc = [a + b for a, b in zip(acc, params[node["bias"]])]
            value[i] = [math.tanh(a) for a in acc]
    return value[doc["output"]]


def gradient_check(graph, params, h=1e-5, floor=1e-8):
    """Max relative error of backward() against central differences of mean(output)."""
    from lrnn.autodiff import GradientTape, backward
    from lrnn.graph import forward

    tape = GradientTape()
    forward(graph, params, tape)
    backward(graph, params, tape, np.full(graph.d, 1.0 / graph.d))
    worst = 0.0
    for name in graph.parameter_names():
        if not params.learnable(name):
            continue
        value = params[name]
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + h
            fp = forward(graph, params).mean()
            value[idx] = old - h
            fm = forward(graph, params).mean()
            value[idx] = old
            fd = (fp - fm) / (2 * h)
            an = tape.grads[name][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst
