import random

import pytest
from hypothesis import given, strategies as st

from finsynth.dsl import compile_infix, execute, parse_program, serialize_program
from finsynth.graph import (
    AlreadyTemporalError,
    CONNECTOR_KINDS,
    DuplicateNodeError,
    FewerThanTwoSlicesError,
    FormulaNode,
    GraphError,
    InvalidNodeError,
    NotConnectedError,
    Provenance,
    SeedFileError,
    add_temporal,
    build_graph,
    compose,
    compute_edges,
    dedup_key,
    dump_graph,
    extend,
    extend_to_fixed_point,
    load_seed_formulas,
)

CORE_FORMULAS = [
    "ebit = total_profit + interest_expense",
    "interest_coverage_ratio = ebit / interest_expense",
    "net_profit = total_profit - income_tax_expense",
    "total_profit = operating_profit + non_operating_income - non_operating_expense",
]


def core_graph():
    return build_graph(compile_infix(f) for f in CORE_FORMULAS)


def test_build_graph_edges():
    g = core_graph()
    assert len(g.nodes) == 4
    assert g.edges == {
        ("ebit", "interest_coverage_ratio"),
        ("total_profit", "ebit"),
        ("total_profit", "net_profit"),
    }
    assert g.consumed == set()


def test_ratio_only_formula_adds_no_edge():
    nodes = [compile_infix(f) for f in CORE_FORMULAS]
    nodes.append(compile_infix("gross_margins = gross_profit / revenue"))
    g = build_graph(nodes)
    assert len(g.nodes) == 5
    assert len(g.edges) == 3


def test_build_graph_rejects_duplicate_ids():
    node = compile_infix("x = a + b")
    with pytest.raises(DuplicateNodeError):
        build_graph([node, node])


def test_compose_single_step_producer():
    g = core_graph()
    out = compose(g.nodes["ebit"], g.nodes["interest_coverage_ratio"])
    assert out.target == "interest_coverage_ratio"
    assert serialize_program(out.program) == (
        "add(total_profit, interest_expense), divide(#0, interest_expense)"
    )
    assert out.independents == ("total_profit", "interest_expense")
    assert out.depth == 1
    assert out.provenance == Provenance(
        "composed", producer="ebit", consumer="interest_coverage_ratio"
    )


def test_compose_multi_step_producer_shifts_refs():
    g = core_graph()
    out = compose(g.nodes["total_profit"], g.nodes["ebit"])
    assert serialize_program(out.program) == (
        "add(operating_profit, non_operating_income), "
        "subtract(#0, non_operating_expense), add(#1, interest_expense)"
    )
    assert out.independents == (
        "operating_profit",
        "non_operating_income",
        "non_operating_expense",
        "interest_expense",
    )


def test_compose_requires_edge():
    g = core_graph()
    with pytest.raises(NotConnectedError):
        compose(g.nodes["ebit"], g.nodes["net_profit"])
    with pytest.raises(NotConnectedError):
        compose(g.nodes["ebit"], g.nodes["ebit"])


def test_compose_is_semantics_preserving():
    g = core_graph()
    producer, consumer = g.nodes["total_profit"], g.nodes["ebit"]
    composed = compose(producer, consumer)
    bindings = {
        "operating_profit": 500.0,
        "non_operating_income": 40.5,
        "non_operating_expense": 12.25,
        "interest_expense": 30.0,
    }
    inner = execute(producer.program, bindings)
    expected = execute(consumer.program, {**bindings, "total_profit": inner})
    assert execute(composed.program, bindings) == expected


def test_extend_first_round():
    g = core_graph()
    g1, added = extend(g)
    assert added == 3
    assert len(g1.nodes) == 7
    assert g1.consumed == g.edges
    programs = sorted(
        serialize_program(n.program) for n in g1.nodes.values()
        if n.provenance.kind == "composed"
    )
    assert programs == [
        "add(operating_profit, non_operating_income), subtract(#0, non_operating_expense), add(#1, interest_expense)",
        "add(operating_profit, non_operating_income), subtract(#0, non_operating_expense), subtract(#1, income_tax_expense)",
        "add(total_profit, interest_expense), divide(#0, interest_expense)",
    ]


def test_extend_deduplicates_convergent_paths():
    # the fully inlined coverage ratio is reachable two ways; round two must
    # add it exactly once
    g, _ = extend(core_graph())
    g, added = extend(g)
    assert added == 1
    ratio_full = [
        n for n in g.nodes.values()
        if n.provenance.kind == "composed" and len(n.program.steps) == 4
    ]
    assert len(ratio_full) == 1
    assert serialize_program(ratio_full[0].program) == (
        "add(operating_profit, non_operating_income), "
        "subtract(#0, non_operating_expense), add(#1, interest_expense), "
        "divide(#2, interest_expense)"
    )


def test_extend_fixed_point():
    g, counts = extend_to_fixed_point(core_graph())
    assert counts == [3, 1]
    assert len(g.nodes) == 8
    assert not (g.edges - g.consumed)
    again, added = extend(g)
    assert added == 0
    assert again.nodes == g.nodes


def test_extend_respects_size_limits():
    g, counts = extend_to_fixed_point(core_graph(), max_steps=2, max_vars=2)
    composed = [n for n in g.nodes.values() if n.provenance.kind == "composed"]
    assert len(composed) == 1
    assert len(composed[0].program.steps) == 2


def test_extend_filters_cyclic_compositions():
    g = build_graph([compile_infix("a = b + c"), compile_infix("b = a - c")])
    assert g.edges == {("a", "b"), ("b", "a")}
    g1, counts = extend_to_fixed_point(g)
    assert counts == [0]
    assert len(g1.nodes) == 2


def test_depth_grows_with_composition():
    g, _ = extend_to_fixed_point(core_graph())
    depths = {n.depth for n in g.nodes.values()}
    assert depths == {0, 1, 2}


# ---------------------------------------------------------------------------
# Temporal dimension


def test_add_temporal_node_count():
    g = core_graph()
    t = add_temporal(g, ["t1", "t2"])
    # n*s + m*(s-1)*4 with 4 nodes and 9 distinct variables
    assert len(t.nodes) == 4 * 2 + 9 * 1 * 4 == 44
    t3 = add_temporal(g, ["t1", "t2", "t3"])
    assert len(t3.nodes) == 4 * 3 + 9 * 2 * 4 == 84


def test_add_temporal_slice_copies():
    t = add_temporal(core_graph(), ["t1", "t2"])
    node = t.nodes["ebit@t1"]
    assert node.target == "ebit@t1"
    assert node.independents == ("total_profit@t1", "interest_expense@t1")
    assert serialize_program(node.program) == "add(total_profit@t1, interest_expense@t1)"
    assert node.provenance == Provenance("temporal-slice", producer="ebit", slices=("t1",))


def test_add_temporal_connectors():
    t = add_temporal(core_graph(), ["t1", "t2"])
    change = t.nodes["ebit_change@t1~t2"]
    assert change.target == "ebit_change"
    assert serialize_program(change.program) == "subtract(ebit@t2, ebit@t1)"
    rate = t.nodes["ebit_rate_of_change@t1~t2"]
    assert serialize_program(rate.program) == (
        "subtract(ebit@t2, ebit@t1), divide(#0, ebit@t1)"
    )
    total = t.nodes["ebit_sum@t1~t2"]
    assert serialize_program(total.program) == "add(ebit@t1, ebit@t2)"
    avg = t.nodes["ebit_average@t1~t2"]
    assert serialize_program(avg.program) == "add(ebit@t1, ebit@t2), divide(#0, 2)"
    assert avg.provenance.connector == "average"
    assert avg.provenance.variable == "ebit"
    assert avg.provenance.slices == ("t1", "t2")


def test_connectors_cover_every_variable():
    t = add_temporal(core_graph(), ["t1", "t2"])
    for var in ["ebit", "interest_expense", "operating_profit", "interest_coverage_ratio"]:
        for kind in CONNECTOR_KINDS:
            assert f"{var}_{kind}@t1~t2" in t.nodes


def test_temporal_edges_connect_slices_and_connectors():
    t = add_temporal(core_graph(), ["t1", "t2"])
    assert ("ebit@t1", "interest_coverage_ratio@t1") in t.edges
    assert ("ebit@t1", "ebit_change@t1~t2") in t.edges
    assert ("ebit@t2", "ebit_change@t1~t2") in t.edges
    assert ("ebit@t1", "ebit_change@t1~t2") not in t.consumed
    # connectors never feed anything: their targets are not variables
    sources = {src for src, _ in t.edges}
    assert not any("~" in s for s in sources)


def test_add_temporal_rejects_temporal_graph():
    t = add_temporal(core_graph(), ["t1", "t2"])
    with pytest.raises(AlreadyTemporalError):
        add_temporal(t, ["t3", "t4"])


def test_add_temporal_needs_two_distinct_slices():
    g = core_graph()
    with pytest.raises(FewerThanTwoSlicesError):
        add_temporal(g, ["t1"])
    with pytest.raises(GraphError):
        add_temporal(g, ["t1", "t1"])


def test_temporal_connector_values():
    t = add_temporal(core_graph(), ["t1", "t2"])
    b = {"ebit@t1": 100.0, "ebit@t2": 150.0}
    assert execute(t.nodes["ebit_change@t1~t2"].program, b) == 50.0
    assert execute(t.nodes["ebit_rate_of_change@t1~t2"].program, b) == 0.5
    assert execute(t.nodes["ebit_sum@t1~t2"].program, b) == 250.0
    assert execute(t.nodes["ebit_average@t1~t2"].program, b) == 125.0


# ---------------------------------------------------------------------------
# Seed files and dumps


def test_load_shipped_seed_file():
    import importlib.resources as res

    path = str(res.files("finsynth").joinpath("data/seed_formulas.txt"))
    nodes, ranges = load_seed_formulas(path)
    assert len(nodes) == 5
    assert {n.target for n in nodes} >= {"ebit", "gross_margins"}
    assert all(0 < lo <= hi for lo, hi in ranges.values())
    assert "revenue" in ranges
    g = build_graph(nodes)
    assert (len(g.nodes), len(g.edges)) == (5, 3)


def test_load_seed_file_errors(tmp_path):
    cases = {
        "dup.txt": "a = b + c\na = c + d\n",
        "badrange.txt": "a = b + c\nrange b 10 5\n",
        "negrange.txt": "a = b + c\nrange b -1 5\n",
        "noformula.txt": "# only comments\n",
        "notequation.txt": "just words\n",
        "badexpr.txt": "a = b + \n",
    }
    for name, content in cases.items():
        p = tmp_path / name
        p.write_text(content)
        with pytest.raises(SeedFileError):
            load_seed_formulas(str(p))


def test_load_seed_file_skips_comments_and_blanks(tmp_path):
    p = tmp_path / "seed.txt"
    p.write_text("# heading\n\nx = a + b  # trailing note\nrange a 1 2\n")
    nodes, ranges = load_seed_formulas(str(p))
    assert len(nodes) == 1 and ranges == {"a": (1.0, 2.0)}


def test_dump_graph_is_deterministic_and_complete():
    g, _ = extend(core_graph())
    text = dump_graph(g)
    assert text == dump_graph(g)
    assert text.startswith("nodes 7\nedges ")
    assert "node ebit kind=seed depth=0" in text
    assert "  program add(total_profit, interest_expense)" in text
    assert "edge total_profit -> ebit consumed" in text


# ---------------------------------------------------------------------------
# Properties


@given(st.integers(0, 2**32 - 1))
def test_edges_match_bruteforce_definition(seed):
    rng = random.Random(seed)
    pool = ["a", "b", "c", "d", "e", "f"]
    nodes = []
    for i in range(rng.randint(1, 6)):
        target = rng.choice(pool)
        inputs = rng.sample([v for v in pool if v != target], rng.randint(2, 3))
        expr = " + ".join(inputs)
        node = compile_infix(f"{target} = {expr}")
        nodes.append(
            FormulaNode(
                id=f"{target}_{i}",
                target=node.target,
                independents=node.independents,
                program=node.program,
                provenance=node.provenance,
            )
        )
    table = {n.id: n for n in nodes}
    expected = {
        (j.id, i.id)
        for j in nodes
        for i in nodes
        if j.id != i.id and j.target in i.independents
    }
    assert compute_edges(table) == expected


@given(st.integers(0, 2**32 - 1))
def test_composition_soundness(seed):
    rng = random.Random(seed)
    g = core_graph()
    edges = sorted(g.edges)
    src, dst = edges[rng.randrange(len(edges))]
    producer, consumer = g.nodes[src], g.nodes[dst]
    composed = compose(producer, consumer)
    composed.validate()
    bindings = {v: round(rng.uniform(1.0, 9999.0), 2) for v in composed.independents}
    inner = execute(producer.program, bindings)
    expected = execute(consumer.program, {**bindings, producer.target: inner})
    assert execute(composed.program, bindings) == expected
    assert dedup_key(composed) == dedup_key(composed)
