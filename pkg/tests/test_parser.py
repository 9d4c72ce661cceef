import random

import pytest
from hypothesis import given, settings, strategies as st

from encflow import ast as A
from encflow.callgraph import build_call_graph
from encflow.parser import LSQLSyntaxError, ProgramError, parse_expr, parse_program, parse_workload
from encflow.printer import render_program
from fixtures import F1, F2, F3, F4, PAYMENT
from gen import ProgramGen


def test_f1_shape():
    p = parse_program(F1)
    assert len(p.procedures) == 1
    (s,) = p.procedures[0].body.stmts
    assert isinstance(s, A.SelectStmt)
    assert s.source == A.Select(A.Equals(A.ColumnRef("T", "a"), A.Var("@x")),
                                A.Project((A.ColumnRef("T", "c"),), "T"))


def test_if_without_else():
    p = parse_program("PROC g() BEGIN IF T.a = 1 THEN UPDATE T SET d = 1 END")
    (s,) = p.procedures[0].body.stmts
    assert isinstance(s, A.If)
    assert isinstance(s.then.stmts[0], A.Update)
    assert s.orelse.stmts == ()


@pytest.mark.parametrize("src", [
    "PROC h() BEGIN x := ENCRYPT_DET(k, 1) END",
    "PROC h() BEGIN @x := __COERCE_enc_det_k1(1) END",
    "PROC h() BEGIN __REMOTE [S] DELETE FROM T END",
])
def test_reserved_forms_rejected(src):
    with pytest.raises(LSQLSyntaxError, match="reserved form in source"):
        parse_program(src)


def test_positions_attached():
    p = parse_program("PROC f(@x) BEGIN\n  @y := @x + 1\nEND")
    s = p.procedures[0].body.stmts[0]
    assert s.pos == (2, 3)
    assert s.value.right.pos == (2, 14)


def test_syntax_error_has_location():
    with pytest.raises(LSQLSyntaxError) as e:
        parse_program("PROC f() BEGIN SELECT FROM T END")
    assert e.value.pos is not None


@pytest.mark.parametrize("src,msg", [
    ("PROC f() BEGIN @y := 1 END PROC f() BEGIN @z := 1 END", "duplicate procedure"),
    ("PROC f(@x, @x) BEGIN @y := 1 END", "duplicate parameter"),
    ("PROC f() BEGIN CALL g() END", "undefined"),
    ("PROC f() BEGIN @y := @z END", "@z"),
    ("PROC f(@c) BEGIN IF @c = 1 THEN @y := 1 END; @z := @y END", "@y"),
    ("PROC f() BEGIN TRANSACTION BEGIN TRANSACTION BEGIN @y := 1 END END END", "nest"),
])
def test_program_errors(src, msg):
    with pytest.raises(ProgramError, match=msg):
        parse_program(src)


def test_definite_assignment_through_both_branches():
    parse_program("PROC f(@c) BEGIN IF @c = 1 THEN @y := 1 ELSE @y := 2 END; @z := @y END")


def test_render_empty_program():
    assert render_program(A.Program(())) == ""


@pytest.mark.parametrize("src", [F1, F2, F3, F4, PAYMENT])
def test_fixture_round_trip(src):
    p = parse_program(src)
    assert parse_program(render_program(p)) == p


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_round_trip_random_programs(seed):
    src, _ = ProgramGen(random.Random(seed)).program()
    p = parse_program(src)
    text = render_program(p)
    assert parse_program(text) == p
    assert render_program(parse_program(text)) == text


def test_compiled_forms_render_with_prefix():
    e = A.Coercion((A.CoercionStep("enc_det", "k1"),), A.Var("@x"))
    p = A.Program((A.Procedure("f", ("@x",), A.Seq((A.Assign(A.Var("@y"), e),))),))
    text = render_program(p)
    assert "__COERCE_enc_det_k1(@x)" in text
    assert parse_program(text, allow_compiled=True) == p


def test_expression_precedence():
    assert parse_expr("@a + @b = @c") == A.Equals(A.Add(A.Var("@a"), A.Var("@b")), A.Var("@c"))


def test_workload_parsing():
    assert parse_workload("CALL pay(10)\n-- comment\nCALL f('x', -2)\n") == [("pay", (10,)), ("f", ("x", -2))]


def test_call_graph_examples():
    p = parse_program("PROC h() BEGIN @a := 1 END PROC g() BEGIN CALL h() END "
                      "PROC f() BEGIN CALL g(); CALL h() END")
    cg = build_call_graph(p)
    assert cg.order == ["h", "g", "f"]
    assert ("f", "h") in cg.edges and ("g", "h") in cg.edges
    rec = parse_program("PROC f(@n) BEGIN IF @n = 0 THEN @a := 1 ELSE CALL f(@n) END END")
    cg = build_call_graph(rec)
    assert cg.sccs == [["f"]] and cg.is_recursive(cg.sccs[0])
    two = parse_program("PROC g() BEGIN @a := 1 END PROC f() BEGIN CALL g() END")
    assert build_call_graph(two).order == ["g", "f"]


def _topo_ok(order, edges):
    pos = {n: i for i, n in enumerate(order)}
    return all(pos[callee] < pos[caller] for caller, callee in edges)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=8))
def test_call_graph_order_is_bottom_up_for_dags(pairs):
    edges = {(f"p{a}", f"p{b}") for a, b in pairs if a > b}
    procs = []
    for i in range(6):
        calls = "; ".join(f"CALL {b}()" for a, b in sorted(edges) if a == f"p{i}") or "@z := 1"
        procs.append(f"PROC p{i}() BEGIN {calls} END")
    cg = build_call_graph(parse_program("\n".join(procs)))
    assert set(cg.edges) == edges
    assert _topo_ok(cg.order, edges)
