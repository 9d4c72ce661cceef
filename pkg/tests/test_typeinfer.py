import random

import pytest
from hypothesis import given, settings, strategies as st

from encflow import ast as A
from encflow.lattice import EncType as E, leq, strength
from encflow.parser import parse_program
from encflow.policy import Policy, Stats
from encflow.typeinfer import (Assignment, Atom, ConstraintSet, Origin, TypeInferenceError, UnsatReport,
                               assignment_cost, flow_safe, infer_program, optimize_assignment, solve,
                               solve_constraints, suggest_policy_fix)
from fixtures import F1, F1_POLICY, F2, F2_POLICY, F3, F3_POLICY, F4, F4_POLICY, PAYMENT, PAYMENT_POLICY, load
from gen import ProgramGen, random_policy
from oracle import least_solution, random_system


def _nodes(tp, cls):
    return [n for (n, _, _) in tp.env.nodes.values() if isinstance(n, cls) and n.pos is not None]


def test_f1_least_solution():
    p, pol = load(F1, F1_POLICY)
    tp = infer_program(p, pol).procs["f"]
    # the parameter binding is registered too; pick the use inside WHERE
    (x,) = [n for n in _nodes(tp, A.Var) if n.name == "@x" and n.pos != (1, 1)]
    (col,) = [n for n in _nodes(tp, A.ColumnRef) if n.column == "a"]
    assert tp.expected(x) == E.DE
    assert tp.expected(col) == E.DE and tp.assumed(col) == E.DE
    assert tp.coercion(x) == (A.CoercionStep("enc_det", "k1"),)
    assert not any(isinstance(n, A.ColumnRef) for n in tp.coerced_nodes())


def test_f1_matches_exhaustive_oracle():
    p, pol = load(F1, F1_POLICY)
    tp = infer_program(p, pol).procs["f"]
    assert len(tp.cs.free_roots()) <= 5
    oracle = least_solution(tp.cs, tp.cs.active("strict"))
    assert {r: tp.solution.values[r] for r in oracle} == oracle


def test_f2_implicit_flow():
    p, pol = load(F2, F2_POLICY)
    t = infer_program(p, pol)
    assert [e.kind for e in t.errors] == ["implicit"]
    assert t.errors[0].columns == [("T", "d")]
    (edit,) = suggest_policy_fix(t)
    assert (edit.table, edit.column, edit.new, edit.key) == ("T", "d", E.DE, "k1")
    assert infer_program(p, pol, "explicit-only").ok


def test_f3_explicit_flow():
    p, pol = load(F3, F3_POLICY)
    t = infer_program(p, pol)
    assert [e.kind for e in t.errors] == ["explicit"]
    (edit,) = suggest_policy_fix(t)
    assert (edit.table, edit.column, edit.new) == ("H", "h", E.NDE)


def test_payment_errors_and_suggestions():
    p, pol = load(PAYMENT, PAYMENT_POLICY)
    t = infer_program(p, pol)
    kinds = sorted((e.kind, tuple(e.columns)) for e in t.errors)
    assert kinds == [("explicit", (("HISTORY", "H_BALANCE"),)), ("implicit", (("CUSTOMER", "C_DATA"),))]
    edits = {(e.table, e.column): e.new for e in suggest_policy_fix(t)}
    assert strength(edits[("HISTORY", "H_BALANCE")]).taint >= strength(E.ADE).taint
    assert strength(edits[("CUSTOMER", "C_DATA")]).taint >= strength(E.DE).taint
    assert len(infer_program(p, pol, "explicit-only").errors) == 1


def test_satisfiable_has_no_suggestions():
    p, pol = load(F4, F4_POLICY)
    assert suggest_policy_fix(infer_program(p, pol)) == []


def test_constant_comparison_all_pt():
    t = infer_program(parse_program("PROC f() BEGIN @b := 1 = 1 END"), Policy())
    assert set(t.procs["f"].solution.values.values()) == {E.PT}


def test_unify():
    cs = ConstraintSet()
    a, b = cs.fresh(), cs.fresh()
    cs.unify(a, b)
    assert cs.find(a) == cs.find(b) and len(cs.roots()) == 1
    cs.unify(Atom(E.DE), Atom(E.DE))
    with pytest.raises(TypeInferenceError):
        cs.unify(Atom(E.DE), Atom(E.NDE))
    c = cs.fresh()
    cs.unify(c, Atom(E.DE))
    with pytest.raises(TypeInferenceError):
        cs.unify(c, Atom(E.OPE))


def test_empty_constraint_set():
    r = solve(ConstraintSet())
    assert isinstance(r, Assignment) and r.values == {}


def test_callee_return_is_decrypted():
    src = ("PROC q(@k) BEGIN SELECT a FROM T WHERE T.b = @k END "
           "PROC p(@k) BEGIN CALL q(@k) INTO @r; INSERT INTO U (x) VALUES (@r) END")
    t = infer_program(parse_program(src), Policy.parse("T.a=DE:k1\nU.x=DE:k1\n"))
    assert t.ok
    assert t.summaries["q"].returns == (E.DPT,)
    assert t.summaries["q"].params == (E.PT,)
    assert t.procs["p"].var_type("@r") == E.DPT
    leaky = infer_program(parse_program(src), Policy.parse("T.a=DE:k1\n"))
    assert [e.columns for e in leaky.errors] == [[("U", "x")]]


def test_recursive_procedure_reaches_fixpoint():
    p = parse_program("PROC f(@n) BEGIN IF @n = 0 THEN @a := 1 ELSE CALL f(@n) END END")
    t = infer_program(p, Policy())
    assert t.ok and t.summaries["f"].params == (E.PT,)


def test_key_conflict_reported():
    src = "PROC f() BEGIN SELECT a FROM T WHERE T.a = T.b END"
    t = infer_program(parse_program(src), Policy.parse("T.a=DE:k1\nT.b=DE:k2\n"))
    assert not t.ok and any("key" in e.message for e in t.errors)


def test_minimal_conflict_replays_unsat():
    p, pol = load(F2, F2_POLICY)
    tp = infer_program(p, pol).procs["g"]
    core = tp.report.minimal_conflict()
    assert not solve_constraints(tp.cs, core).ok
    assert len(core) < len(tp.cs.active("strict"))


def test_cost_model_on_f1():
    p, pol = load(F1, F1_POLICY)
    t = infer_program(p, pol)
    big = Stats({("T", "a"): 10000})
    assert assignment_cost(t, big) == 1
    variant_a = optimize_assignment(t, Stats({("T", "a"): 0}))
    assert assignment_cost(variant_a, big) == 10000
    assert assignment_cost(variant_a, Stats({("T", "a"): 0})) == 0
    assert assignment_cost(optimize_assignment(t, big), big) == 1


def test_missing_stats_default_and_reported():
    p, pol = load(F1, F1_POLICY)
    s = Stats()
    assignment_cost(optimize_assignment(infer_program(p, pol), s), s)
    assert s.get("T", "zzz") == 1000
    assert ("T", "zzz") in s.missing


def test_zero_coercion_program_unchanged_by_optimizer():
    t = infer_program(parse_program("PROC f() BEGIN SELECT a FROM T END"), Policy())
    assert optimize_assignment(t, Stats()) is t


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9))
def test_solver_matches_oracle_on_random_systems(seed):
    cs, cons = random_system(random.Random(seed))
    oracle = least_solution(cs, cons)
    assert oracle != "no-least"
    r = solve(cs)
    if oracle is None:
        assert isinstance(r, UnsatReport)
    else:
        assert isinstance(r, Assignment)
        assert {k: r.values[k] for k in oracle} == oracle


def _typed_random(seed):
    rng = random.Random(seed)
    src, _ = ProgramGen(rng).program()
    return parse_program(src), Policy.parse(random_policy(rng))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_mode_monotonicity_and_static_safety(seed):
    p, pol = _typed_random(seed)
    strict = infer_program(p, pol, "strict")
    if strict.ok:
        assert infer_program(p, pol, "explicit-only").ok
        for tp in strict.procs.values():
            assert flow_safe(tp, pol) == []
            for node, _, _ in tp.env.nodes.values():
                assert leq(tp.assumed(node), tp.expected(node))
                assert E.TOP not in (tp.assumed(node), tp.expected(node))
    assert len(infer_program(p, pol, "explicit-only").errors) <= len(strict.errors)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**9))
def test_optimizer_never_increases_cost(seed):
    p, pol = _typed_random(seed)
    t = infer_program(p, pol)
    if not t.ok:
        return
    stats = Stats({k: random.Random(seed).randint(0, 5000) for k in pol.columns})
    assert assignment_cost(optimize_assignment(t, stats), stats) <= assignment_cost(t, stats)
