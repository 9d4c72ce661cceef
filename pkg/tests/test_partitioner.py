import random

from hypothesis import given, settings, strategies as st

from encflow import ast as A
from encflow.crypto import KeyStore
from encflow.parser import parse_program
from encflow.partitioner import (Closure, baseline_partition, check_server_safety, live_before, parse_manifest,
                                 partition, safety_analysis)
from encflow.policy import Policy
from encflow.rewriter import rewrite
from encflow.runtime import ClientState, load_fixture, run_workload
from encflow.typeinfer import infer_program
from fixtures import F4, F4_POLICY
from gen import ProgramGen, random_policy

KEYS = KeyStore({"k1": ("det", 7), "k3": ("ah", 9)})


def _compiled(src, pol):
    pol = Policy.parse(pol)
    return rewrite(infer_program(parse_program(src), pol)), pol


def test_f4_optimized_vs_baseline():
    c, _ = _compiled(F4, F4_POLICY)
    pp = partition(c)
    assert pp.render_client() == (
        "PROC pay(@amt) BEGIN\n"
        "  @enc_amt := __COERCE_enc_ah_k3(@amt);\n"
        "  CALL [S].pay__c1(@enc_amt)\n"
        "END")
    (cl,) = pp.closures.values()
    assert (cl.inputs, cl.outputs, cl.txlocal) == (("@enc_amt",), (), True)
    assert pp.distributed_tx == 0
    base = baseline_partition(c)
    assert base.closures == {} and base.distributed_tx == 1
    assert partition(c, txelim=False).distributed_tx == 1


def test_unsafe_expression_wrapped_in_identity():
    c, _ = _compiled("PROC f(@x) BEGIN UPDATE T SET c = CONCAT(T.c, @x) END", "T.c=DE:k1\n")
    pp = partition(c)
    assert pp.closures == {}
    (s,) = pp.client.procedures[0].body.stmts
    assert isinstance(s, A.RemoteBlock)
    (ident,) = [n for n in A.walk(s) if isinstance(n, A.Identity)]
    assert isinstance(ident.expr, A.Coercion)


def test_icm_deduplicates_and_saves_crypto():
    src = "PROC f(@x) BEGIN UPDATE T SET a = @x + 1 WHERE T.a = @x + 1 END"
    c, pol = _compiled(src, "T.a=DE:k1\n")
    fx = {"T": (("a", "b"), [(1, 0), (2, 0), (3, 0), (4, 0)])}
    calls = {}
    for icm in (True, False):
        pp = partition(c, icm=icm)
        server = load_fixture(fx, pol, KEYS)
        _, m, _ = run_workload(pp, [("f", (1,))], server, ClientState(KEYS))
        calls[icm] = m.crypto_calls
        assert [r["a"] for r in server.cleartext(KEYS)["T"]] == [1, 2, 3, 4]
    # one hoisted encryption against one per scanned row plus one per match
    assert calls == {True: 1, False: 5}
    pp = partition(c)
    assert pp.render_client().count("__COERCE") == 1


def test_closure_inputs_and_outputs_follow_liveness():
    src = "PROC f(@x) BEGIN @y := @x + 1; UPDATE T SET b = @y; UPDATE T SET c = CONCAT(T.c, @y) END"
    c, _ = _compiled(src, "T.c=DE:k1\n")
    pp = partition(c)
    (cl,) = pp.closures.values()
    assert (cl.inputs, cl.outputs) == (("@x",), ("@y",))
    call = pp.client.procedures[0].body.stmts[0]
    assert isinstance(call, A.Call) and call.into == ("@y",)
    no_extract = partition(c, extract=False)
    assert no_extract.closures == {}


def test_live_before_examples():
    s = parse_program("PROC f(@a) BEGIN @b := @a + 1 END").procedures[0].body
    assert live_before(s, {"@b"}) == {"@a"}
    assert live_before(s, {"@c"}) == {"@a", "@c"}


def test_safety_of_coercion_and_tainted_vars():
    c, _ = _compiled("PROC f(@x) BEGIN UPDATE T SET c = CONCAT(T.c, @x) END", "T.c=DE:k1\n")
    proc = c.program.procedures[0]
    m = safety_analysis(proc, c.var_types["f"])
    coercions = [n for n in A.walk(proc.body) if isinstance(n, A.Coercion)]
    assert coercions and not any(m.safe(n) for n in coercions)


def test_manifest_round_trip():
    c, _ = _compiled(F4, F4_POLICY)
    pp = partition(c)
    back = parse_manifest(pp.render_manifest())
    assert set(back) == set(pp.closures)
    for name, cl in pp.closures.items():
        got = back[name]
        assert isinstance(got, Closure)
        assert (got.inputs, got.outputs, got.txlocal) == (cl.inputs, cl.outputs, cl.txlocal)
        assert got.body == cl.body
    assert parse_manifest("") == {}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9), st.booleans(), st.booleans(), st.booleans())
def test_no_unsafe_code_reaches_server(seed, icm, extract, txelim):
    rng = random.Random(seed)
    src, _ = ProgramGen(rng).program()
    pol = Policy.parse(random_policy(rng))
    t = infer_program(parse_program(src), pol)
    if not t.ok:
        return
    pp = partition(rewrite(t), icm=icm, extract=extract, txelim=txelim)
    assert check_server_safety(pp) == []
    back = parse_manifest(pp.render_manifest())
    assert {n: c.body for n, c in back.items()} == {n: c.body for n, c in pp.closures.items()}
    if not txelim:
        txs = [n for p in pp.client.procedures for n in A.walk(p.body) if isinstance(n, A.Transaction)]
        assert all(tx.distributed for tx in txs)
