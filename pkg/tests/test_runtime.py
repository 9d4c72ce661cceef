from dataclasses import replace

import pytest

from encflow import ast as A
from encflow.crypto import Ciphertext, KeyStore
from encflow.lattice import StrengthLabel
from encflow.parser import parse_program
from encflow.partitioner import baseline_partition, partition
from encflow.policy import Policy
from encflow.rewriter import rewrite
from encflow.runtime import (AdversaryTrace, CallEvent, ClientState, History, InjectedFault, LSQLRuntimeError,
                             ReturnEvent, TaggedValue, audit_trace, cleartext_config, compare_histories,
                             load_fixture, read_fixture_dir, run_workload, write_fixture_dir)
from encflow.typeinfer import infer_program
from fixtures import F1, F4, F4_POLICY

KEYS = KeyStore({"k1": ("det", 7), "k2": ("det", 8), "k3": ("ah", 9)})


def _build(src, pol):
    pol = Policy.parse(pol)
    return rewrite(infer_program(parse_program(src), pol)), pol


def test_f4_payment_runs_in_one_round_trip():
    c, pol = _build(F4, F4_POLICY)
    fx = {"T": (("bal",), [(5,)])}
    server = load_fixture(fx, pol, KEYS)
    client = ClientState(KEYS)
    h, m, trace = run_workload(partition(c), [("pay", (10,))], server, client)
    assert server.cleartext(KEYS) == {"T": [{"bal": 15}]}
    assert (m.round_trips, m.distributed_tx) == (1, 0)
    assert audit_trace(trace) == []
    assert isinstance(server.tables["T"].rows[0]["bal"].payload, Ciphertext)
    server = load_fixture(fx, pol, KEYS)
    _, m, _ = run_workload(baseline_partition(c), [("pay", (10,))], server, ClientState(KEYS))
    assert m.distributed_tx == 1 and server.cleartext(KEYS) == {"T": [{"bal": 15}]}


def test_round_trips_equal_client_to_server_messages():
    c, pol = _build("PROC f(@x) BEGIN UPDATE T SET c = CONCAT(T.c, @x); SELECT c FROM T END", "T.c=DE:k1\n")
    for pp in (partition(c), baseline_partition(c)):
        client = ClientState(KEYS)
        server = load_fixture({"T": (("c",), [("a",), ("b",)])}, pol, KEYS)
        h, m, _ = run_workload(pp, [("f", ("x",)), ("f", ("y",))], server, client)
        assert m.round_trips == sum(1 for msg in client.messages if msg.direction == "c2s")
        assert h.events[-1].results == ((("axy",), ("bxy",)),)


def test_empty_workload():
    c, pol = _build(F4, F4_POLICY)
    h, m, trace = run_workload(partition(c), [], load_fixture({"T": (("bal",), [])}, pol, KEYS), ClientState(KEYS))
    assert len(h) == 0 and m.as_dict() == {"round_trips": 0, "bytes": 0, "distributed_tx": 0, "crypto_calls": 0}
    assert trace.observations == []


def test_compare_histories():
    a = History([CallEvent("f", (1,)), ReturnEvent("f", ((1,),))])
    assert compare_histories(a, History(list(a.events)))
    b = History([CallEvent("f", (1,)), ReturnEvent("f", ((2,),))])
    d = compare_histories(a, b)
    assert not d and d.index == 1 and d.left == a.events[1]
    short = compare_histories(a, History(a.events[:1]))
    assert not short and short.index == 1 and short.right is None
    # messages of aborted calls are informational only
    e1 = History([ReturnEvent("f", None, True, "x")])
    assert compare_histories(e1, History([ReturnEvent("f", None, True, "y")]))


def test_audit_flags_only_over_tainted_observations():
    t = AdversaryTrace()
    assert audit_trace(t) == []
    t.observe("query", TaggedValue(1, StrengthLabel("det", 2)), "x")
    assert audit_trace(t) == []
    t.observe("query", TaggedValue(1, StrengthLabel("det", 3)), "y")
    assert audit_trace(t) == [{"site": "query", "repr": "det", "taint": "sem"}]


def test_transaction_is_atomic_under_injected_fault():
    src = "PROC f(@x) BEGIN TRANSACTION BEGIN UPDATE T SET c = CONCAT(T.c, @x); UPDATE T SET b = 1 END END"
    c, pol = _build(src, "T.c=DE:k1\n")
    fx = {"T": (("b", "c"), [(0, "u")])}

    def fault(where, s):
        if isinstance(s, A.Update) and s.sets[0][0] == "b":
            raise InjectedFault("boom")

    outcomes = []
    for pp in (partition(c), baseline_partition(c), c.source.program):
        server = load_fixture(fx, pol, KEYS) if pp is not c.source.program else cleartext_config(fx)
        h, _, _ = run_workload(pp, [("f", ("v",))], server, ClientState(KEYS), fault=fault)
        assert h.events[-1].error and h.events[-1].results is None
        assert server.cleartext(KEYS) == {"T": [{"b": 0, "c": "u"}]}
        outcomes.append(h)
    assert compare_histories(outcomes[0], outcomes[2]) and compare_histories(outcomes[1], outcomes[2])


def test_load_fixture_examples():
    pol = Policy.parse("T.a=DE:k1\n")
    s = load_fixture({"T": (("a",), [(3,), (3,)])}, pol, KEYS)
    c1, c2 = (r["a"].payload for r in s.tables["T"].rows)
    assert c1 == c2
    assert load_fixture({"T": (("a",), [])}, pol, KEYS).tables["T"].rows == []
    with pytest.raises(LSQLRuntimeError):
        load_fixture({"T": (("b",), [(1,)])}, pol, KEYS)
    with pytest.raises(LSQLRuntimeError):
        load_fixture({"T": (("a",), [("x",)])}, Policy.parse("T.a=ADE:k3\n"), KEYS)


def test_fixture_dir_round_trip(tmp_path):
    fx = {"T": (("a", "b"), [(1, "x"), (-2, "y")]), "U": (("z",), [])}
    write_fixture_dir(fx, tmp_path)
    assert read_fixture_dir(tmp_path) == {k: (tuple(c), [tuple(r) for r in rows]) for k, (c, rows) in fx.items()}


def test_stripping_result_decryption_breaks_equivalence():
    # negative control: the history comparison must notice ciphertext leaking
    # back to the caller
    c, pol = _build(F1, "T.a=DE:k1\nT.c=DE:k2\n")
    fx = {"T": (("a", "c"), [(1, 10), (2, 20)])}
    ref, _, _ = run_workload(c.source.program, [("f", (1,))], cleartext_config(fx))
    good, _, _ = run_workload(partition(c), [("f", (1,))], load_fixture(fx, pol, KEYS), ClientState(KEYS))
    assert compare_histories(ref, good)
    pp = partition(c)
    for name, cl in pp.closures.items():
        stmts = tuple(replace(s, result_steps=None) if isinstance(s, A.SelectStmt) else s for s in cl.body.stmts)
        pp.closures[name] = replace(cl, body=A.Seq(stmts))
    bad, _, _ = run_workload(pp, [("f", (1,))], load_fixture(fx, pol, KEYS), ClientState(KEYS))
    assert not compare_histories(ref, bad)
