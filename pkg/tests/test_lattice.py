import itertools

import pytest
from hypothesis import given, strategies as st

from encflow import lattice as L
from encflow.crypto import KeyStore, decrypt, encrypt
from encflow.lattice import EncType as E

# Independent oracle: the Hasse edges written out by hand, closed by BFS.
HASSE = [
    ("PT", "OPE"), ("PT", "DE"), ("PT", "ADE"), ("PT", "NDE"),
    ("OPE", "OPPT"), ("DE", "DPT"), ("ADE", "NDPT"), ("NDE", "NDPT"),
    ("OPE", "OPE_R"), ("DE", "DE_R"), ("ADE", "ADE_R"), ("NDE", "NDE_R"),
    ("OPPT", "DPT"), ("DPT", "NDPT"), ("PT", "OPPT"),
    ("OPPT", "OPE_R"), ("DPT", "DE_R"), ("NDPT", "ADE_R"), ("NDPT", "NDE_R"),
    ("OPE_R", "TOP"), ("DE_R", "TOP"), ("ADE_R", "TOP"), ("NDE_R", "TOP"),
]
NAMES = ["PT", "OPE", "DE", "ADE", "NDE", "OPPT", "DPT", "NDPT", "OPE_R", "DE_R", "ADE_R", "NDE_R", "TOP"]


def _reach():
    succ = {n: {b for a, b in HASSE if a == n} for n in NAMES}
    out = {}
    for n in NAMES:
        seen, todo = {n}, [n]
        while todo:
            for m in succ[todo.pop()]:
                if m not in seen:
                    seen.add(m)
                    todo.append(m)
        out[n] = seen
    return out


REACH = _reach()


def o_leq(a, b):
    return b in REACH[a]


def o_lub(a, b):
    ubs = [x for x in NAMES if o_leq(a, x) and o_leq(b, x)]
    least = [x for x in ubs if all(o_leq(x, y) for y in ubs)]
    return least


def o_glb(a, b):
    lbs = [x for x in NAMES if o_leq(x, a) and o_leq(x, b)]
    return [x for x in lbs if all(o_leq(y, x) for y in lbs)]


ATOMS = [E(n) for n in NAMES]
atom = st.sampled_from(ATOMS)


def test_leq_matches_oracle_exhaustively():
    for a, b in itertools.product(NAMES, NAMES):
        assert L.leq(E(a), E(b)) == o_leq(a, b), (a, b)


def test_antisymmetry():
    for a, b in itertools.product(ATOMS, ATOMS):
        if L.leq(a, b) and L.leq(b, a):
            assert a == b


def test_join_and_meet_unique_and_match_oracle():
    for a, b in itertools.product(NAMES, NAMES):
        lub, glb = o_lub(a, b), o_glb(a, b)
        assert len(lub) == 1 and len(glb) == 1
        assert L.join(E(a), E(b)) == E(lub[0])
        assert L.meet(E(a), E(b)) == E(glb[0])


@pytest.mark.parametrize("a,b,j", [("ADE", "NDE", "NDPT"), ("OPE_R", "DE_R", "TOP"), ("PT", "PT", "PT")])
def test_join_examples(a, b, j):
    assert L.join(E(a), E(b)) == E(j)


@pytest.mark.parametrize("a,b,m", [("OPE", "DE", "PT"), ("DPT", "DE_R", "DPT"), ("NDE", "TOP", "NDE")])
def test_meet_examples(a, b, m):
    assert L.meet(E(a), E(b)) == E(m)


@given(atom, atom, atom)
def test_join_laws(a, b, c):
    assert L.join(a, b) == L.join(b, a)
    assert L.join(a, L.join(b, c)) == L.join(L.join(a, b), c)
    assert L.join(a, a) == a
    assert L.meet(a, L.join(a, b)) == a


def test_leq_examples():
    assert L.leq(E.PT, E.NDE)
    assert not L.leq(E.NDPT, E.DE_R)
    with pytest.raises(L.LatticeError):
        L.leq(E.VOID, E.PT)


def test_taint_monotone_along_edges():
    for a, b in HASSE:
        if "TOP" in (a, b):
            continue
        assert L.strength(E(a)).taint <= L.strength(E(b)).taint


@pytest.mark.parametrize("a,b,path", [
    ("PT", "DE", ("enc_det",)),
    ("NDE", "NDE_R", ()),
    ("DE", "NDE_R", ("dec_det", "enc_rnd")),
    ("PT", "OPE_R", ("enc_ope",)),
])
def test_coercion_path_examples(a, b, path):
    assert L.coercion_path(E(a), E(b)) == path


def test_coercion_path_rejects_non_subtype():
    with pytest.raises(L.LatticeError):
        L.coercion_path(E.NDPT, E.DE_R)


def _shortest_nonid(a, b):
    """Breadth-first over labelled edges: fewest encrypt/decrypt steps."""
    def label(x, y):
        if x == "PT" and y == "OPPT":
            return "id"
        if x == "PT" or (x in ("OPPT", "DPT", "NDPT") and y.endswith("_R")):
            return "enc"
        if y in ("OPPT", "DPT", "NDPT") and x in ("OPE", "DE", "ADE", "NDE"):
            return "dec"
        return "id"
    best = {a: 0}
    frontier = [a]
    for _ in range(len(NAMES)):
        nxt = []
        for x in frontier:
            for p, q in HASSE:
                if p == x:
                    c = best[x] + (label(p, q) != "id")
                    if c < best.get(q, 99):
                        best[q] = c
                        nxt.append(q)
        frontier = nxt
    return best.get(b)


def test_coercion_path_is_shortest():
    for a, b in itertools.product(NAMES, NAMES):
        if b == "TOP" or not o_leq(a, b):
            continue
        assert len(L.coercion_path(E(a), E(b))) == _shortest_nonid(a, b), (a, b)


KEYS = KeyStore(seed=3)


def _represent(t: E, v: int):
    s = L.scheme(t)
    return encrypt(KEYS.get(f"_{s}", s), v) if s else v


def _apply(path, v):
    for kind in path:
        op, s = kind.split("_")
        key = KEYS.get(f"_{s}", s)
        v = encrypt(key, v) if op == "enc" else decrypt(key, v)
    return v


def test_coercion_paths_are_coherent_with_crypto():
    for a, b in itertools.product(ATOMS, ATOMS):
        if b is E.TOP or not L.leq(a, b):
            continue
        for plain in (0, 7, -3):
            out = _apply(L.coercion_path(a, b), _represent(a, plain))
            s = L.scheme(b)
            if s:
                assert out.scheme == s
                assert decrypt(KEYS.get(f"_{s}", s), out) == plain
            else:
                assert out == plain


@pytest.mark.parametrize("t,lv", [("PT", "PT"), ("NDE", "NDE_R"), ("DE", "DE_R"), ("OPE", "OPE_R"), ("ADE", "ADE_R")])
def test_lvaltype(t, lv):
    assert L.lvaltype(E(t)) == E(lv)


def test_lvaltype_rejects_taint_types():
    with pytest.raises(L.LatticeError):
        L.lvaltype(E.DPT)


@pytest.mark.parametrize("t,label", [("DPT", ("clear", 2)), ("PT", ("clear", 0)), ("ADE_R", ("sem", 3)),
                                     ("OPE", ("ope", 1)), ("NDPT", ("clear", 3))])
def test_strength(t, label):
    s = L.strength(E(t))
    assert (s.repr, s.taint) == label


def test_strength_of_top_is_error():
    with pytest.raises(L.LatticeError):
        L.strength(E.TOP)


@pytest.mark.parametrize("a,expected", [("NDE", {"NDPT"}), ("PT", {"PT"}), ("ADE", {"NDPT"})])
def test_minimal_in_upset(a, expected):
    assert L.minimal_in_upset(E(a), L.EQ_SET) == {E(x) for x in expected}


def test_minimal_in_upset_unique_for_rule_sets():
    # membership lifting relies on a single minimal choice for every rule set
    for a in ATOMS:
        if a is E.TOP:
            continue
        for s in (L.EQ_SET, L.COMP_SET, L.ADD_SET, L.CLEAR_SET):
            assert len(L.minimal_in_upset(a, s)) <= 1


def test_atom_names_round_trip():
    for n in NAMES:
        assert str(L.parse_atom(n)) == n
