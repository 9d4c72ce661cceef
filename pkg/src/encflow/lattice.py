"""The encryption-type lattice.

Atoms are cleartext (PT), the four ciphertext policy types, their re-encrypted
(``_R``) variants, the tainted cleartext types OPPT/DPT/NDPT that remember
which scheme a value was decrypted from, and a synthetic TOP.  Every edge
of the Hasse diagram carries a coercion (an encryption or decryption routine)
or the identity.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Optional


class EncType(Enum):
    PT = "PT"
    OPE = "OPE"
    DE = "DE"
    ADE = "ADE"
    NDE = "NDE"
    OPPT = "OPPT"
    DPT = "DPT"
    NDPT = "NDPT"
    OPE_R = "OPE_R"
    DE_R = "DE_R"
    ADE_R = "ADE_R"
    NDE_R = "NDE_R"
    TOP = "TOP"
    VOID = "VOID"

    def __str__(self) -> str:
        return self.value

    def __lt__(self, other: "EncType") -> bool:
        return _ORDER[self] < _ORDER[other]


PT, OPE, DE, ADE, NDE = EncType.PT, EncType.OPE, EncType.DE, EncType.ADE, EncType.NDE
OPPT, DPT, NDPT = EncType.OPPT, EncType.DPT, EncType.NDPT
OPE_R, DE_R, ADE_R, NDE_R = EncType.OPE_R, EncType.DE_R, EncType.ADE_R, EncType.NDE_R
TOP, VOID = EncType.TOP, EncType.VOID

_ORDER = {t: i for i, t in enumerate(EncType)}
ATOMS: tuple[EncType, ...] = tuple(t for t in EncType if t is not VOID)
SOLVABLE: tuple[EncType, ...] = tuple(t for t in ATOMS if t is not TOP)
POLICY_TYPES = (PT, OPE, DE, ADE, NDE)

# (source, target, coercion kind or None for identity)
EDGES: tuple[tuple[EncType, EncType, Optional[str]], ...] = (
    (PT, OPE, "enc_ope"), (PT, DE, "enc_det"), (PT, ADE, "enc_ah"), (PT, NDE, "enc_rnd"),
    (OPE, OPPT, "dec_ope"), (DE, DPT, "dec_det"), (ADE, NDPT, "dec_ah"), (NDE, NDPT, "dec_rnd"),
    (OPE, OPE_R, None), (DE, DE_R, None), (ADE, ADE_R, None), (NDE, NDE_R, None),
    (OPPT, DPT, None), (DPT, NDPT, None),
    (OPPT, OPE_R, "enc_ope"), (DPT, DE_R, "enc_det"), (NDPT, ADE_R, "enc_ah"), (NDPT, NDE_R, "enc_rnd"),
    (OPE_R, TOP, None), (DE_R, TOP, None), (ADE_R, TOP, None), (NDE_R, TOP, None),
    # cleartext may be treated as tainted cleartext for free; leq is unchanged
    # (PT already reaches OPPT through OPE) but the path needs no crypto.
    (PT, OPPT, None),
)

# tie-break order among coercion kinds when several shortest paths exist
KIND_ORDER = ("id", "enc_det", "dec_det", "enc_rnd", "dec_rnd", "enc_ah", "dec_ah", "enc_ope", "dec_ope")

EQ_SET = frozenset({OPE, OPE_R, DE, DE_R, PT, OPPT, DPT, NDPT})
COMP_SET = frozenset({OPE, OPE_R, PT, OPPT, DPT, NDPT})
ADD_SET = frozenset({ADE, ADE_R, PT, OPPT, DPT, NDPT})
CLEAR_SET = frozenset({PT, OPPT, DPT, NDPT})
TAINTED = frozenset({OPPT, DPT, NDPT})

_SCHEME = {OPE: "ope", OPE_R: "ope", DE: "det", DE_R: "det", ADE: "ah", ADE_R: "ah", NDE: "rnd", NDE_R: "rnd"}
_PRIME = {PT: PT, OPE: OPE_R, DE: DE_R, ADE: ADE_R, NDE: NDE_R}
POLICY_SCHEME = {"ope": OPE, "det": DE, "ah": ADE, "rnd": NDE}


class LatticeError(ValueError):
    pass


def _succ() -> dict:
    out: dict = {t: [] for t in ATOMS}
    for a, b, k in EDGES:
        out[a].append((b, k))
    return out


_SUCC = _succ()


def _closure() -> dict:
    reach = {}
    for a in ATOMS:
        seen = {a}
        stack = [a]
        while stack:
            x = stack.pop()
            for y, _ in _SUCC[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        reach[a] = frozenset(seen)
    return reach


_REACH = _closure()


def _check(*ts: EncType) -> None:
    for t in ts:
        if t is VOID:
            raise LatticeError("VOID is not an expression type")


def leq(a: EncType, b: EncType) -> bool:
    _check(a, b)
    return b in _REACH[a]


def upset(a: EncType) -> frozenset:
    _check(a)
    return _REACH[a]


def _minimal(xs: Iterable[EncType]) -> set:
    xs = set(xs)
    return {x for x in xs if not any(y != x and leq(y, x) for y in xs)}


def _maximal(xs: Iterable[EncType]) -> set:
    xs = set(xs)
    return {x for x in xs if not any(y != x and leq(x, y) for y in xs)}


@lru_cache(maxsize=None)
def join(a: EncType, b: EncType) -> EncType:
    _check(a, b)
    ub = _minimal(_REACH[a] & _REACH[b])
    if len(ub) != 1:
        raise LatticeError(f"no unique join for {a}, {b}: {sorted(ub)}")
    return ub.pop()


@lru_cache(maxsize=None)
def meet(a: EncType, b: EncType) -> EncType:
    _check(a, b)
    lb = _maximal(x for x in ATOMS if leq(x, a) and leq(x, b))
    if len(lb) != 1:
        raise LatticeError(f"no unique meet for {a}, {b}: {sorted(lb)}")
    return lb.pop()


def join_all(ts: Iterable[EncType], start: EncType = PT) -> EncType:
    out = start
    for t in ts:
        out = join(out, t)
    return out


@lru_cache(maxsize=None)
def coercion_path(a: EncType, b: EncType) -> tuple[str, ...]:
    """Coercion kinds along a shortest path from ``a`` to ``b`` (identity
    edges dropped).  Ties go to the lexicographically smallest kind sequence
    under ``KIND_ORDER``, which puts identity edges first."""
    _check(a, b)
    if b is TOP:
        raise LatticeError("TOP is not a coercion target")
    if not leq(a, b):
        raise LatticeError(f"{a} is not a subtype of {b}")
    rank = {k: i for i, k in enumerate(KIND_ORDER)}
    best = None

    def dfs(x, kinds, seen):
        nonlocal best
        if x is b:
            cost = (sum(k != "id" for k in kinds), tuple(rank[k] for k in kinds))
            if best is None or cost < best[0]:
                best = (cost, kinds)
            return
        for y, k in _SUCC[x]:
            if y not in seen and b in _REACH[y]:
                dfs(y, kinds + (k or "id",), seen | {y})

    dfs(a, (), {a})
    return tuple(k for k in best[1] if k != "id")


def lvaltype(t: EncType) -> EncType:
    if t not in _PRIME:
        raise LatticeError(f"{t} is not a policy type")
    return _PRIME[t]


def base_policy(t: EncType) -> EncType:
    """Unprimed policy type of a storage atom (PT for cleartext family)."""
    for k, v in _PRIME.items():
        if t in (k, v):
            return k
    return PT


def scheme(t: EncType) -> Optional[str]:
    """Crypto scheme of a ciphertext atom, None for the cleartext family."""
    return _SCHEME.get(t)


def is_cipher(t: EncType) -> bool:
    return t in _SCHEME


REPRS = ("clear", "ope", "det", "sem")
REPR_STRENGTH = {r: i for i, r in enumerate(REPRS)}
SCHEME_REPR = {"ope": "ope", "det": "det", "ah": "sem", "rnd": "sem"}


@dataclass(frozen=True, order=True)
class StrengthLabel:
    repr: str
    taint: int

    def as_dict(self) -> dict:
        return {"repr": self.repr, "taint": self.taint}


_TAINT = {PT: 0, OPE: 1, DE: 2, ADE: 3, NDE: 3, OPPT: 1, DPT: 2, NDPT: 3}


def strength(t: EncType) -> StrengthLabel:
    if t in (VOID, TOP):
        raise LatticeError(f"{t} has no strength")
    base = base_policy(t) if t in _SCHEME else t
    taint = _TAINT[base]
    s = _SCHEME.get(t)
    return StrengthLabel(SCHEME_REPR[s] if s else "clear", taint)


def minimal_in_upset(a: EncType, allowed: Iterable[EncType]) -> set:
    allowed = set(allowed)
    if TOP in allowed:
        raise LatticeError("TOP may not be a member choice")
    return _minimal(x for x in allowed if leq(a, x))


_REPR_TIE = {PT: 0, OPE: 1, DE: 2, ADE: 3, NDE: 4}


def pick_minimal(candidates: Iterable[EncType]) -> Optional[EncType]:
    """Deterministic choice among incomparable minimal elements: lower
    taint, then PT < OPE < DE < ADE < NDE by base scheme, then canonical order."""
    cs = list(candidates)
    if not cs:
        return None
    return min(cs, key=lambda t: (strength(t).taint, _REPR_TIE[base_policy(t)], _ORDER[t]))


def parse_atom(text: str) -> EncType:
    try:
        return EncType(text.strip().upper().replace("'", "_R"))
    except ValueError:
        raise LatticeError(f"unknown encryption type {text!r}") from None
