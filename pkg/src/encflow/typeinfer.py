"""Encryption-type inference.

Every expression node gets an assumed type (its type before any coercion)
and an expected type (after one).  Constraint generation walks each
procedure; ``solve`` computes the least solution over the lattice and
reports every violated upper bound.  Procedures are processed bottom-up over
the call graph, with summaries describing what a call returns and writes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from . import ast as A
from .callgraph import build_call_graph
from .lattice import (
    ADD_SET, ATOMS, CLEAR_SET, COMP_SET, EQ_SET, NDPT, PT, TAINTED, TOP, EncType,
    LatticeError, base_policy, coercion_path, is_cipher, join, leq, lvaltype,
    minimal_in_upset, pick_minimal, scheme, strength,
)
from .policy import Policy, Stats, default_key

HEIGHT = 6  # longest strict chain in the lattice: PT < OPE < OPPT < DPT < NDPT < ADE_R < TOP

MODES = ("strict", "explicit-only", "permissive")
_DROPPED = {"strict": (), "explicit-only": ("implicit",), "permissive": ("implicit", "explicit")}


class TypeInferenceError(ValueError):
    pass


# --------------------------------------------------------------------- terms


@dataclass(frozen=True)
class TVar:
    id: int

    def __str__(self) -> str:
        return f"t{self.id}"


@dataclass(frozen=True)
class Atom:
    t: EncType
    key: Optional[str] = None
    column: Optional[tuple[str, str]] = field(default=None, compare=False)

    def __str__(self) -> str:
        return str(self.t) + (f"<{self.key}>" if self.key else "")


@dataclass(frozen=True)
class Record:
    items: tuple[tuple[str, "Term"], ...]


@dataclass(frozen=True)
class Func:
    params: tuple["Term", ...]
    result: "Term"


Term = Union[TVar, Atom, Record, Func]


@dataclass(frozen=True)
class Origin:
    proc: str
    pos: Optional[tuple[int, int]]
    kind: str  # explicit, implicit, expr, call, assign, pin
    text: str
    column: Optional[tuple[str, str]] = None
    # value nodes stored into the constraint's right-hand side (sink coercions)
    sites: tuple = field(default=(), compare=False, repr=False)

    def where(self) -> str:
        loc = f"{self.pos[0]}:{self.pos[1]}" if self.pos else "?"
        return f"{self.proc}@{loc}"


@dataclass(frozen=True)
class Sub:
    lhs: Term
    rhs: Term
    origin: Origin

    def __str__(self) -> str:
        return f"{self.lhs} <= {self.rhs}"


@dataclass(frozen=True)
class Member:
    v: TVar
    allowed: frozenset
    origin: Origin

    def __str__(self) -> str:
        return f"{self.v} in {{{', '.join(str(t) for t in sorted(self.allowed))}}}"


Constraint = Union[Sub, Member]


class ConstraintSet:
    """Subtype and membership constraints plus a union-find substitution."""

    def __init__(self):
        self.parent: list[int] = []
        self.bound: dict[int, Atom] = {}
        self.subs: list[Sub] = []
        self.members: list[Member] = []

    def fresh(self) -> TVar:
        self.parent.append(len(self.parent))
        return TVar(len(self.parent) - 1)

    def find(self, v: TVar) -> int:
        i = v.id
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def unify(self, a: Term, b: Term) -> None:
        if isinstance(a, Record) or isinstance(b, Record):
            if not (isinstance(a, Record) and isinstance(b, Record)):
                raise TypeInferenceError("cannot unify a record with a scalar")
            if [n for n, _ in a.items] != [n for n, _ in b.items]:
                raise TypeInferenceError("record name sets differ")
            for (_, x), (_, y) in zip(a.items, b.items):
                self.unify(x, y)
            return
        if isinstance(a, Func) or isinstance(b, Func):
            if not (isinstance(a, Func) and isinstance(b, Func)) or len(a.params) != len(b.params):
                raise TypeInferenceError("arrow type arity mismatch")
            for x, y in zip(a.params + (a.result,), b.params + (b.result,)):
                self.unify(x, y)
            return
        if isinstance(a, Atom) and isinstance(b, Atom):
            if a != b:
                raise TypeInferenceError(f"atom clash: {a} vs {b}")
            return
        if isinstance(a, Atom):
            a, b = b, a
        ra = self.find(a)
        if isinstance(b, Atom):
            have = self.bound.get(ra)
            if have is not None and have != b:
                raise TypeInferenceError(f"atom clash: {have} vs {b}")
            self.bound[ra] = b
            return
        rb = self.find(b)
        if ra == rb:
            return
        ba, bb = self.bound.get(ra), self.bound.get(rb)
        if ba is not None and bb is not None and ba != bb:
            raise TypeInferenceError(f"atom clash: {ba} vs {bb}")
        self.parent[rb] = ra
        if bb is not None:
            self.bound[ra] = bb
            del self.bound[rb]

    def sub(self, lhs: Term, rhs: Term, origin: Origin) -> Sub:
        c = Sub(lhs, rhs, origin)
        self.subs.append(c)
        return c

    def member(self, v: TVar, allowed: Iterable[EncType], origin: Origin) -> Member:
        c = Member(v, frozenset(allowed), origin)
        self.members.append(c)
        return c

    def active(self, mode: str = "strict") -> list[Constraint]:
        drop = _DROPPED[mode]
        return [c for c in self.subs if c.origin.kind not in drop] + list(self.members)

    def roots(self) -> list[int]:
        return sorted({self.find(TVar(i)) for i in range(len(self.parent))})

    def free_roots(self) -> list[int]:
        return [r for r in self.roots() if r not in self.bound]


# ----------------------------------------------------------------- solving


@dataclass
class Violation:
    constraint: Optional[Constraint]
    message: str
    key_conflict: bool = False

    @property
    def kind(self) -> str:
        return self.constraint.origin.kind if self.constraint else "key"

    @property
    def columns(self) -> set:
        out = set()
        c = self.constraint
        if c is not None:
            for term in ((c.lhs, c.rhs) if isinstance(c, Sub) else ()):
                if isinstance(term, Atom) and term.column:
                    out.add(term.column)
            if c.origin.column:
                out.add(c.origin.column)
        return out


@dataclass
class Assignment:
    cs: ConstraintSet
    values: dict  # root -> EncType
    keys: dict  # root -> key id or None
    iterations: int = 0

    def value(self, term: Term) -> EncType:
        if isinstance(term, Atom):
            return term.t
        return self.values[self.cs.find(term)]

    def key(self, term: Term) -> Optional[str]:
        if isinstance(term, Atom):
            return term.key
        return self.keys.get(self.cs.find(term))

    def as_tuple(self) -> tuple:
        return tuple(self.values[r] for r in sorted(self.values))


@dataclass
class UnsatReport:
    violations: list[Violation]
    cs: ConstraintSet
    mode: str
    partial: Optional[Assignment] = None

    @property
    def columns(self) -> set:
        out = set()
        for v in self.violations:
            out |= v.columns
        return out

    def minimal_conflict(self) -> list[Constraint]:
        """Deletion-minimal subset of the active constraints that is still
        unsatisfiable (together with the unification structure)."""
        keep = self.cs.active(self.mode)
        i = 0
        while i < len(keep):
            trial = keep[:i] + keep[i + 1:]
            if not solve_constraints(self.cs, trial).ok:
                keep = trial
            else:
                i += 1
        return keep


@dataclass
class _Result:
    assignment: Assignment
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def solve_constraints(cs: ConstraintSet, constraints: list[Constraint]) -> _Result:
    """Least solution of ``constraints``; violations are collected, not raised."""
    roots = cs.roots()
    values: dict[int, EncType] = {r: (cs.bound[r].t if r in cs.bound else PT) for r in roots}
    allowed: dict[int, frozenset] = {}
    member_of: dict[int, list[Member]] = {}
    by_lhs: dict[int, list[Sub]] = {}
    uppers: list[Sub] = []
    raised_by: dict[int, Constraint] = {}
    violations: list[Violation] = []

    def root_of(term):
        return None if isinstance(term, Atom) else cs.find(term)

    lower_atoms: list[Sub] = []
    for c in constraints:
        if isinstance(c, Member):
            r = cs.find(c.v)
            allowed[r] = allowed.get(r, frozenset(ATOMS)) & c.allowed
            member_of.setdefault(r, []).append(c)
            continue
        rr = root_of(c.rhs)
        if rr is None or rr in cs.bound:
            uppers.append(c)
        lr = root_of(c.lhs)
        if rr is not None and rr not in cs.bound:
            if lr is None:
                lower_atoms.append(c)
            else:
                by_lhs.setdefault(lr, []).append(c)

    iterations = 0
    dead: set[int] = set()

    def raise_to(r: int, t: EncType, why: Constraint) -> bool:
        nonlocal iterations
        new = join(values[r], t)
        if new == values[r]:
            return False
        values[r] = new
        raised_by[r] = why
        iterations += 1
        return True

    work = [r for r in roots]
    for c in lower_atoms:
        if raise_to(cs.find(c.rhs), c.lhs.t, c):
            work.append(cs.find(c.rhs))
    while True:
        while work:
            r = work.pop()
            for c in by_lhs.get(r, ()):
                rr = cs.find(c.rhs)
                if raise_to(rr, values[r], c):
                    work.append(rr)
        for r, s in allowed.items():
            if r in dead or r in cs.bound or values[r] in s or values[r] is TOP:
                continue
            choice = pick_minimal(minimal_in_upset(values[r], s - {TOP}))
            if choice is None:
                dead.add(r)
                violations.append(Violation(member_of[r][0],
                                            f"no permitted type above {values[r]} for {member_of[r][0]}"))
                continue
            values[r] = choice
            raised_by[r] = member_of[r][0]
            iterations += 1
            work.append(r)
        if not work:
            break

    free = [r for r in roots if r not in cs.bound]
    assert iterations <= max(1, len(free)) * HEIGHT + len(lower_atoms), "solver failed to converge"

    for r in roots:
        if values[r] is TOP and r not in cs.bound:
            why = raised_by.get(r)
            violations.append(Violation(why, f"no common supertype: {why}"))
    for r, s in allowed.items():
        if r in cs.bound and values[r] not in s:
            violations.append(Violation(member_of[r][0], f"{values[r]} not permitted by {member_of[r][0]}"))

    def val(term):
        return term.t if isinstance(term, Atom) else values[cs.find(term)]

    for c in uppers:
        lv = val(c.lhs)
        if lv is TOP:
            continue
        if not leq(lv, val(c.rhs)):
            violations.append(Violation(c, f"{lv} is not a subtype of {val(c.rhs)}: {c.origin.text}"))

    keys, key_errors = _infer_keys(cs, constraints, values)
    violations.extend(key_errors)
    return _Result(Assignment(cs, values, keys, iterations), violations)


def _infer_keys(cs: ConstraintSet, constraints, values):
    """Key classes: Sub edges joining two ciphertexts of one scheme share a key."""
    parent: dict = {}

    def node(term):
        if isinstance(term, Atom):
            return ("atom", term.key, term.t)
        return ("var", cs.find(term))

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def val(term):
        return term.t if isinstance(term, Atom) else values[cs.find(term)]

    for r, atom in cs.bound.items():
        parent[find(("var", r))] = find(("atom", atom.key, atom.t))
    edges = []
    for c in constraints:
        if isinstance(c, Sub):
            a, b = val(c.lhs), val(c.rhs)
            if is_cipher(a) and is_cipher(b) and scheme(a) == scheme(b):
                x, y = find(node(c.lhs)), find(node(c.rhs))
                if x != y:
                    parent[x] = y
                edges.append(c)
    concrete: dict = {}
    for x in list(parent):
        if x[0] == "atom" and x[1] is not None:
            concrete.setdefault(find(x), set()).add(x[1])
    errors = []
    for cls, ks in concrete.items():
        if len(ks) > 1:
            culprit = next((c for c in edges if find(node(c.lhs)) == cls), None)
            errors.append(Violation(culprit, f"conflicting keys {sorted(ks)} for one value", True))
    keys = {}
    for r in values:
        ks = concrete.get(find(("var", r)), set())
        if len(ks) == 1:
            keys[r] = next(iter(ks))
        else:
            keys[r] = default_key(values[r]) if is_cipher(values[r]) else None
    return keys, errors


def solve(cs: ConstraintSet, mode: str = "strict") -> Union[Assignment, UnsatReport]:
    res = solve_constraints(cs, cs.active(mode))
    if res.ok:
        return res.assignment
    return UnsatReport(res.violations, cs, mode, res.assignment)


# ------------------------------------------------------ constraint generation


@dataclass
class ProcSummary:
    params: tuple[EncType, ...]
    returns: tuple[EncType, ...]
    writes: frozenset  # (table, column) pairs written, transitively
    requires_coercions: bool = False


@dataclass
class TypeEnv:
    """Assumed/expected terms per AST node (keyed by node identity)."""

    nodes: dict = field(default_factory=dict)  # id(node) -> (node, alpha, beta)
    vars: dict = field(default_factory=dict)  # variable name -> storage TVar

    def add(self, node, alpha: Term, beta: Term) -> None:
        self.nodes[id(node)] = (node, alpha, beta)

    def alpha(self, node) -> Term:
        return self.nodes[id(node)][1]

    def beta(self, node) -> Term:
        return self.nodes[id(node)][2]

    def __contains__(self, node) -> bool:
        return id(node) in self.nodes


# relational expressions type as records of entries (name, expected term, nodes)
_Entry = tuple[str, Term, tuple]


def decrypted(t: EncType) -> EncType:
    """Type a ciphertext has after boundary decryption."""
    if not is_cipher(t):
        return t
    return {"ope": EncType.OPPT, "det": EncType.DPT}.get(scheme(t), NDPT)


class _Gen:
    def __init__(self, proc: A.Procedure, policy: Policy, summaries: dict):
        self.proc = proc
        self.policy = policy
        self.summaries = summaries
        self.cs = ConstraintSet()
        self.env = TypeEnv()
        self.results: list[tuple[A.SelectStmt, list[_Entry]]] = []
        self.calls: list[A.Call] = []
        self.into: list = []  # (call, position, returned type, variable term)
        self.param_nodes: dict[str, A.Var] = {}

    def origin(self, node, kind, text, column=None, sites=()) -> Origin:
        return Origin(self.proc.name, getattr(node, "pos", None), kind, text, column, sites)

    def var(self, name: str) -> TVar:
        if name not in self.env.vars:
            self.env.vars[name] = self.cs.fresh()
        return self.env.vars[name]

    def column_atom(self, table: str, column: str) -> Atom:
        t = self.policy.type_of(table, column)
        return Atom(t, self.policy.key_of(table, column), (table, column))

    # -- expressions: return the expected term
    def expr(self, e) -> Term:
        cs = self.cs
        if isinstance(e, A.Const):
            alpha: Term = Atom(PT)
        elif isinstance(e, A.Var):
            alpha = self.var(e.name)
        elif isinstance(e, A.ColumnRef):
            alpha = self.column_atom(e.table, e.column)
        elif isinstance(e, (A.Equals, A.Less)):
            b1 = self.expr(e.left)
            cs.unify(b1, self.expr(e.right))
            allowed = EQ_SET if isinstance(e, A.Equals) else COMP_SET
            op = "equality" if isinstance(e, A.Equals) else "comparison"
            cs.member(b1, allowed, self.origin(e, "expr", f"operands of {op}"))
            beta = cs.fresh()
            cs.member(beta, CLEAR_SET, self.origin(e, "expr", f"result of {op}"))
            cs.sub(b1, beta, self.origin(e, "expr", f"{op} result"))
            self.env.add(e, beta, beta)
            return beta
        elif isinstance(e, A.Add):
            b1 = self.expr(e.left)
            cs.unify(b1, self.expr(e.right))
            cs.member(b1, ADD_SET, self.origin(e, "expr", "operands of addition"))
            alpha = b1
        elif isinstance(e, A.Apply):
            alpha = cs.fresh()
            cs.member(alpha, CLEAR_SET, self.origin(e, "expr", f"result of {e.func}"))
            for a in e.args:
                ba = self.expr(a)
                cs.member(ba, CLEAR_SET, self.origin(a, "expr", f"argument of {e.func}"))
                cs.sub(ba, alpha, self.origin(a, "expr", f"argument of {e.func}"))
        elif isinstance(e, A.RELATIONAL):
            raise TypeInferenceError("relational expression in scalar position")
        else:
            raise TypeInferenceError(f"cannot type {type(e).__name__} (compiler output?)")
        beta = cs.fresh()
        cs.sub(alpha, beta, self.origin(e, "expr", "coercion point"))
        self.env.add(e, alpha, beta)
        return beta

    def relation(self, e) -> list[_Entry]:
        if isinstance(e, A.Project):
            out = []
            for item in e.items:
                if not isinstance(item, A.ColumnRef):
                    raise TypeInferenceError("projection items must be column references")
                if item.table not in e.tables:
                    raise TypeInferenceError(f"{item.table}.{item.column} is not in FROM")
                name = f"{item.table}.{item.column}" if len(e.tables) > 1 else item.column
                out.append((name, self.expr(item), (item,)))
            return out
        if isinstance(e, A.Select):
            bp = self.expr(e.pred)
            self.cs.member(bp, CLEAR_SET, self.origin(e.pred, "expr", "selection predicate"))
            return self.relation(e.source)
        if isinstance(e, (A.Union_, A.Diff)):
            left = self.relation(e.left)
            right = self.relation(e.right)
            if len(left) != len(right):
                raise TypeInferenceError("set operation arity mismatch")
            out = []
            for (n, bl, nl), (_, br, nr) in zip(left, right):
                self.cs.unify(bl, br)
                if isinstance(e, A.Diff):
                    self.cs.member(bl, EQ_SET, self.origin(e, "expr", "EXCEPT compares rows"))
                out.append((n, bl, nl + nr))
            return out
        if isinstance(e, A.NamedRecord):
            return [(n, self.expr(x), (x,)) for n, x in e.items]
        raise TypeInferenceError(f"not a relation: {type(e).__name__}")

    # -- statements: return write targets [(label, term)]
    def stmt(self, s) -> list[tuple[str, Term]]:
        cs = self.cs
        if isinstance(s, A.Seq):
            out = []
            for x in s.stmts:
                out += self.stmt(x)
            return out
        if isinstance(s, A.Assign):
            b = self.expr(s.value)
            tgt = self.var(s.target.name)
            self.env.add(s.target, tgt, tgt)
            cs.sub(b, tgt, self.origin(s, "assign", f"assignment to {s.target.name}", None, (s.value,)))
            return [(s.target.name, tgt)]
        if isinstance(s, A.If):
            bc = self.expr(s.cond)
            cs.member(bc, CLEAR_SET, self.origin(s.cond, "expr", "branch condition"))
            targets = self.stmt(s.then) + self.stmt(s.orelse)
            for label, term in targets:
                col = term.column if isinstance(term, Atom) else None
                cs.sub(bc, term, self.origin(
                    s, "implicit", f"implicit flow from branch condition to {label}", col))
            return targets
        if isinstance(s, A.SelectStmt):
            entries = self.relation(s.source)
            self.results.append((s, entries))
            return []
        if isinstance(s, A.Insert):
            entries = self.relation(s.source)
            if len(entries) != len(s.columns):
                raise TypeInferenceError("INSERT arity mismatch")
            out = []
            for col, (_, b, nodes) in zip(s.columns, entries):
                out.append(self.write(s, s.table, col, b, nodes))
            return out
        if isinstance(s, A.Update):
            out = []
            for col, e in s.sets:
                out.append(self.write(s, s.table, col, self.expr(e), (e,)))
            self.where(s.where)
            return out
        if isinstance(s, A.Delete):
            self.where(s.where)
            return []
        if isinstance(s, A.Transaction):
            return self.stmt(s.body)
        if isinstance(s, A.Call):
            return self.call(s)
        raise TypeInferenceError(f"cannot type {type(s).__name__} (compiler output?)")

    def where(self, w) -> None:
        if w is not None:
            bw = self.expr(w)
            self.cs.member(bw, CLEAR_SET, self.origin(w, "expr", "WHERE predicate"))

    def write(self, s, table, col, b, nodes) -> tuple[str, Term]:
        lval = self.column_atom(table, col)
        lval = Atom(lvaltype(lval.t), lval.key, lval.column)
        self.cs.sub(b, lval, self.origin(s, "explicit", f"value written to {table}.{col}",
                                         (table, col), nodes))
        return (f"{table}.{col}", lval)

    def call(self, s: A.Call) -> list[tuple[str, Term]]:
        self.calls.append(s)
        summ = self.summaries.get(s.proc)
        for a in s.args:
            b = self.expr(a)
            self.cs.sub(b, Atom(PT), self.origin(a, "explicit", f"argument to {s.proc} must be cleartext",
                                                 None, (a,)))
        returns = summ.returns if summ else ()
        out = []
        for i, v in enumerate(s.into):
            t = returns[i] if i < len(returns) else PT
            tv = self.var(v)
            self.cs.sub(Atom(t), tv, self.origin(s, "call", f"result {i} of {s.proc} into {v}"))
            self.into.append((s, i, t, tv))
            out.append((v, tv))
        for (table, col) in sorted(summ.writes if summ else ()):
            pol = self.column_atom(table, col)
            out.append((f"{table}.{col} (via {s.proc})", Atom(lvaltype(pol.t), pol.key, pol.column)))
        return out


# ---------------------------------------------------------------- procedures


@dataclass
class TypedProc:
    proc: A.Procedure
    cs: ConstraintSet
    env: TypeEnv
    mode: str
    assignment: Optional[Assignment] = None
    report: Optional[UnsatReport] = None
    results: list = field(default_factory=list)
    summary: Optional[ProcSummary] = None
    param_nodes: dict = field(default_factory=dict)
    into: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.report is None

    @property
    def solution(self) -> Assignment:
        return self.assignment if self.assignment is not None else self.report.partial

    def assumed(self, node) -> EncType:
        return self.solution.value(self.env.alpha(node))

    def expected(self, node) -> EncType:
        return self.solution.value(self.env.beta(node))

    def var_type(self, name: str) -> EncType:
        return self.solution.value(self.env.vars[name])

    def var_types(self) -> dict[str, EncType]:
        return {n: self.solution.value(t) for n, t in self.env.vars.items()}

    def coercion(self, node) -> tuple[A.CoercionStep, ...]:
        """Coercion steps for ``node``: its assumed-to-expected path, then the
        path from its expected type to the storage it is written into."""
        if node not in self.env:
            return ()
        sol = self.solution
        alpha, beta = self.env.alpha(node), self.env.beta(node)
        steps = _keyed_path(sol.value(alpha), sol.value(beta), sol.key(alpha), sol.key(beta))
        return steps + self.sink_coercions().get(id(node), ())

    def sink_coercions(self) -> dict:
        if not hasattr(self, "_sink_cache"):
            self._sink_cache = _sink_coercions(self)
        return self._sink_cache

    def into_coercions(self) -> dict:
        """(id(call), position) -> steps converting a call result into the
        storage type of its INTO variable."""
        sol = self.solution
        out = {}
        for call, i, t, tv in self.into:
            steps = _keyed_path(t, sol.value(tv), None, sol.key(tv)) if leq(t, sol.value(tv)) else ()
            if steps:
                out[(id(call), i)] = steps
        return out

    def coerced_nodes(self) -> list:
        return [n for (n, _, _) in self.env.nodes.values() if self.coercion(n)]


def _keyed_path(a: EncType, b: EncType, ka, kb) -> tuple[A.CoercionStep, ...]:
    if a == b or TOP in (a, b):
        return ()
    out = []
    for kind in coercion_path(a, b):
        key = ka if kind.startswith("dec_") else kb
        out.append(A.CoercionStep(kind, key or f"_{_KIND_SCHEME[kind]}"))
    return tuple(out)


_KIND_SCHEME = {f"{d}_{s}": s for d in ("enc", "dec") for s in ("det", "rnd", "ope", "ah")}


def _sink_coercions(tp: TypedProc) -> dict:
    """Coercions from a value's expected type to the variable or column it
    is stored in.  In permissive mode a dropped write whose value is not a
    subtype of the target is decrypted, marked with an explicit downgrade
    step, and re-encrypted for the target."""
    drop = _DROPPED[tp.mode]
    sol = tp.solution
    out = {}
    for c in tp.cs.subs:
        if not c.origin.sites:
            continue
        target, kt = sol.value(c.rhs), sol.key(c.rhs)
        for node in c.origin.sites:
            if node not in tp.env:
                continue
            beta = tp.env.beta(node)
            have, kh = sol.value(beta), sol.key(beta)
            if TOP in (have, target):
                continue
            if leq(have, target):
                if is_cipher(have) and scheme(have) == scheme(target) and kh != kt:
                    # re-key (only reachable when the key constraint was dropped)
                    steps = (A.CoercionStep(f"dec_{scheme(have)}", kh), A.CoercionStep(f"enc_{scheme(target)}", kt))
                else:
                    steps = _keyed_path(have, target, kh, kt)
            elif c.origin.kind in drop:
                clear = decrypted(have)
                steps = (_keyed_path(have, clear, kh, None) if leq(have, clear) else
                         (A.CoercionStep(f"dec_{scheme(have)}", kh),))
                steps += (A.CoercionStep("downgrade"),) + _keyed_path(PT, target, None, kt)
            else:
                continue  # a reported violation
            if steps:
                out[id(node)] = steps
    return out


def infer_proc(proc: A.Procedure, policy: Policy, summaries: dict, mode: str = "strict",
               extra: Iterable[Sub] = ()) -> TypedProc:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    g = _Gen(proc, policy, summaries)
    for p in proc.params:
        # parameters arrive as cleartext; a synthetic node carries the
        # entry coercion into the variable's storage type
        node = A.Var(p, pos=proc.pos)
        g.param_nodes[p] = node
        g.env.add(node, Atom(PT), g.var(p))
    g.stmt(proc.body)
    for c in extra:
        g.cs.subs.append(c)
    tp = TypedProc(proc, g.cs, g.env, mode, results=g.results, param_nodes=g.param_nodes,
                   into=g.into)
    res = solve(g.cs, mode)
    if isinstance(res, UnsatReport):
        tp.report = res
    else:
        tp.assignment = res
    tp.summary = _summarize(tp, g, summaries)
    return tp


def _summarize(tp: TypedProc, g: _Gen, summaries: dict) -> ProcSummary:
    sol = tp.solution
    returns: list[EncType] = []
    for _, entries in tp.results:
        for i, (_, b, _) in enumerate(entries):
            t = sol.value(b)
            t = NDPT if t is TOP else decrypted(t)
            if i < len(returns):
                returns[i] = join(returns[i], t)
            else:
                returns.append(t)
    writes = set()
    for node in A.walk(tp.proc.body):
        if isinstance(node, A.Insert):
            writes |= {(node.table, c) for c in node.columns}
        elif isinstance(node, A.Update):
            writes |= {(node.table, c) for c, _ in node.sets}
    for call in g.calls:
        s = summaries.get(call.proc)
        if s:
            writes |= s.writes
    needs = any(tp.coercion(n) for (n, _, _) in tp.env.nodes.values())
    return ProcSummary(tuple(PT for _ in tp.proc.params), tuple(returns), frozenset(writes), needs)


@dataclass
class FlowError:
    proc: str
    location: str
    constraint: str
    message: str
    kind: str
    columns: list
    suggestions: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "procedure": self.proc,
            "location": self.location,
            "kind": self.kind,
            "constraint": self.constraint,
            "message": self.message,
            "involved_columns": [f"{t}.{c}" for t, c in self.columns],
            "suggestions": [s.as_text() for s in self.suggestions],
        }


@dataclass
class TypedProgram:
    program: A.Program
    policy: Policy
    mode: str
    procs: dict  # name -> TypedProc
    summaries: dict
    errors: list[FlowError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def infer_program(p: A.Program, policy: Policy, mode: str = "strict",
                  pins: Optional[dict] = None, max_rounds: int = 64) -> TypedProgram:
    """Bottom-up over the call graph; recursive components iterate until
    their summaries stop changing."""
    cg = build_call_graph(p)
    summaries: dict[str, ProcSummary] = {}
    typed: dict[str, TypedProc] = {}
    pins = pins or {}
    for scc in cg.sccs:
        for _ in range(max_rounds):
            before = {n: summaries.get(n) for n in scc}
            for name in scc:
                tp = infer_proc(p.proc(name), policy, summaries, mode, pins.get(name, ()))
                typed[name] = tp
                summaries[name] = tp.summary
            if all(before[n] == summaries[n] for n in scc):
                break
            if not cg.is_recursive(scc):
                break
        else:
            raise TypeInferenceError(f"summaries of {scc} did not stabilize")
    errors = []
    for name in p.names:
        tp = typed[name]
        if tp.report is None:
            continue
        for v in tp.report.violations:
            origin = v.constraint.origin if v.constraint else None
            errors.append(FlowError(
                name, origin.where() if origin else name, str(v.constraint) if v.constraint else "",
                v.message, v.kind, sorted(v.columns)))
    return TypedProgram(p, policy, mode, {n: typed[n] for n in p.names}, summaries, errors)


# ---------------------------------------------------------------- suggestions


@dataclass(frozen=True)
class PolicyEdit:
    table: str
    column: str
    old: EncType
    new: EncType
    key: Optional[str]

    def as_text(self) -> str:
        k = f":{self.key}" if self.key else ""
        return f"{self.table}.{self.column}: {self.old} -> {self.new}{k}"


def suggest_policy_fix(tprog: TypedProgram, policy: Optional[Policy] = None) -> list[PolicyEdit]:
    """For each violated bound on a column, the weakest single-column
    strengthening that removes it (checked by re-running inference)."""
    policy = policy or tprog.policy
    if tprog.ok:
        return []
    base_count = len(tprog.errors)
    cols = []
    for err in tprog.errors:
        if err.kind not in ("explicit", "implicit"):
            continue
        for col in err.columns:
            if col not in cols:
                cols.append(col)
    out = []
    for table, column in cols:
        old = policy.type_of(table, column)
        candidates = []
        for t in (EncType.OPE, EncType.DE, EncType.ADE, EncType.NDE):
            if strength(t).taint < strength(old).taint or t == old:
                continue
            s = scheme(t)
            key_choices = policy.keys(s) + [_fresh_key(policy)]
            for key in key_choices:
                trial = policy.with_column(table, column, t, key)
                try:
                    res = infer_program(tprog.program, trial, tprog.mode)
                except TypeInferenceError:
                    continue
                still = any((table, column) in map(tuple, e.columns) for e in res.errors)
                if still or len(res.errors) >= base_count:
                    continue
                ncoerce = sum(len(tp.coerced_nodes()) for tp in res.procs.values())
                candidates.append(((strength(t).taint, ncoerce, list(EncType).index(t)),
                                   PolicyEdit(table, column, old, t, key)))
                break
        if candidates:
            out.append(min(candidates, key=lambda x: x[0])[1])
    return out


def _fresh_key(policy: Policy) -> str:
    used = {k for (_, k) in policy.columns.values() if k}
    for i in itertools.count(1):
        if f"k{i}" not in used:
            return f"k{i}"


# ------------------------------------------------------------------ costs


def node_cost(node, stats: Stats) -> int:
    if isinstance(node, A.ColumnRef):
        return stats.get(node.table, node.column)
    if isinstance(node, (A.Const, A.Var)):
        return 1
    return sum(node_cost(c, stats) for c in A.children(node))


def assignment_cost(tprog: TypedProgram, stats: Stats) -> int:
    total = 0
    for tp in tprog.procs.values():
        for node in tp.coerced_nodes():
            total += node_cost(node, stats)
    return total


def optimize_assignment(tprog: TypedProgram, stats: Stats) -> TypedProgram:
    """Hill-climb from the least solution: pin one type variable to a
    strict supertype, re-infer, keep the cheapest valid result."""
    if not tprog.ok:
        return tprog
    best, best_cost = tprog, assignment_cost(tprog, stats)
    pins: dict[str, list[Sub]] = {}
    n_vars = sum(len(tp.cs.free_roots()) for tp in tprog.procs.values())
    for _ in range(max(1, n_vars * HEIGHT)):
        if best_cost == 0:
            break
        round_best = None
        for name, tp in best.procs.items():
            for r in tp.cs.free_roots():
                cur = tp.solution.values[r]
                for t in ATOMS:
                    if t is TOP or t == cur or not leq(cur, t):
                        continue
                    pin = Sub(Atom(t), TVar(r), Origin(name, None, "pin", f"pin t{r} >= {t}"))
                    trial_pins = {k: list(v) for k, v in pins.items()}
                    trial_pins.setdefault(name, []).append(pin)
                    try:
                        trial = infer_program(tprog.program, tprog.policy, tprog.mode, trial_pins)
                    except TypeInferenceError:
                        continue
                    if not trial.ok:
                        continue
                    cost = assignment_cost(trial, stats)
                    rank = (cost, _lex(trial))
                    if round_best is None or rank < round_best[0]:
                        round_best = (rank, trial, trial_pins)
        if round_best is None or round_best[0][0] >= best_cost:
            break
        (best_cost, _), best, pins = round_best
    return best


def _lex(tprog: TypedProgram) -> tuple:
    order = list(EncType)
    return tuple(order.index(t) for n in tprog.program.names for t in tprog.procs[n].solution.as_tuple())


def flow_safe(tp: TypedProc, policy: Policy) -> list[str]:
    """Static noninterference check over a solved procedure: data written to
    a column is no stronger than the column; branch conditions are no
    stronger than anything written under them."""
    problems = []
    sol = tp.solution
    for c in tp.cs.subs:
        if c.origin.kind in ("explicit", "implicit") and isinstance(c.rhs, Atom):
            lt = sol.value(c.lhs)
            if lt is TOP or strength(lt).taint > strength(c.rhs.t).taint:
                problems.append(f"{c.origin.text}: {lt} into {c.rhs}")
    return problems
