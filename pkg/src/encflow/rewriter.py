"""Turn a solved program into one that runs against the encrypted database."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import ast as A
from .lattice import ADE, ADE_R, PT, EncType, POLICY_SCHEME, is_cipher, scheme
from .typeinfer import TypedProgram, TypedProc, decrypted


class RewriteError(ValueError):
    pass


@dataclass
class Compiled:
    """A rewritten program plus the type facts later passes need."""

    program: A.Program
    source: TypedProgram
    var_types: dict  # proc -> {variable: EncType}
    # keyed by id() of nodes in ``program``
    add_types: dict = field(default_factory=dict)
    result_types: dict = field(default_factory=dict)

    def proc_vars(self, name: str) -> dict:
        return self.var_types.setdefault(name, {})


def result_type(steps, start: EncType = PT) -> EncType:
    """Type of a value after applying coercion ``steps``."""
    t = start
    for s in steps:
        if s.kind == "downgrade":
            t = PT
        elif s.kind.startswith("enc_"):
            t = POLICY_SCHEME[s.kind[4:]]
        else:
            t = decrypted(POLICY_SCHEME[s.kind[4:]])
    return t


class _Inserter:
    def __init__(self, tp: TypedProc, out: Compiled):
        self.tp = tp
        self.out = out
        self.into = tp.into_coercions()

    def wrap(self, old, new):
        steps = self.tp.coercion(old)
        return A.Coercion(steps, new, pos=old.pos) if steps else new

    def expr(self, e):
        if isinstance(e, (A.Const, A.Var, A.ColumnRef)):
            return self.wrap(e, e)
        if isinstance(e, (A.Equals, A.Less)):
            return self.wrap(e, type(e)(self.expr(e.left), self.expr(e.right), pos=e.pos))
        if isinstance(e, A.Add):
            new = A.Add(self.expr(e.left), self.expr(e.right), pos=e.pos)
            self.out.add_types[id(new)] = (self.tp.expected(e.left), self.tp.expected(e.right))
            return self.wrap(e, new)
        if isinstance(e, A.Apply):
            return self.wrap(e, A.Apply(e.func, tuple(self.expr(a) for a in e.args), pos=e.pos))
        if isinstance(e, A.NamedRecord):
            return A.NamedRecord(tuple((n, self.expr(x)) for n, x in e.items), pos=e.pos)
        if isinstance(e, A.Project):
            return A.Project(tuple(self.expr(i) for i in e.items), e.source, pos=e.pos)
        if isinstance(e, A.Select):
            return A.Select(self.expr(e.pred), self.expr(e.source), pos=e.pos)
        if isinstance(e, (A.Union_, A.Diff)):
            return type(e)(self.expr(e.left), self.expr(e.right), pos=e.pos)
        raise RewriteError(f"unexpected node {type(e).__name__}")

    def stmts(self, seq: A.Seq) -> A.Seq:
        out = []
        for s in seq.stmts:
            out.extend(self.stmt(s))
        return A.Seq(tuple(out), pos=seq.pos)

    def stmt(self, s) -> list:
        if isinstance(s, A.Assign):
            return [A.Assign(s.target, self.expr(s.value), pos=s.pos)]
        if isinstance(s, A.If):
            return [A.If(self.expr(s.cond), self.stmts(s.then), self.stmts(s.orelse), pos=s.pos)]
        if isinstance(s, A.SelectStmt):
            new = A.SelectStmt(s.names, self.expr(s.source), pos=s.pos)
            for old, entries in self.tp.results:
                if old is s:
                    sol = self.tp.solution
                    self.out.result_types[id(new)] = [(sol.value(b), sol.key(b)) for _, b, _ in entries]
            return [new]
        if isinstance(s, A.Insert):
            return [A.Insert(s.table, s.columns, self.expr(s.source), pos=s.pos)]
        if isinstance(s, A.Update):
            sets = tuple((c, self.expr(e)) for c, e in s.sets)
            where = self.expr(s.where) if s.where is not None else None
            return [A.Update(s.table, sets, where, pos=s.pos)]
        if isinstance(s, A.Delete):
            return [A.Delete(s.table, self.expr(s.where) if s.where is not None else None, pos=s.pos)]
        if isinstance(s, A.Transaction):
            return [A.Transaction(self.stmts(s.body), s.distributed, pos=s.pos)]
        if isinstance(s, A.Call):
            out = [A.Call(s.proc, tuple(self.expr(a) for a in s.args), s.into, s.server, pos=s.pos)]
            for i, v in enumerate(s.into):
                steps = self.into.get((id(s), i))
                if steps:
                    out.append(A.Assign(A.Var(v), A.Coercion(steps, A.Var(v)), pos=s.pos))
            return out
        raise RewriteError(f"unexpected statement {type(s).__name__}")

    def procedure(self) -> A.Procedure:
        proc = self.tp.proc
        entry = []
        for p in proc.params:
            node = self.tp.param_nodes[p]
            steps = self.tp.coercion(node)
            if steps:
                entry.append(A.Assign(A.Var(p), A.Coercion(steps, A.Var(p)), pos=proc.pos))
        body = self.stmts(proc.body)
        return A.Procedure(proc.name, proc.params, A.Seq(tuple(entry) + body.stmts, pos=body.pos),
                           proc.external, pos=proc.pos)


def insert_coercions(tprog: TypedProgram) -> Compiled:
    """Wrap every node whose assumed and expected types differ in the
    coercion along the lattice path between them."""
    if any(A.is_compiler_form(n) for proc in tprog.program.procedures for n in A.walk(proc.body)):
        raise RewriteError("program already contains compiler-output forms")
    if not tprog.ok and tprog.mode != "permissive":
        raise RewriteError("cannot rewrite a program with flow errors")
    out = Compiled(A.Program(()), tprog, {})
    procs = []
    for name in tprog.program.names:
        tp = tprog.procs[name]
        procs.append(_Inserter(tp, out).procedure())
        out.var_types[name] = dict(tp.var_types())
    out.program = A.Program(tuple(procs))
    return out


def substitute_homomorphic_ops(c: Compiled) -> Compiled:
    """Additions over additively-encrypted operands become ``__HOMADD``."""

    def expr(e):
        if isinstance(e, A.Add):
            l, r = expr(e.left), expr(e.right)
            tl, tr = c.add_types.get(id(e), (None, None))
            he = {tl in (ADE, ADE_R), tr in (ADE, ADE_R)}
            if he == {True, False}:
                raise RewriteError("addition mixes additive ciphertext with another representation")
            if True in he:
                return A.HomAdd(l, r, pos=e.pos)
            new = A.Add(l, r, pos=e.pos)
            c.add_types[id(new)] = (tl, tr)
            return new
        return _map_children(e, expr)

    return _rebuild(c, expr)


def insert_boundary_crypto(c: Compiled) -> Compiled:
    """Encrypt read-only parameters once at entry; decrypt ciphertext result
    columns before they leave the procedure."""
    procs = []
    for proc in c.program.procedures:
        vt = c.proc_vars(proc.name)
        assigned = {n.target.name for n in A.walk(proc.body) if isinstance(n, A.Assign)}
        assigned |= {v for n in A.walk(proc.body) if isinstance(n, A.Call) for v in n.into}
        hoisted: dict = {}  # (param, steps) -> temp name
        entry = []

        def expr(e):
            if (isinstance(e, A.Coercion) and isinstance(e.expr, A.Var)
                    and e.expr.name in proc.params and e.expr.name not in assigned):
                key = (e.expr.name, e.steps)
                if key not in hoisted:
                    base = "@enc_" + e.expr.name[1:]
                    name = base
                    i = 2
                    while name in vt or name in proc.params or name in hoisted.values():
                        name = f"{base}_{i}"
                        i += 1
                    hoisted[key] = name
                    vt[name] = result_type(e.steps)
                    entry.append(A.Assign(A.Var(name), e, pos=proc.pos))
                return A.Var(hoisted[key], pos=e.pos)
            return _map_children(e, expr)

        def stmt(s):
            if isinstance(s, A.SelectStmt):
                types = c.result_types.get(id(s))
                new_source = expr(s.source)
                steps = None
                if types:
                    per_col = tuple(
                        (A.CoercionStep(f"dec_{scheme(t)}", k or f"_{scheme(t)}"),) if is_cipher(t) else ()
                        for t, k in types)
                    steps = per_col if any(per_col) else None
                new = A.SelectStmt(s.names, new_source, steps, pos=s.pos)
                if types:
                    c.result_types[id(new)] = types
                return new
            return _map_stmt(s, stmt, expr)

        body = stmt(proc.body)
        procs.append(replace(proc, body=A.Seq(tuple(entry) + body.stmts, pos=body.pos)))
    c.program = A.Program(tuple(procs))
    return c


def rewrite(tprog: TypedProgram) -> Compiled:
    return insert_boundary_crypto(substitute_homomorphic_ops(insert_coercions(tprog)))


# ------------------------------------------------------------ tree helpers


def _map_children(e, f):
    if isinstance(e, (A.Const, A.Var, A.ColumnRef)):
        return e
    if isinstance(e, (A.Equals, A.Less, A.Add, A.HomAdd, A.Union_, A.Diff)):
        return type(e)(f(e.left), f(e.right), pos=e.pos)
    if isinstance(e, A.Apply):
        return A.Apply(e.func, tuple(f(a) for a in e.args), pos=e.pos)
    if isinstance(e, A.NamedRecord):
        return A.NamedRecord(tuple((n, f(x)) for n, x in e.items), pos=e.pos)
    if isinstance(e, A.Project):
        return A.Project(tuple(f(i) for i in e.items), e.source, pos=e.pos)
    if isinstance(e, A.Select):
        return A.Select(f(e.pred), f(e.source), pos=e.pos)
    if isinstance(e, A.Coercion):
        return A.Coercion(e.steps, f(e.expr), pos=e.pos)
    if isinstance(e, A.Identity):
        return A.Identity(f(e.expr), pos=e.pos)
    raise RewriteError(f"unexpected node {type(e).__name__}")


def _map_stmt(s, stmt, expr):
    """Rebuild statement ``s`` applying ``stmt`` to sub-statements and
    ``expr`` to its expressions."""
    if isinstance(s, A.Seq):
        return A.Seq(tuple(stmt(x) for x in s.stmts), pos=s.pos)
    if isinstance(s, A.Assign):
        return A.Assign(s.target, expr(s.value), pos=s.pos)
    if isinstance(s, A.If):
        return A.If(expr(s.cond), stmt(s.then), stmt(s.orelse), pos=s.pos)
    if isinstance(s, A.SelectStmt):
        return A.SelectStmt(s.names, expr(s.source), s.result_steps, pos=s.pos)
    if isinstance(s, A.Insert):
        return A.Insert(s.table, s.columns, expr(s.source), pos=s.pos)
    if isinstance(s, A.Update):
        return A.Update(s.table, tuple((c, expr(e)) for c, e in s.sets),
                        expr(s.where) if s.where is not None else None, pos=s.pos)
    if isinstance(s, A.Delete):
        return A.Delete(s.table, expr(s.where) if s.where is not None else None, pos=s.pos)
    if isinstance(s, A.Transaction):
        return A.Transaction(stmt(s.body), s.distributed, pos=s.pos)
    if isinstance(s, A.RemoteBlock):
        return A.RemoteBlock(s.server, stmt(s.body), pos=s.pos)
    if isinstance(s, A.Call):
        return A.Call(s.proc, tuple(expr(a) for a in s.args), s.into, s.server, pos=s.pos)
    raise RewriteError(f"unexpected statement {type(s).__name__}")


def _rebuild(c: Compiled, expr) -> Compiled:
    def stmt(s):
        new = _map_stmt(s, stmt, expr)
        if isinstance(s, A.SelectStmt) and id(s) in c.result_types:
            c.result_types[id(new)] = c.result_types[id(s)]
        return new

    c.program = A.Program(tuple(replace(p, body=stmt(p.body)) for p in c.program.procedures))
    return c
