"""Split a rewritten program into client procedures and server closures.

Pipeline: invariant code motion, safety analysis, identity instrumentation
of unsafe expressions in remote statements, safety again, safe-block
extraction, distributed-transaction elimination.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

from . import ast as A
from .lattice import TAINTED, EncType
from .parser import Parser
from .printer import render_program, render_stmts
from .rewriter import Compiled, result_type

SERVER = "S"
TABLE_STMTS = (A.SelectStmt, A.Insert, A.Update, A.Delete)


@dataclass
class Closure:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    body: A.Seq
    txlocal: bool = False


@dataclass
class PartitionedProgram:
    client: A.Program
    closures: dict = field(default_factory=dict)  # name -> Closure
    var_types: dict = field(default_factory=dict)

    @property
    def distributed_tx(self) -> int:
        return sum(1 for p in self.client.procedures for n in A.walk(p.body)
                   if isinstance(n, A.Transaction) and n.distributed)

    def render_manifest(self) -> str:
        out = []
        for c in self.closures.values():
            out.append(f"closure {c.name} inputs={','.join(c.inputs)} outputs={','.join(c.outputs)} "
                       f"txlocal={int(c.txlocal)}\nBEGIN\n{render_stmts(c.body, 1)}END\n")
        return "\n".join(out)

    def render_client(self) -> str:
        return render_program(self.client)


_HEADER = re.compile(r"^closure (\S+) inputs=(\S*) outputs=(\S*) txlocal=([01])\s*$", re.M)


def parse_manifest(text: str) -> dict:
    closures = {}
    heads = list(_HEADER.finditer(text))
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        p = Parser(text[m.end():end], allow_compiled=True)
        p.expect_kw("BEGIN")
        body = p.stmts(("END",))
        p.expect_kw("END")
        if p.tok.kind != "eof":
            p.error("unexpected text after closure body")
        split = lambda s: tuple(x for x in s.split(",") if x)
        closures[m.group(1)] = Closure(m.group(1), split(m.group(2)), split(m.group(3)), body, m.group(4) == "1")
    return closures


# ------------------------------------------------------------------ safety


@dataclass
class SafetyMap:
    unsafe_vars: set
    # id(node) -> bool for every expression and statement visited
    flags: dict = field(default_factory=dict)

    def safe(self, node) -> bool:
        return self.flags[id(node)]


def _var_type(vt: dict, name: str) -> Optional[EncType]:
    return vt.get(name)


def safety_analysis(proc: A.Procedure, var_types: dict) -> SafetyMap:
    """Expressions are safe when they make no crypto calls and read no
    variable holding decrypted data; statements when all parts are."""
    unsafe_vars = {v for v, t in var_types.items() if t in TAINTED}
    m = SafetyMap(unsafe_vars)

    def expr(e) -> bool:
        if isinstance(e, (A.Coercion, A.Identity)):
            for c in A.children(e):
                expr(c)
            ok = False
        elif isinstance(e, A.Var):
            ok = e.name not in unsafe_vars
        else:
            ok = all([expr(c) for c in A.children(e)])
        m.flags[id(e)] = ok
        return ok

    def stmt(s) -> bool:
        if isinstance(s, A.Call):
            for a in s.args:
                expr(a)
            ok = False if s.server is None else all(m.flags[id(a)] for a in s.args)
        elif isinstance(s, A.Assign):
            ok = expr(s.value) and s.target.name not in unsafe_vars
        else:
            ok = True
            for c in A.children(s):
                ok = (expr(c) if A.is_expr(c) else stmt(c)) and ok
        m.flags[id(s)] = ok
        return ok

    stmt(proc.body)
    return m


# ----------------------------------------------------- invariant code motion


def _has_column(e) -> bool:
    return any(isinstance(n, (A.ColumnRef, A.Project)) for n in A.walk(e))


def invariant_code_motion(proc: A.Procedure, var_types: dict) -> A.Procedure:
    """Hoist coercions that do not depend on the current row out of queries
    into temporaries assigned just before the statement."""
    counter = [0]

    def fresh(e: A.Coercion) -> str:
        if isinstance(e.expr, A.Var):
            base = "@enc_" + e.expr.name[1:]
            name, i = base, 2
            while name in var_types:
                name, i = f"{base}_{i}", i + 1
        else:
            while True:
                counter[0] += 1
                name = f"@enc_tmp{counter[0]}"
                if name not in var_types:
                    break
        var_types[name] = result_type(e.steps)
        return name

    def hoist(e, found: dict):
        if isinstance(e, A.Coercion) and not _has_column(e.expr) and not any(
                isinstance(n, A.Identity) for n in A.walk(e)):
            if e not in found:
                found[e] = fresh(e)
            return A.Var(found[e], pos=e.pos)
        from .rewriter import _map_children
        return _map_children(e, lambda c: hoist(c, found))

    def with_temps(found: dict, new_stmt) -> list:
        return [A.Assign(A.Var(name), e, pos=e.pos) for e, name in found.items()] + [new_stmt]

    def stmts(seq: A.Seq) -> A.Seq:
        out = []
        for s in seq.stmts:
            out.extend(stmt(s))
        return A.Seq(tuple(out), pos=seq.pos)

    def stmt(s) -> list:
        from .rewriter import _map_stmt
        if isinstance(s, TABLE_STMTS):
            found: dict = {}
            new = _map_stmt(s, lambda x: x, lambda e: hoist(e, found))
            return with_temps(found, new)
        if isinstance(s, A.If):
            found = {}
            cond = hoist(s.cond, found) if _has_column(s.cond) else s.cond
            return with_temps(found, A.If(cond, stmts(s.then), stmts(s.orelse), pos=s.pos))
        if isinstance(s, A.Assign) and _has_column(s.value):
            found = {}
            return with_temps(found, A.Assign(s.target, hoist(s.value, found), pos=s.pos))
        if isinstance(s, A.Transaction):
            return [A.Transaction(stmts(s.body), s.distributed, pos=s.pos)]
        return [s]

    return replace(proc, body=stmts(proc.body))


# ------------------------------------------------- identity instrumentation


def instrument_identity(proc: A.Procedure, m: SafetyMap) -> A.Procedure:
    """Wrap each maximal unsafe scalar expression of a remote statement in
    ``__IDENTITY`` so the planner evaluates it on the client."""
    from .rewriter import _map_children, _map_stmt

    def expr(e):
        if A.is_expr(e) and not isinstance(e, A.RELATIONAL + (A.NamedRecord,)) and not m.flags.get(id(e), True):
            return e if isinstance(e, A.Identity) else A.Identity(e, pos=e.pos)
        return _map_children(e, expr)

    def stmt(s):
        if isinstance(s, TABLE_STMTS):
            return _map_stmt(s, lambda x: x, expr)
        if isinstance(s, (A.If, A.Transaction, A.Seq)):
            return _map_stmt(s, stmt, lambda e: e)
        return s

    return replace(proc, body=stmt(proc.body))


# ------------------------------------------------------------------ liveness


def uses(node) -> set:
    return A.vars_read(node)


def live_before(s, live_after: set) -> set:
    if isinstance(s, A.Seq):
        live = set(live_after)
        for x in reversed(s.stmts):
            live = live_before(x, live)
        return live
    if isinstance(s, A.Assign):
        return (live_after - {s.target.name}) | uses(s.value)
    if isinstance(s, A.If):
        return uses(s.cond) | live_before(s.then, live_after) | live_before(s.orelse, live_after)
    if isinstance(s, (A.Transaction, A.RemoteBlock)):
        return live_before(s.body, live_after)
    if isinstance(s, A.Call):
        return (live_after - set(s.into)) | set().union(*[uses(a) for a in s.args])
    return live_after | uses(s)


def defs(node) -> set:
    out = set()
    for n in A.walk(node):
        if isinstance(n, A.Assign):
            out.add(n.target.name)
        elif isinstance(n, A.Call):
            out |= set(n.into)
    return out


def accesses_tables(node) -> bool:
    return any(isinstance(n, TABLE_STMTS + (A.ColumnRef,)) for n in A.walk(node))


# ---------------------------------------------------------------- extraction


def _remote(s):
    return A.RemoteBlock(SERVER, s, pos=s.pos) if isinstance(s, TABLE_STMTS) else s


def baseline_partition(c: Compiled) -> PartitionedProgram:
    """Every table statement runs remotely; every transaction is distributed."""
    return _partition(c, icm=False, extract=False, txelim=False, identity=True)


def extract_safe_blocks(proc: A.Procedure, m: SafetyMap, closures: dict) -> A.Procedure:
    counter = [0]

    def scope(seq: A.Seq, live_after: set) -> A.Seq:
        n = len(seq.stmts)
        after = [set()] * n
        live = set(live_after)
        for i in range(n - 1, -1, -1):
            after[i] = live
            live = live_before(seq.stmts[i], live)
        out = []
        i = 0
        while i < n:
            s = seq.stmts[i]
            if _extractable(s, m):
                j = i
                while j + 1 < n and _extractable(seq.stmts[j + 1], m):
                    j += 1
                run = seq.stmts[i:j + 1]
                if any(accesses_tables(x) for x in run):
                    out.append(make_closure(run, after[j]))
                else:
                    out.extend(run)
                i = j + 1
                continue
            if isinstance(s, A.Transaction):
                out.append(A.Transaction(scope(s.body, after[i]), s.distributed, pos=s.pos))
            elif isinstance(s, A.If):
                out.append(A.If(s.cond, scope(s.then, after[i]), scope(s.orelse, after[i]), pos=s.pos))
            else:
                out.append(_remote(s))
            i += 1
        return A.Seq(tuple(out), pos=seq.pos)

    def make_closure(run, live_out: set) -> A.Call:
        counter[0] += 1
        name = f"{proc.name}__c{counter[0]}"
        body = A.Seq(tuple(run))
        d = defs(body)
        live_in = live_before(body, live_out)
        inputs = tuple(sorted(live_in & (uses(body) | d)))
        outputs = tuple(sorted(d & live_out))
        closures[name] = Closure(name, inputs, outputs, body)
        return A.Call(name, tuple(A.Var(v) for v in inputs), outputs, SERVER, pos=run[0].pos)

    return replace(proc, body=scope(proc.body, set()))


def _extractable(s, m: SafetyMap) -> bool:
    # transactions are never moved whole; extraction recurses into them
    return m.safe(s) and not isinstance(s, A.Transaction) and not any(
        isinstance(n, A.Transaction) for n in A.walk(s))


def _remote_access(node) -> bool:
    for n in A.walk(node):
        if isinstance(n, (A.RemoteBlock, A.ColumnRef) + TABLE_STMTS):
            return True
        if isinstance(n, A.Call):
            return True  # closure calls and nested procedure calls
    return False


def eliminate_distributed_transactions(proc: A.Procedure, closures: dict, enabled: bool = True) -> A.Procedure:
    """A transaction whose only server work is one trailing closure call
    becomes a server-local transaction inside that closure."""

    def stmts(seq: A.Seq) -> A.Seq:
        out = []
        for s in seq.stmts:
            out.extend(stmt(s))
        return A.Seq(tuple(out), pos=seq.pos)

    def stmt(s) -> list:
        if isinstance(s, A.If):
            return [A.If(s.cond, stmts(s.then), stmts(s.orelse), pos=s.pos)]
        if not isinstance(s, A.Transaction):
            return [s]
        body = s.body.stmts
        if not enabled:
            return [A.Transaction(s.body, True, pos=s.pos)]
        if not _remote_access(s.body):
            return [A.Transaction(s.body, False, pos=s.pos)]
        last = body[-1] if body else None
        if (isinstance(last, A.Call) and last.server is not None
                and not any(_remote_access(x) for x in body[:-1])):
            closures[last.proc].txlocal = True
            return list(body)
        return [A.Transaction(s.body, True, pos=s.pos)]

    return replace(proc, body=stmts(proc.body))


def _partition(c: Compiled, icm: bool, extract: bool, txelim: bool, identity: bool = True) -> PartitionedProgram:
    closures: dict = {}
    procs = []
    var_types = {n: dict(v) for n, v in c.var_types.items()}
    for proc in c.program.procedures:
        vt = var_types.setdefault(proc.name, {})
        if icm:
            proc = invariant_code_motion(proc, vt)
        if identity:
            proc = instrument_identity(proc, safety_analysis(proc, vt))
        m = safety_analysis(proc, vt)
        if extract:
            proc = extract_safe_blocks(proc, m, closures)
        else:
            proc = replace(proc, body=_wrap_remote(proc.body))
        proc = eliminate_distributed_transactions(proc, closures, enabled=txelim and extract)
        procs.append(proc)
    return PartitionedProgram(A.Program(tuple(procs)), closures, var_types)


def _wrap_remote(s):
    if isinstance(s, A.Seq):
        return A.Seq(tuple(_wrap_remote(x) for x in s.stmts), pos=s.pos)
    if isinstance(s, A.If):
        return A.If(s.cond, _wrap_remote(s.then), _wrap_remote(s.orelse), pos=s.pos)
    if isinstance(s, A.Transaction):
        return A.Transaction(_wrap_remote(s.body), s.distributed, pos=s.pos)
    return _remote(s)


def partition(c: Compiled, icm: bool = True, extract: bool = True, txelim: bool = True) -> PartitionedProgram:
    return _partition(c, icm, extract, txelim)


def check_server_safety(pp: PartitionedProgram) -> list[str]:
    """Static restatement of the server-side guarantee: closures and
    server-executed remote statements make no decryption and read no
    variable holding decrypted data."""
    problems = []

    def scan(name, node, vt, inside_identity_ok: bool):
        for n in A.walk(node):
            if isinstance(n, A.Identity) and inside_identity_ok:
                continue
            if isinstance(n, A.Coercion) and any(s.kind.startswith("dec_") or s.kind == "downgrade"
                                                 for s in n.steps):
                if not inside_identity_ok or not _under_identity(node, n):
                    problems.append(f"{name}: decryption on the server")
            if isinstance(n, A.Var) and vt.get(n.name) in TAINTED:
                if not inside_identity_ok or not _under_identity(node, n):
                    problems.append(f"{name}: decrypted variable {n.name} on the server")

    owners = {}
    for p in pp.client.procedures:
        for n in A.walk(p.body):
            if isinstance(n, A.Call) and n.server:
                owners[n.proc] = p.name
    for c in pp.closures.values():
        scan(c.name, c.body, pp.var_types.get(owners.get(c.name, ""), {}), False)
    for p in pp.client.procedures:
        for n in A.walk(p.body):
            if isinstance(n, A.RemoteBlock):
                scan(p.name, n.body, pp.var_types.get(p.name, {}), True)
    return problems


def _under_identity(root, target) -> bool:
    def go(n, inside):
        if n is target:
            return inside
        for c in A.children(n):
            r = go(c, inside or isinstance(n, A.Identity))
            if r is not None:
                return r
        return None

    return bool(go(root, False))
