"""Deterministic two-node simulator.

The untrusted server holds the tables and deployed closures and logs every
value it stores or receives.  The trusted client holds the keys and the
procedure locals.  A cleartext program can also be run on a single node,
which is the reference configuration for history comparison.
"""
from __future__ import annotations

import copy
import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from . import ast as A
from .crypto import Ciphertext, CryptoError, KeyStore, ah_add, decrypt, encode_value, encrypt, ope_less
from .lattice import REPR_STRENGTH, REPRS, SCHEME_REPR, StrengthLabel, scheme, strength
from .partitioner import Closure, PartitionedProgram
from .policy import Policy

INT64 = (-(1 << 63), (1 << 63) - 1)
CLEAR = StrengthLabel("clear", 0)


class LSQLRuntimeError(RuntimeError):
    pass


class InjectedFault(LSQLRuntimeError):
    pass


@dataclass(frozen=True)
class TaggedValue:
    payload: object  # int, str, None or Ciphertext
    label: StrengthLabel = CLEAR

    def size(self) -> int:
        if isinstance(self.payload, Ciphertext):
            return len(self.payload)
        if self.payload is None:
            return 1
        return len(encode_value(self.payload))


def _join(*labels: StrengthLabel, repr_: str = "clear") -> StrengthLabel:
    return StrengthLabel(repr_, max((l.taint for l in labels), default=0))


def _raise(label: StrengthLabel, pc: int) -> StrengthLabel:
    return label if pc <= label.taint else StrengthLabel(label.repr, pc)


# ------------------------------------------------------------------ state


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)  # list of {column: TaggedValue}


@dataclass
class Observation:
    site: str  # query, closure or param
    repr: str
    taint: int
    what: str = ""

    def as_dict(self) -> dict:
        return {"site": self.site, "repr": self.repr, "taint": REPRS[self.taint]}


@dataclass
class AdversaryTrace:
    observations: list = field(default_factory=list)

    def observe(self, site: str, v: TaggedValue, what: str = "") -> None:
        self.observations.append(Observation(site, v.label.repr, v.label.taint, what))


@dataclass
class ServerState:
    tables: dict = field(default_factory=dict)
    closures: dict = field(default_factory=dict)
    trace: AdversaryTrace = field(default_factory=AdversaryTrace)

    def snapshot(self) -> dict:
        return {n: Table(t.columns, [dict(r) for r in t.rows]) for n, t in self.tables.items()}

    def restore(self, snap: dict) -> None:
        self.tables = snap

    def cleartext(self, keys: Optional[KeyStore] = None) -> dict:
        """Table contents with ciphertexts decrypted, for inspection."""
        out = {}
        for n, t in self.tables.items():
            rows = []
            for r in t.rows:
                row = {}
                for c, v in r.items():
                    p = v.payload
                    if isinstance(p, Ciphertext):
                        p = decrypt(keys.get(p.key_id, p.scheme), p)
                    row[c] = p
                rows.append(row)
            out[n] = rows
        return out


@dataclass
class Metrics:
    round_trips: int = 0
    bytes: int = 0
    distributed_tx: int = 0
    crypto_calls: int = 0

    def as_dict(self) -> dict:
        return {"round_trips": self.round_trips, "bytes": self.bytes,
                "distributed_tx": self.distributed_tx, "crypto_calls": self.crypto_calls}


@dataclass
class Message:
    direction: str  # c2s or s2c
    kind: str
    nbytes: int


@dataclass
class ClientState:
    keys: KeyStore = field(default_factory=KeyStore)
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    metrics: Metrics = field(default_factory=Metrics)
    messages: list = field(default_factory=list)

    def send(self, kind: str, nbytes: int) -> None:
        self.messages.append(Message("c2s", kind, nbytes))
        self.metrics.round_trips += 1
        self.metrics.bytes += nbytes

    def receive(self, kind: str, nbytes: int) -> None:
        self.messages.append(Message("s2c", kind, nbytes))
        self.metrics.bytes += nbytes


# ---------------------------------------------------------------- history


@dataclass(frozen=True)
class CallEvent:
    proc: str
    params: tuple


@dataclass(frozen=True)
class ReturnEvent:
    proc: str
    results: Optional[tuple]  # result sets; None when the call aborted
    error: bool = False
    message: str = field(default="", compare=False)


@dataclass
class History:
    events: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class Comparison:
    identical: bool
    index: Optional[int] = None
    left: object = None
    right: object = None

    def __bool__(self) -> bool:
        return self.identical


def compare_histories(h1: History, h2: History) -> Comparison:
    for i, (a, b) in enumerate(zip(h1.events, h2.events)):
        if a != b:
            return Comparison(False, i, a, b)
    if len(h1) != len(h2):
        i = min(len(h1), len(h2))
        return Comparison(False, i, h1.events[i] if i < len(h1) else None,
                          h2.events[i] if i < len(h2) else None)
    return Comparison(True)


def audit_trace(trace: AdversaryTrace) -> list[dict]:
    """Observations whose taint exceeds the strength of the representation
    the server saw."""
    return [o.as_dict() for o in trace.observations if o.taint > REPR_STRENGTH[o.repr]]


# ---------------------------------------------------------------- fixtures


def _cell(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def read_fixture_dir(path: Union[str, Path]) -> dict:
    """One CSV per table; the header row names the columns."""
    out = {}
    for f in sorted(Path(path).glob("*.csv")):
        with open(f, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise LSQLRuntimeError(f"{f.name}: missing header row")
        cols = tuple(c.strip() for c in rows[0])
        data = []
        for r in rows[1:]:
            if len(r) != len(cols):
                raise LSQLRuntimeError(f"{f.name}: row has {len(r)} fields, expected {len(cols)}")
            data.append(tuple(_cell(x) for x in r))
        out[f.stem] = (cols, data)
    return out


def write_fixture_dir(fixture: dict, path: Union[str, Path]) -> None:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    for name, (cols, rows) in fixture.items():
        with open(p / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            w.writerows(rows)


def load_fixture(fixture: dict, policy: Optional[Policy] = None, keys: Optional[KeyStore] = None,
                 rng: Optional[random.Random] = None) -> ServerState:
    """Build server tables from ``{table: (columns, rows)}``; columns the
    policy encrypts are encrypted on load.  Without a policy the tables stay
    cleartext (the reference configuration)."""
    rng = rng or random.Random(0)
    policy = policy or Policy()
    for (t, c) in policy.columns:
        if t not in fixture or c not in fixture[t][0]:
            raise LSQLRuntimeError(f"policy names {t}.{c}, which the fixture lacks")
    tables = {}
    for name, (cols, rows) in fixture.items():
        table = Table(tuple(cols))
        for raw in rows:
            if len(raw) != len(cols):
                raise LSQLRuntimeError(f"{name}: row arity does not match schema")
            row = {}
            for c, v in zip(cols, raw):
                t = policy.type_of(name, c)
                label = strength(t)
                sch = scheme(t)
                if sch is not None:
                    if sch in ("ope", "ah") and not isinstance(v, int):
                        raise LSQLRuntimeError(f"{name}.{c}: {sch} column holds a non-integer")
                    v = encrypt(keys.get(policy.key_of(name, c), sch), v, rng)
                row[c] = TaggedValue(v, label)
            table.rows.append(row)
        tables[name] = table
    return ServerState(tables)


# ---------------------------------------------------------------- evaluator


@dataclass
class Frame:
    proc: str
    env: dict
    results: list = field(default_factory=list)  # list of (rows, steps)


WorkloadItem = tuple  # (proc name, tuple of cleartext args)


class Machine:
    def __init__(self, program, server: ServerState, client: ClientState,
                 fault: Optional[Callable[[str, object], None]] = None):
        if isinstance(program, PartitionedProgram):
            self.program = program.client
            server.closures = dict(program.closures)
            self.local = False
        else:
            self.program = program
            self.local = True
        self.procs = {p.name: p for p in self.program.procedures}
        self.server = server
        self.client = client
        self.fault = fault

    # -------------------------------------------------- top level

    def run(self, workload) -> History:
        h = History()
        for proc, args in workload:
            params = tuple(args)
            h.events.append(CallEvent(proc, params))
            try:
                results = self.call(proc, [TaggedValue(a) for a in params], pc=0)
                h.events.append(ReturnEvent(proc, tuple(self._boundary(rs) for rs in results)))
            except (LSQLRuntimeError, CryptoError) as e:
                h.events.append(ReturnEvent(proc, None, True, str(e)))
        return h

    def _boundary(self, rows) -> tuple:
        return tuple(tuple(v.payload for v in r) for r in rows)

    def call(self, name: str, args: list, pc: int) -> list:
        """Run a client (or local) procedure; returns its result sets."""
        if name not in self.procs:
            raise LSQLRuntimeError(f"unknown procedure {name}")
        p = self.procs[name]
        if len(args) != len(p.params):
            raise LSQLRuntimeError(f"{name} expects {len(p.params)} arguments")
        frame = Frame(name, dict(zip(p.params, args)))
        where = "local" if self.local else "client"
        self.stmt(p.body, frame, where, pc)
        return [self._decrypt_results(rows, steps) for rows, steps in frame.results]

    def _decrypt_results(self, rows, steps):
        if not steps:
            return rows
        return [tuple(self.coerce(v, s) for v, s in zip(r, steps)) for r in rows]

    # -------------------------------------------------- crypto

    def coerce(self, v: TaggedValue, steps) -> TaggedValue:
        for st in steps:
            if st.kind == "downgrade" or v.payload is None:
                continue
            op, sch = st.kind.split("_", 1)
            key = self.client.keys.get(st.key or f"_{sch}", sch)
            self.client.metrics.crypto_calls += 1
            if op == "enc":
                if isinstance(v.payload, Ciphertext):
                    raise LSQLRuntimeError("encrypting a ciphertext")
                v = TaggedValue(encrypt(key, v.payload, self.client.rng), StrengthLabel(SCHEME_REPR[sch], v.label.taint))
            else:
                v = TaggedValue(decrypt(key, v.payload), StrengthLabel("clear", v.label.taint))
        return v

    # -------------------------------------------------- expressions

    def expr(self, e, env: dict, ctx: dict, where: str) -> TaggedValue:
        if isinstance(e, A.Const):
            return TaggedValue(e.value)
        if isinstance(e, A.Var):
            if e.name not in env:
                raise LSQLRuntimeError(f"unassigned variable {e.name}")
            return env[e.name]
        if isinstance(e, A.ColumnRef):
            row = ctx.get(e.table)
            if row is None:
                raise LSQLRuntimeError(f"no row of {e.table} in scope")
            if e.column not in row:
                raise LSQLRuntimeError(f"unknown column {e.table}.{e.column}")
            return row[e.column]
        if isinstance(e, (A.Equals, A.Less)):
            a, b = self.expr(e.left, env, ctx, where), self.expr(e.right, env, ctx, where)
            return TaggedValue(int(_compare(type(e), a.payload, b.payload)), _join(a.label, b.label))
        if isinstance(e, A.Add):
            a, b = self.expr(e.left, env, ctx, where), self.expr(e.right, env, ctx, where)
            if not all(isinstance(x, int) for x in (a.payload, b.payload)):
                raise LSQLRuntimeError("+ needs two cleartext integers")
            s = a.payload + b.payload
            if not INT64[0] <= s <= INT64[1]:
                raise LSQLRuntimeError("integer overflow")
            return TaggedValue(s, _join(a.label, b.label))
        if isinstance(e, A.HomAdd):
            a, b = self.expr(e.left, env, ctx, where), self.expr(e.right, env, ctx, where)
            if not (isinstance(a.payload, Ciphertext) and isinstance(b.payload, Ciphertext)):
                raise LSQLRuntimeError("__HOMADD needs two ciphertexts")
            key = self.client.keys.get(a.payload.key_id, "ah")
            return TaggedValue(ah_add(key, a.payload, b.payload), _join(a.label, b.label, repr_="sem"))
        if isinstance(e, A.Apply):
            args = [self.expr(x, env, ctx, where) for x in e.args]
            return TaggedValue(_builtin(e.func, [a.payload for a in args]), _join(*[a.label for a in args]))
        if isinstance(e, A.Coercion):
            if where == "server":
                raise LSQLRuntimeError("crypto call reached the server")
            return self.coerce(self.expr(e.expr, env, ctx, where), e.steps)
        if isinstance(e, A.Identity):
            if where == "server":
                raise LSQLRuntimeError("identity routine reached the server")
            return self.expr(e.expr, env, ctx, where)
        raise LSQLRuntimeError(f"cannot evaluate {type(e).__name__} as a scalar")

    def truth(self, v: TaggedValue) -> bool:
        if not isinstance(v.payload, int):
            raise LSQLRuntimeError("condition is not an integer")
        return v.payload != 0

    def rows(self, e, env: dict, tables: dict, where: str) -> list:
        """Evaluate a relational expression to a list of tuples."""
        if isinstance(e, A.Select):
            return self._project(e.source, env, tables, where, e.pred)
        if isinstance(e, A.Project):
            return self._project(e, env, tables, where, None)
        if isinstance(e, A.Union_):
            return self.rows(e.left, env, tables, where) + self.rows(e.right, env, tables, where)
        if isinstance(e, A.Diff):
            right = {_key(r) for r in self.rows(e.right, env, tables, where)}
            return [r for r in self.rows(e.left, env, tables, where) if _key(r) not in right]
        raise LSQLRuntimeError(f"not a relational expression: {type(e).__name__}")

    def _project(self, p: A.Project, env, tables, where, pred) -> list:
        for t in p.tables:
            if t not in tables:
                raise LSQLRuntimeError(f"unknown table {t}")
        if isinstance(p.source, A.Product):
            l, r = p.source.left, p.source.right
            ctxs = [{l: a, r: b} for a in tables[l].rows for b in tables[r].rows]
        else:
            ctxs = [{p.source: a} for a in tables[p.source].rows]
        out = []
        for ctx in ctxs:
            if pred is not None and not self.truth(self.expr(pred, env, ctx, where)):
                continue
            out.append(tuple(self.expr(i, env, ctx, where) for i in p.items))
        return out

    # -------------------------------------------------- table statements

    def table_stmt(self, s, env: dict, tables: dict, where: str, pc: int, frame: Frame,
                   observe: Optional[str]) -> None:
        """Execute a table statement against ``tables`` atomically."""
        if isinstance(s, A.SelectStmt):
            frame.results.append((self.rows(s.source, env, tables, where), s.result_steps))
            return
        table = tables.get(s.table)
        if table is None:
            raise LSQLRuntimeError(f"unknown table {s.table}")
        stored = []

        def store(v: TaggedValue, col: str) -> TaggedValue:
            v = TaggedValue(v.payload, _raise(v.label, pc))
            stored.append((v, f"{s.table}.{col}"))
            return v

        if isinstance(s, A.Insert):
            for c in s.columns:
                if c not in table.columns:
                    raise LSQLRuntimeError(f"unknown column {s.table}.{c}")
            if isinstance(s.source, A.NamedRecord):
                new = [tuple(self.expr(x, env, {}, where) for _, x in s.source.items)]
            else:
                new = self.rows(s.source, env, tables, where)
            rows = []
            for r in new:
                if len(r) != len(s.columns):
                    raise LSQLRuntimeError("insert arity mismatch")
                row = {c: TaggedValue(None) for c in table.columns}
                row.update({c: store(v, c) for c, v in zip(s.columns, r)})
                rows.append(row)
            table.rows.extend(rows)
        elif isinstance(s, A.Update):
            for c, _ in s.sets:
                if c not in table.columns:
                    raise LSQLRuntimeError(f"unknown column {s.table}.{c}")
            new_rows = []
            for row in table.rows:
                ctx = {s.table: row}
                if s.where is None or self.truth(self.expr(s.where, env, ctx, where)):
                    vals = {c: self.expr(x, env, ctx, where) for c, x in s.sets}
                    row = dict(row)
                    row.update({c: store(v, c) for c, v in vals.items()})
                new_rows.append(row)
            table.rows = new_rows
        elif isinstance(s, A.Delete):
            table.rows = [r for r in table.rows
                          if not (s.where is None or self.truth(self.expr(s.where, env, {s.table: r}, where)))]
        else:
            raise LSQLRuntimeError(f"not a table statement: {type(s).__name__}")
        if observe:
            for v, what in stored:
                self.server.trace.observe(observe, v, what)

    # -------------------------------------------------- statements

    def stmt(self, s, frame: Frame, where: str, pc: int) -> None:
        if self.fault is not None:
            self.fault(where, s)
        env = frame.env
        if isinstance(s, A.Seq):
            for x in s.stmts:
                self.stmt(x, frame, where, pc)
        elif isinstance(s, A.Assign):
            v = self.expr(s.value, env, self.scalar_ctx(s.value, where), where)
            v = TaggedValue(v.payload, _raise(v.label, pc))
            if where == "server":
                self.server.trace.observe("closure", v, s.target.name)
            env[s.target.name] = v
        elif isinstance(s, A.If):
            c = self.expr(s.cond, env, self.scalar_ctx(s.cond, where), where)
            inner = max(pc, c.label.taint)
            self.stmt(s.then if self.truth(c) else s.orelse, frame, where, inner)
        elif isinstance(s, A.Transaction):
            self.transaction(s, frame, where, pc)
        elif isinstance(s, A.RemoteBlock):
            if where != "client":
                raise LSQLRuntimeError("remote block outside the client")
            if self.fault is not None:
                self.fault("remote", s.body)
            self.remote(s.body, frame, pc)
        elif isinstance(s, A.Call):
            self.call_stmt(s, frame, where, pc)
        elif isinstance(s, (A.SelectStmt, A.Insert, A.Update, A.Delete)):
            if where == "client":
                raise LSQLRuntimeError("table statement outside a remote block")
            self.table_stmt(s, env, self.server.tables, where, pc, frame,
                            "query" if where == "server" else None)
        else:
            raise LSQLRuntimeError(f"unexpected statement {type(s).__name__}")

    def scalar_ctx(self, e, where: str) -> dict:
        """Rows in scope for column references outside a query: the first row
        of each referenced table, fetched from the server on the client."""
        refs = [n for n in A.walk(e) if isinstance(n, A.ColumnRef)]
        if not refs:
            return {}
        ctx = {}
        for t in dict.fromkeys(r.table for r in refs):
            table = self.server.tables.get(t)
            if table is None:
                raise LSQLRuntimeError(f"unknown table {t}")
            if not table.rows:
                raise LSQLRuntimeError(f"scalar read of empty table {t}")
            ctx[t] = table.rows[0]
        if where == "client":
            self.client.send("fetch", 0)
            self.client.receive("rows", sum(ctx[r.table][r.column].size() for r in refs
                                            if r.column in ctx[r.table]))
        return ctx

    def transaction(self, s: A.Transaction, frame: Frame, where: str, pc: int) -> None:
        snap = self.server.snapshot()
        env = dict(frame.env)
        if s.distributed:
            self.client.metrics.distributed_tx += 1
        try:
            self.stmt(s.body, frame, where, pc)
        except (LSQLRuntimeError, CryptoError):
            self.server.restore(snap)
            frame.env.clear()
            frame.env.update(env)
            raise

    def call_stmt(self, s: A.Call, frame: Frame, where: str, pc: int) -> None:
        args = [self.expr(a, frame.env, {}, where) for a in s.args]
        if s.server is not None:
            if where != "client":
                raise LSQLRuntimeError("closure call outside the client")
            outs, results = self.run_closure(s.proc, args, pc)
            frame.results.extend((rows, None) for rows in results)
            for name, v in zip(s.into, outs):
                frame.env[name] = v
            return
        results = self.call(s.proc, args, pc)
        if s.into:
            if not results or not results[0]:
                raise LSQLRuntimeError(f"CALL {s.proc} INTO: no result row")
            row = results[0][0]
            if len(row) < len(s.into):
                raise LSQLRuntimeError(f"CALL {s.proc} INTO: too few result columns")
            for name, v in zip(s.into, row):
                frame.env[name] = TaggedValue(v.payload, _raise(v.label, pc))

    # -------------------------------------------------- server interaction

    def run_closure(self, name: str, args: list, pc: int):
        c: Closure = self.server.closures.get(name)
        if c is None:
            raise LSQLRuntimeError(f"closure {name} is not deployed")
        self.client.send(f"call {name}", sum(a.size() for a in args))
        for n, a in zip(c.inputs, args):
            self.server.trace.observe("param", a, n)
        frame = Frame(name, dict(zip(c.inputs, args)))
        snap = self.server.snapshot() if c.txlocal else None
        try:
            self.stmt(c.body, frame, "server", pc)
        except (LSQLRuntimeError, CryptoError):
            if snap is not None:
                self.server.restore(snap)
            raise
        outs = []
        for o in c.outputs:
            if o not in frame.env:
                raise LSQLRuntimeError(f"closure {name} left {o} unassigned")
            outs.append(frame.env[o])
        results = [self._decrypt_results(rows, steps) for rows, steps in frame.results]
        self.client.receive("return", sum(v.size() for v in outs)
                            + sum(v.size() for rows, _ in frame.results for r in rows for v in r))
        return outs, results

    def remote(self, s, frame: Frame, pc: int) -> None:
        """Planner: statements free of identity routines run on the server in
        one round trip; otherwise candidate rows travel to the client, which
        evaluates the statement and ships the written rows back."""
        has_identity = any(isinstance(n, A.Identity) for n in A.walk(s))
        if not has_identity:
            wire = sorted(A.vars_read(s))
            args = []
            for v in wire:
                if v not in frame.env:
                    raise LSQLRuntimeError(f"unassigned variable {v}")
                args.append(frame.env[v])
            self.client.send("query", sum(a.size() for a in args))
            for n, a in zip(wire, args):
                self.server.trace.observe("param", a, n)
            sub = Frame(frame.proc, dict(zip(wire, args)))
            self.table_stmt(s, sub.env, self.server.tables, "server", pc, sub, "query")
            for rows, steps in sub.results:
                self.client.receive("rows", sum(v.size() for r in rows for v in r))
                frame.results.append((self._decrypt_results(rows, steps), None))
            return
        names = sorted(A.tables_referenced(s))
        for t in names:
            if t not in self.server.tables:
                raise LSQLRuntimeError(f"unknown table {t}")
        self.client.send("fetch", 0)
        copy_ = {t: Table(self.server.tables[t].columns, [dict(r) for r in self.server.tables[t].rows])
                 for t in names}
        self.client.receive("rows", sum(v.size() for t in copy_.values() for r in t.rows for v in r.values()))
        sub = Frame(frame.proc, frame.env)
        self.table_stmt(s, frame.env, copy_, "client", pc, sub, None)
        for rows, steps in sub.results:
            frame.results.append((self._decrypt_results(rows, steps), None))
        if isinstance(s, A.SelectStmt):
            return
        target = copy_[s.table]
        before = {id(v) for r in self.server.tables[s.table].rows for v in r.values()}
        shipped = [(c, v) for r in target.rows for c, v in r.items() if id(v) not in before]
        self.client.send("write", sum(v.size() for r in target.rows for v in r.values()))
        for c, v in shipped:
            self.server.trace.observe("query", v, f"{s.table}.{c}")
        self.server.tables[s.table] = target


def _key(row: tuple) -> tuple:
    return tuple(v.payload for v in row)


def _compare(op, a, b) -> bool:
    if op is A.Equals and (a is None or b is None):
        # absent cells compare equal only to each other, in either representation
        return a is None and b is None
    ca, cb = isinstance(a, Ciphertext), isinstance(b, Ciphertext)
    if ca or cb:
        if not (ca and cb) or (a.scheme, a.key_id) != (b.scheme, b.key_id):
            raise LSQLRuntimeError("comparison mixes representations or keys")
        if op is A.Equals:
            if a.scheme not in ("det", "ope"):
                raise LSQLRuntimeError(f"{a.scheme} ciphertexts cannot be compared")
            return a.payload == b.payload
        return ope_less(a, b)
    if op is A.Equals:
        return a == b
    if type(a) is not type(b) or a is None:
        raise LSQLRuntimeError("< needs two integers or two strings")
    return a < b


def _builtin(name: str, args: list):
    if any(isinstance(a, Ciphertext) for a in args):
        raise LSQLRuntimeError(f"{name} applied to a ciphertext")
    if name == "CONCAT" and all(isinstance(a, str) for a in args):
        return args[0] + args[1]
    if name == "STRLEN" and isinstance(args[0], str):
        return len(args[0].encode())
    if name == "ABS" and isinstance(args[0], int):
        r = abs(args[0])
        if r > INT64[1]:
            raise LSQLRuntimeError("integer overflow")
        return r
    raise LSQLRuntimeError(f"bad arguments to {name}")


# ---------------------------------------------------------------- entry points


def run_workload(program, workload, server: ServerState, client: Optional[ClientState] = None,
                 fault: Optional[Callable[[str, object], None]] = None):
    """Run ``workload`` (a list of ``(proc, args)``) and return the history,
    metrics and adversary trace."""
    client = client or ClientState()
    h = Machine(program, server, client, fault).run(workload)
    return h, client.metrics, server.trace


def cleartext_config(fixture: dict) -> ServerState:
    return load_fixture(copy.deepcopy(fixture))
