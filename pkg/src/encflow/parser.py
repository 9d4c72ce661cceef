"""Concrete LSQL grammar: tokenizer, recursive-descent parser, validation.

Source text is parsed with ``allow_compiled=False``; compiler artifacts
(client procedures, closure bodies) are read back with ``allow_compiled=True``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from . import ast as A

BUILTINS = {"CONCAT": 2, "STRLEN": 1, "ABS": 1}
COERCE_KINDS = (
    "enc_ope", "enc_det", "enc_ah", "enc_rnd",
    "dec_ope", "dec_det", "dec_ah", "dec_rnd",
    "downgrade",
)
KEYWORDS = {
    "PROC", "BEGIN", "END", "IF", "THEN", "ELSE", "SELECT", "FROM", "WHERE",
    "INSERT", "INTO", "VALUES", "UPDATE", "SET", "DELETE", "TRANSACTION",
    "CALL", "UNION", "EXCEPT",
}
_RESERVED_FUNCS = re.compile(r"^(ENCRYPT|DECRYPT)_", re.IGNORECASE)


class LSQLSyntaxError(ValueError):
    def __init__(self, msg: str, pos=None):
        self.msg = msg
        self.pos = pos
        where = f" at line {pos[0]}, column {pos[1]}" if pos else ""
        super().__init__(f"{msg}{where}")


@dataclass
class Token:
    kind: str  # ident, var, int, str, op, eof
    text: str
    pos: tuple[int, int]


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|--[^\n]*)
  | (?P<var>@[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>-?[0-9]+)
  | (?P<str>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|[(),;=<+.\[\]])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    toks = []
    i = 0
    line, line_start = 1, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise LSQLSyntaxError(f"unexpected character {text[i]!r}", (line, i - line_start + 1))
        kind = m.lastgroup
        chunk = m.group()
        pos = (line, i - line_start + 1)
        if kind != "ws":
            toks.append(Token(kind, chunk, pos))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = i + chunk.rindex("\n") + 1
        i = m.end()
    toks.append(Token("eof", "", (line, i - line_start + 1)))
    return toks


class Parser:
    def __init__(self, text: str, allow_compiled: bool = False):
        self.toks = tokenize(text)
        self.i = 0
        self.allow_compiled = allow_compiled

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at_kw(self, *kws: str) -> bool:
        t = self.tok
        return t.kind == "ident" and t.text.upper() in kws

    def at_op(self, op: str) -> bool:
        return self.tok.kind == "op" and self.tok.text == op

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect_kw(self, kw: str) -> Token:
        if not self.at_kw(kw):
            self.error(f"expected {kw}")
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.at_op(op):
            self.error(f"expected {op!r}")
        return self.advance()

    def expect_ident(self) -> Token:
        t = self.tok
        if t.kind != "ident" or t.text.upper() in KEYWORDS:
            self.error("expected identifier")
        if t.text.startswith("__") and not self.allow_compiled:
            raise LSQLSyntaxError("reserved form in source", t.pos)
        return self.advance()

    def error(self, msg: str):
        t = self.tok
        shown = t.text if t.kind != "eof" else "end of input"
        raise LSQLSyntaxError(f"{msg}, found {shown!r}", t.pos)

    def reserved(self, t: Token):
        if not self.allow_compiled:
            raise LSQLSyntaxError("reserved form in source", t.pos)

    # -- program
    def program(self) -> A.Program:
        procs = []
        while self.tok.kind != "eof":
            procs.append(self.procedure())
        return A.Program(tuple(procs))

    def procedure(self) -> A.Procedure:
        start = self.expect_kw("PROC")
        name = self.expect_ident().text
        self.expect_op("(")
        params = []
        if not self.at_op(")"):
            params.append(self.param())
            while self.at_op(","):
                self.advance()
                params.append(self.param())
        self.expect_op(")")
        self.expect_kw("BEGIN")
        body = self.stmts(("END",))
        # `... IF c THEN s END` at end of input: the IF's END also closes
        # the procedure (the short fixture form).
        if not (self.tok.kind == "eof" and body.stmts and isinstance(body.stmts[-1], A.If)):
            self.expect_kw("END")
        return A.Procedure(name, tuple(params), body, pos=start.pos)

    def param(self) -> str:
        t = self.tok
        if t.kind != "var":
            self.error("expected parameter")
        self.advance()
        return t.text

    def stmts(self, terminators: tuple[str, ...]) -> A.Seq:
        pos = self.tok.pos
        out = []
        while not self.at_kw(*terminators) and self.tok.kind != "eof":
            out.append(self.stmt())
            if self.at_op(";"):
                self.advance()
            elif not self.at_kw(*terminators) and self.tok.kind != "eof":
                self.error("expected ';'")
        return A.Seq(tuple(out), pos=pos)

    def stmt(self):
        t = self.tok
        if t.kind == "ident" and t.text == "__REMOTE":
            self.reserved(t)
            self.advance()
            self.expect_op("[")
            server = self.expect_ident().text
            self.expect_op("]")
            return A.RemoteBlock(server, self.stmt(), pos=t.pos)
        if t.kind == "ident" and t.text == "__DISTRIBUTED":
            self.reserved(t)
            self.advance()
            return self.transaction(t.pos, distributed=True)
        if self.at_kw("IF"):
            self.advance()
            cond = self.expr(())
            self.expect_kw("THEN")
            then = self.stmts(("ELSE", "END"))
            if self.at_kw("ELSE"):
                self.advance()
                orelse = self.stmts(("END",))
            else:
                orelse = A.Seq((), pos=self.tok.pos)
            self.expect_kw("END")
            return A.If(cond, then, orelse, pos=t.pos)
        if self.at_kw("SELECT"):
            return self.select_stmt()
        if self.at_kw("INSERT"):
            return self.insert()
        if self.at_kw("UPDATE"):
            return self.update()
        if self.at_kw("DELETE"):
            self.advance()
            self.expect_kw("FROM")
            table = self.expect_ident().text
            where = None
            if self.at_kw("WHERE"):
                self.advance()
                where = self.expr((table,))
            return A.Delete(table, where, pos=t.pos)
        if self.at_kw("TRANSACTION"):
            return self.transaction(t.pos, distributed=False)
        if self.at_kw("CALL"):
            return self.call()
        if t.kind in ("var", "ident") and self.peek().kind == "op" and self.peek().text == ":=":
            if t.kind == "ident":
                self.expect_ident()
            else:
                self.advance()
            name = t.text if t.text.startswith("@") else "@" + t.text
            self.advance()
            value = self.expr(())
            return A.Assign(A.Var(name, pos=t.pos), value, pos=t.pos)
        self.error("expected statement")

    def transaction(self, pos, distributed: bool) -> A.Transaction:
        self.expect_kw("TRANSACTION")
        self.expect_kw("BEGIN")
        body = self.stmts(("END",))
        self.expect_kw("END")
        return A.Transaction(body, distributed, pos=pos)

    def call(self) -> A.Call:
        t = self.expect_kw("CALL")
        server = None
        if self.at_op("["):
            self.reserved(self.tok)
            self.advance()
            server = self.expect_ident().text
            self.expect_op("]")
            self.expect_op(".")
        name = self.expect_ident().text
        self.expect_op("(")
        args = self.exprs(())
        self.expect_op(")")
        into: list[str] = []
        if self.at_kw("INTO"):
            self.advance()
            into.append(self.var_name())
            while self.at_op(","):
                self.advance()
                into.append(self.var_name())
        return A.Call(name, tuple(args), tuple(into), server, pos=t.pos)

    def var_name(self) -> str:
        t = self.tok
        if t.kind == "var":
            self.advance()
            return t.text
        return "@" + self.expect_ident().text

    def update(self) -> A.Update:
        t = self.expect_kw("UPDATE")
        table = self.expect_ident().text
        self.expect_kw("SET")
        sets = [self.set_pair(table)]
        while self.at_op(","):
            self.advance()
            sets.append(self.set_pair(table))
        where = None
        if self.at_kw("WHERE"):
            self.advance()
            where = self.expr((table,))
        return A.Update(table, tuple(sets), where, pos=t.pos)

    def set_pair(self, table: str):
        col = self.expect_ident().text
        self.expect_op("=")
        return (col, self.expr((table,)))

    def insert(self) -> A.Insert:
        t = self.expect_kw("INSERT")
        self.expect_kw("INTO")
        table = self.expect_ident().text
        self.expect_op("(")
        cols = [self.expect_ident().text]
        while self.at_op(","):
            self.advance()
            cols.append(self.expect_ident().text)
        self.expect_op(")")
        if self.at_kw("VALUES"):
            vt = self.advance()
            self.expect_op("(")
            vals = self.exprs(())
            self.expect_op(")")
            if len(vals) != len(cols):
                raise LSQLSyntaxError("INSERT column/value count mismatch", vt.pos)
            source = A.NamedRecord(tuple(zip(cols, vals)), pos=vt.pos)
        else:
            _, source = self.select_expr()
        return A.Insert(table, tuple(cols), source, pos=t.pos)

    def select_stmt(self) -> A.SelectStmt:
        pos = self.tok.pos
        names, source, steps = self.select_expr(with_result=True)
        return A.SelectStmt(names, source, steps, pos=pos)

    def select_expr(self, with_result: bool = False):
        names, src, steps = self.simple_select(with_result)
        while self.at_kw("UNION", "EXCEPT"):
            op = self.advance()
            other_names, other, _ = self.simple_select(False)
            if len(other_names) != len(names):
                raise LSQLSyntaxError("set operation arity mismatch", op.pos)
            node = A.Union_ if op.text.upper() == "UNION" else A.Diff
            src = node(src, other, pos=op.pos)
        if with_result:
            return names, src, steps
        return names, src

    def simple_select(self, with_result: bool):
        t = self.expect_kw("SELECT")
        raw_items = [self.select_item()]
        while self.at_op(","):
            self.advance()
            raw_items.append(self.select_item())
        self.expect_kw("FROM")
        first = self.expect_ident().text
        source: object = first
        tables: tuple[str, ...] = (first,)
        if self.at_op(","):
            self.advance()
            second = self.expect_ident().text
            source = A.Product(first, second, pos=t.pos)
            tables = (first, second)
        items, names, steps = [], [], []
        for result_steps, item_toks in raw_items:
            item = self._resolve_item(item_toks, tables)
            items.append(item)
            names.append(_item_name(item, len(tables) > 1))
            steps.append(result_steps)
        proj = A.Project(tuple(items), source, pos=t.pos)
        node: A.Expr = proj
        if self.at_kw("WHERE"):
            w = self.advance()
            node = A.Select(self.expr(tables), proj, pos=w.pos)
        result = None
        if any(s is not None for s in steps):
            if not with_result:
                raise LSQLSyntaxError("result decryption outside a SELECT statement", t.pos)
            result = tuple(s or () for s in steps)
        return tuple(names), node, result

    def select_item(self):
        # items are parsed lazily: the FROM clause (and thus the column
        # context) comes after the item list.
        result_steps = None
        t = self.tok
        if t.kind == "ident" and t.text.startswith("__RESULT"):
            self.reserved(t)
            self.advance()
            result_steps = _parse_steps(t.text[len("__RESULT"):], t.pos)
            self.expect_op("(")
            start = self.i
            self._skip_balanced()
            end = self.i
            self.expect_op(")")
            return result_steps, (start, end)
        start = self.i
        depth = 0
        while True:
            tk = self.tok
            if tk.kind == "eof":
                break
            if tk.kind == "op" and tk.text == "(":
                depth += 1
            elif tk.kind == "op" and tk.text == ")":
                depth -= 1
            elif depth == 0 and (tk.kind == "op" and tk.text == "," or self.at_kw("FROM")):
                break
            self.advance()
        return result_steps, (start, self.i)

    def _skip_balanced(self):
        depth = 0
        while True:
            tk = self.tok
            if tk.kind == "eof":
                self.error("unbalanced parentheses")
            if tk.kind == "op" and tk.text == "(":
                depth += 1
            elif tk.kind == "op" and tk.text == ")":
                if depth == 0:
                    return
                depth -= 1
            self.advance()

    def _resolve_item(self, span, tables):
        start, end = span
        saved = self.i
        self.i = start
        item = self.expr(tables)
        if self.i != end:
            self.error("unexpected token in select list")
        self.i = saved
        base = item
        while isinstance(base, (A.Coercion, A.Identity)):
            base = base.expr
        if not isinstance(base, A.ColumnRef):
            raise LSQLSyntaxError("select list items must be column references", self.toks[start].pos)
        return item

    # -- expressions
    def exprs(self, tables) -> list:
        if self.at_op(")"):
            return []
        out = [self.expr(tables)]
        while self.at_op(","):
            self.advance()
            out.append(self.expr(tables))
        return out

    def expr(self, tables):
        left = self.additive(tables)
        if self.at_op("=") or self.at_op("<"):
            op = self.advance()
            right = self.additive(tables)
            node = A.Equals if op.text == "=" else A.Less
            return node(left, right, pos=op.pos)
        return left

    def additive(self, tables):
        left = self.primary(tables)
        while self.at_op("+"):
            op = self.advance()
            right = self.primary(tables)
            left = A.Add(left, right, pos=op.pos)
        return left

    def primary(self, tables):
        t = self.tok
        if t.kind == "int":
            self.advance()
            v = int(t.text)
            if not -(2**63) <= v < 2**63:
                raise LSQLSyntaxError("integer literal out of int64 range", t.pos)
            return A.Const(v, pos=t.pos)
        if t.kind == "str":
            self.advance()
            return A.Const(t.text[1:-1].replace("''", "'"), pos=t.pos)
        if t.kind == "var":
            self.advance()
            return A.Var(t.text, pos=t.pos)
        if self.at_op("("):
            self.advance()
            e = self.expr(tables)
            self.expect_op(")")
            return e
        if t.kind == "ident" and t.text.upper() not in KEYWORDS:
            if t.text.startswith("__"):
                return self.compiled_form(tables)
            if _RESERVED_FUNCS.match(t.text):
                raise LSQLSyntaxError("reserved form in source", t.pos)
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                self.advance()
                self.advance()
                args = self.exprs(tables)
                self.expect_op(")")
                fname = t.text.upper()
                if fname not in BUILTINS:
                    raise LSQLSyntaxError(f"unknown function {t.text}", t.pos)
                if BUILTINS[fname] != len(args):
                    raise LSQLSyntaxError(f"{fname} expects {BUILTINS[fname]} arguments", t.pos)
                return A.Apply(fname, tuple(args), pos=t.pos)
            if nxt.kind == "op" and nxt.text == ".":
                self.advance()
                self.advance()
                col = self.expect_ident().text
                return A.ColumnRef(t.text, col, pos=t.pos)
            self.advance()
            if len(tables) == 1:
                return A.ColumnRef(tables[0], t.text, pos=t.pos)
            if not tables:
                raise LSQLSyntaxError(f"bare column {t.text!r} outside a table context", t.pos)
            raise LSQLSyntaxError(f"ambiguous column {t.text!r}; qualify it", t.pos)
        self.error("expected expression")

    def compiled_form(self, tables):
        t = self.tok
        self.reserved(t)
        self.advance()
        self.expect_op("(")
        name = t.text
        if name.startswith("__COERCE_"):
            steps = _parse_steps(name[len("__COERCE"):], t.pos)
            inner = self.expr(tables)
            self.expect_op(")")
            # directly nested coercions denote one multi-step coercion
            if isinstance(inner, A.Coercion):
                return A.Coercion(inner.steps + steps, inner.expr, pos=t.pos)
            return A.Coercion(steps, inner, pos=t.pos)
        if name == "__HOMADD":
            a = self.expr(tables)
            self.expect_op(",")
            b = self.expr(tables)
            self.expect_op(")")
            return A.HomAdd(a, b, pos=t.pos)
        if name == "__IDENTITY":
            inner = self.expr(tables)
            self.expect_op(")")
            return A.Identity(inner, pos=t.pos)
        raise LSQLSyntaxError(f"unknown compiler form {name}", t.pos)


def _parse_steps(suffix: str, pos) -> tuple:
    """``_enc_det_k1`` -> (CoercionStep('enc_det', 'k1'),)"""
    body = suffix[1:] if suffix.startswith("_") else suffix
    for kind in COERCE_KINDS:
        if body == kind:
            return (A.CoercionStep(kind, None),)
        if body.startswith(kind + "_"):
            return (A.CoercionStep(kind, body[len(kind) + 1:]),)
    raise LSQLSyntaxError(f"malformed coercion name {suffix!r}", pos)


def _item_name(item, qualified: bool) -> str:
    while isinstance(item, (A.Coercion, A.Identity)):
        item = item.expr
    return f"{item.table}.{item.column}" if qualified else item.column


# ------------------------------------------------------------------ validation


class ProgramError(ValueError):
    pass


def validate_program(p: A.Program, allow_compiled: bool = False, extra_procs=()) -> None:
    seen = set()
    for proc in p.procedures:
        if proc.name in seen:
            raise ProgramError(f"duplicate procedure {proc.name}")
        seen.add(proc.name)
    known = seen | set(extra_procs)
    for proc in p.procedures:
        if len(set(proc.params)) != len(proc.params):
            raise ProgramError(f"duplicate parameter in {proc.name}")
        for node in A.walk(proc.body):
            if isinstance(node, A.Call) and node.server is None and node.proc not in known:
                raise ProgramError(f"call to undefined procedure {node.proc}")
            if not allow_compiled and A.is_compiler_form(node):
                raise ProgramError("reserved form in source")
        _check_no_nested_tx(proc.body, False)
        _definitely_assigned(proc.body, set(proc.params), proc.name)


def _check_no_nested_tx(node, inside: bool) -> None:
    if isinstance(node, A.Transaction):
        if inside:
            raise ProgramError("transaction blocks may not nest")
        inside = True
    for c in A.children(node):
        if not A.is_expr(c):
            _check_no_nested_tx(c, inside)


def _definitely_assigned(stmt, assigned: set, pname: str) -> set:
    def need(expr):
        missing = A.vars_read(expr) - assigned
        if missing:
            raise ProgramError(f"{pname}: variable {sorted(missing)[0]} read before assignment")

    if isinstance(stmt, A.Seq):
        for s in stmt.stmts:
            assigned = _definitely_assigned(s, assigned, pname)
        return assigned
    if isinstance(stmt, A.Assign):
        need(stmt.value)
        return assigned | {stmt.target.name}
    if isinstance(stmt, A.If):
        need(stmt.cond)
        a = _definitely_assigned(stmt.then, set(assigned), pname)
        b = _definitely_assigned(stmt.orelse, set(assigned), pname)
        return a & b
    if isinstance(stmt, (A.Transaction, A.RemoteBlock)):
        return _definitely_assigned(stmt.body, assigned, pname)
    if isinstance(stmt, A.Call):
        for e in stmt.args:
            need(e)
        return assigned | set(stmt.into)
    for e in A.children(stmt):
        need(e)
    return assigned


def parse_program(text: str, allow_compiled: bool = False) -> A.Program:
    """Parse LSQL source text into a validated :class:`Program`."""
    prog = Parser(text, allow_compiled).program()
    validate_program(prog, allow_compiled)
    return prog


def parse_procedures(text: str) -> A.Program:
    """Parse compiler output without cross-procedure validation."""
    return Parser(text, allow_compiled=True).program()


def parse_stmts(text: str, allow_compiled: bool = True) -> A.Seq:
    p = Parser(text, allow_compiled)
    body = p.stmts(())
    if p.tok.kind != "eof":
        p.error("expected end of input")
    return body


def parse_expr(text: str, tables: tuple[str, ...] = (), allow_compiled: bool = False):
    p = Parser(text, allow_compiled)
    e = p.expr(tables)
    if p.tok.kind != "eof":
        p.error("expected end of input")
    return e


def parse_workload(text: str) -> list[tuple[str, tuple]]:
    """Workload file: one ``CALL proc(arg, ...)`` per line, literal args."""
    calls = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("--")[0].strip()
        if not line:
            continue
        p = Parser(line)
        c = p.call()
        if p.tok.kind != "eof":
            p.error("trailing input after CALL")
        vals = []
        for a in c.args:
            if not isinstance(a, A.Const):
                raise LSQLSyntaxError("workload arguments must be literals", (lineno, 1))
            vals.append(a.value)
        calls.append((c.proc, tuple(vals)))
    return calls
