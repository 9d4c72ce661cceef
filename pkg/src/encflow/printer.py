"""Pretty-printer: the inverse of :mod:`encflow.parser`.

Column references always render qualified, so output reparses without a
table context.  Compiler-output forms render with a ``__`` prefix.
"""
from __future__ import annotations

from . import ast as A

INDENT = "  "


def render_program(p: A.Program) -> str:
    return "\n\n".join(render_procedure(proc) for proc in p.procedures)


def render_procedure(proc: A.Procedure) -> str:
    head = f"PROC {proc.name}({', '.join(proc.params)}) BEGIN"
    body = render_stmts(proc.body, 1)
    return f"{head}\n{body}END" if body else f"{head}\nEND"


def render_stmts(seq: A.Seq, depth: int) -> str:
    if not seq.stmts:
        return ""
    pad = INDENT * depth
    lines = [pad + render_stmt(s, depth) for s in seq.stmts]
    return ";\n".join(lines) + "\n"


def render_stmt(s, depth: int = 0) -> str:
    pad = INDENT * depth
    if isinstance(s, A.Assign):
        return f"{s.target.name} := {render_expr(s.value)}"
    if isinstance(s, A.If):
        out = f"IF {render_expr(s.cond)} THEN\n{render_stmts(s.then, depth + 1)}"
        if s.orelse.stmts:
            out += f"{pad}ELSE\n{render_stmts(s.orelse, depth + 1)}"
        return out + f"{pad}END"
    if isinstance(s, A.SelectStmt):
        return _render_query(s.source, s.result_steps)
    if isinstance(s, A.Insert):
        head = f"INSERT INTO {s.table} ({', '.join(s.columns)}) "
        if isinstance(s.source, A.NamedRecord):
            return head + f"VALUES ({', '.join(render_expr(e) for _, e in s.source.items)})"
        return head + _render_query(s.source)
    if isinstance(s, A.Update):
        sets = ", ".join(f"{c} = {render_expr(e)}" for c, e in s.sets)
        out = f"UPDATE {s.table} SET {sets}"
        if s.where is not None:
            out += f" WHERE {render_expr(s.where)}"
        return out
    if isinstance(s, A.Delete):
        out = f"DELETE FROM {s.table}"
        if s.where is not None:
            out += f" WHERE {render_expr(s.where)}"
        return out
    if isinstance(s, A.Transaction):
        prefix = "__DISTRIBUTED " if s.distributed else ""
        return f"{prefix}TRANSACTION BEGIN\n{render_stmts(s.body, depth + 1)}{pad}END"
    if isinstance(s, A.RemoteBlock):
        return f"__REMOTE [{s.server}] {render_stmt(s.body, depth)}"
    if isinstance(s, A.Call):
        target = f"[{s.server}].{s.proc}" if s.server else s.proc
        out = f"CALL {target}({', '.join(render_expr(a) for a in s.args)})"
        if s.into:
            out += " INTO " + ", ".join(s.into)
        return out
    if isinstance(s, A.Seq):
        raise TypeError("nested Seq must be flattened before rendering")
    raise TypeError(f"not a statement: {s!r}")


def _render_query(e, result_steps=None) -> str:
    if isinstance(e, A.Union_):
        return f"{_render_query(e.left, result_steps)} UNION {_render_query(e.right)}"
    if isinstance(e, A.Diff):
        return f"{_render_query(e.left, result_steps)} EXCEPT {_render_query(e.right)}"
    where = None
    if isinstance(e, A.Select):
        where, e = e.pred, e.source
    if not isinstance(e, A.Project):
        raise TypeError(f"not a query: {e!r}")
    items = []
    for i, item in enumerate(e.items):
        text = render_expr(item)
        steps = result_steps[i] if result_steps else ()
        if len(steps) > 1:
            raise ValueError("result decryption is a single step")
        if steps:
            text = f"__RESULT_{steps[0]}({text})"
        items.append(text)
    src = e.source if isinstance(e.source, str) else f"{e.source.left}, {e.source.right}"
    out = f"SELECT {', '.join(items)} FROM {src}"
    if where is not None:
        out += f" WHERE {render_expr(where)}"
    return out


def _quote(v: str) -> str:
    return "'" + v.replace("'", "''") + "'"


def render_expr(e) -> str:
    if isinstance(e, A.Const):
        return _quote(e.value) if isinstance(e.value, str) else str(e.value)
    if isinstance(e, A.Var):
        return e.name
    if isinstance(e, A.ColumnRef):
        return f"{e.table}.{e.column}"
    if isinstance(e, (A.Equals, A.Less)):
        op = "=" if isinstance(e, A.Equals) else "<"
        return f"{_wrap(e.left, _CMP)} {op} {_wrap(e.right, _CMP)}"
    if isinstance(e, A.Add):
        return f"{_wrap(e.left, _CMP)} + {_wrap(e.right, _CMP + (A.Add,))}"
    if isinstance(e, A.Apply):
        return f"{e.func}({', '.join(render_expr(a) for a in e.args)})"
    if isinstance(e, A.Coercion):
        out = render_expr(e.expr)
        for step in e.steps:
            out = f"__COERCE_{step}({out})"
        return out
    if isinstance(e, A.HomAdd):
        return f"__HOMADD({render_expr(e.left)}, {render_expr(e.right)})"
    if isinstance(e, A.Identity):
        return f"__IDENTITY({render_expr(e.expr)})"
    if isinstance(e, A.RELATIONAL):
        return _render_query(e)
    raise TypeError(f"cannot render expression {e!r}")


_CMP = (A.Equals, A.Less)


def _wrap(e, tight) -> str:
    text = render_expr(e)
    return f"({text})" if isinstance(e, tight) else text
