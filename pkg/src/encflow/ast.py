"""LSQL abstract syntax.

Nodes are frozen dataclasses.  Source positions are carried on every node but
excluded from equality, so two parses of equivalent text compare equal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

Pos = Optional[tuple[int, int]]


def _pos():
    return field(default=None, compare=False, repr=False, kw_only=True)


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Const:
    value: Union[int, str]
    pos: Pos = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class ColumnRef:
    table: str
    column: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class NamedRecord:
    items: tuple[tuple[str, "Expr"], ...]
    pos: Pos = _pos()


@dataclass(frozen=True)
class Equals:
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Less:
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Apply:
    func: str
    args: tuple["Expr", ...]
    pos: Pos = _pos()


@dataclass(frozen=True)
class Product:
    left: str
    right: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Project:
    """Projection of ``items`` (column references, possibly coerced) from a
    table or a product of two tables."""

    items: tuple["Expr", ...]
    source: Union[str, Product]
    pos: Pos = _pos()

    @property
    def tables(self) -> tuple[str, ...]:
        if isinstance(self.source, Product):
            return (self.source.left, self.source.right)
        return (self.source,)


@dataclass(frozen=True)
class Select:
    pred: "Expr"
    source: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Union_:
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Diff:
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


# compiler-output-only expressions


@dataclass(frozen=True)
class CoercionStep:
    kind: str  # enc_det, dec_rnd, ..., downgrade
    key: Optional[str] = None

    def __str__(self) -> str:
        return self.kind if self.key is None else f"{self.kind}_{self.key}"


@dataclass(frozen=True)
class Coercion:
    steps: tuple[CoercionStep, ...]
    expr: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class HomAdd:
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Identity:
    expr: "Expr"
    pos: Pos = _pos()


Expr = Union[
    Const, Var, ColumnRef, NamedRecord, Equals, Less, Add, Apply, Project,
    Select, Union_, Diff, Coercion, HomAdd, Identity,
]
RELATIONAL = (Project, Select, Union_, Diff)

# ----------------------------------------------------------------- statements


@dataclass(frozen=True)
class Assign:
    target: Var
    value: Expr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Seq:
    stmts: tuple["Stmt", ...]
    pos: Pos = _pos()


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Seq
    orelse: Seq
    pos: Pos = _pos()


@dataclass(frozen=True)
class SelectStmt:
    names: tuple[str, ...]
    source: Expr
    # per-column decryption applied on the client when results are returned
    result_steps: Optional[tuple[tuple[CoercionStep, ...], ...]] = None
    pos: Pos = _pos()


@dataclass(frozen=True)
class Insert:
    table: str
    columns: tuple[str, ...]
    source: Expr  # NamedRecord for VALUES, relational otherwise
    pos: Pos = _pos()


@dataclass(frozen=True)
class Update:
    table: str
    sets: tuple[tuple[str, Expr], ...]
    where: Optional[Expr] = None
    pos: Pos = _pos()


@dataclass(frozen=True)
class Delete:
    table: str
    where: Optional[Expr] = None
    pos: Pos = _pos()


@dataclass(frozen=True)
class Transaction:
    body: Seq
    distributed: bool = False
    pos: Pos = _pos()


@dataclass(frozen=True)
class RemoteBlock:
    server: str
    body: "Stmt"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Call:
    proc: str
    args: tuple[Expr, ...]
    into: tuple[str, ...] = ()
    server: Optional[str] = None  # set for remote closure calls
    pos: Pos = _pos()


Stmt = Union[Assign, Seq, If, SelectStmt, Insert, Update, Delete, Transaction, RemoteBlock, Call]


@dataclass(frozen=True)
class Procedure:
    name: str
    params: tuple[str, ...]
    body: Seq
    external: bool = True
    pos: Pos = _pos()


@dataclass(frozen=True)
class Program:
    procedures: tuple[Procedure, ...]

    def proc(self, name: str) -> Procedure:
        for p in self.procedures:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.procedures]


# ---------------------------------------------------------------- traversal


def children(node) -> list:
    """Direct sub-expressions / sub-statements of ``node``."""
    if isinstance(node, (Const, Var, ColumnRef)):
        return []
    if isinstance(node, NamedRecord):
        return [e for _, e in node.items]
    if isinstance(node, (Equals, Less, Add, HomAdd, Union_, Diff)):
        return [node.left, node.right]
    if isinstance(node, Apply):
        return list(node.args)
    if isinstance(node, Project):
        return list(node.items)
    if isinstance(node, Select):
        return [node.pred, node.source]
    if isinstance(node, (Coercion, Identity)):
        return [node.expr]
    if isinstance(node, Assign):
        return [node.target, node.value]
    if isinstance(node, Seq):
        return list(node.stmts)
    if isinstance(node, If):
        return [node.cond, node.then, node.orelse]
    if isinstance(node, SelectStmt):
        return [node.source]
    if isinstance(node, Insert):
        return [node.source]
    if isinstance(node, Update):
        out = [e for _, e in node.sets]
        if node.where is not None:
            out.append(node.where)
        return out
    if isinstance(node, Delete):
        return [node.where] if node.where is not None else []
    if isinstance(node, Transaction):
        return [node.body]
    if isinstance(node, RemoteBlock):
        return [node.body]
    if isinstance(node, Call):
        return list(node.args)
    raise TypeError(f"not an LSQL node: {node!r}")


def walk(node):
    yield node
    for c in children(node):
        yield from walk(c)


def is_expr(node) -> bool:
    return isinstance(node, (Const, Var, ColumnRef, NamedRecord, Equals, Less, Add, Apply,
                             Project, Select, Union_, Diff, Coercion, HomAdd, Identity))


def tables_referenced(node) -> set[str]:
    out = set()
    for n in walk(node):
        if isinstance(n, ColumnRef):
            out.add(n.table)
        elif isinstance(n, Project):
            out.update(n.tables)
        elif isinstance(n, (Insert, Update, Delete)):
            out.add(n.table)
    return out


def vars_read(node) -> set[str]:
    """Variables read anywhere inside ``node`` (assignment targets excluded)."""
    out: set[str] = set()
    _collect_reads(node, out)
    return out


def _collect_reads(node, out: set) -> None:
    if isinstance(node, Assign):
        _collect_reads(node.value, out)
        return
    if isinstance(node, Var):
        out.add(node.name)
        return
    for c in children(node):
        _collect_reads(c, out)


def is_compiler_form(node) -> bool:
    return isinstance(node, (Coercion, HomAdd, Identity, RemoteBlock)) or (
        isinstance(node, Call) and node.server is not None
    ) or (isinstance(node, SelectStmt) and node.result_steps is not None) or (
        isinstance(node, Transaction) and node.distributed
    )
