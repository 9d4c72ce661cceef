"""Encryption policy and column statistics files."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .lattice import EncType, POLICY_TYPES, PT, scheme

DEFAULT_CARDINALITY = 1000


class PolicyError(ValueError):
    pass


def default_key(t: EncType) -> Optional[str]:
    s = scheme(t)
    return f"_{s}" if s else None


@dataclass(frozen=True)
class Policy:
    """Column -> (policy type, key id).  Unlisted columns are cleartext."""

    columns: dict = field(default_factory=dict)

    def type_of(self, table: str, column: str) -> EncType:
        return self.columns.get((table, column), (PT, None))[0]

    def key_of(self, table: str, column: str) -> Optional[str]:
        t, k = self.columns.get((table, column), (PT, None))
        return k or default_key(t)

    def with_column(self, table: str, column: str, t: EncType, key: Optional[str]) -> "Policy":
        cols = dict(self.columns)
        cols[(table, column)] = (t, key if t is not PT else None)
        return Policy(cols)

    def keys(self, scheme_name: str) -> list[str]:
        """Key ids already used by columns of the given scheme, sorted."""
        return sorted({self.key_of(t, c) for (t, c), (ty, _) in self.columns.items()
                       if scheme(ty) == scheme_name})

    @classmethod
    def parse(cls, text: str) -> "Policy":
        cols = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#")[0].split("--")[0].strip()
            if not line:
                continue
            try:
                lhs, rhs = line.split("=", 1)
                table, column = lhs.strip().split(".")
            except ValueError:
                raise PolicyError(f"policy line {lineno}: expected table.column=SCHEME[:key]") from None
            sch, _, key = rhs.strip().partition(":")
            try:
                t = EncType(sch.strip().upper())
            except ValueError:
                t = None
            if t not in POLICY_TYPES:
                raise PolicyError(f"policy line {lineno}: unknown scheme {sch.strip()!r}")
            if (table, column) in cols:
                raise PolicyError(f"policy line {lineno}: duplicate entry for {table}.{column}")
            cols[(table, column)] = (t, key.strip() or None if t is not PT else None)
        return cls(cols)

    def render(self) -> str:
        out = []
        for (t, c), (ty, k) in sorted(self.columns.items()):
            out.append(f"{t}.{c}={ty}" + (f":{k}" if k else ""))
        return "\n".join(out) + ("\n" if out else "")


@dataclass
class Stats:
    cardinality: dict = field(default_factory=dict)
    missing: set = field(default_factory=set)

    def get(self, table: str, column: str) -> int:
        if (table, column) in self.cardinality:
            return self.cardinality[(table, column)]
        self.missing.add((table, column))
        return DEFAULT_CARDINALITY

    @classmethod
    def parse(cls, text: str) -> "Stats":
        out = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            try:
                lhs, rhs = line.split("=", 1)
                table, column = lhs.strip().split(".")
                n = int(rhs)
            except ValueError:
                raise PolicyError(f"stats line {lineno}: expected table.column=<integer>") from None
            if n < 0:
                raise PolicyError(f"stats line {lineno}: negative cardinality")
            out[(table, column)] = n
        return cls(out)
