from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

from . import ast as A


@dataclass
class CallGraph:
    nodes: list[str]
    edges: set[tuple[str, str]]
    # callees before callers; members of a cycle share one component
    sccs: list[list[str]] = field(default_factory=list)

    def is_recursive(self, scc: list[str]) -> bool:
        return len(scc) > 1 or (scc[0], scc[0]) in self.edges

    @property
    def order(self) -> list[str]:
        return [n for scc in self.sccs for n in scc]


def build_call_graph(p: A.Program) -> CallGraph:
    names = p.names
    known = set(names)
    g = nx.DiGraph()
    g.add_nodes_from(names)
    for proc in p.procedures:
        for node in A.walk(proc.body):
            if isinstance(node, A.Call) and node.server is None:
                if node.proc not in known:
                    raise ValueError(f"call to undefined procedure {node.proc}")
                g.add_edge(proc.name, node.proc)
    cond = nx.condensation(g)
    rank = {n: i for i, n in enumerate(names)}
    # reverse topological order of the condensation: callees first.  Ties
    # are broken by source order so the result is deterministic.
    topo = list(nx.lexicographical_topological_sort(
        cond, key=lambda c: min(rank[m] for m in cond.nodes[c]["members"])))
    sccs = [sorted(cond.nodes[c]["members"], key=rank.__getitem__) for c in reversed(topo)]
    return CallGraph(list(names), set(g.edges), sccs)
