"""Augmented DAG: a (partially) directed graph over feature supernodes and the label.

A node is either a supernode (a non-empty tuple of feature column indices) or
the label node ``Y``.  ``changing[i]`` marks that a domain-specific parameter
points into node ``i``; ``theta_groups`` partitions the changing nodes into
groups that share one such parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

from augda.errors import CycleError, GraphError

LABEL = "Y"


@dataclass(frozen=True)
class Node:
    name: str
    features: tuple = ()

    @property
    def is_label(self):
        return not self.features

    @property
    def width(self):
        return len(self.features)


def _pair(a, b):
    return (a, b) if a < b else (b, a)


@dataclass
class AugmentedDag:
    nodes: list
    directed: set = field(default_factory=set)
    undirected: set = field(default_factory=set)
    changing: list = None
    theta_groups: list = None
    feature_names: list = None
    n_classes: int = 2

    def __post_init__(self):
        self.nodes = [n if isinstance(n, Node) else Node(n[0], tuple(n[1])) for n in self.nodes]
        self.directed = {tuple(e) for e in self.directed}
        self.undirected = {_pair(*e) for e in self.undirected}
        if self.changing is None:
            self.changing = [False] * len(self.nodes)
        self.changing = [bool(c) for c in self.changing]
        if self.theta_groups is None:
            self.theta_groups = [[i] for i, c in enumerate(self.changing) if c]
        self.theta_groups = [sorted(g) for g in self.theta_groups]
        self.validate()

    # ------------------------------------------------------------------ checks
    def validate(self):
        n = len(self.nodes)
        labels = [i for i, nd in enumerate(self.nodes) if nd.is_label]
        if len(labels) > 1:
            raise GraphError("the label node may appear only once")
        seen = set()
        for nd in self.nodes:
            if nd.is_label:
                continue
            if seen & set(nd.features):
                raise GraphError(f"supernode {nd.name} overlaps another supernode")
            seen |= set(nd.features)
        if len(self.changing) != n:
            raise GraphError("changing flags do not match node count")
        for a, b in self.directed | self.undirected:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise GraphError(f"bad edge ({a}, {b})")
        for a, b in self.directed:
            if _pair(a, b) in self.undirected or (b, a) in self.directed:
                raise GraphError(f"edge ({a}, {b}) appears more than once")
        grouped = sorted(i for g in self.theta_groups for i in g)
        if grouped != sorted(i for i, c in enumerate(self.changing) if c):
            raise GraphError("theta groups must partition the changing nodes")
        if not self.is_acyclic():
            raise CycleError("directed part of the graph has a cycle")

    # --------------------------------------------------------------- structure
    @property
    def label_index(self):
        for i, nd in enumerate(self.nodes):
            if nd.is_label:
                return i
        raise GraphError("graph has no label node")

    def index(self, name):
        for i, nd in enumerate(self.nodes):
            if nd.name == name:
                return i
        raise KeyError(name)

    def parents(self, i):
        return sorted(a for a, b in self.directed if b == i)

    def children(self, i):
        return sorted(b for a, b in self.directed if a == i)

    def undirected_neighbors(self, i):
        return sorted({b for a, b in self.undirected if a == i} | {a for a, b in self.undirected if b == i})

    def adjacent(self, i, j):
        return (i, j) in self.directed or (j, i) in self.directed or _pair(i, j) in self.undirected

    def neighbors(self, i):
        return sorted(set(self.parents(i)) | set(self.children(i)) | set(self.undirected_neighbors(i)))

    def skeleton(self):
        return {_pair(a, b) for a, b in self.directed} | set(self.undirected)

    def v_structures(self):
        """Triples (a, c, b), a < b, with a -> c <- b and a, b non-adjacent."""
        out = set()
        for c in range(len(self.nodes)):
            for a, b in combinations(self.parents(c), 2):
                if not self.adjacent(a, b):
                    out.add((a, c, b))
        return out

    def is_acyclic(self):
        try:
            self.topological_order()
        except CycleError:
            return False
        return True

    def topological_order(self):
        indeg = {i: 0 for i in range(len(self.nodes))}
        for _, b in self.directed:
            indeg[b] += 1
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for c in self.children(i):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    ready.sort()
        if len(order) != len(self.nodes):
            raise CycleError("graph contains a directed cycle")
        return order

    def theta_group_of(self, i):
        for k, g in enumerate(self.theta_groups):
            if i in g:
                return k
        return None

    def copy(self):
        return AugmentedDag(list(self.nodes), set(self.directed), set(self.undirected),
                            list(self.changing), [list(g) for g in self.theta_groups],
                            list(self.feature_names) if self.feature_names else None,
                            self.n_classes)

    def subgraph(self, keep):
        """Induced subgraph on node indices ``keep`` (order preserved)."""
        keep = sorted(keep)
        remap = {old: new for new, old in enumerate(keep)}
        groups = []
        for g in self.theta_groups:
            g2 = [remap[i] for i in g if i in remap]
            if g2:
                groups.append(g2)
        return AugmentedDag(
            [self.nodes[i] for i in keep],
            {(remap[a], remap[b]) for a, b in self.directed if a in remap and b in remap},
            {(remap[a], remap[b]) for a, b in self.undirected if a in remap and b in remap},
            [self.changing[i] for i in keep], groups,
            list(self.feature_names) if self.feature_names else None, self.n_classes)

    # ---------------------------------------------------------- serialisation
    def to_dict(self):
        return {
            "nodes": [{"name": nd.name, "features": list(nd.features)} for nd in self.nodes],
            "directed_edges": sorted([list(e) for e in self.directed]),
            "undirected_edges": sorted([list(e) for e in self.undirected]),
            "changing": list(self.changing),
            "theta_groups": [list(g) for g in self.theta_groups],
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([Node(n["name"], tuple(n["features"])) for n in d["nodes"]],
                   {tuple(e) for e in d["directed_edges"]},
                   {tuple(e) for e in d.get("undirected_edges", [])},
                   d["changing"], d["theta_groups"], d.get("feature_names"),
                   d.get("n_classes", 2))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dot(self):
        lines = ["digraph augmented {", "  rankdir=LR;"]
        for i, nd in enumerate(self.nodes):
            style = ', style=filled, fillcolor="pink"' if self.changing[i] else ""
            shape = "doublecircle" if nd.is_label else ("box" if nd.width > 1 else "circle")
            lines.append(f'  n{i} [label="{nd.name}", shape={shape}{style}];')
        for k, g in enumerate(self.theta_groups):
            lines.append(f'  theta{k} [label="theta{k}", shape=plaintext];')
            for i in g:
                lines.append(f"  theta{k} -> n{i} [style=dashed, color=gray];")
        for a, b in sorted(self.directed):
            lines.append(f"  n{a} -> n{b};")
        for a, b in sorted(self.undirected):
            lines.append(f"  n{a} -> n{b} [dir=none];")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        return isinstance(other, AugmentedDag) and self.to_dict() == other.to_dict()


def markov_blanket(dag: AugmentedDag, node=None):
    """Parents, children and co-parents of ``node`` (default: the label)."""
    i = dag.label_index if node is None else (dag.index(node) if isinstance(node, str) else node)
    if dag.undirected:
        raise GraphError("Markov blanket needs a fully directed graph")
    mb = set(dag.parents(i)) | set(dag.children(i))
    for c in dag.children(i):
        mb |= set(dag.parents(c))
    mb.discard(i)
    return sorted(mb)


def benchmark_dag():
    """The seven-feature benchmark graph used by the simulation protocol.

    Edges: X1->Y, Y->X2, X4->X2, X4->X6, Y->X3, X2->X3, X3->X7, Y->X5.
    Changing modules: X1, Y, X2, X3, X6.
    """
    names = [f"X{i}" for i in range(1, 8)]
    nodes = [Node(nm, (k,)) for k, nm in enumerate(names)] + [Node(LABEL)]
    ix = {nd.name: i for i, nd in enumerate(nodes)}
    edges = [("X1", "Y"), ("Y", "X2"), ("X4", "X2"), ("X4", "X6"), ("Y", "X3"),
             ("X2", "X3"), ("X3", "X7"), ("Y", "X5")]
    changing = [nd.name in {"X1", "Y", "X2", "X3", "X6"} for nd in nodes]
    return AugmentedDag(nodes, {(ix[a], ix[b]) for a, b in edges}, set(), changing,
                        feature_names=names, n_classes=2)
