"""Learning an augmented DAG from multi-domain data.

Three steps:

1. a PC-stable skeleton search over the features, the label and the domain
   index ``C``; nodes left adjacent to ``C`` are the changing modules;
2. edge orientation: v-structures and Meek propagation, the domain-index rule
   (``C`` is exogenous, so separating sets of ``C`` orient edges around
   changing nodes), and for pairs of adjacent changing nodes, the direction
   whose per-domain module changes look independent.  Pairs whose changes are
   dependent in both directions are merged into a supernode;
3. a consistent DAG extension restricted to the label and its Markov blanket.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from augda.dag import LABEL, AugmentedDag, Node, _pair, markov_blanket
from augda.data import MultiDomainDataset
from augda.errors import ConfigError, DataError, InconsistentPdagError
from augda.kernels import KernelConfig, kci_test, rbf_kernel, median_heuristic, stable_seed

log = logging.getLogger(__name__)

C_NAME = "C"


@dataclass(frozen=True)
class GraphConfig:
    alpha: float = 0.05
    max_cond: int = 2
    n_permutations: int = 200
    max_samples: int = 2500
    change_alpha: float = 0.2
    min_change_domains: int = 4
    local_top_k: int | None = None
    seed: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)

    def __post_init__(self):
        if not 0 < self.alpha < 1 or not 0 < self.change_alpha < 1:
            raise ConfigError("significance levels must lie in (0, 1)")
        if self.max_cond < 0:
            raise ConfigError("max_cond must be >= 0")


@dataclass
class Skeleton:
    """Undirected graph over the variable nodes plus the domain index.

    ``nodes`` holds the features/supernodes and the label; the domain index is
    the extra vertex ``len(nodes)``.
    """

    nodes: list
    edges: set
    sepsets: dict
    feature_names: list
    n_classes: int
    n_tests: int = 0

    @property
    def c_index(self):
        return len(self.nodes)

    def adjacent(self, a, b):
        return _pair(a, b) in self.edges

    def neighbors(self, a):
        return sorted({y for x, y in self.edges if x == a} | {x for x, y in self.edges if y == a})

    @property
    def changing(self):
        return set(self.neighbors(self.c_index))


class _CiOracle:
    """Cached kernel CI tests over a fixed row subsample of the pooled sources."""

    def __init__(self, dataset: MultiDomainDataset, config: GraphConfig):
        x, y, c = dataset.pooled_source()
        n = len(y)
        if n > config.max_samples:
            rng = np.random.Generator(np.random.Philox(key=[config.seed, 7]))
            idx = np.sort(rng.choice(n, size=config.max_samples, replace=False))
            x, y, c = x[idx], y[idx], c[idx]
        self.x, self.y, self.c = x, y, c
        self.config = config
        self.cache = {}
        self.n_tests = 0

    def columns(self, node):
        if node is None:
            return self.c[:, None].astype(float), True
        if node.is_label:
            return self.y[:, None].astype(float), True
        return self.x[:, list(node.features)], False

    def test(self, a, b, cond):
        """Test ``a`` _||_ ``b`` | ``cond``; nodes are Node objects or None for C."""
        name = lambda nd: C_NAME if nd is None else nd.name  # noqa: E731
        a, b = sorted([a, b], key=name)
        cond = sorted(cond, key=name)
        key = (name(a), name(b), tuple(name(z) for z in cond))
        if key in self.cache:
            return self.cache[key]
        xa, da = self.columns(a)
        xb, db = self.columns(b)
        if cond:
            parts = [self.columns(z) for z in cond]
            z = np.hstack([p[0] for p in parts])
            zmask = np.concatenate([np.full(p[0].shape[1], p[1]) for p in parts])
        else:
            z, zmask = None, None
        res = kci_test(xa, xb, z, self.config.n_permutations, self.config.alpha,
                       self.config.kernel, seed=stable_seed(self.config.seed, *key),
                       x_discrete=da, y_discrete=db, z_discrete=zmask)
        self.cache[key] = res
        self.n_tests += 1
        return res


def _initial_nodes(dataset, config, oracle):
    nodes = [Node(nm, (k,)) for k, nm in enumerate(dataset.feature_names)]
    label = Node(LABEL)
    if config.local_top_k is not None and config.local_top_k < len(nodes):
        ranked = sorted(nodes, key=lambda nd: (oracle.test(nd, label, []).p_value, nd.name))
        nodes = sorted(ranked[:config.local_top_k], key=lambda nd: nd.features)
    return nodes + [label]


def _pc_skeleton(nodes, oracle, config, edges=None, sepsets=None, only=None):
    """PC-stable adjacency search; nodes index len(nodes) is the domain index C.

    ``only`` restricts the search to edges touching those vertices (used after
    supernode merging).
    """
    n = len(nodes) + 1
    lookup = lambda i: None if i == len(nodes) else nodes[i]  # noqa: E731
    if edges is None:
        edges = {(a, b) for a in range(n) for b in range(a + 1, n)}
    edges = set(edges)
    sepsets = dict(sepsets or {})
    for level in range(config.max_cond + 1):
        adj = {i: sorted({b for a, b in edges if a == i} | {a for a, b in edges if b == i}) for i in range(n)}
        if all(len(v) - 1 < level for v in adj.values()):
            break
        removals = {}
        for a, b in sorted(edges):
            if only is not None and a not in only and b not in only:
                continue
            for x, y in ((a, b), (b, a)):
                cands = [v for v in adj[x] if v != y]
                if len(cands) < level:
                    continue
                for cond in combinations(cands, level):
                    res = oracle.test(lookup(x), lookup(y), [lookup(v) for v in cond])
                    if res.independent:
                        removals[(a, b)] = tuple(sorted(cond))
                        break
                if (a, b) in removals:
                    break
        for e, s in removals.items():
            edges.discard(e)
            sepsets[e] = s
    return edges, sepsets


def learn_skeleton(dataset: MultiDomainDataset, alpha=None, config: GraphConfig | None = None):
    """Skeleton over features, label and domain index; returns ``(skeleton, changing)``.

    ``changing`` is the set of node indices adjacent to the domain index.
    """
    config = config or GraphConfig()
    if alpha is not None:
        config = GraphConfig(**{**config.__dict__, "alpha": alpha})
    if dataset.n_sources < 2:
        raise DataError("structure learning needs at least two source domains")
    if sum(dataset.domain_sizes[:-1]) < 50:
        raise DataError("structure learning needs a pooled sample of at least 50 rows")
    oracle = _CiOracle(dataset, config)
    nodes = _initial_nodes(dataset, config, oracle)
    edges, sepsets = _pc_skeleton(nodes, oracle, config)
    sk = Skeleton(nodes, edges, sepsets, list(dataset.feature_names), dataset.n_classes, oracle.n_tests)
    sk._oracle = oracle
    return sk, sk.changing


# ------------------------------------------------------------------ orientation


class _Pdag:
    """Mutable partially directed graph used while orienting."""

    def __init__(self, n, undirected):
        self.n = n
        self.directed = set()
        self.undirected = {_pair(a, b) for a, b in undirected}
        self.conflicts = []

    def adjacent(self, a, b):
        return (a, b) in self.directed or (b, a) in self.directed or _pair(a, b) in self.undirected

    def parents(self, i):
        return {a for a, b in self.directed if b == i}

    def children(self, i):
        return {b for a, b in self.directed if a == i}

    def und_neighbors(self, i):
        return {b for a, b in self.undirected if a == i} | {a for a, b in self.undirected if b == i}

    def _reaches(self, src, dst):
        stack, seen = [src], {src}
        while stack:
            v = stack.pop()
            if v == dst:
                return True
            for c in self.children(v):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    def orient(self, a, b, rule):
        """Orient a -> b; returns True when the graph changed."""
        if (a, b) in self.directed:
            return False
        if (b, a) in self.directed:
            self.conflicts.append(f"{rule}: wanted {a}->{b} but {b}->{a} already fixed")
            return False
        if _pair(a, b) not in self.undirected:
            return False
        if self._reaches(b, a):
            self.conflicts.append(f"{rule}: {a}->{b} would close a directed cycle")
            return False
        self.undirected.discard(_pair(a, b))
        self.directed.add((a, b))
        return True

    def meek(self, rule="meek"):
        changed = True
        while changed:
            changed = False
            for a, b in sorted(self.undirected):
                for x, y in ((a, b), (b, a)):
                    if self._meek_applies(x, y) and self.orient(x, y, rule):
                        changed = True
                        break
                if changed:
                    break

    def _meek_applies(self, x, y):
        # R1: w -> x - y with w, y non-adjacent
        if any(not self.adjacent(w, y) for w in self.parents(x) if w != y):
            return True
        # R2: x -> w -> y
        if any(y in self.children(w) for w in self.children(x)):
            return True
        # R3: x - w1 -> y, x - w2 -> y, w1 and w2 non-adjacent
        cands = [w for w in self.und_neighbors(x) if y in self.children(w)]
        return any(not self.adjacent(w1, w2) for w1, w2 in combinations(cands, 2))


def _module_signature(dataset, target, parents, seed, n_ref=30, n_feat=10, max_rows=200):
    """One scalar per source domain summarising P(target | parents) in that domain.

    Each domain's conditional mean embedding of ``target`` given ``parents``
    (kernel ridge regression of RBF features of the target onto the parents)
    is evaluated on a shared reference set; the per-domain vectors are then
    projected onto their top principal direction.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 11]))

    def cols(x, y, node):
        if node.is_label:
            return y[:, None].astype(float)
        return x[:, list(node.features)]

    per_domain = []
    for x, y in dataset.source_domains:
        if len(y) > max_rows:
            idx = np.sort(rng.choice(len(y), size=max_rows, replace=False))
            x, y = x[idx], y[idx]
        t = cols(x, y, target)
        pa = np.hstack([cols(x, y, p) for p in parents]) if parents else np.zeros((len(y), 0))
        per_domain.append((t, pa))
    pooled_t = np.vstack([t for t, _ in per_domain])
    ref_t = pooled_t[rng.choice(len(pooled_t), size=min(n_feat, len(pooled_t)), replace=False)]
    h_t = median_heuristic(pooled_t)
    if parents:
        pooled_pa = np.vstack([pa for _, pa in per_domain])
        ref_pa = pooled_pa[rng.choice(len(pooled_pa), size=min(n_ref, len(pooled_pa)), replace=False)]
        h_pa = median_heuristic(pooled_pa)
    vecs = []
    for t, pa in per_domain:
        feats = rbf_kernel(t, ref_t, h_t)
        if parents:
            k = rbf_kernel(pa, pa, h_pa)
            coef = np.linalg.solve(k + 1e-2 * len(t) * np.eye(len(t)), feats)
            vecs.append((rbf_kernel(ref_pa, pa, h_pa) @ coef).ravel())
        else:
            vecs.append(feats.mean(axis=0))
    m = np.array(vecs)
    m -= m.mean(axis=0)
    if not np.any(m):
        return np.zeros(len(vecs))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    return u[:, 0] * s[0]


def _change_independence_p(dataset, nodes, pd, i, j, config):
    """p-value for independent module changes under the hypothesis i -> j."""
    s_nodes = len(nodes)
    pa_i = [nodes[p] for p in sorted(pd.parents(i)) if p < s_nodes and p != j]
    pa_j = [nodes[p] for p in sorted(pd.parents(j)) if p < s_nodes and p != i] + [nodes[i]]
    seed = stable_seed(config.seed, "change", nodes[i].name, nodes[j].name)
    a = _module_signature(dataset, nodes[i], pa_i, seed)
    b = _module_signature(dataset, nodes[j], pa_j, seed + 1)
    res = kci_test(a, b, None, config.n_permutations, config.change_alpha, config.kernel,
                   seed=seed, min_samples=config.min_change_domains)
    return res.p_value


def _merge_nodes(nodes, pd, groups, conflicts):
    """Merge feature-node groups into supernodes; returns new (nodes, pd, index map) or None."""
    c = len(nodes)
    rep = {}
    for g in groups:
        for v in g:
            rep[v] = min(g)
    keep = [v for v in range(c) if rep.get(v, v) == v]
    new_index = {v: k for k, v in enumerate(keep)}
    mapping = {v: new_index[rep.get(v, v)] for v in range(c)}
    mapping[c] = len(keep)
    new_nodes = []
    for v in keep:
        members = sorted(u for u in range(c) if rep.get(u, u) == v)
        if len(members) == 1:
            new_nodes.append(nodes[v])
        else:
            feats = tuple(sorted(f for u in members for f in nodes[u].features))
            new_nodes.append(Node("+".join(nodes[u].name for u in members), feats))
    new = _Pdag(len(new_nodes) + 1, set())
    for a, b in pd.directed:
        ma, mb = mapping[a], mapping[b]
        if ma != mb:
            new.directed.add((ma, mb))
    for a, b in pd.undirected:
        ma, mb = mapping[a], mapping[b]
        if ma != mb and (ma, mb) not in new.directed and (mb, ma) not in new.directed:
            new.undirected.add(_pair(ma, mb))
    if any((b, a) in new.directed for a, b in new.directed):
        conflicts.append("merge: supernode would carry edges in both directions; merge refused")
        return None
    if any(new._reaches(b, a) for a, b in new.directed):
        conflicts.append("merge: supernode would close a directed cycle; merge refused")
        return None
    return new_nodes, new, mapping


def orient_edges(skeleton: Skeleton, changing, dataset: MultiDomainDataset, alpha=None,
                 config: GraphConfig | None = None):
    """Orient the skeleton; returns ``(pdag, conflicts)``.

    Rule precedence: v-structures/Meek, then the domain-index rule, then the
    independent-change rule.  A later rule never overrides an earlier
    orientation; disagreements are appended to ``conflicts``.
    """
    pdag, conflicts, _ = _orient(skeleton, changing, dataset, alpha, config)
    return pdag, conflicts


def _orient(skeleton, changing, dataset, alpha, config):
    config = config or GraphConfig()
    if alpha is not None:
        config = GraphConfig(**{**config.__dict__, "alpha": alpha})
    nodes = list(skeleton.nodes)
    c = skeleton.c_index
    changing = set(changing)
    s_edges = {e for e in skeleton.edges if c not in e}
    pd = _Pdag(c + 1, s_edges)
    sep = lambda a, b: skeleton.sepsets.get(_pair(a, b), ())  # noqa: E731

    # (a) v-structures among the variables, then propagation
    for mid in range(c):
        nb = sorted(pd.und_neighbors(mid) | pd.parents(mid) | pd.children(mid))
        for a, b in combinations(nb, 2):
            if not pd.adjacent(a, b) and mid not in sep(a, b):
                pd.orient(a, mid, "v-structure")
                pd.orient(b, mid, "v-structure")
    pd.meek("meek")

    # (b) the domain index points into every changing node
    for i in sorted(changing):
        pd.directed.add((c, i))
    for i in sorted(changing):
        for j in sorted(pd.und_neighbors(i) | pd.parents(i) | pd.children(i)):
            if j == c or j in changing:
                continue
            if i in sep(j, c):
                pd.orient(i, j, "domain-index")
            else:
                pd.orient(j, i, "domain-index")
    pd.meek("meek")

    # (c) independent changes for adjacent pairs of changing nodes
    notes = []
    merges, theta_merges = [], []
    if dataset.n_sources < config.min_change_domains:
        notes.append(f"independent-change rule skipped: {dataset.n_sources} source domains "
                     f"< {config.min_change_domains}")
    else:
        for i, j in sorted(pd.undirected):
            if i not in changing or j not in changing:
                continue
            p_ij = _change_independence_p(dataset, nodes, pd, i, j, config)
            p_ji = _change_independence_p(dataset, nodes, pd, j, i, config)
            ind_ij, ind_ji = p_ij > config.change_alpha, p_ji > config.change_alpha
            if ind_ij or ind_ji:
                if ind_ij and (not ind_ji or p_ij >= p_ji):
                    pd.orient(i, j, "independent-change")
                else:
                    pd.orient(j, i, "independent-change")
            elif nodes[i].is_label or nodes[j].is_label:
                theta_merges.append({i, j})
            else:
                merges.append({i, j})
        pd.meek("meek")

    theta_pairs = [set(g) for g in theta_merges]
    if merges:
        groups = _union(merges)
        merged = _merge_nodes(nodes, pd, groups, pd.conflicts)
        if merged is not None:
            new_nodes, new_pd, mapping = merged
            new_pd.conflicts = pd.conflicts
            notes.append("merged supernodes: " + ", ".join(nd.name for nd in new_nodes if "+" in nd.name))
            changing = {mapping[i] for i in changing}
            theta_pairs = [{mapping[v] for v in g} for g in theta_pairs]
            nodes, pd, c = new_nodes, new_pd, len(new_nodes)
            for i in changing:
                pd.directed.add((c, i))
            # re-test adjacencies of merged supernodes once
            oracle = getattr(skeleton, "_oracle", None) or _CiOracle(dataset, config)
            only = {k for k, nd in enumerate(nodes) if "+" in nd.name}
            sk_edges = {_pair(a, b) for a, b in pd.directed | pd.undirected}
            kept, _ = _pc_skeleton(nodes, oracle, config, sk_edges, None, only)
            for a, b in list(pd.directed):
                if _pair(a, b) not in kept and c not in (a, b):
                    pd.directed.discard((a, b))
            pd.undirected &= kept
            pd.meek("meek")

    changing_flags = [k in changing for k in range(c)]
    groups = _union([g for g in theta_pairs if len(g) > 1] + [{k} for k in sorted(changing)])
    directed = {(a, b) for a, b in pd.directed if a != c and b != c}
    undirected = {e for e in pd.undirected if c not in e}
    dag = AugmentedDag(nodes, directed, undirected, changing_flags, [sorted(g) for g in groups],
                       list(skeleton.feature_names), skeleton.n_classes)
    return dag, list(pd.conflicts), notes


def _union(sets):
    groups = []
    for s in sets:
        s = set(s)
        overlapping = [g for g in groups if g & s]
        for g in overlapping:
            s |= g
            groups.remove(g)
        groups.append(s)
    return sorted(groups, key=min)


# ----------------------------------------------------------- instantiation


def consistent_extension(pdag: AugmentedDag) -> AugmentedDag:
    """Orient remaining undirected edges without new v-structures or cycles.

    Sink elimination (Dor & Tarsi) that always removes the highest-index
    admissible sink, so free edges point from lower to higher index.
    """
    n = len(pdag.nodes)
    directed = set(pdag.directed)
    undirected = set(pdag.undirected)
    alive = set(range(n))

    def adj(a, b):
        return (a, b) in directed or (b, a) in directed or _pair(a, b) in undirected

    while alive:
        sink = None
        for x in sorted(alive, reverse=True):
            if any((x, b) in directed for b in alive if b != x):
                continue
            und = [y for y in alive if _pair(x, y) in undirected]
            near = [y for y in alive if y != x and adj(x, y)]
            if all(adj(y, z) for y in und for z in near if z != y):
                sink = x
                break
        if sink is None:
            raise InconsistentPdagError("PDAG has no consistent extension")
        for y in sorted(alive):
            if _pair(sink, y) in undirected:
                undirected.discard(_pair(sink, y))
                directed.add((y, sink))
        alive.discard(sink)
    out = pdag.copy()
    out.directed, out.undirected = directed, set()
    out.validate()
    return out


def instantiate_dag(pdag: AugmentedDag, restrict_to_blanket=True) -> AugmentedDag:
    """Pick one DAG from the equivalence class, keeping only the label and its blanket."""
    dag = consistent_extension(pdag)
    if not restrict_to_blanket:
        return dag
    y = dag.label_index
    keep = sorted(set(markov_blanket(dag, y)) | {y})
    return dag.subgraph(keep)


def _fallback_extension(pdag: AugmentedDag):
    out = pdag.copy()
    for a, b in sorted(out.undirected):
        out.undirected.discard((a, b))
        out.directed.add((a, b))
        if not out.is_acyclic():
            out.directed.discard((a, b))
            out.directed.add((b, a))
    out.validate()
    return out


@dataclass
class GraphLearnResult:
    dag: AugmentedDag
    pdag: AugmentedDag
    skeleton: Skeleton
    conflicts: list
    notes: list

    def report(self):
        names = [nd.name for nd in self.pdag.nodes]
        changing = [names[i] for i, f in enumerate(self.pdag.changing) if f]
        lines = ["augmented DAG learning report", ""]
        if changing:
            lines.append("changing modules: " + ", ".join(changing))
        else:
            lines.append("no changing modules detected")
        lines.append("invariant modules: " + (", ".join(n for i, n in enumerate(names)
                                                      if not self.pdag.changing[i]) or "none"))
        lines.append("theta groups: " + "; ".join("{" + ", ".join(names[i] for i in g) + "}"
                                                 for g in self.pdag.theta_groups))
        final = [nd.name for nd in self.dag.nodes]
        lines.append("instantiated nodes (label + Markov blanket): " + ", ".join(final))
        lines.append("edges: " + ", ".join(f"{final[a]}->{final[b]}" for a, b in sorted(self.dag.directed)))
        lines.append(f"CI tests run: {self.skeleton.n_tests}")
        lines.append("conflicts: " + ("none" if not self.conflicts else ""))
        lines.extend("  - " + c for c in self.conflicts)
        for note in self.notes:
            lines.append("note: " + note)
        return "\n".join(lines) + "\n"


def learn_augmented_dag(dataset: MultiDomainDataset, config: GraphConfig | None = None):
    """Run skeleton search, orientation and instantiation end to end."""
    config = config or GraphConfig()
    skeleton, changing = learn_skeleton(dataset, config=config)
    pdag, conflicts, notes = _orient(skeleton, changing, dataset, None, config)
    try:
        dag = instantiate_dag(pdag)
    except InconsistentPdagError:
        notes.append("PDAG had no consistent extension; remaining edges oriented by index "
                     "with cycle avoidance")
        log.warning(notes[-1])
        full = _fallback_extension(pdag)
        y = full.label_index
        dag = full.subgraph(sorted(set(markov_blanket(full, y)) | {y}))
    return GraphLearnResult(dag, pdag, skeleton, conflicts, notes)
