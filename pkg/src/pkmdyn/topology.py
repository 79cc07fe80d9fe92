"""Topological graph of a PKM: limbs, spanning trees and fundamental cycles.

Vertices are body ids (0 is the ground), edges are joints. Each edge is stored
with its declared direction ``parent -> child`` and its DOF.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

from .errors import ValidationError

GROUND = 0


@dataclass(frozen=True)
class Edge:
    id: int
    parent: int
    child: int
    kind: str = "revolute"
    dof: int = 1

    def other(self, v: int) -> int:
        return self.child if v == self.parent else self.parent


@dataclass
class MechanismGraph:
    vertices: list
    edges: list
    platform: int
    ground: int = GROUND

    def __post_init__(self):
        ids = [e.id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise ValidationError("edge ids are not unique")
        vs = set(self.vertices)
        if self.ground not in vs or self.platform not in vs:
            raise ValidationError("graph lacks ground or platform vertex")
        for e in self.edges:
            if e.parent not in vs or e.child not in vs:
                raise ValidationError(f"edge {e.id} references an unknown vertex")
        if not _connected(vs, self.edges):
            raise ValidationError("mechanism graph is not connected")

    def edge(self, eid: int) -> Edge:
        for e in self.edges:
            if e.id == eid:
                return e
        raise KeyError(eid)


def _adjacency(edges):
    adj = {}
    for e in edges:
        adj.setdefault(e.parent, []).append(e)
        adj.setdefault(e.child, []).append(e)
    return adj


def _connected(vertices, edges) -> bool:
    vertices = set(vertices)
    if not vertices:
        return True
    adj = _adjacency(edges)
    start = next(iter(vertices))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for e in adj.get(v, []):
            w = e.other(v)
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen >= vertices


@dataclass
class LimbSubgraph:
    index: int
    vertices: set
    edges: list
    ground: int = GROUND
    platform: int = -1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def gamma(self) -> int:
        # cyclomatic number of a connected graph
        return len(self.edges) - len(self.vertices) + 1


def partition_limbs(g: MechanismGraph) -> list:
    """Split the graph into limbs: connected components left after removing
    the ground and platform vertices, each with its incident edges."""
    inner = [v for v in g.vertices if v not in (g.ground, g.platform)]
    adj = _adjacency(g.edges)
    comp = {}
    order = []
    for v in sorted(inner):
        if v in comp:
            continue
        cid = len(order)
        order.append(v)
        comp[v] = cid
        stack = [v]
        while stack:
            u = stack.pop()
            for e in adj.get(u, []):
                w = e.other(u)
                if w in (g.ground, g.platform) or w in comp:
                    continue
                comp[w] = cid
                stack.append(w)
    groups = [dict(vertices={g.ground, g.platform}, edges=[]) for _ in order]
    direct = []
    for e in g.edges:
        ends = {e.parent, e.child}
        inner_ends = [v for v in ends if v in comp]
        if not inner_ends:
            direct.append(e)
            continue
        cid = comp[inner_ends[0]]
        groups[cid]["edges"].append(e)
        groups[cid]["vertices"] |= ends
    limbs = []
    for grp in groups:
        touched = set()
        for e in grp["edges"]:
            touched |= {e.parent, e.child}
        if g.ground not in touched or g.platform not in touched:
            raise ValidationError("a body group is not connected to both ground and platform")
        limbs.append(grp)
    for e in direct:
        limbs.append(dict(vertices={g.ground, g.platform}, edges=[e]))
    return [LimbSubgraph(i + 1, grp["vertices"], sorted(grp["edges"], key=lambda e: e.id),
                         g.ground, g.platform) for i, grp in enumerate(limbs)]


def auto_cut_edges(limb: LimbSubgraph) -> list:
    """Choose one cut-edge per independent cycle, preferring high-DOF joints.

    Edges are added to a spanning forest in order of increasing DOF (then id);
    every edge that would close a cycle becomes a cut-edge.
    """
    parent = {}

    def find(v):
        while parent.setdefault(v, v) != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    cuts = []
    for e in sorted(limb.edges, key=lambda e: (e.dof, e.id)):
        a, b = find(e.parent), find(e.child)
        if a == b:
            cuts.append(e.id)
        else:
            parent[a] = b
    return sorted(cuts)


@dataclass
class SpanningTree:
    """Ground-directed spanning tree of one limb.

    ``tree_edges[i-1]`` is the edge whose distal body gets canonical index ``i``.
    ``pred[i]`` is the canonical index of the predecessor body (0 for ground).
    ``body_of[v]`` maps original vertex ids to canonical body indices and
    ``edge_number`` maps original edge ids to canonical joint numbers (cut-edges
    are numbered after the tree-edges).
    """

    tree_edges: list
    cut_edges: list
    pred: list
    body_of: dict
    edge_number: dict
    flipped: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.tree_edges)

    def path_to_ground(self, i: int) -> list:
        out = []
        while i != 0:
            out.append(i)
            i = self.pred[i]
        return out

    def is_canonical(self) -> bool:
        return all(self.pred[i] < i for i in range(1, self.n + 1))


def build_spanning_tree(limb: LimbSubgraph, cut_edges) -> SpanningTree:
    cut_set = set(cut_edges)
    ids = {e.id for e in limb.edges}
    if not cut_set <= ids:
        raise ValidationError(f"cut-edges {sorted(cut_set - ids)} not in limb")
    tree = [e for e in limb.edges if e.id not in cut_set]
    verts = set(limb.vertices)
    if len(tree) != len(verts) - 1 or not _connected(verts, tree):
        raise ValidationError("removing the cut-edges does not leave a spanning tree")
    adj = _adjacency(tree)
    # keep the given numbering if it is already canonical: each tree edge
    # leads away from ground and its id exceeds the id of the edge before it
    dist_edge = {}
    flipped = {}
    seen = {limb.ground}
    queue = deque([limb.ground])
    while queue:
        u = queue.popleft()
        for e in sorted(adj.get(u, []), key=lambda e: e.id):
            w = e.other(u)
            if w in seen:
                continue
            seen.add(w)
            dist_edge[w] = e
            flipped[e.id] = e.parent != u
            queue.append(w)
    pred_v = {w: dist_edge[w].other(w) for w in dist_edge}
    given_ok = all(not flipped[e.id] for e in tree)
    if given_ok:
        for w, e in dist_edge.items():
            p = pred_v[w]
            if p != limb.ground and not dist_edge[p].id < e.id:
                given_ok = False
                break
    if given_ok:
        order = sorted(dist_edge, key=lambda w: dist_edge[w].id)
    else:
        # depth-first renumbering keeps every branch contiguous
        order = []
        stack = [limb.ground]
        children = {}
        for w, p in pred_v.items():
            children.setdefault(p, []).append(w)
        while stack:
            u = stack.pop()
            if u != limb.ground:
                order.append(u)
            for w in sorted(children.get(u, []), key=lambda w: dist_edge[w].id, reverse=True):
                stack.append(w)
    body_of = {limb.ground: 0}
    for i, w in enumerate(order, start=1):
        body_of[w] = i
    tree_edges = [dist_edge[w] for w in order]
    pred = [0] * (len(order) + 1)
    for w in order:
        pred[body_of[w]] = body_of[pred_v[w]]
    edge_number = {e.id: i for i, e in enumerate(tree_edges, start=1)}
    cuts = sorted(cut_set)
    for j, c in enumerate(cuts):
        edge_number[c] = len(tree_edges) + 1 + j
    return SpanningTree(tree_edges, [limb_edge(limb, c) for c in cuts], pred, body_of,
                        edge_number, {e.id: flipped[e.id] for e in tree_edges})


def limb_edge(limb: LimbSubgraph, eid: int) -> Edge:
    for e in limb.edges:
        if e.id == eid:
            return e
    raise KeyError(eid)


@dataclass
class FundamentalCycle:
    """One fundamental cycle, identified by its cut-edge.

    ``edges`` lists original edge ids: first the k-branch (from the common
    ancestor towards the cut-edge's parent body, in tree order), then the
    r-branch (towards the cut-edge's child body), then the cut-edge itself.
    ``sigma`` maps edge id to +1/-1: +1 when the edge is traversed along its
    tree direction on the way from the r-side around to the k-side.
    """

    index: int
    cut_edge: int
    edges: list
    sigma: dict
    vertices: set
    k_branch: list
    r_branch: list

    def sigma_row(self, all_edges) -> list:
        return [self.sigma.get(e, 0) for e in all_edges]


def _path_edges(tree: SpanningTree, v: int) -> list:
    """Original edge ids from ground to canonical body ``v``."""
    ids = []
    for i in reversed(tree.path_to_ground(v)):
        ids.append(tree.tree_edges[i - 1].id)
    return ids


def fundamental_cycles(limb: LimbSubgraph, cut_edges, tree: SpanningTree | None = None) -> list:
    if tree is None:
        tree = build_spanning_tree(limb, cut_edges)
    cycles = []
    for lam, c in enumerate(sorted(cut_edges), start=1):
        e = limb_edge(limb, c)
        k = tree.body_of[e.parent]
        r = tree.body_of[e.child]
        pk = _path_edges(tree, k)
        pr = _path_edges(tree, r)
        common = 0
        while common < min(len(pk), len(pr)) and pk[common] == pr[common]:
            common += 1
        kb, rb = pk[common:], pr[common:]
        sigma = {i: 1 for i in kb}
        sigma.update({i: -1 for i in rb})
        sigma[c] = 1
        verts = set()
        for eid in kb + rb + [c]:
            ed = limb_edge(limb, eid)
            verts |= {ed.parent, ed.child}
        cycles.append(FundamentalCycle(lam, c, kb + rb + [c], sigma, verts, kb, rb))
    return cycles


def is_hybrid(cycles) -> bool:
    """True iff every pair of fundamental cycles shares at most one vertex."""
    return all(len(a.vertices & b.vertices) <= 1 for a, b in combinations(cycles, 2))


@dataclass
class LimbTopology:
    limb: LimbSubgraph
    tree: SpanningTree
    cycles: list

    @property
    def n_tree(self) -> int:
        return self.tree.n

    @property
    def n_edges(self) -> int:
        return self.limb.n_edges

    @property
    def n_joint_dof(self) -> int:
        return sum(e.dof for e in self.limb.edges)

    @property
    def gamma(self) -> int:
        return len(self.cycles)

    @property
    def hybrid(self) -> bool:
        return is_hybrid(self.cycles)

    def platform_path(self) -> list:
        """Original edge ids on the tree path from the platform to ground."""
        b = self.tree.body_of[self.limb.platform]
        return sorted(_path_edges(self.tree, b))


def analyze_limb(limb: LimbSubgraph, cut_edges=None) -> LimbTopology:
    if cut_edges is None:
        cut_edges = auto_cut_edges(limb)
    if len(cut_edges) != limb.gamma:
        raise ValidationError(
            f"limb {limb.index}: {len(cut_edges)} cut-edges given, {limb.gamma} cycles present")
    tree = build_spanning_tree(limb, cut_edges)
    return LimbTopology(limb, tree, fundamental_cycles(limb, cut_edges, tree))


def total_cycle_count(g: MechanismGraph) -> int:
    """Number of independent cycles of the whole graph (edges - vertices + 1)."""
    return len(g.edges) - len(g.vertices) + 1
