"""Tree topology: node membership, uplinks, level-links, intra-node graphs.

The network is a complete q-ary tree of processor sets.  Level 1 holds the
leaves (k1 processors each), level ell+1 nodes are q times larger, and the
top level is a single node containing all n processors.  Note the root sits
at level ell_star + 1 with this size schedule (k1 * q**(level-1)); the
height exponent ell_star still satisfies n = k1 * q**ell_star.

At experiment scale membership is the aligned partition (node index i at
level ell owns processors [i*k_ell, (i+1)*k_ell)), optionally oversampled
into extra sampler-drawn nodes per position for property tests
(membership_factor > 1).  Three sampler/graph edge families hang off the
membership:

- uplinks: per parent node, one sampler [child slots] -> [parent slots] of
  degree uplink_degree, shared by all q children so that slot j of any
  child lifts to the same parent slots ("corresponding uplinks").
- ell-links: per node, a sampler [member slots] -> [level-1 descendant
  nodes] of degree elllink_degree.
- intra: per node, a random regular graph on member slots (pairing model
  with retries) used by the in-node agreement rounds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .params import ParamError, ProtocolParams
from .sampler import Sampler, build_random_sampler
from .seeding import derive_seed


@dataclass(frozen=True, order=True)
class NodeId:
    level: int
    index: int

    def __repr__(self):
        return f"N(L{self.level},{self.index})"


def distinct_sampler(r_size: int, s_size: int, d: int, seed: int) -> Sampler:
    """Sampler whose images are d distinct uniform elements of [s].

    Used for uplinks and ell-links, where each (input, target) pair must
    carry at most one edge so share indices correspond one-to-one to
    target slots.
    """
    d = min(d, s_size)
    rng = random.Random(seed)
    rows = tuple(tuple(rng.sample(range(s_size), d)) for _ in range(r_size))
    return Sampler(r_size, s_size, d, rows, 0.5, 0.9)


class RegularGraphError(ParamError):
    pass


def random_regular_graph(size: int, degree: int, seed: int,
                         max_retries: int = 500) -> list:
    """Adjacency lists of a uniform random degree-regular simple graph.

    Pairing model: degree stubs per vertex, random perfect matching,
    rejected and retried on self-loops or multi-edges.  Dense degrees
    (above half the graph) are built as the complement of a sparse pairing,
    and degree >= size-1 degenerates to the complete graph.
    """
    if size < 2:
        raise RegularGraphError(f"graph needs >= 2 vertices, got {size}")
    degree = min(degree, size - 1)
    if degree < 1:
        raise RegularGraphError(f"degree >= 1 violated: {degree}")
    if degree == size - 1:
        return [[v for v in range(size) if v != u] for u in range(size)]
    if (size * degree) % 2:
        raise RegularGraphError(
            f"size*degree must be even for a regular graph: {size}*{degree}")
    if degree > (size - 1) // 2:
        co = random_regular_graph(size, size - 1 - degree, seed, max_retries)
        co_sets = [set(nbrs) for nbrs in co]
        return [[v for v in range(size) if v != u and v not in co_sets[u]]
                for u in range(size)]
    rng = random.Random(seed)
    for _ in range(max_retries):
        adj = _try_pairing(rng, size, degree)
        if adj is not None:
            return [sorted(s) for s in adj]
    raise RegularGraphError(
        f"pairing model failed after {max_retries} retries "
        f"(size={size}, degree={degree})")


def _try_pairing(rng, size, degree):
    """One pairing attempt: match random stubs, re-queueing pairs that would
    form a loop or multi-edge; gives up (None) when no progress is possible."""
    stubs = [v for v in range(size) for _ in range(degree)]
    adj = [set() for _ in range(size)]
    while stubs:
        rng.shuffle(stubs)
        rest = []
        progress = False
        for i in range(0, len(stubs) - 1, 2):
            a, b = stubs[i], stubs[i + 1]
            if a != b and b not in adj[a]:
                adj[a].add(b)
                adj[b].add(a)
                progress = True
            else:
                rest.append(a)
                rest.append(b)
        if not progress:
            return None
        stubs = rest
    return adj


@dataclass
class TreeTopology:
    """Immutable after build; share read-only across trials."""

    params: ProtocolParams
    members: dict  # NodeId -> tuple of processor ids
    uplinks: dict  # parent NodeId -> Sampler over (child slot -> parent slots)
    elllinks: dict  # NodeId -> Sampler over (member slot -> level-1 descendant node index, subtree-local)
    intra: dict  # NodeId -> adjacency lists over member slots
    leaf_owner: dict = field(default_factory=dict)  # processor id -> leaf NodeId

    # -- structure helpers ---------------------------------------------------

    @property
    def root(self) -> NodeId:
        return NodeId(self.params.root_level, 0)

    def nodes_at(self, level: int):
        return [NodeId(level, i) for i in range(self.params.node_count(level))]

    def children(self, node: NodeId):
        if node.level <= 1:
            return []
        q = self.params.q
        return [NodeId(node.level - 1, node.index * q + c) for c in range(q)]

    def parent(self, node: NodeId) -> NodeId:
        if node.level >= self.params.root_level:
            raise ParamError(f"{node} has no parent")
        return NodeId(node.level + 1, node.index // self.params.q)

    def leaf_descendants(self, node: NodeId):
        span = self.params.q ** (node.level - 1)
        first = node.index * span
        return [NodeId(1, i) for i in range(first, first + span)]

    def uplink_targets(self, parent: NodeId, child_slot: int) -> tuple:
        """Parent member slots a child member slot lifts shares to."""
        return self.uplinks[parent].image(child_slot)

    def elllink_targets(self, node: NodeId, slot: int):
        """Level-1 descendant nodes a member slot reads reveals from."""
        base = node.index * self.params.q ** (node.level - 1)
        return [NodeId(1, base + j) for j in self.elllinks[node].image(slot)]

    def dump(self) -> str:
        """One line per edge-family entry, for debugging."""
        out = []
        for node in sorted(self.members):
            out.append(f"node {node.level} {node.index} members "
                       + " ".join(map(str, self.members[node])))
        for node in sorted(self.uplinks):
            smp = self.uplinks[node]
            for slot in range(smp.r_size):
                out.append(f"uplink {node.level} {node.index} {slot} "
                           + " ".join(map(str, smp.image(slot))))
        for node in sorted(self.elllinks):
            smp = self.elllinks[node]
            for slot in range(smp.r_size):
                out.append(f"elllink {node.level} {node.index} {slot} "
                           + " ".join(map(str, smp.image(slot))))
        for node in sorted(self.intra):
            for slot, nbrs in enumerate(self.intra[node]):
                out.append(f"intra {node.level} {node.index} {slot} "
                           + " ".join(map(str, nbrs)))
        return "\n".join(out) + "\n"


def build_topology(params: ProtocolParams, seed: int | None = None,
                   membership_factor: int = 1) -> TreeTopology:
    """Deterministic in seed; all edge families drawn through samplers.

    membership_factor > 1 adds extra sampler-drawn overlapping nodes per
    tree position (indices beyond node_count) for membership property
    tests; the protocol itself runs on the aligned partition nodes.
    """
    if seed is None:
        seed = params.seed
    members: dict = {}
    uplinks: dict = {}
    elllinks: dict = {}
    intra: dict = {}
    leaf_owner: dict = {}

    top = params.root_level
    for level in range(1, top + 1):
        k = params.k_at_level(level)
        for idx in range(params.node_count(level)):
            node = NodeId(level, idx)
            members[node] = tuple(range(idx * k, (idx + 1) * k))
            if membership_factor > 1:
                smp = build_random_sampler(
                    membership_factor - 1, params.n, k, 0.5, 0.9,
                    derive_seed(seed, "members", level, idx),
                    allow_infeasible=True)
                for extra in range(membership_factor - 1):
                    ghost = NodeId(level, params.node_count(level) * (extra + 1) + idx)
                    members[ghost] = smp.image(extra)

    for prc in range(params.n):
        leaf_owner[prc] = NodeId(1, prc % params.node_count(1))

    for level in range(2, top + 1):
        k_child = params.k_at_level(level - 1)
        k_parent = params.k_at_level(level)
        for idx in range(params.node_count(level)):
            node = NodeId(level, idx)
            uplinks[node] = distinct_sampler(
                k_child, k_parent, params.uplink_degree,
                derive_seed(seed, "uplinks", level, idx))
            n_leaves = params.q ** (level - 1)
            elllinks[node] = distinct_sampler(
                k_parent, n_leaves, params.elllink_degree,
                derive_seed(seed, "elllinks", level, idx))
            intra[node] = random_regular_graph(
                k_parent, params.intra_degree_at(k_parent),
                derive_seed(seed, "intra", level, idx))
    for idx in range(params.node_count(1)):
        node = NodeId(1, idx)
        if params.k1 >= 2:
            intra[node] = random_regular_graph(
                params.k1, params.intra_degree_at(params.k1),
                derive_seed(seed, "intra", 1, idx))

    return TreeTopology(params, members, uplinks, elllinks, intra, leaf_owner)


GOOD, BAD = "good", "bad"


def classify_nodes(topo: TreeTopology, corrupted) -> dict:
    """good/bad per node at the 2/3 + epsilon/2 good-member threshold,
    counted with multiplicity."""
    corrupted = set(corrupted)
    eps = topo.params.epsilon
    threshold = 2.0 / 3.0 + eps / 2.0
    out = {}
    for node, mem in topo.members.items():
        good = sum(1 for prc in mem if prc not in corrupted)
        out[node] = GOOD if good / len(mem) >= threshold else BAD
    return out


def good_paths(topo: TreeTopology, node: NodeId, classification) -> float:
    """Fraction of node's level-1 descendants whose whole path up to (and
    including) the node is good."""
    if classification.get(node) == BAD:
        return 0.0
    leaves = topo.leaf_descendants(node)
    span = len(leaves)
    good = 0
    for leaf in leaves:
        cur = leaf
        ok = classification.get(cur) == GOOD
        while ok and cur != node:
            cur = topo.parent(cur)
            ok = classification.get(cur) == GOOD
        good += 1 if ok else 0
    return good / span


def max_elllink_load(topo: TreeTopology, level: int) -> int:
    """Max over level-1 nodes of incident ell-links from the given level."""
    load: dict = {}
    for node in topo.nodes_at(level):
        if node not in topo.elllinks:
            continue
        smp = topo.elllinks[node]
        for slot in range(smp.r_size):
            for leaf in topo.elllink_targets(node, slot):
                load[leaf] = load.get(leaf, 0) + 1
    return max(load.values(), default=0)
