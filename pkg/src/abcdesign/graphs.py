"""Directed and partially directed graphs over nodes 0..p-1.

Covers the structural layer of the design problem: DAG validation,
Markov equivalence (CPDAG construction, Meek closure, class enumeration)
and interventional equivalence under families of hard interventions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

Edge = tuple[int, int]


class GraphError(ValueError):
    """Base class for structural errors."""


class CyclicGraphError(GraphError):
    pass


class PdagInconsistencyError(GraphError):
    """Raised when orientation rules contradict each other or the input."""


class MecSizeError(GraphError):
    """Raised when an equivalence class exceeds the enumeration cap."""


def _check_nodes(p: int, pairs: Iterable[Edge]) -> None:
    for i, j in pairs:
        if i == j:
            raise GraphError(f"self loop at node {i}")
        if not (0 <= i < p and 0 <= j < p):
            raise GraphError(f"edge ({i}, {j}) outside node range 0..{p - 1}")


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph. ``edges`` holds (parent, child) pairs."""

    p: int
    edges: frozenset[Edge]

    def __init__(self, p: int, edges: Iterable[Edge] = ()):
        if p < 1:
            raise GraphError(f"node count must be positive, got {p}")
        norm = frozenset((int(i), int(j)) for i, j in edges)
        _check_nodes(p, norm)
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "edges", norm)
        self.topological_order  # validates acyclicity eagerly

    @cached_property
    def parent_sets(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.p)]
        for i, j in self.edges:
            out[j].append(i)
        return tuple(tuple(sorted(s)) for s in out)

    @cached_property
    def child_sets(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.p)]
        for i, j in self.edges:
            out[i].append(j)
        return tuple(tuple(sorted(s)) for s in out)

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        """Kahn's algorithm; ties broken by node index so the order is unique."""
        indeg = [0] * self.p
        children: list[list[int]] = [[] for _ in range(self.p)]
        for i, j in sorted(self.edges):
            indeg[j] += 1
            children[i].append(j)
        ready = sorted(i for i in range(self.p) if indeg[i] == 0)
        order: list[int] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    # insertion keeps `ready` sorted
                    lo = 0
                    while lo < len(ready) and ready[lo] < c:
                        lo += 1
                    ready.insert(lo, c)
        if len(order) < self.p:
            raise CyclicGraphError("edge set contains a directed cycle")
        return tuple(order)

    def parents(self, node: int) -> tuple[int, ...]:
        return self.parent_sets[node]

    def children(self, node: int) -> tuple[int, ...]:
        return self.child_sets[node]

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "directed": [list(e) for e in sorted(self.edges)],
            "undirected": [],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Dag":
        if d.get("undirected"):
            raise GraphError("DAG payload must have an empty 'undirected' list")
        return cls(int(d["p"]), [tuple(e) for e in d["directed"]])


@dataclass(frozen=True)
class Pdag:
    """Partially directed graph: directed (i, j) pairs plus undirected pairs.

    Undirected pairs are stored with the smaller index first.
    """

    p: int
    directed: frozenset[Edge]
    undirected: frozenset[Edge]

    def __init__(self, p: int, directed: Iterable[Edge] = (), undirected: Iterable[Edge] = ()):
        if p < 1:
            raise GraphError(f"node count must be positive, got {p}")
        dirs = frozenset((int(i), int(j)) for i, j in directed)
        unds = frozenset((min(int(i), int(j)), max(int(i), int(j))) for i, j in undirected)
        _check_nodes(p, dirs)
        _check_nodes(p, unds)
        dir_pairs = {(min(i, j), max(i, j)) for i, j in dirs}
        for i, j in dirs:
            if (j, i) in dirs:
                raise PdagInconsistencyError(f"both orientations of ({i}, {j}) are directed")
        if dir_pairs & unds:
            raise PdagInconsistencyError("a pair appears as both directed and undirected")
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "directed", dirs)
        object.__setattr__(self, "undirected", unds)

    @cached_property
    def skeleton(self) -> frozenset[Edge]:
        return frozenset({(min(i, j), max(i, j)) for i, j in self.directed} | self.undirected)

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "directed": [list(e) for e in sorted(self.directed)],
            "undirected": [list(e) for e in sorted(self.undirected)],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Pdag":
        return cls(int(d["p"]), [tuple(e) for e in d["directed"]], [tuple(e) for e in d["undirected"]])


def graph_to_json(g: Dag | Pdag) -> str:
    return json.dumps(g.to_json_dict(), sort_keys=True)


def graph_from_json(text: str) -> Dag | Pdag:
    d = json.loads(text)
    if d["undirected"]:
        return Pdag.from_json_dict(d)
    return Dag.from_json_dict(d)


@dataclass(frozen=True)
class InterventionTarget:
    """Set of nodes forced by a hard intervention; empty means observational."""

    nodes: frozenset[int]

    def __init__(self, nodes: Iterable[int] = ()):
        norm = frozenset(int(i) for i in nodes)
        for i in norm:
            if i < 0:
                raise GraphError(f"negative node index {i} in intervention target")
        object.__setattr__(self, "nodes", norm)

    @property
    def is_observational(self) -> bool:
        return not self.nodes

    def encode(self) -> str:
        """Canonical string form: sorted indices joined by ';', '' for observational."""
        return ";".join(str(i) for i in sorted(self.nodes))

    @classmethod
    def parse(cls, text: str) -> "InterventionTarget":
        text = text.strip()
        if not text:
            return cls()
        try:
            return cls(int(tok) for tok in text.split(";"))
        except ValueError as exc:
            raise GraphError(f"cannot parse intervention target {text!r}") from exc

    def __contains__(self, node: int) -> bool:
        return node in self.nodes

    def __repr__(self) -> str:
        return f"InterventionTarget({{{self.encode()}}})"


OBSERVATIONAL = InterventionTarget()


@dataclass(frozen=True)
class InterventionFamily:
    """Candidate intervention targets over p nodes, order-significant.

    The order fixes tie-breaking in greedy selection.  The family must be
    conservative: every node is absent from at least one target (adding the
    observational target makes any family conservative).
    """

    p: int
    targets: tuple[InterventionTarget, ...]

    def __init__(self, p: int, targets: Iterable[InterventionTarget]):
        targets = tuple(targets)
        if p < 1:
            raise GraphError(f"node count must be positive, got {p}")
        seen = set()
        for t in targets:
            if not isinstance(t, InterventionTarget):
                raise GraphError("family members must be InterventionTarget instances")
            if max(t.nodes, default=-1) >= p:
                raise GraphError(f"target {{{t.encode()}}} outside node range 0..{p - 1}")
            if t in seen:
                raise GraphError(f"duplicate target {{{t.encode()}}} in family")
            seen.add(t)
        if not targets:
            raise GraphError("intervention family is empty")
        for i in range(p):
            if all(i in t for t in targets):
                raise GraphError(f"family is not conservative: node {i} is in every target")
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "targets", targets)

    @classmethod
    def single_node(cls, p: int) -> "InterventionFamily":
        return cls(p, (InterventionTarget([i]) for i in range(p)))

    @classmethod
    def parse(cls, p: int, text: str) -> "InterventionFamily":
        """Parse 'singles' or an explicit list like '{0};{1,2}'."""
        text = text.strip()
        if text == "singles":
            return cls.single_node(p)
        targets = []
        for tok in text.split(";"):
            tok = tok.strip()
            if not (tok.startswith("{") and tok.endswith("}")):
                raise GraphError(f"malformed family component {tok!r}")
            inner = tok[1:-1].strip()
            nodes = [int(s) for s in inner.split(",")] if inner else []
            targets.append(InterventionTarget(nodes))
        return cls(p, targets)

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def index(self, target: InterventionTarget) -> int:
        return self.targets.index(target)


@dataclass(frozen=True)
class Mec:
    """A Markov equivalence class: its member DAGs and essential graph.

    Built by :func:`enumerate_mec`; members are in deterministic enumeration
    order.
    """

    members: tuple[Dag, ...]
    representative: Pdag

    def __len__(self) -> int:
        return len(self.members)

    def index(self, g: Dag) -> int:
        return self.members.index(g)


# ---------------------------------------------------------------------------
# structural operations


def topological_order(g: Dag) -> tuple[int, ...]:
    return g.topological_order


def descendants(g: Dag, node: int) -> frozenset[int]:
    """Nodes reachable from ``node`` by directed paths, excluding ``node``."""
    out: set[int] = set()
    stack = list(g.children(node))
    while stack:
        n = stack.pop()
        if n not in out:
            out.add(n)
            stack.extend(g.children(n))
    return frozenset(out)


def mutilate(g: Dag, target: InterventionTarget) -> Dag:
    """Remove all edges into intervened nodes."""
    return Dag(g.p, (e for e in g.edges if e[1] not in target))


def skeleton(g: Dag) -> frozenset[Edge]:
    return frozenset((min(i, j), max(i, j)) for i, j in g.edges)


def vstructures(g: Dag) -> frozenset[tuple[int, int, int]]:
    """Colliders a -> c <- b with a, b non-adjacent, as (min(a,b), c, max(a,b))."""
    skel = skeleton(g)
    out = set()
    for c in range(g.p):
        pa = g.parents(c)
        for x in range(len(pa)):
            for y in range(x + 1, len(pa)):
                a, b = pa[x], pa[y]
                if (a, b) not in skel:
                    out.add((a, c, b))
    return frozenset(out)


def _pdag_vstructures(directed: set[Edge], skel: set[Edge], p: int) -> set[tuple[int, int, int]]:
    parents: list[list[int]] = [[] for _ in range(p)]
    for i, j in directed:
        parents[j].append(i)
    out = set()
    for c in range(p):
        pa = sorted(parents[c])
        for x in range(len(pa)):
            for y in range(x + 1, len(pa)):
                a, b = pa[x], pa[y]
                if (a, b) not in skel:
                    out.add((a, c, b))
    return out


def meek_closure(g: Pdag) -> Pdag:
    """Apply Meek rules R1-R4 to a fixpoint.

    Raises PdagInconsistencyError when rule applications contradict an
    existing orientation, create a directed cycle, or create a v-structure
    absent from the input.
    """
    directed = set(g.directed)
    undirected = set(g.undirected)
    skel = set(g.skeleton)
    vs0 = _pdag_vstructures(directed, skel, g.p)

    nbr: list[set[int]] = [set() for _ in range(g.p)]
    for i, j in skel:
        nbr[i].add(j)
        nbr[j].add(i)

    def adjacent(a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in skel

    def orient(a: int, b: int) -> None:
        if (b, a) in directed:
            raise PdagInconsistencyError(f"rules require {a} -> {b} but {b} -> {a} is fixed")
        undirected.discard((min(a, b), max(a, b)))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for a, b in sorted(undirected):
            for x, y in ((a, b), (b, a)):
                if _meek_applies(x, y, directed, undirected, nbr, adjacent):
                    orient(x, y)
                    changed = True
                    break
            if changed:
                break

    if _pdag_vstructures(directed, skel, g.p) != vs0:
        raise PdagInconsistencyError("closure created a new v-structure")
    closed = Pdag(g.p, directed, undirected)
    try:
        Dag(g.p, closed.directed)
    except CyclicGraphError:
        raise PdagInconsistencyError("directed part contains a cycle") from None
    return closed


def _meek_applies(a, b, directed, undirected, nbr, adjacent) -> bool:
    """True when some rule orients a -> b given the current pattern."""
    # R1: c -> a, a - b, c and b non-adjacent
    for c in nbr[a]:
        if (c, a) in directed and not adjacent(c, b):
            return True
    # R2: a -> c -> b with a - b
    for c in nbr[a]:
        if (a, c) in directed and (c, b) in directed:
            return True
    # R3: a - c, a - d, c -> b, d -> b, c and d non-adjacent
    cands = [c for c in nbr[a] if (min(a, c), max(a, c)) in undirected and (c, b) in directed]
    for x in range(len(cands)):
        for y in range(x + 1, len(cands)):
            if not adjacent(cands[x], cands[y]):
                return True
    # R4: a - c, c -> d, d -> b, c and b non-adjacent, a and d adjacent
    for c in nbr[a]:
        if (min(a, c), max(a, c)) not in undirected or adjacent(c, b):
            continue
        for d in nbr[b]:
            if (c, d) in directed and (d, b) in directed and adjacent(a, d):
                return True
    return False


def cpdag_of(g: Dag) -> Pdag:
    """Essential graph of the Markov equivalence class of ``g``."""
    fixed = set()
    for a, c, b in vstructures(g):
        fixed.add((a, c))
        fixed.add((b, c))
    fixed_pairs = {(min(i, j), max(i, j)) for i, j in fixed}
    und = {e for e in skeleton(g) if e not in fixed_pairs}
    return meek_closure(Pdag(g.p, fixed, und))


def enumerate_mec(rep: Pdag, cap: int = 10000) -> Mec:
    """Enumerate all DAGs of the class whose essential graph is ``rep``.

    ``rep`` must be Meek-closed.  Raises MecSizeError when the class has more
    than ``cap`` members.  Member order is deterministic: recursion orients
    the smallest undirected pair first, lower-endpoint-first.
    """
    if meek_closure(rep) != rep:
        raise GraphError("representative is not closed under the orientation rules")
    vs0 = _pdag_vstructures(set(rep.directed), set(rep.skeleton), rep.p)
    members: list[Dag] = []

    def extend(pattern: Pdag) -> None:
        if not pattern.undirected:
            try:
                dag = Dag(pattern.p, pattern.directed)
            except CyclicGraphError:
                return
            if vstructures(dag) == vs0:
                members.append(dag)
                if len(members) > cap:
                    raise MecSizeError(f"equivalence class exceeds cap of {cap}")
            return
        i, j = min(pattern.undirected)
        rest = pattern.undirected - {(i, j)}
        for a, b in ((i, j), (j, i)):
            try:
                nxt = meek_closure(Pdag(pattern.p, pattern.directed | {(a, b)}, rest))
            except PdagInconsistencyError:
                continue
            extend(nxt)

    extend(rep)
    if not members:
        raise GraphError("representative admits no consistent extension")
    return Mec(tuple(members), rep)


def imec_members(g: Dag, family: InterventionFamily, members: Sequence[Dag]) -> list[Dag]:
    """Members interventionally Markov equivalent to ``g`` under ``family``.

    Two DAGs of one Markov equivalence class are equivalent under a
    conservative family iff every mutilated graph has the same skeleton.
    The observational case is implied by shared skeletons, so the family
    need not list the empty target.
    """
    base = {t: skeleton(mutilate(g, t)) for t in family.targets}
    return [
        h
        for h in members
        if all(skeleton(mutilate(h, t)) == base[t] for t in family.targets)
    ]


def i_essential_graph(g: Dag, family: InterventionFamily, mec: Mec) -> tuple[Pdag, list[Dag]]:
    """Interventional essential graph of ``g`` within its class.

    Returns the pattern whose directed edges are those oriented identically in
    every equivalent member, together with the list of equivalent members.
    """
    if g not in mec.members:
        raise GraphError("graph is not a member of the supplied equivalence class")
    eq = imec_members(g, family, mec.members)
    common = frozenset.intersection(*(h.edges for h in eq))
    skel = skeleton(g)
    directed_pairs = {(min(i, j), max(i, j)) for i, j in common}
    und = skel - directed_pairs
    return Pdag(g.p, common, und), eq


def chordal_nodes(rep: Pdag) -> frozenset[int]:
    """Endpoints of undirected edges of an essential graph.

    The undirected part of an essential graph is chordal; these are the nodes
    where an intervention can still orient something.
    """
    return frozenset(i for e in rep.undirected for i in e)
