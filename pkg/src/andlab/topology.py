"""Discrete geometries: lattice boxes, rooted trees, and Delone-thinned lattices.

Vertices are dense integer ids in ``[0, vertex_count)``.  Topologies are
immutable after construction; every query is read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .errors import BudgetExceededError, ValidationError

__all__ = [
    "GraphTopology",
    "BoxRegion",
    "BoundarySets",
    "build_lattice",
    "build_bethe",
    "build_delone",
    "boundary_sets",
    "graph_distance",
    "resolve_region",
    "topology_to_json",
    "topology_from_json",
]

BETHE_VERTEX_CAP = 2_000_000


class GraphTopology:
    """A finite undirected graph with geometry metadata.

    Parameters
    ----------
    kind : str
        One of ``"lattice"``, ``"bethe"``, ``"delone"``.
    params : dict
        Constructor parameters, kept for serialization.
    neighbors : list of lists
        Sorted neighbor ids per vertex; symmetric, loop-free.
    coords : ndarray or None
        Integer coordinates, shape ``(n, d)`` for lattice/delone kinds.
    parents, depths : ndarray or None
        Tree structure for the bethe kind (root parent is -1).
    mask : ndarray or None
        Boolean active-site mask for the delone kind.
    """

    def __init__(self, kind, params, neighbors, coords=None, parents=None,
                 depths=None, mask=None):
        self.kind = kind
        self.params = dict(params)
        self.neighbors = [np.array(sorted(nb), dtype=np.int64) for nb in neighbors]
        self.coords = None if coords is None else np.asarray(coords, dtype=np.int64)
        self.parents = None if parents is None else np.asarray(parents, dtype=np.int64)
        self.depths = None if depths is None else np.asarray(depths, dtype=np.int64)
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self._adj = None
        self._validate()

    @property
    def vertex_count(self):
        return len(self.neighbors)

    @property
    def max_degree(self):
        return max(len(nb) for nb in self.neighbors)

    def degree(self, v):
        return len(self.neighbors[int(v)])

    def degrees(self):
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def adjacency_matrix(self):
        """Symmetric 0/1 adjacency in CSR format (cached)."""
        if self._adj is None:
            rows, cols = [], []
            for v, nb in enumerate(self.neighbors):
                rows.extend([v] * len(nb))
                cols.extend(nb.tolist())
            n = self.vertex_count
            self._adj = csr_matrix(
                (np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return self._adj

    def edge_list(self):
        """Sorted list of undirected edges (u, v) with u < v."""
        edges = []
        for v, nb in enumerate(self.neighbors):
            for u in nb:
                if v < u:
                    edges.append((v, int(u)))
        edges.sort()
        return edges

    def vertex_at(self, coords):
        """Vertex id at the given coordinate vector (lattice/delone)."""
        if self.coords is None:
            raise ValidationError("topology has no coordinate chart")
        sides = self.params["sides"]
        coords = np.asarray(coords, dtype=np.int64)
        if coords.shape != (len(sides),) or np.any(coords < 0) or np.any(coords >= sides):
            raise ValidationError(f"coordinates {coords} outside {sides}")
        return int(np.ravel_multi_index(coords, sides))

    def children(self, v):
        """Forward neighbors of v in a rooted tree."""
        if self.parents is None:
            raise ValidationError("children() requires a bethe topology")
        return [int(u) for u in self.neighbors[int(v)] if self.parents[u] == v]

    def _validate(self):
        n = self.vertex_count
        seen = set()
        for v, nb in enumerate(self.neighbors):
            if np.any(nb == v):
                raise ValidationError(f"vertex {v} lists itself (loops forbidden)")
            if len(set(nb.tolist())) != len(nb):
                raise ValidationError(f"vertex {v} has duplicate neighbors")
            for u in nb:
                seen.add((v, int(u)))
        for v, u in seen:
            if (u, v) not in seen:
                raise ValidationError(f"adjacency not symmetric at ({v}, {u})")
        if n > 1 and self._bfs_component(0).size != n:
            raise ValidationError("graph is not connected")

    def _bfs_component(self, start):
        n = self.vertex_count
        dist = np.full(n, -1, dtype=np.int64)
        dist[start] = 0
        frontier = [start]
        while frontier:
            nxt = []
            for v in frontier:
                for u in self.neighbors[v]:
                    if dist[u] < 0:
                        dist[u] = dist[v] + 1
                        nxt.append(int(u))
            frontier = nxt
        return np.flatnonzero(dist >= 0)

    def bfs_distances(self, start):
        """Shortest-path distance from start to every vertex."""
        n = self.vertex_count
        dist = np.full(n, -1, dtype=np.int64)
        dist[int(start)] = 0
        frontier = [int(start)]
        while frontier:
            nxt = []
            for v in frontier:
                for u in self.neighbors[v]:
                    if dist[u] < 0:
                        dist[u] = dist[v] + 1
                        nxt.append(int(u))
            frontier = nxt
        return dist

    def __repr__(self):
        return f"GraphTopology(kind={self.kind!r}, n={self.vertex_count})"


def build_lattice(sides, boundary="open"):
    """Nearest-neighbor box in Z^d with open or periodic boundary.

    Interior vertices have degree 2d; periodic mode wraps every axis and
    requires each side >= 3 (shorter wraps would create loops or double
    edges).
    """
    sides = [int(s) for s in np.atleast_1d(sides)]
    d = len(sides)
    if d < 1:
        raise ValidationError("dimension must be >= 1")
    if any(s < 1 for s in sides):
        raise ValidationError(f"every side must be >= 1, got {sides}")
    if boundary not in ("open", "periodic"):
        raise ValidationError(f"unknown boundary mode {boundary!r}")
    if boundary == "periodic" and any(s < 3 for s in sides):
        raise ValidationError("periodic boundary requires every side >= 3")

    coords = np.array(list(np.ndindex(*sides)), dtype=np.int64)
    n = len(coords)
    neighbors = [[] for _ in range(n)]
    for axis in range(d):
        for v in range(n):
            c = coords[v].copy()
            c[axis] += 1
            if c[axis] < sides[axis]:
                u = int(np.ravel_multi_index(c, sides))
            elif boundary == "periodic":
                c[axis] = 0
                u = int(np.ravel_multi_index(c, sides))
            else:
                continue
            neighbors[v].append(u)
            neighbors[u].append(v)
    return GraphTopology(
        kind="lattice",
        params={"sides": sides, "boundary": boundary},
        neighbors=neighbors,
        coords=coords,
    )


def build_bethe(branching, depth, vertex_cap=BETHE_VERTEX_CAP):
    """Rooted tree: the root has `branching` children, every interior vertex
    has `branching` children, leaves sit at the given depth.

    Vertex count is (K^(depth+1) - 1) / (K - 1) for K = branching; the
    construction is rejected when it would exceed `vertex_cap`.
    """
    K = int(branching)
    depth = int(depth)
    if K < 2:
        raise ValidationError(f"branching must be >= 2, got {K}")
    if depth < 0:
        raise ValidationError("depth must be >= 0")
    n = (K ** (depth + 1) - 1) // (K - 1)
    if n > vertex_cap:
        raise BudgetExceededError(
            f"bethe construction needs {n} vertices, above the cap {vertex_cap}")

    neighbors = [[] for _ in range(n)]
    parents = np.full(n, -1, dtype=np.int64)
    depths = np.zeros(n, dtype=np.int64)
    next_id = 1
    frontier = [0]
    for level in range(depth):
        nxt = []
        for v in frontier:
            for _ in range(K):
                u = next_id
                next_id += 1
                neighbors[v].append(u)
                neighbors[u].append(v)
                parents[u] = v
                depths[u] = level + 1
                nxt.append(u)
        frontier = nxt
    return GraphTopology(
        kind="bethe",
        params={"branching": K, "depth": depth},
        neighbors=neighbors,
        parents=parents,
        depths=depths,
    )


def build_delone(sides, window_radius, seed):
    """Full lattice plus an active-site mask satisfying the Delone condition.

    The domain is partitioned into disjoint aligned cubes of side R+1
    (truncated at the domain edge) and exactly one masked site is placed
    uniformly at random in each cube.  Any cube of side 2R+1 positioned
    inside the domain contains a full cell, hence a masked site, so the
    condition holds by construction for every seed.
    """
    sides = [int(s) for s in np.atleast_1d(sides)]
    R = int(window_radius)
    if R < 0:
        raise ValidationError("window radius must be >= 0")
    if R > min(sides):
        raise ValidationError(
            f"window radius {R} larger than a domain side {min(sides)}")
    base = build_lattice(sides, boundary="open")
    cell = R + 1
    rng = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), 0]))
    mask = np.zeros(base.vertex_count, dtype=bool)
    cell_counts = [int(np.ceil(s / cell)) for s in sides]
    for cell_idx in np.ndindex(*cell_counts):
        lo = np.array(cell_idx, dtype=np.int64) * cell
        hi = np.minimum(lo + cell, sides)
        widths = hi - lo
        offset = np.array([rng.integers(0, w) for w in widths], dtype=np.int64)
        v = int(np.ravel_multi_index(lo + offset, sides))
        mask[v] = True
    return GraphTopology(
        kind="delone",
        params={"sides": sides, "window_radius": R, "seed": int(seed)},
        neighbors=[nb.tolist() for nb in base.neighbors],
        coords=base.coords,
        mask=mask,
    )


@dataclass(frozen=True)
class BoxRegion:
    """Box of side L centered on a vertex: the sup-norm ball of radius
    floor(L/2) in coordinates (graph-distance ball on trees)."""

    center: int
    side: int

    def radius(self):
        return self.side // 2

    def members(self, topology):
        r = self.radius()
        if topology.kind == "bethe":
            dist = topology.bfs_distances(self.center)
            return np.flatnonzero((dist >= 0) & (dist <= r))
        c = topology.coords[int(self.center)]
        diff = np.abs(topology.coords - c)
        if topology.kind == "lattice" and topology.params["boundary"] == "periodic":
            sides = np.array(topology.params["sides"])
            diff = np.minimum(diff, sides - diff)
        return np.flatnonzero(diff.max(axis=1) <= r)


def resolve_region(topology, region):
    """Normalize a region argument (BoxRegion or vertex iterable) to a
    sorted unique vertex-id array."""
    if isinstance(region, BoxRegion):
        members = region.members(topology)
    else:
        members = np.asarray(sorted(set(int(v) for v in region)), dtype=np.int64)
    if members.size == 0:
        raise ValidationError("region is empty")
    if members.min() < 0 or members.max() >= topology.vertex_count:
        raise ValidationError("region contains out-of-range vertices")
    return members


@dataclass(frozen=True)
class BoundarySets:
    """Edge boundary (ordered pairs u in region, v outside, u~v), inner and
    outer vertex boundaries.  `warning` is set when the region covers the
    whole vertex set (all three sets are then empty)."""

    edge_boundary: tuple
    inner: tuple
    outer: tuple
    warning: str | None = None


def boundary_sets(topology, region):
    """Boundary of a region: cut pairs plus their inner/outer projections,
    in lexicographic order."""
    members = resolve_region(topology, region)
    inside = np.zeros(topology.vertex_count, dtype=bool)
    inside[members] = True
    pairs = []
    for u in members:
        for v in topology.neighbors[int(u)]:
            if not inside[v]:
                pairs.append((int(u), int(v)))
    pairs.sort()
    warning = None
    if members.size == topology.vertex_count:
        warning = "region covers the whole vertex set; boundary is empty"
    inner = tuple(sorted({u for u, _ in pairs}))
    outer = tuple(sorted({v for _, v in pairs}))
    return BoundarySets(tuple(pairs), inner, outer, warning)


def graph_distance(topology, x, y):
    """Distance between two vertices.

    Lattice kind uses the sup-norm of the coordinate difference (minimum
    wrapped sup-norm when periodic); bethe and delone kinds use
    breadth-first path length.
    """
    x, y = int(x), int(y)
    n = topology.vertex_count
    if not (0 <= x < n and 0 <= y < n):
        raise ValidationError("vertex id out of range")
    if topology.kind == "lattice":
        diff = np.abs(topology.coords[x] - topology.coords[y])
        if topology.params["boundary"] == "periodic":
            sides = np.array(topology.params["sides"])
            diff = np.minimum(diff, sides - diff)
        return int(diff.max())
    dist = topology.bfs_distances(x)
    return int(dist[y])


def topology_to_json(topology):
    """Serialize to a JSON document with a sorted edge list; round-trips
    bit-exactly through `topology_from_json`."""
    doc = {
        "kind": topology.kind,
        "parameters": topology.params,
        "vertex_count": topology.vertex_count,
        "adjacency": [list(e) for e in topology.edge_list()],
        "mask": None if topology.mask is None else topology.mask.astype(int).tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def topology_from_json(text):
    doc = json.loads(text)
    kind = doc["kind"]
    params = doc["parameters"]
    if kind == "lattice":
        topo = build_lattice(params["sides"], params["boundary"])
    elif kind == "bethe":
        topo = build_bethe(params["branching"], params["depth"])
    elif kind == "delone":
        topo = build_delone(params["sides"], params["window_radius"], params["seed"])
    else:
        raise ValidationError(f"unknown topology kind {kind!r}")
    if topo.vertex_count != doc["vertex_count"]:
        raise ValidationError("vertex count mismatch in serialized topology")
    if [list(e) for e in topo.edge_list()] != doc["adjacency"]:
        raise ValidationError("adjacency mismatch in serialized topology")
    if doc["mask"] is not None:
        stored = np.array(doc["mask"], dtype=bool)
        if topo.mask is None or not np.array_equal(stored, topo.mask):
            raise ValidationError("mask mismatch in serialized topology")
    return topo
