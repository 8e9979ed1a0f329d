"""Conforming triangulations and newest vertex bisection refinement.

A triangulation stores, per triangle, the vertex triple ordered so that the
refinement edge is opposite local vertex 0 (the peak).  Bisection inserts the
midpoint of the refinement edge, which becomes the peak of both children; the
two remaining edges of the parent become the children's refinement edges.
Conformity is restored by recursively bisecting the neighbor across the
refinement edge first whenever its own refinement edge differs (compatible
chains), so the mesh never contains hanging nodes.

Two refinement strategies are exposed:

- ``nvb``:        plain newest vertex bisection with conformity closure
- ``bisec_lg1``:  newest vertex bisection followed by a grading closure that
                  bounds the generation difference of edge-adjacent triangles
                  by ``MAX_ADJACENT_GEN_DIFF``

Slit domains are handled transparently: the two sides of a slit use distinct
vertex indices, so slit faces are boundary edges to the mesh kernel and never
pair up during refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import MeshError

REFINE_STRATEGIES = ("nvb", "bisec_lg1")

# grading bound enforced by the bisec_lg1 strategy
MAX_ADJACENT_GEN_DIFF = 2

_GRADING_PASS_CAP = 100000


@dataclass(frozen=True)
class MarkSet:
    """Set of triangle indices selected for refinement."""

    elements: np.ndarray  # sorted int64 indices, no duplicates

    def __len__(self) -> int:
        return len(self.elements)

    @staticmethod
    def from_iterable(indices) -> "MarkSet":
        arr = np.unique(np.asarray(list(indices), dtype=np.int64))
        return MarkSet(arr)


@dataclass
class Triangulation:
    """Immutable conforming triangle mesh.

    Attributes
    ----------
    coords : (nv, 2) float array
        Vertex coordinates.  Two vertices may share coordinates only when
        they are the two sides of a slit.
    tris : (nt, 3) int array
        Vertex triples, counterclockwise, peak (newest vertex) first; the
        refinement edge is the edge opposite local vertex 0.
    gen : (nt,) int array
        Bisection generation, 0 on initial meshes.
    dirichlet : (nv,) bool array
        True for vertices on the Dirichlet boundary (outer polygon, slit
        faces and slit tips).
    neighbors : (nt, 3) int array
        ``neighbors[t, e]`` is the triangle sharing the edge opposite local
        vertex ``e`` of ``t``, or -1 on the boundary.
    parent : (nt,) int array
        Index of the ancestor element in the mesh this one was refined from
        (self-index for untouched elements and initial meshes).
    root : (nt,) int array
        Index of the generation-0 ancestor in the initial mesh.
    root_area : (nt,) float array
        Area of that ancestor; ``area(T) == root_area(T) * 2**(-gen(T))``
        up to roundoff.
    """

    coords: np.ndarray
    tris: np.ndarray
    gen: np.ndarray
    dirichlet: np.ndarray
    neighbors: np.ndarray
    parent: np.ndarray
    root: np.ndarray
    root_area: np.ndarray

    def __post_init__(self):
        for name in ("coords", "tris", "gen", "dirichlet", "neighbors",
                     "parent", "root", "root_area"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.tris.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        a = triangle_areas(self.coords, self.tris)
        a.setflags(write=False)
        return a

    @cached_property
    def h(self) -> np.ndarray:
        """Per-element mesh size, defined as sqrt of the element area."""
        h = np.sqrt(self.areas)
        h.setflags(write=False)
        return h

    @staticmethod
    def from_arrays(coords, tris, dirichlet=None, gen=None) -> "Triangulation":
        """Build a triangulation from raw coordinate and connectivity arrays.

        The vertex triples must already be CCW with the refinement edge
        opposite local vertex 0.  Neighbors are reconstructed from the
        connectivity; ``dirichlet`` defaults to all boundary-edge endpoints.
        """
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        tris = np.ascontiguousarray(tris, dtype=np.int64)
        nt = tris.shape[0]
        areas = triangle_areas(coords, tris)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} has non-positive area {areas[bad]}")
        neighbors = build_neighbors(tris)
        if gen is None:
            gen = np.zeros(nt, dtype=np.int64)
        else:
            gen = np.asarray(gen, dtype=np.int64).copy()
        if dirichlet is None:
            dirichlet = np.zeros(coords.shape[0], dtype=bool)
            bmask = neighbors < 0
            for e in range(3):
                be = np.nonzero(bmask[:, e])[0]
                dirichlet[tris[be, (e + 1) % 3]] = True
                dirichlet[tris[be, (e + 2) % 3]] = True
        else:
            dirichlet = np.asarray(dirichlet, dtype=bool).copy()
        idx = np.arange(nt, dtype=np.int64)
        root_area = areas * np.exp2(gen.astype(np.float64))
        return Triangulation(coords, tris, gen, dirichlet, neighbors,
                             idx.copy(), idx.copy(), root_area)


def triangle_areas(coords, tris) -> np.ndarray:
    """Signed areas of the triangles (positive for CCW ordering)."""
    p0 = coords[tris[:, 0]]
    u = coords[tris[:, 1]] - p0
    v = coords[tris[:, 2]] - p0
    return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def build_neighbors(tris) -> np.ndarray:
    """Neighbor table from connectivity; raises on nonconforming input."""
    nt = tris.shape[0]
    # edge opposite local vertex e, rows ordered (t, e) flattened
    edges = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
    flat = np.sort(edges.reshape(-1, 2), axis=1)
    order = np.lexsort((flat[:, 1], flat[:, 0]))
    se = flat[order]
    same = np.all(se[1:] == se[:-1], axis=1)
    if np.any(same[1:] & same[:-1]):
        raise MeshError("an edge is shared by more than two triangles")
    nbr = np.full(nt * 3, -1, dtype=np.int64)
    i = np.nonzero(same)[0]
    a, b = order[i], order[i + 1]
    nbr[a] = b // 3
    nbr[b] = a // 3
    return nbr.reshape(nt, 3)


class _RefineState:
    """Growable mesh arrays used while a refinement pass is running."""

    __slots__ = ("coords", "dirichlet", "tris", "gen", "neighbors",
                 "parent", "root", "root_area", "alive")

    def __init__(self, tri: Triangulation):
        self.coords = [tuple(p) for p in tri.coords]
        self.dirichlet = [bool(b) for b in tri.dirichlet]
        self.tris = [list(t) for t in tri.tris]
        self.gen = [int(g) for g in tri.gen]
        self.neighbors = [list(nb) for nb in tri.neighbors]
        self.parent = list(range(tri.n_elements))
        self.root = [int(r) for r in tri.root]
        self.root_area = [float(a) for a in tri.root_area]
        # alive[t]: index t still holds the (unbisected) input element t
        self.alive = [True] * tri.n_elements

    def freeze(self) -> Triangulation:
        coords = np.array(self.coords, dtype=np.float64)
        tris = np.array(self.tris, dtype=np.int64)
        return Triangulation(
            coords,
            tris,
            np.array(self.gen, dtype=np.int64),
            np.array(self.dirichlet, dtype=bool),
            np.array(self.neighbors, dtype=np.int64),
            np.array(self.parent, dtype=np.int64),
            np.array(self.root, dtype=np.int64),
            np.array(self.root_area, dtype=np.float64),
        )


def _replace_neighbor(st: _RefineState, who: int, old: int, new: int) -> None:
    if who == -1:
        return
    row = st.neighbors[who]
    row[row.index(old)] = new


def _mark_dead(st: _RefineState, t: int) -> None:
    if t < len(st.alive):
        st.alive[t] = False


def _bisect_pair(st: _RefineState, t: int) -> None:
    """Bisect t across its refinement edge, together with the compatible
    neighbor when there is one.  Caller guarantees compatibility."""
    v0, v1, v2 = st.tris[t]
    nb = st.neighbors[t][0]
    x1, y1 = st.coords[v1]
    x2, y2 = st.coords[v2]
    m = len(st.coords)
    st.coords.append((0.5 * (x1 + x2), 0.5 * (y1 + y2)))
    st.dirichlet.append(nb == -1)

    n0, n1, n2 = st.neighbors[t]
    g = st.gen[t] + 1
    par, rt, ra = st.parent[t], st.root[t], st.root_area[t]
    tB = len(st.tris)
    _mark_dead(st, t)
    # child A keeps index t: (m, v0, v1); child B is appended: (m, v2, v0)
    st.tris[t] = [m, v0, v1]
    st.gen[t] = g
    st.tris.append([m, v2, v0])
    st.gen.append(g)
    st.parent.append(par)
    st.root.append(rt)
    st.root_area.append(ra)

    if nb == -1:
        st.neighbors[t] = [n2, -1, tB]
        st.neighbors.append([n1, t, -1])
        _replace_neighbor(st, n1, t, tB)
        return

    w0, w1, w2 = st.tris[nb]
    if w1 != v2 or w2 != v1:
        raise MeshError("refinement edge is not mutually shared; mesh is inconsistent")
    u0, u1, u2 = st.neighbors[nb]
    gq = st.gen[nb] + 1
    parq, rtq, raq = st.parent[nb], st.root[nb], st.root_area[nb]
    q = len(st.tris)
    _mark_dead(st, nb)
    st.tris[nb] = [m, w0, w1]
    st.gen[nb] = gq
    st.tris.append([m, w2, w0])
    st.gen.append(gq)
    st.parent.append(parq)
    st.root.append(rtq)
    st.root_area.append(raq)

    st.neighbors[t] = [n2, q, tB]
    st.neighbors.append([n1, t, nb])       # t's child B
    st.neighbors[nb] = [u2, tB, q]
    st.neighbors.append([u1, nb, t])       # nb's child B
    _replace_neighbor(st, n1, t, tB)
    _replace_neighbor(st, u1, nb, q)


def _bisect_compatible(st: _RefineState, t: int) -> None:
    """Bisect t, first refining neighbors along the compatibility chain."""
    stack = [t]
    while stack:
        top = stack[-1]
        nb = st.neighbors[top][0]
        if nb != -1 and st.neighbors[nb][0] != top:
            stack.append(nb)
            if len(stack) > len(st.tris) + 4:
                raise MeshError("compatibility chain failed to terminate")
            continue
        stack.pop()
        _bisect_pair(st, top)


def _enforce_grading(st: _RefineState, max_diff: int) -> None:
    """Bisect coarse triangles until adjacent generations differ by <= max_diff."""
    for _pass in range(_GRADING_PASS_CAP):
        gen, nbs = st.gen, st.neighbors
        coarse = set()
        for t in range(len(st.tris)):
            gt = gen[t]
            for nb in nbs[t]:
                if nb != -1 and gt - gen[nb] > max_diff:
                    coarse.add(nb)
        if not coarse:
            return
        for c in sorted(coarse):
            # a closure chain may have bisected c already; re-check first
            if any(x != -1 and gen[x] - gen[c] > max_diff for x in nbs[c]):
                _bisect_compatible(st, c)
    raise MeshError("grading closure failed to terminate")


def refine(tri: Triangulation, marked: MarkSet, strategy: str = "nvb") -> Triangulation:
    """Refine a triangulation by newest vertex bisection.

    Every marked triangle is bisected at least once; additional bisections
    restore conformity, and for ``bisec_lg1`` also the generation grading.
    The input mesh is left untouched.  Deterministic: marked triangles are
    processed in ascending index order.
    """
    if strategy not in REFINE_STRATEGIES:
        raise MeshError(f"unknown refinement strategy {strategy!r}")
    elems = np.asarray(marked.elements, dtype=np.int64)
    if elems.size and (elems.min() < 0 or elems.max() >= tri.n_elements):
        raise MeshError("marked set contains out-of-range element indices")
    st = _RefineState(tri)
    for t in elems:
        if st.alive[t]:
            _bisect_compatible(st, int(t))
    if strategy == "bisec_lg1":
        _enforce_grading(st, MAX_ADJACENT_GEN_DIFF)
    return st.freeze()


def uniform_refine(tri: Triangulation) -> Triangulation:
    """Two all-element bisection passes.

    On meshes whose refinement edges are mutually paired (the structured
    initial meshes and their uniform refinements) this quadruples the element
    count and adds 2 to every generation.
    """
    out = tri
    for _ in range(2):
        out = refine(out, MarkSet(np.arange(out.n_elements, dtype=np.int64)), "nvb")
    return out


@dataclass(frozen=True)
class MeshStats:
    n_elements: int
    n_vertices: int
    n_interior_dofs_p1: int
    h_max: float
    h_min: float
    min_angle_deg: float
    max_adjacent_gen_diff: int


def min_angle_deg(tri: Triangulation) -> float:
    p0 = tri.coords[tri.tris[:, 0]]
    p1 = tri.coords[tri.tris[:, 1]]
    p2 = tri.coords[tri.tris[:, 2]]
    angles = []
    for a, b, c in ((p0, p1, p2), (p1, p2, p0), (p2, p0, p1)):
        u, v = b - a, c - a
        cosang = np.sum(u * v, axis=1) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return float(np.min(angles))


def max_adjacent_gen_diff(tri: Triangulation) -> int:
    nb = tri.neighbors
    mask = nb >= 0
    if not np.any(mask):
        return 0
    gt = np.repeat(tri.gen[:, None], 3, axis=1)
    diffs = np.abs(gt[mask] - tri.gen[nb[mask]])
    return int(diffs.max())


def mesh_stats(tri: Triangulation) -> MeshStats:
    return MeshStats(
        n_elements=tri.n_elements,
        n_vertices=tri.n_vertices,
        n_interior_dofs_p1=int(np.count_nonzero(~tri.dirichlet)),
        h_max=float(tri.h.max()),
        h_min=float(tri.h.min()),
        min_angle_deg=min_angle_deg(tri),
        max_adjacent_gen_diff=max_adjacent_gen_diff(tri),
    )


def check_mesh(tri: Triangulation) -> None:
    """Validate structural invariants; raises MeshError on the first failure.

    Checks positive CCW areas, mutual neighbor consistency, at most two
    triangles per edge, dirichlet flags matching boundary-edge endpoints,
    and the generation/area law area(T) = root_area(T) * 2**(-gen(T)).
    """
    areas = triangle_areas(tri.coords, tri.tris)
    if np.any(areas <= 0.0):
        raise MeshError("non-positive triangle area")
    rebuilt = build_neighbors(tri.tris)
    if not np.array_equal(rebuilt, tri.neighbors):
        raise MeshError("stored neighbor table does not match connectivity")
    nt = tri.n_elements
    for t in range(nt):
        for e in range(3):
            nb = tri.neighbors[t, e]
            if nb == -1:
                continue
            if nb < 0 or nb >= nt:
                raise MeshError("neighbor index out of range")
            if t not in tri.neighbors[nb]:
                raise MeshError("neighbor table is not mutual")
    flagged = np.zeros(tri.n_vertices, dtype=bool)
    bmask = tri.neighbors < 0
    for e in range(3):
        be = np.nonzero(bmask[:, e])[0]
        flagged[tri.tris[be, (e + 1) % 3]] = True
        flagged[tri.tris[be, (e + 2) % 3]] = True
    if not np.array_equal(flagged, tri.dirichlet):
        raise MeshError("dirichlet flags do not match boundary edges")
    law = tri.root_area * np.exp2(-tri.gen.astype(np.float64))
    if np.any(np.abs(areas - law) > 1e-12 * tri.root_area):
        raise MeshError("generation/area law violated")


def assign_refinement_edges(coords, tris) -> np.ndarray:
    """Rotate vertex triples so the refinement edge sits opposite local 0.

    The refinement edge of each triangle is its longest edge; exact length
    ties are broken by the lexicographically smallest sorted vertex pair,
    which is a global total order on edges and therefore cannot produce
    compatibility cycles.
    """
    coords = np.asarray(coords, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.int64)
    out = np.empty_like(tris)
    for i, (p, q, r) in enumerate(tris):
        best_e, best_key = None, None
        for e, (a, b) in enumerate(((q, r), (r, p), (p, q))):
            d = coords[a] - coords[b]
            lo, hi = (a, b) if a < b else (b, a)
            # maximize length, break ties on the smaller index pair
            key = (-(d[0] * d[0] + d[1] * d[1]), lo, hi)
            if best_key is None or key < best_key:
                best_e, best_key = e, key
        out[i] = np.roll(tris[i], -best_e)
    return out


def write_mesh(tri: Triangulation, path) -> None:
    """Write the plain-text mesh format (17 significant digits)."""
    lines = [f"vertices {tri.n_vertices}", f"triangles {tri.n_elements}"]
    for (x, y), d in zip(tri.coords, tri.dirichlet):
        lines.append(f"{x:.17g} {y:.17g} {int(d)}")
    for (v0, v1, v2), g in zip(tri.tris, tri.gen):
        lines.append(f"{v0} {v1} {v2} {g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Triangulation:
    """Read the plain-text mesh format written by :func:`write_mesh`."""
    with open(path) as fh:
        tokens = fh.read().split()
    try:
        if tokens[0] != "vertices":
            raise MeshError("mesh file must start with 'vertices N'")
        nv = int(tokens[1])
        if tokens[2] != "triangles":
            raise MeshError("mesh file header missing 'triangles M'")
        nt = int(tokens[3])
        body = tokens[4:]
        if len(body) != 3 * nv + 4 * nt:
            raise MeshError("mesh file has a truncated or padded body")
        coords = np.empty((nv, 2), dtype=np.float64)
        dirichlet = np.empty(nv, dtype=bool)
        for i in range(nv):
            coords[i, 0] = float(body[3 * i])
            coords[i, 1] = float(body[3 * i + 1])
            dirichlet[i] = bool(int(body[3 * i + 2]))
        tris = np.empty((nt, 3), dtype=np.int64)
        gen = np.empty(nt, dtype=np.int64)
        off = 3 * nv
        for i in range(nt):
            tris[i] = [int(body[off + 4 * i + j]) for j in range(3)]
            gen[i] = int(body[off + 4 * i + 3])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file: {exc}") from exc
    return Triangulation.from_arrays(coords, tris, dirichlet=dirichlet, gen=gen)
