"""Domain descriptions and structured initial meshes.

A domain is an axis-aligned rectilinear polygon, optionally cut by straight
slits.  Initial meshes are criss-cross lattices: every lattice square inside
the polygon is split along its upper-left to lower-right diagonal.  Slits
that run along lattice lines are realized by duplicating the mesh vertices
strictly inside the slit, one copy per side, so the two sides are decoupled
topologically while the slit tip stays a single shared vertex.

All geometric predicates used during construction (point in polygon, point
on segment, lattice membership) are evaluated in exact rational arithmetic;
floating point enters only through the final coordinate arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import GeometryError
from .mesh import Triangulation, assign_refinement_edges

BUILTIN_DOMAINS = ("omega1", "omega2", "omega3", "unit_square")

Point = tuple[float, float]


@dataclass(frozen=True)
class DomainSpec:
    """Polygonal domain with optional slits.

    polygon: CCW-ordered vertices of a simple axis-aligned polygon.
    slits:   straight segments ((x1, y1), (x2, y2)) strictly inside the
             closed polygon except possibly for endpoints on its boundary.
    """

    name: str
    polygon: tuple[Point, ...]
    slits: tuple[tuple[Point, Point], ...] = ()


def builtin_domain(name: str) -> DomainSpec:
    """Return one of the built-in benchmark domains."""
    if name == "unit_square":
        return DomainSpec("unit_square",
                          ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
    if name == "omega1":
        # unit square with the lower right quadrant removed
        return DomainSpec("omega1",
                          ((0.0, 0.0), (0.5, 0.0), (0.5, 0.5),
                           (1.0, 0.5), (1.0, 1.0), (0.0, 1.0)))
    if name == "omega2":
        square = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))
        slits = (((0.5, 0.0), (1.0, 0.0)),
                 ((0.0, 0.5), (0.0, 1.0)),
                 ((-0.5, 0.0), (-1.0, 0.0)),
                 ((0.0, -0.5), (0.0, -1.0)))
        return DomainSpec("omega2", square, slits)
    if name == "omega3":
        # omega2 with the interior slit endpoints perturbed off the lattice
        square = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))
        slits = (((0.505, 0.0), (1.0, 0.0)),
                 ((0.0, 0.501), (0.0, 1.0)),
                 ((-0.499, 0.0), (-1.0, 0.0)),
                 ((0.0, -0.5), (0.0, -1.0)))
        return DomainSpec("omega3", square, slits)
    raise GeometryError(f"unknown built-in domain {name!r}; "
                        f"available: {', '.join(BUILTIN_DOMAINS)}")


def _fr(x: float) -> Fraction:
    return Fraction(float(x))


def _orient(a, b, c) -> int:
    """Sign of the cross product (b-a) x (c-a), exact."""
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _on_segment(p, a, b) -> bool:
    """Exact test: p lies on the closed segment [a, b]."""
    if _orient(a, b, p) != 0:
        return False
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def _segments_cross(a, b, c, d) -> bool:
    """Exact test: closed segments [a,b] and [c,d] share any point."""
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    return (_on_segment(c, a, b) or _on_segment(d, a, b)
            or _on_segment(a, c, d) or _on_segment(b, c, d))


def _point_in_polygon(p, poly) -> bool:
    """Exact even-odd test, assuming p is not on the boundary."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > p[1]) != (y2 > p[1]):
            t = (p[1] - y1) / (y2 - y1)
            xc = x1 + t * (x2 - x1)
            if xc > p[0]:
                inside = not inside
    return inside


def _on_polygon_boundary(p, poly) -> bool:
    n = len(poly)
    return any(_on_segment(p, poly[i], poly[(i + 1) % n]) for i in range(n))


def validate_domain(spec: DomainSpec) -> None:
    """Check that the polygon is simple and CCW and the slits are admissible."""
    poly = [(_fr(x), _fr(y)) for x, y in spec.polygon]
    n = len(poly)
    if n < 4:
        raise GeometryError("polygon needs at least 4 vertices")
    if len(set(poly)) != n:
        raise GeometryError("polygon has repeated vertices")
    area2 = sum(poly[i][0] * poly[(i + 1) % n][1]
                - poly[(i + 1) % n][0] * poly[i][1] for i in range(n))
    if area2 <= 0:
        raise GeometryError("polygon must be counterclockwise with positive area")
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if a[0] != b[0] and a[1] != b[1]:
            raise GeometryError("polygon must be axis-aligned rectilinear")
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            c, d = poly[j], poly[(j + 1) % n]
            if _segments_cross(a, b, c, d):
                raise GeometryError("polygon edges intersect; polygon is not simple")
    slits = [((_fr(p[0]), _fr(p[1])), (_fr(q[0]), _fr(q[1])))
             for p, q in spec.slits]
    for si, (p, q) in enumerate(slits):
        if p == q:
            raise GeometryError(f"slit {si} has zero length")
        if p[0] != q[0] and p[1] != q[1]:
            raise GeometryError(f"slit {si} must be axis-aligned")
        for r in (p, q):
            if not (_point_in_polygon(r, poly) or _on_polygon_boundary(r, poly)):
                raise GeometryError(f"slit {si} endpoint lies outside the polygon")
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            if _segments_cross(p, q, a, b):
                # touching the boundary with an endpoint is fine
                if not (_on_segment(p, a, b) or _on_segment(q, a, b)):
                    raise GeometryError(f"slit {si} crosses the polygon boundary")
                mid = ((p[0] + q[0]) / 2, (p[1] + q[1]) / 2)
                if _on_segment(mid, a, b):
                    raise GeometryError(f"slit {si} runs along the polygon boundary")
        for sj in range(si + 1, len(slits)):
            r, s = slits[sj]
            if _segments_cross(p, q, r, s):
                raise GeometryError(f"slits {si} and {sj} intersect")


def slit_tips(spec: DomainSpec) -> list[Point]:
    """Slit endpoints strictly inside the polygon (the singular tips)."""
    poly = [(_fr(x), _fr(y)) for x, y in spec.polygon]
    tips = []
    for p, q in spec.slits:
        for r in (p, q):
            if not _on_polygon_boundary((_fr(r[0]), _fr(r[1])), poly):
                tips.append(r)
    return tips


def initial_mesh(spec: DomainSpec, n: int) -> Triangulation:
    """Criss-cross initial mesh with n lattice subdivisions per unit length.

    Every lattice square whose center is inside the polygon contributes two
    triangles split along its upper-left to lower-right diagonal.  Polygon
    vertices must lie on the lattice.  Slit endpoints may be off-lattice by
    less than half a spacing; the nearest lattice node is then moved onto
    the endpoint and triangle positivity is re-checked.
    """
    if n < 1:
        raise GeometryError("n must be a positive integer")
    validate_domain(spec)
    s = Fraction(1, n)
    poly = [(_fr(x), _fr(y)) for x, y in spec.polygon]
    for x, y in poly:
        if (x / s).denominator != 1 or (y / s).denominator != 1:
            raise GeometryError(f"polygon vertex ({x}, {y}) is not on the 1/{n} lattice")

    xs = [p[0] for p in poly]
    ys = [p[1] for p in poly]
    imin, imax = int(min(xs) / s), int(max(xs) / s)
    jmin, jmax = int(min(ys) / s), int(max(ys) / s)

    squares = []
    used = set()
    half = Fraction(1, 2)
    for j in range(jmin, jmax):
        for i in range(imin, imax):
            center = ((i + half) * s, (j + half) * s)
            if _point_in_polygon(center, poly):
                squares.append((i, j))
                used.update([(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)])
    if not squares:
        raise GeometryError("no lattice square lies inside the polygon")

    nodes = sorted(used, key=lambda ij: (ij[1], ij[0]))
    index = {ij: k for k, ij in enumerate(nodes)}
    coords = np.array([[float(i * s), float(j * s)] for i, j in nodes])

    tris = []
    for i, j in squares:
        a, b = index[(i, j)], index[(i + 1, j)]
        c, d = index[(i + 1, j + 1)], index[(i, j + 1)]
        tris.append([a, b, d])   # below the diagonal d-b
        tris.append([b, c, d])   # above the diagonal d-b
    tris = np.array(tris, dtype=np.int64)

    # snap off-lattice slit endpoints onto the nearest lattice node
    moved = {}
    for p, q in spec.slits:
        for r in (p, q):
            rf = (_fr(r[0]), _fr(r[1]))
            if (rf[0] / s).denominator == 1 and (rf[1] / s).denominator == 1:
                continue
            d2 = np.sum((coords - np.asarray(r)) ** 2, axis=1)
            k = int(np.argmin(d2))
            if d2[k] >= float(s * s) / 4.0:
                raise GeometryError(
                    f"slit endpoint {r} is too far from the lattice to snap")
            if k in moved and moved[k] != r:
                raise GeometryError("two slit endpoints snap to the same node")
            moved[k] = r
            coords[k] = r
    if moved:
        from .mesh import triangle_areas

        if np.any(triangle_areas(coords, tris) <= 0.0):
            raise GeometryError("snapping a slit endpoint flipped a triangle")

    tris = assign_refinement_edges(coords, tris)

    # resolve slits: duplicate interior chain vertices, one copy per side
    dirichlet = np.zeros(len(coords), dtype=bool)
    for k, (x, y) in enumerate(coords):
        if _on_polygon_boundary((_fr(x), _fr(y)), poly):
            dirichlet[k] = True

    incident: dict[int, list[int]] = {}
    for t, tri in enumerate(tris):
        for v in tri:
            incident.setdefault(int(v), []).append(t)
    edge_set = set()
    for tri in tris:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edge_set.add((min(a, b), max(a, b)))

    coords_list = [tuple(c) for c in coords]
    dirichlet_list = list(dirichlet)
    tris = tris.copy()

    for p, q in spec.slits:
        pf = np.asarray(p, dtype=np.float64)
        qf = np.asarray(q, dtype=np.float64)
        pq = (_fr(q[0]) - _fr(p[0]), _fr(q[1]) - _fr(p[1]))
        chain = []
        for k, (x, y) in enumerate(coords_list[:len(coords)]):
            pv = (_fr(x) - _fr(p[0]), _fr(y) - _fr(p[1]))
            if pq[0] * pv[1] - pq[1] * pv[0] != 0:
                continue
            dot = pq[0] * pv[0] + pq[1] * pv[1]
            if 0 <= dot <= pq[0] * pq[0] + pq[1] * pq[1]:
                chain.append((dot, k))
        chain.sort()
        verts = [k for _, k in chain]
        if len(verts) < 3:
            raise GeometryError(
                f"lattice too coarse to resolve slit {p}-{q}: "
                "need at least one interior slit vertex")
        for a, b in zip(verts[:-1], verts[1:]):
            if (min(a, b), max(a, b)) not in edge_set:
                raise GeometryError(f"slit {p}-{q} is not aligned with mesh edges")
        for k in verts:
            dirichlet_list[k] = True
        normal = np.array([-(qf[1] - pf[1]), qf[0] - pf[0]])
        for k in verts[1:-1]:
            dup = len(coords_list)
            coords_list.append(coords_list[k])
            dirichlet_list.append(True)
            for t in incident[k]:
                centroid = np.mean([coords_list[v] for v in tris[t]], axis=0)
                side = np.dot(centroid - pf, normal)
                if side == 0.0:
                    raise GeometryError("triangle centroid on slit line; "
                                        "mesh cannot be split")
                if side < 0.0:
                    tris[t][tris[t] == k] = dup

    return Triangulation.from_arrays(
        np.array(coords_list, dtype=np.float64), tris,
        dirichlet=np.array(dirichlet_list, dtype=bool))


def write_domain(spec: DomainSpec, path) -> None:
    """Write the plain-text domain format (polygon block plus slit lines)."""
    lines = ["# domain description", "polygon"]
    for x, y in spec.polygon:
        lines.append(f"{x!r} {y!r}")
    for (x1, y1), (x2, y2) in spec.slits:
        lines.append(f"slit {x1!r} {y1!r} {x2!r} {y2!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_domain(text: str, name: str = "custom") -> DomainSpec:
    """Parse the plain-text domain format; see :func:`write_domain`."""
    polygon: list[Point] = []
    slits: list[tuple[Point, Point]] = []
    in_polygon = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "polygon":
            if len(parts) != 1:
                raise GeometryError(f"line {lineno}: 'polygon' takes no arguments")
            in_polygon = True
            continue
        if parts[0] == "slit":
            if len(parts) != 5:
                raise GeometryError(f"line {lineno}: slit needs x1 y1 x2 y2")
            try:
                x1, y1, x2, y2 = map(float, parts[1:])
            except ValueError as exc:
                raise GeometryError(f"line {lineno}: {exc}") from exc
            slits.append(((x1, y1), (x2, y2)))
            in_polygon = False
            continue
        if in_polygon and len(parts) == 2:
            try:
                polygon.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise GeometryError(f"line {lineno}: {exc}") from exc
            continue
        raise GeometryError(f"line {lineno}: cannot parse {raw!r}")
    if len(polygon) < 4:
        raise GeometryError("domain file must list a polygon with >= 4 vertices")
    spec = DomainSpec(name, tuple(polygon), tuple(slits))
    validate_domain(spec)
    return spec


def read_domain(path) -> DomainSpec:
    with open(path) as fh:
        text = fh.read()
    return parse_domain(text, name=str(path))


def resolve_domain(ident: str) -> DomainSpec:
    """Map a builtin id or a file path to a DomainSpec."""
    if ident in BUILTIN_DOMAINS:
        return builtin_domain(ident)
    import os

    if os.path.exists(ident):
        return read_domain(ident)
    raise GeometryError(f"{ident!r} is neither a built-in domain nor a file")
