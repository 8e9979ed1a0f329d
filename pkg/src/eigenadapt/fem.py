"""P1/P2 Lagrange elements: spaces, exact assembly, point evaluation.

Element matrices are closed-form expressions in the element area and the
pairwise inner products of the barycentric gradients, so assembly involves
no numerical quadrature.  Homogeneous Dirichlet conditions are imposed by
eliminating constrained rows and columns, never by penalties.

P2 local dof order is (v0, v1, v2, e0, e1, e2) where edge dof ``e_m`` sits
on the edge opposite vertex ``m``.  Edge dofs are keyed by the sorted vertex
index pair of their edge, so the two sides of a slit get independent dofs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse

from .mesh import Triangulation

# reference P1 mass matrix over the element area
_M1_REF = np.array([[2.0, 1.0, 1.0],
                    [1.0, 2.0, 1.0],
                    [1.0, 1.0, 2.0]]) / 12.0

# reference P2 mass matrix over the element area, dof order (v0,v1,v2,e0,e1,e2)
_M2_REF = np.array([
    [6.0, -1.0, -1.0, -4.0, 0.0, 0.0],
    [-1.0, 6.0, -1.0, 0.0, -4.0, 0.0],
    [-1.0, -1.0, 6.0, 0.0, 0.0, -4.0],
    [-4.0, 0.0, 0.0, 32.0, 16.0, 16.0],
    [0.0, -4.0, 0.0, 16.0, 32.0, 16.0],
    [0.0, 0.0, -4.0, 16.0, 16.0, 32.0],
]) / 180.0


@dataclass
class FeSpace:
    """Lagrange finite element space of degree 1 or 2 on a triangulation."""

    tri: Triangulation
    degree: int
    elem_dofs: np.ndarray      # (nt, 3) or (nt, 6) global dof per local dof
    dof_coords: np.ndarray     # (ndof, 2) nodal points
    is_dirichlet: np.ndarray   # (ndof,) bool
    free: np.ndarray           # free dof indices, ascending
    full_to_free: np.ndarray   # (ndof,) position among free dofs, -1 if constrained

    @property
    def n_dofs(self) -> int:
        return self.dof_coords.shape[0]

    @property
    def n_free(self) -> int:
        return self.free.shape[0]

    @cached_property
    def bary_grads(self) -> np.ndarray:
        """Barycentric coordinate gradients, shape (nt, 3, 2)."""
        return barycentric_gradients(self.tri)

    @cached_property
    def grad_products(self) -> np.ndarray:
        """d[t, i, j] = grad(lambda_i) . grad(lambda_j), shape (nt, 3, 3)."""
        g = self.bary_grads
        return np.einsum("tik,tjk->tij", g, g)


@dataclass
class FeFunction:
    """Coefficient vector over all dofs of a space (Dirichlet entries zero
    for conforming functions; raw coefficient vectors are also accepted)."""

    space: FeSpace
    coeffs: np.ndarray


def barycentric_gradients(tri: Triangulation) -> np.ndarray:
    p = tri.coords[tri.tris]                     # (nt, 3, 2)
    g = np.empty_like(p)
    inv_two_area = 1.0 / (2.0 * tri.areas)
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        g[:, i, 0] = -e[:, 1] * inv_two_area
        g[:, i, 1] = e[:, 0] * inv_two_area
    return g


def build_space(tri: Triangulation, degree: int) -> FeSpace:
    """Construct a P1 or P2 space with its Dirichlet partition."""
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    nt = tri.n_elements
    if degree == 1:
        elem_dofs = tri.tris.copy()
        dof_coords = tri.coords.copy()
        is_dirichlet = tri.dirichlet.copy()
    else:
        edges = np.stack([tri.tris[:, [1, 2]], tri.tris[:, [2, 0]],
                          tri.tris[:, [0, 1]]], axis=1).reshape(-1, 2)
        edges_sorted = np.sort(edges, axis=1)
        uniq, inverse = np.unique(edges_sorted, axis=0, return_inverse=True)
        nv = tri.n_vertices
        elem_dofs = np.concatenate(
            [tri.tris, nv + inverse.reshape(nt, 3)], axis=1)
        mid = 0.5 * (tri.coords[uniq[:, 0]] + tri.coords[uniq[:, 1]])
        dof_coords = np.concatenate([tri.coords, mid], axis=0)
        edge_dirichlet = np.zeros(uniq.shape[0], dtype=bool)
        boundary_flat = (tri.neighbors.reshape(-1) == -1)
        edge_dirichlet[inverse[boundary_flat]] = True
        is_dirichlet = np.concatenate([tri.dirichlet, edge_dirichlet])
    free = np.nonzero(~is_dirichlet)[0].astype(np.int64)
    full_to_free = np.full(dof_coords.shape[0], -1, dtype=np.int64)
    full_to_free[free] = np.arange(free.size)
    return FeSpace(tri, degree, elem_dofs.astype(np.int64), dof_coords,
                   is_dirichlet, free, full_to_free)


def local_matrices(space: FeSpace) -> tuple[np.ndarray, np.ndarray]:
    """Exact element stiffness and mass matrices, shapes (nt, nd, nd)."""
    tri = space.tri
    area = tri.areas
    d = space.grad_products
    if space.degree == 1:
        K = area[:, None, None] * d
        M = area[:, None, None] * _M1_REF
        return K, M
    nt = tri.n_elements
    K = np.empty((nt, 6, 6))
    a43 = 4.0 * area / 3.0
    a83 = 8.0 * area / 3.0
    for i in range(3):
        K[:, i, i] = area * d[:, i, i]
        for j in range(i + 1, 3):
            vij = -area * d[:, i, j] / 3.0
            K[:, i, j] = vij
            K[:, j, i] = vij
    for i in range(3):
        for m in range(3):
            if m == i:
                K[:, i, 3 + m] = 0.0
                K[:, 3 + m, i] = 0.0
            else:
                b = 3 - i - m
                vim = a43 * d[:, i, b]
                K[:, i, 3 + m] = vim
                K[:, 3 + m, i] = vim
    for m in range(3):
        a, b = ((1, 2), (2, 0), (0, 1))[m]
        K[:, 3 + m, 3 + m] = a83 * (d[:, a, a] + d[:, b, b] + d[:, a, b])
        for n in range(m + 1, 3):
            r = 3 - m - n
            vmn = a83 * d[:, m, n] + a43 * (d[:, n, r] + d[:, m, r] + d[:, r, r])
            K[:, 3 + m, 3 + n] = vmn
            K[:, 3 + n, 3 + m] = vmn
    M = area[:, None, None] * _M2_REF
    return K, M


@dataclass
class SymmetricSparseOperator:
    """Sparse symmetric matrix in CSR form with a constraint marker."""

    matrix: scipy.sparse.csr_matrix
    constrained: bool

    @property
    def shape(self):
        return self.matrix.shape

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def write_matrix_market(self, path) -> None:
        scipy.io.mmwrite(str(path), self.matrix, symmetry="symmetric")


def _scatter(space: FeSpace, local: np.ndarray) -> scipy.sparse.csr_matrix:
    nd = local.shape[1]
    rows = np.repeat(space.elem_dofs, nd, axis=1).reshape(-1)
    cols = np.tile(space.elem_dofs, (1, nd)).reshape(-1)
    mat = scipy.sparse.coo_matrix(
        (local.reshape(-1), (rows, cols)),
        shape=(space.n_dofs, space.n_dofs))
    return mat.tocsr()


def assemble(space: FeSpace, constrained: bool = True
             ) -> tuple[SymmetricSparseOperator, SymmetricSparseOperator]:
    """Assemble stiffness A and mass M.

    With ``constrained=True`` (default), rows and columns of Dirichlet dofs
    are eliminated and the operators act on free dofs only.  Local matrices
    are exactly symmetric and scattered pairwise, so ``A == A.T`` holds
    bit for bit.
    """
    K_loc, M_loc = local_matrices(space)
    A = _scatter(space, K_loc)
    M = _scatter(space, M_loc)
    if constrained:
        f = space.free
        A = A[f][:, f].tocsr()
        M = M[f][:, f].tocsr()
    return (SymmetricSparseOperator(A, constrained),
            SymmetricSparseOperator(M, constrained))


def shape_values(degree: int, bary) -> np.ndarray:
    """Shape function values at barycentric points.

    bary may have any leading shape with a trailing axis of length 3; the
    result appends an axis of length 3 (P1) or 6 (P2).
    """
    bary = np.asarray(bary, dtype=np.float64)
    if degree == 1:
        return bary.copy()
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    out = np.empty(bary.shape[:-1] + (6,))
    out[..., 0] = l0 * (2.0 * l0 - 1.0)
    out[..., 1] = l1 * (2.0 * l1 - 1.0)
    out[..., 2] = l2 * (2.0 * l2 - 1.0)
    out[..., 3] = 4.0 * l1 * l2
    out[..., 4] = 4.0 * l2 * l0
    out[..., 5] = 4.0 * l0 * l1
    return out


def evaluate(f: FeFunction, elem: int, bary) -> float:
    """Value of f at a barycentric point of one element."""
    vals = shape_values(f.space.degree, bary)
    return float(vals @ f.coeffs[f.space.elem_dofs[elem]])

def evaluate_gradient(f: FeFunction, elem: int, bary) -> np.ndarray:
    """Gradient of f at a barycentric point of one element."""
    bary = np.asarray(bary, dtype=np.float64)
    g = f.space.bary_grads[elem]            # (3, 2)
    c = f.coeffs[f.space.elem_dofs[elem]]
    if f.space.degree == 1:
        return (c[:, None] * g).sum(axis=0)
    grads = np.empty((6, 2))
    for i in range(3):
        grads[i] = (4.0 * bary[i] - 1.0) * g[i]
    for m, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        grads[3 + m] = 4.0 * (bary[b] * g[a] + bary[a] * g[b])
    return (c[:, None] * grads).sum(axis=0)


def values_at_bary(f: FeFunction, bary) -> np.ndarray:
    """Values of f at one barycentric point in every element, shape (nt,)."""
    vals = shape_values(f.space.degree, bary)
    return f.coeffs[f.space.elem_dofs] @ vals


def corner_gradients(f: FeFunction) -> np.ndarray:
    """Gradient of f at the three corners of every element, shape (nt, 3, 2).

    For P1 the gradient is constant, so the three corner values coincide.
    """
    space = f.space
    g = space.bary_grads                            # (nt, 3, 2)
    c = f.coeffs[space.elem_dofs]                   # (nt, nd)
    if space.degree == 1:
        const = np.einsum("ti,tik->tk", c, g)
        return np.repeat(const[:, None, :], 3, axis=1)
    out = np.empty((space.tri.n_elements, 3, 2))
    for corner in range(3):
        acc = np.zeros((space.tri.n_elements, 2))
        for i in range(3):
            coef = 3.0 if i == corner else -1.0
            acc += coef * c[:, i, None] * g[:, i]
        for m, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
            # grad psi_m = 4 (l_b grad l_a + l_a grad l_b); at a corner the
            # barycentric coordinates are 0/1 indicators
            if corner == b:
                acc += 4.0 * c[:, 3 + m, None] * g[:, a]
            elif corner == a:
                acc += 4.0 * c[:, 3 + m, None] * g[:, b]
        out[:, corner] = acc
    return out


def element_laplacians(f: FeFunction) -> np.ndarray:
    """Constant per-element Laplacian of f, shape (nt,).  Zero for P1."""
    space = f.space
    nt = space.tri.n_elements
    if space.degree == 1:
        return np.zeros(nt)
    d = space.grad_products
    c = f.coeffs[space.elem_dofs]
    lap = np.zeros(nt)
    for i in range(3):
        lap += 4.0 * c[:, i] * d[:, i, i]
    for m, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        lap += 8.0 * c[:, 3 + m] * d[:, a, b]
    return lap


def interpolate(space: FeSpace, g) -> FeFunction:
    """Nodal interpolant of a callable g(x, y); Dirichlet dofs are zeroed."""
    x, y = space.dof_coords[:, 0], space.dof_coords[:, 1]
    coeffs = np.asarray(g(x, y), dtype=np.float64)
    if coeffs.shape != (space.n_dofs,):
        raise ValueError("interpolated callable must be vectorized over nodes")
    coeffs = coeffs.copy()
    coeffs[space.is_dirichlet] = 0.0
    return FeFunction(space, coeffs)


def from_free_vector(space: FeSpace, vec: np.ndarray) -> FeFunction:
    """Expand a free-dof coefficient vector to a full FeFunction."""
    coeffs = np.zeros(space.n_dofs)
    coeffs[space.free] = vec
    return FeFunction(space, coeffs)
