"""Shared fixtures: meshes and solved eigenpairs reused across test modules."""

import numpy as np
import pytest

from eigenadapt.eigen import solve_smallest
from eigenadapt.fem import assemble, build_space
from eigenadapt.geometry import builtin_domain, initial_mesh


@pytest.fixture(scope="session")
def lshape_mesh():
    return initial_mesh(builtin_domain("omega1"), 8)


@pytest.fixture(scope="session")
def lshape_p1(lshape_mesh):
    """P1 space with the first 16 eigenpairs on the level-0 L-shape mesh."""
    space = build_space(lshape_mesh, 1)
    a_mat, m_mat = assemble(space)
    pairs = solve_smallest(a_mat, m_mat, 16, seed=0)
    return space, pairs


@pytest.fixture(scope="session")
def square_mesh_n4():
    return initial_mesh(builtin_domain("unit_square"), 4)


@pytest.fixture(scope="session")
def square_p2(square_mesh_n4):
    """P2 space with a few eigenpairs on a small unit-square mesh."""
    space = build_space(square_mesh_n4, 2)
    a_mat, m_mat = assemble(space)
    pairs = solve_smallest(a_mat, m_mat, 5, seed=0)
    return space, pairs


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
