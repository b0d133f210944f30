"""Shared fixtures and matrix builders for the test suite."""

import numpy as np
import pytest

from al3.block_al import BlockSystem
from al3.probgen import GenSpec, generate
from al3.sparse_core import SparseMatrix


def random_spd(rng, k, shift=1.0):
    """Well-conditioned dense SPD matrix."""
    m = rng.standard_normal((k, k))
    a = m @ m.T / k + shift * np.eye(k)
    return (a + a.T) / 2.0


def random_sparse(rng, nrows, ncols, density=0.2):
    mask = rng.random((nrows, ncols)) < density
    vals = rng.standard_normal((nrows, ncols)) * mask
    return SparseMatrix.from_dense(vals)


def make_block_system(seed=42, n=30, m=20, p=10, coupling=0.05):
    """Random well-conditioned block system with weak (dominance-safe) coupling."""
    rng = np.random.default_rng(seed)
    a11 = SparseMatrix.from_dense(random_spd(rng, n))
    a22 = SparseMatrix.from_dense(random_spd(rng, m))
    a12d = rng.standard_normal((n, m))
    a12d[rng.random((n, m)) < 0.6] = 0.0
    nrm = np.linalg.norm(a12d, 2)
    a12 = SparseMatrix.from_dense(coupling * a12d / nrm if nrm else a12d)
    b = SparseMatrix.from_dense(rng.standard_normal((p, m)))
    mpd = np.diag(0.5 + rng.random(p))
    if p > 1:
        mpd += 0.05 * (np.diag(np.ones(p - 1), 1) + np.diag(np.ones(p - 1), -1))
    mp = SparseMatrix.from_dense((mpd + mpd.T) / 2.0)
    return BlockSystem(a11, a12, a22, b, mp)


def identity_system(n=4, m=4, p=4):
    """A12 = 0, A22 = I, B = I, Mp = I: the closed-form bound case."""
    return BlockSystem(
        SparseMatrix.identity(n),
        SparseMatrix.zeros(n, m),
        SparseMatrix.identity(m),
        SparseMatrix.identity(p),
        SparseMatrix.identity(p),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sys_30_20_10():
    return make_block_system()


@pytest.fixture(scope="session")
def gen_small():
    """Generated level-1 system small enough for dense spectral work."""
    return generate(GenSpec(level=1, seed=7, base_cells=2))


@pytest.fixture(scope="session")
def gen_level1():
    return generate(GenSpec(level=1, seed=3))
