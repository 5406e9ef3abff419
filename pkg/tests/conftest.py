import numpy as np
import pytest

from hopfuse.sparse import SparseMatrix, csr_from_edges


def random_graph(rng, n, p, symmetric=True):
    """Erdos-Renyi adjacency as a canonical SparseMatrix, no self-loops."""
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    if symmetric:
        mask = mask | mask.T
    src, dst = np.nonzero(mask)
    return csr_from_edges(list(zip(src.tolist(), dst.tolist())), n)


def random_sparse(rng, n, p):
    """Random weighted canonical CSR (possibly asymmetric, with diagonal)."""
    mask = rng.random((n, n)) < p
    src, dst = np.nonzero(mask)
    vals = rng.uniform(0.1, 2.0, size=src.shape[0])
    dense = np.zeros((n, n))
    dense[src, dst] = vals
    return from_dense(dense)


def from_dense(d):
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    src, dst = np.nonzero(d)
    offs = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offs[1:], src, 1)
    offs = np.cumsum(offs)
    return SparseMatrix(n, offs, dst.astype(np.int64), d[src, dst])


def support_set(m):
    return set(zip(m.row_ids().tolist(), m.col_indices.tolist()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
