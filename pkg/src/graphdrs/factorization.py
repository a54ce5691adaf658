"""Factorizations L = Z Z^T of base-graph Laplacians with 1^T Z = 0.

Two routes: the signed incidence matrix (trees only, sparse and exact) and a
spectral factorization (any connected graph).  Any two such factorizations
differ by an orthogonal change of coordinates, recovered by :func:`align`.
"""

from dataclasses import dataclass

import numpy as np

from .graphs import laplacian

KERNEL_REL_TOL = 1e-9


class FactorizationError(ValueError):
    """Input graph or matrix unsuitable for the requested factorization."""


@dataclass(frozen=True)
class OntoDecomposition:
    """An N x (N-1) matrix Z with Z Z^T equal to a graph Laplacian.

    Columns span the space orthogonal to the all-ones vector: 1^T Z = 0 and
    rank(Z) = N - 1.
    """

    z: np.ndarray
    source: str  # incidence | spectral | external

    @property
    def n_nodes(self):
        return self.z.shape[0]

    def gram(self):
        return self.z.T @ self.z


def incidence_decomposition(tree):
    """Signed incidence matrix of a tree: one column per edge, +1 at the tail.

    Columns follow edge-list order; Z[i, e] is +1 if edge e leaves i, -1 if
    it enters i.
    """
    n = tree.n_nodes
    if tree.n_edges != n - 1:
        # construction guarantees connectivity, so extra edges mean a cycle
        raise FactorizationError(
            f"base graph has {tree.n_edges} edges on {n} nodes; a tree needs "
            f"{n - 1} (extra edges close a cycle)"
        )
    z = np.zeros((n, n - 1))
    for col, (i, j) in enumerate(tree.edges):
        z[i, col] = 1.0
        z[j, col] = -1.0
    return OntoDecomposition(z=z, source="incidence")


def spectral_decomposition(g):
    """Z = V diag(sqrt(lambda)) over the nonzero Laplacian eigenpairs, ascending."""
    lap = laplacian(g)
    evals, evecs = np.linalg.eigh(lap)
    thresh = KERNEL_REL_TOL * evals[-1]
    kernel = int(np.sum(evals < thresh))
    if kernel != 1:
        raise FactorizationError(
            f"expected exactly one kernel eigenvalue, found {kernel} "
            f"(numerical degeneracy or disconnected graph)"
        )
    z = evecs[:, 1:] * np.sqrt(evals[1:])
    return OntoDecomposition(z=z, source="spectral")


def align(z1, z2, tol=1e-8):
    """Orthogonal O with z1 = z2 @ O, for two factorizations of one Laplacian."""
    a, b = z1.z, z2.z
    if a.shape != b.shape:
        raise FactorizationError("shape mismatch between decompositions")
    l1, l2 = a @ a.T, b @ b.T
    scale = max(np.abs(l1).max(), 1.0)
    if np.abs(l1 - l2).max() > tol * scale:
        raise FactorizationError("decompositions do not share a Laplacian")
    o = b.T @ a @ np.linalg.inv(a.T @ a)
    return o


def validate(decomp, base, tol=1e-10):
    """Check Z Z^T = laplacian(base), zero column sums, and full column rank."""
    z = decomp.z
    lap = laplacian(base)
    if np.abs(z @ z.T - lap).max() > tol:
        raise FactorizationError("Z Z^T does not match the base Laplacian")
    if np.abs(z.sum(axis=0)).max() > tol:
        raise FactorizationError("column sums of Z are not zero")
    if np.linalg.matrix_rank(z) != z.shape[1]:
        raise FactorizationError("Z is rank deficient")


def export_csv(decomp, path):
    """Debug export: one row per node, one column per coordinate."""
    np.savetxt(path, decomp.z, delimiter=",", fmt="%.17g")


def external_decomposition(z):
    """Wrap a user-supplied matrix (e.g. a published factorization)."""
    return OntoDecomposition(z=np.asarray(z, dtype=float), source="external")
