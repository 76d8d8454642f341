"""Undirected graphs and the node-mixing linear operators built on them.

Operators are kept sparse; products of operators are stored as lazy factor
lists and applied by repeated sparse matvec, never materialized densely.
Spectral analysis (used by the over-smoothing diagnostics) densifies the
operator, so it is gated behind a configurable size cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DENSE_EIGEN_CAP = 5000


class GraphError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Power iteration hit its iteration cap; carries the last estimate."""

    def __init__(self, message, last_estimate):
        super().__init__(message)
        self.last_estimate = last_estimate


@dataclass(frozen=True)
class SparseGraph:
    """Loop-free undirected graph with 0-based node indices.

    Edges are stored once per undirected pair (i < j); ingestion symmetrizes
    and deduplicates, so (i, j) and (j, i) describe the same edge.
    """

    n_nodes: int
    edges: np.ndarray  # (E, 2) int array, each row i < j

    @classmethod
    def from_edges(cls, n_nodes, edges):
        if n_nodes < 1:
            raise GraphError("graph needs at least one node")
        pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            if pairs.min() < 0 or pairs.max() >= n_nodes:
                raise GraphError(
                    f"edge endpoint out of range [0, {n_nodes})"
                )
            if np.any(pairs[:, 0] == pairs[:, 1]):
                bad = pairs[pairs[:, 0] == pairs[:, 1]][0, 0]
                raise GraphError(f"self-loop at node {bad} not allowed")
            pairs = np.sort(pairs, axis=1)
            pairs = np.unique(pairs, axis=0)
        return cls(n_nodes=n_nodes, edges=pairs)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def degrees(self):
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        if self.edges.size:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def adjacency(self):
        """Symmetric {0,1} adjacency as CSR."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.ones(len(rows))
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes)
        )


def read_edge_list(path):
    """Parse "i j" pairs, one per line; '#' starts a comment."""
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            i, j = line.split()
            pairs.append((int(i), int(j)))
    return pairs


def write_edge_list(path, graph):
    with open(path, "w") as fh:
        for i, j in graph.edges:
            fh.write(f"{i} {j}\n")


@dataclass(frozen=True)
class PropagationMatrix:
    """Square node-mixing operator, possibly an ordered product of factors.

    ``factors`` are stored in application order: the first factor hits the
    feature matrix first, so as a matrix the operator is the reversed
    product of the list.
    """

    factors: tuple = field(default_factory=tuple)
    symmetric: bool = False

    def __post_init__(self):
        if not self.factors:
            raise GraphError("operator needs at least one factor")
        n = self.factors[0].shape[0]
        for f in self.factors:
            if f.shape != (n, n):
                raise GraphError("all factors must be square of equal size")

    @classmethod
    def from_matrix(cls, mat, symmetric=None):
        mat = sp.csr_matrix(mat)
        if mat.shape[0] != mat.shape[1]:
            raise GraphError("operator must be square")
        if symmetric is None:
            symmetric = (mat != mat.T).nnz == 0
        return cls(factors=(mat,), symmetric=symmetric)

    @property
    def n(self):
        return self.factors[0].shape[0]

    def compose(self, other):
        """Operator applying ``self`` first, then ``other``."""
        if other.n != self.n:
            raise GraphError("dimension mismatch in composition")
        factors = self.factors + other.factors
        # a product of symmetric matrices is symmetric only when the factors
        # commute; we certify it only for powers of one underlying matrix
        same = all(f is factors[0] for f in factors)
        return PropagationMatrix(
            factors=factors,
            symmetric=same and self.symmetric and other.symmetric,
        )

    def power(self, k):
        if k < 1:
            raise GraphError("power must be >= 1")
        out = self
        for _ in range(k - 1):
            out = out.compose(self)
        return out

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise GraphError(
                f"row count {x.shape[0]} does not match operator size {self.n}"
            )
        for f in self.factors:
            x = f @ x
        return x

    def apply_transpose(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise GraphError(
                f"row count {x.shape[0]} does not match operator size {self.n}"
            )
        for f in reversed(self.factors):
            x = f.T @ x
        return x

    def densify(self, cap=DENSE_EIGEN_CAP):
        if self.n > cap:
            raise GraphError(
                f"dense materialization refused: N={self.n} exceeds cap {cap}"
            )
        out = np.eye(self.n)
        out = self.apply(out)
        return out


def normalized_adjacency(g: SparseGraph) -> PropagationMatrix:
    """D^{-1/2} A D^{-1/2}; requires every node to have degree >= 1."""
    deg = g.degrees
    if np.any(deg == 0):
        bad = int(np.flatnonzero(deg == 0)[0])
        raise GraphError(
            f"node {bad} is isolated; normalized adjacency undefined"
        )
    a = g.adjacency().tocoo()
    w = 1.0 / np.sqrt(deg.astype(float))
    vals = a.data * w[a.row] * w[a.col]
    mat = sp.csr_matrix((vals, (a.row, a.col)), shape=a.shape)
    return PropagationMatrix(factors=(mat,), symmetric=True)


def augmented_adjacency(g: SparseGraph) -> PropagationMatrix:
    """D̃^{-1/2} (A + I) D̃^{-1/2} with D̃ = D + I; eigenvalues in (-1, 1]."""
    deg = g.degrees
    a = g.adjacency().tocoo()
    w = 1.0 / np.sqrt(deg.astype(float) + 1.0)
    rows = np.concatenate([a.row, np.arange(g.n_nodes)])
    cols = np.concatenate([a.col, np.arange(g.n_nodes)])
    base = np.concatenate([a.data, np.ones(g.n_nodes)])
    vals = base * w[rows] * w[cols]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(g.n_nodes, g.n_nodes))
    return PropagationMatrix(factors=(mat,), symmetric=True)


def identity_operator(n) -> PropagationMatrix:
    return PropagationMatrix(factors=(sp.identity(n, format="csr"),),
                             symmetric=True)


def propagate(p: PropagationMatrix, x):
    """Apply the operator to an N-by-C feature matrix (or N-vector)."""
    return p.apply(x)


def operator_norm(p: PropagationMatrix, tol=1e-8):
    """Largest singular value by power iteration on P^T P.

    For symmetric P this equals max |lambda_n|. Deterministic start vector;
    raises ConvergenceError carrying the last estimate after 10*N iterations.
    """
    n = p.n
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = None
    max_iter = 10 * n
    for _ in range(max_iter):
        u = p.apply(v)
        w = p.apply_transpose(u)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new_sigma = float(np.linalg.norm(u))
        v = w / nrm
        if sigma is not None and abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-300):
            return new_sigma
        sigma = new_sigma
    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} iterations",
        last_estimate=sigma,
    )


@dataclass(frozen=True)
class SpectralData:
    """Full symmetric eigendecomposition, eigenvalues sorted descending.

    ``eigenvectors`` holds orthonormal eigenvectors as columns;
    ``coefficients`` (when attached) expand feature columns in that basis.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    coefficients: np.ndarray | None = None

    def expand(self, x):
        """Coefficients a with x = eigenvectors @ a (columnwise)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] != self.eigenvectors.shape[0]:
            x = x.T
        return self.eigenvectors.T @ x

    def with_coefficients(self, x):
        return SpectralData(self.eigenvalues, self.eigenvectors,
                            coefficients=self.expand(x))


def eigendecompose(p: PropagationMatrix, cap=DENSE_EIGEN_CAP) -> SpectralData:
    """Dense symmetric eigendecomposition; refused above the size cap."""
    if not p.symmetric:
        raise GraphError("eigendecompose requires a symmetric operator")
    if p.n > cap:
        raise GraphError(
            f"eigendecompose refused: N={p.n} exceeds cap {cap}"
        )
    dense = p.densify(cap=cap)
    vals, vecs = np.linalg.eigh((dense + dense.T) / 2.0)
    order = np.argsort(vals)[::-1]
    return SpectralData(eigenvalues=vals[order], eigenvectors=vecs[:, order])
