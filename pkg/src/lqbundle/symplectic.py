"""Lagrangian-Grassmannian primitives on the doubled space H x H.

Subspaces are column-orthonormal basis matrices; the complex structure is
J(v, eta) = (-eta, v).  Distances are operator-norm gaps of orthogonal
projectors, graph representations are taken over direct sums of Lagrange
subspaces, and intersection dimensions come from scale-invariant SVD rank
decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotADirectSum, NotAGraph, NotLagrange, OddLength

#: relative singular-value cutoff for rank decisions
RANK_RTOL = 1e-8
#: absolute singular-value floor for graph bijectivity
GRAPH_TOL = 1e-10
ISOTROPY_TOL = 1e-8


@dataclass(frozen=True)
class Subspace:
    """A subspace given by a column-orthonormal basis (re-orthonormalized via QR)."""

    basis: np.ndarray

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if mat.ndim != 2 or mat.shape[1] == 0:
            raise DimensionMismatch("basis must be a nonempty 2-d array")
        if mat.shape[1] > mat.shape[0]:
            raise DimensionMismatch("more basis columns than ambient dimension")
        sv = np.linalg.svd(mat, compute_uv=False)
        if sv[-1] <= RANK_RTOL * sv[0]:
            raise DimensionMismatch("rank-deficient basis columns")
        q, r = np.linalg.qr(mat)
        # fix orientation so construction is deterministic
        q = q * np.sign(np.diag(r))
        object.__setattr__(self, "basis", q)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def to_list(self) -> list:
        """Column-major nested list (JSON serialization of the basis)."""
        return [list(col) for col in self.basis.T]

    @staticmethod
    def from_list(cols) -> "Subspace":
        return Subspace(np.array(cols, dtype=float).T)


class LagrangeSubspace(Subspace):
    """Maximal isotropic subspace of H x H (dimension n at truncation)."""

    def __post_init__(self):
        super().__post_init__()
        two_n = self.ambient
        if two_n % 2:
            raise OddLength("ambient dimension must be even")
        if self.dim != two_n // 2:
            raise NotLagrange(
                f"need dimension {two_n // 2} in ambient {two_n}, got {self.dim}"
            )
        defect = isotropy_defect(self)
        if defect > ISOTROPY_TOL:
            raise NotLagrange(f"isotropy defect {defect:.3e} exceeds {ISOTROPY_TOL}")


@dataclass(frozen=True)
class GraphOperator:
    """Coordinates of a subspace as the graph {z + M z} over sharp + flat."""

    matrix: np.ndarray
    sharp: Subspace
    flat: Subspace

    def assemble(self) -> Subspace:
        cols = self.sharp.basis + self.flat.basis @ self.matrix
        return Subspace(cols)


def j_matrix(two_n: int) -> np.ndarray:
    """Matrix of J(v, eta) = (-eta, v) on stacked coordinates (v; eta)."""
    if two_n % 2:
        raise OddLength("ambient dimension must be even")
    n = two_n // 2
    j = np.zeros((two_n, two_n))
    j[:n, n:] = -np.eye(n)
    j[n:, :n] = np.eye(n)
    return j


def apply_J(z) -> np.ndarray:
    z = np.asarray(z)
    if z.shape[0] % 2:
        raise OddLength("vector length must be even")
    n = z.shape[0] // 2
    return np.concatenate([-z[n:], z[:n]], axis=0)


def isotropy_defect(subspace: Subspace) -> float:
    """max_ij |<b_i, J b_j>|; zero exactly when the subspace is isotropic."""
    b = subspace.basis
    return float(np.abs(b.T @ apply_J(b)).max())


def is_lagrange(subspace: Subspace, tol: float = ISOTROPY_TOL) -> tuple[bool, float]:
    """Finite-dimensional Lagrange test: isotropic and of half dimension.

    Returns (verdict, margin) where margin is the isotropy defect.
    """
    defect = isotropy_defect(subspace)
    ok = subspace.ambient % 2 == 0 and subspace.dim == subspace.ambient // 2
    return (ok and defect <= tol, defect)


def grassmann_distance(l1: Subspace, l2: Subspace) -> float:
    """Operator-norm gap of the orthogonal projectors."""
    if l1.ambient != l2.ambient:
        raise DimensionMismatch("subspaces live in different ambient spaces")
    return float(np.linalg.norm(l1.projector() - l2.projector(), 2))


def intersection_dimension(l1: Subspace, l2: Subspace) -> int:
    """dim(L1 cap L2) from the scale-invariant rank of the stacked bases."""
    if l1.ambient != l2.ambient:
        raise DimensionMismatch("subspaces live in different ambient spaces")
    stacked = np.hstack([l1.basis, -l2.basis])
    sv = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(sv > RANK_RTOL * sv[0]))
    return l1.dim + l2.dim - rank


def sum_codimension(l1: Subspace, l2: Subspace) -> int:
    """codim(L1 + L2) in the ambient space (Fredholm-pair companion index)."""
    stacked = np.hstack([l1.basis, l2.basis])
    sv = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(sv > RANK_RTOL * sv[0]))
    return l1.ambient - rank


def graph_over(
    subspace: Subspace, h_sharp: Subspace, h_flat: Subspace
) -> GraphOperator:
    """Represent `subspace` as {z + M z | z in sharp} over sharp (+) flat.

    Raises NotADirectSum when sharp and flat fail to span the ambient space,
    NotAGraph when the oblique projection onto sharp is singular on the
    subspace (vertical directions present).
    """
    frame = np.hstack([h_sharp.basis, h_flat.basis])
    if frame.shape[0] != frame.shape[1]:
        raise NotADirectSum("sharp + flat dimensions must fill the ambient space")
    sv = np.linalg.svd(frame, compute_uv=False)
    if sv[-1] <= RANK_RTOL * sv[0]:
        raise NotADirectSum("sharp and flat subspaces are not transversal")
    coords = np.linalg.solve(frame, subspace.basis)
    sharp_part = coords[: h_sharp.dim]
    flat_part = coords[h_sharp.dim :]
    if subspace.dim != h_sharp.dim:
        raise NotAGraph(
            f"subspace dimension {subspace.dim} != sharp dimension {h_sharp.dim}"
        )
    smin = np.linalg.svd(sharp_part, compute_uv=False)[-1]
    if smin <= GRAPH_TOL:
        raise NotAGraph(f"projection onto sharp is singular on the subspace ({smin:.3e})")
    m = flat_part @ np.linalg.inv(sharp_part)
    return GraphOperator(matrix=m, sharp=h_sharp, flat=h_flat)


def horizontal_subspace(n: int) -> LagrangeSubspace:
    """H x {0}."""
    basis = np.vstack([np.eye(n), np.zeros((n, n))])
    return LagrangeSubspace(basis)


def vertical_subspace(n: int) -> LagrangeSubspace:
    """{0} x H."""
    basis = np.vstack([np.zeros((n, n)), np.eye(n)])
    return LagrangeSubspace(basis)


def lagrange_product(range_basis: np.ndarray) -> LagrangeSubspace:
    """Ran(Pi) x {0} (+) {0} x Ran(Pi)^perp for an orthogonal projector range.

    This is the Lagrange subspace attached to an orthogonal projector; it is
    also how the stable/unstable pairing subspaces of the doubled system are
    assembled.
    """
    u = np.atleast_2d(np.asarray(range_basis, dtype=float))
    n = u.shape[0]
    q, _ = np.linalg.qr(u)
    # orthogonal complement via full QR
    full, _ = np.linalg.qr(np.hstack([q, np.eye(n)]))
    comp = full[:, q.shape[1] :]
    basis = np.zeros((2 * n, n))
    basis[:n, : q.shape[1]] = q
    basis[n:, q.shape[1] :] = comp
    return LagrangeSubspace(basis)


def graph_of_symmetric(p: np.ndarray) -> LagrangeSubspace:
    """{(v, -P v)} for symmetric P; the nonoscillating normal form."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    return LagrangeSubspace(np.vstack([np.eye(n), -p]))
