"""Bilinear quadrilateral (Q4) plane-stress building blocks on structured grids.

All grids use unit square elements. Node ``(i, j)`` sits at ``x = i, y = j`` and
has global id ``j * (nx + 1) + i``; element ``(ix, iy)`` has id ``iy * nx + ix``
and its nodes are ordered counter-clockwise starting at the bottom-left corner.
Per-element arrays are stored with shape ``(nx, ny)`` and indexed ``[ix, iy]``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

E_BASE = 1.0
NU_BASE = 0.3

_GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_NODE_XI = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


def isotropic_plane_stress(E: float = E_BASE, nu: float = NU_BASE) -> np.ndarray:
    """Plane-stress constitutive matrix in Voigt form (engineering shear strain)."""
    f = E / (1.0 - nu**2)
    return f * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])


def shape_gradients(xi: float, eta: float) -> np.ndarray:
    """Physical-space shape function gradients (2, 4) for a unit square element."""
    dxi = 0.25 * _NODE_XI[:, 0] * (1.0 + _NODE_XI[:, 1] * eta)
    deta = 0.25 * _NODE_XI[:, 1] * (1.0 + _NODE_XI[:, 0] * xi)
    # Jacobian of the unit square map is diag(1/2, 1/2).
    return 2.0 * np.vstack([dxi, deta])


def strain_displacement(xi: float, eta: float) -> np.ndarray:
    g = shape_gradients(xi, eta)
    B = np.zeros((3, 8))
    B[0, 0::2] = g[0]
    B[1, 1::2] = g[1]
    B[2, 0::2] = g[1]
    B[2, 1::2] = g[0]
    return B


_B_GAUSS = np.array([strain_displacement(a, b) for b in _GP for a in _GP])  # (4, 3, 8)
_G_GAUSS = np.array([shape_gradients(a, b) for b in _GP for a in _GP])  # (4, 2, 4)
B_CENTER = strain_displacement(0.0, 0.0)


def element_stiffness(D: np.ndarray) -> np.ndarray:
    """Element stiffness for one (3, 3) or a batch (n, 3, 3) of constitutive matrices.

    Gauss weights are 1 and the Jacobian determinant is 1/4 on a unit square.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        return 0.25 * np.einsum("gia,ij,gjb->ab", _B_GAUSS, D, _B_GAUSS)
    return 0.25 * np.einsum("gia,nij,gjb->nab", _B_GAUSS, D, _B_GAUSS)


# Ke is linear in D: Ke = sum_k D_flat[k] * KE_BASIS[k] over the six independent
# entries (11, 12, 13, 22, 23, 33) of a symmetric D.
VOIGT_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def _basis() -> np.ndarray:
    out = np.zeros((6, 8, 8))
    for k, (a, b) in enumerate(VOIGT_PAIRS):
        U = np.zeros((3, 3))
        U[a, b] = U[b, a] = 1.0
        out[k] = element_stiffness(U)
    return out


KE_BASIS = _basis()


def flatten_sym(D: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric -> (..., 6) in VOIGT_PAIRS order."""
    return np.stack([D[..., a, b] for a, b in VOIGT_PAIRS], axis=-1)


def geometric_stiffness(stress: np.ndarray) -> np.ndarray:
    """Element geometric (initial-stress) stiffness for constant stresses (n, 3)."""
    stress = np.atleast_2d(stress)
    S = np.zeros((stress.shape[0], 2, 2))
    S[:, 0, 0] = stress[:, 0]
    S[:, 1, 1] = stress[:, 1]
    S[:, 0, 1] = S[:, 1, 0] = stress[:, 2]
    # scalar 4x4 block, then expanded to both displacement components
    k4 = 0.25 * np.einsum("gia,nij,gjb->nab", _G_GAUSS, S, _G_GAUSS)
    out = np.zeros((stress.shape[0], 8, 8))
    out[:, 0::2, 0::2] = k4
    out[:, 1::2, 1::2] = k4
    return out


class Grid:
    """Structured nx-by-ny grid of unit Q4 elements."""

    def __init__(self, nx: int, ny: int):
        if nx < 1 or ny < 1:
            raise ValueError(f"grid dimensions must be positive, got {nx}x{ny}")
        self.nx, self.ny = int(nx), int(ny)
        self.n_nodes = (self.nx + 1) * (self.ny + 1)
        self.n_dofs = 2 * self.n_nodes
        self.n_elems = self.nx * self.ny
        iy, ix = np.meshgrid(np.arange(self.ny), np.arange(self.nx), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()  # element id order: iy-major
        n0 = iy * (self.nx + 1) + ix
        nodes = np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)
        self.elem_nodes = nodes
        edof = np.empty((self.n_elems, 8), dtype=np.int64)
        edof[:, 0::2] = 2 * nodes
        edof[:, 1::2] = 2 * nodes + 1
        self.edof = edof
        self._rows = np.repeat(edof, 8, axis=1).ravel()
        self._cols = np.tile(edof, (1, 8)).ravel()

    def node_id(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def node_coords(self) -> np.ndarray:
        j, i = np.divmod(np.arange(self.n_nodes), self.nx + 1)
        return np.stack([i, j], axis=1).astype(float)

    def to_elem_order(self, a: np.ndarray) -> np.ndarray:
        """(nx, ny, ...) array -> element-id ordered (n_elems, ...)."""
        a = np.asarray(a)
        return np.swapaxes(a, 0, 1).reshape((self.n_elems,) + a.shape[2:])

    def from_elem_order(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        return np.swapaxes(a.reshape((self.ny, self.nx) + a.shape[1:]), 0, 1)

    def assemble(self, ke: np.ndarray) -> sp.csr_matrix:
        """Assemble per-element matrices (n_elems, 8, 8) into a sparse global matrix."""
        K = sp.coo_matrix((ke.ravel(), (self._rows, self._cols)), shape=(self.n_dofs, self.n_dofs))
        return K.tocsr()

    def element_displacements(self, u: np.ndarray) -> np.ndarray:
        return u[self.edof]

    def dissection_order(self, leaf: int = 8) -> np.ndarray:
        """Node ids in geometric nested-dissection order.

        Each box of nodes is split by its middle row or column; both halves come
        first and the separator last, which keeps the sparse factor of a 2D grid
        close to ``O(n log n)``.
        """
        w = self.nx + 1
        parts = []
        stack = [(0, self.nx + 1, 0, self.ny + 1, False)]
        while stack:
            i0, i1, j0, j1, emit = stack.pop()
            if emit or (i1 - i0) * (j1 - j0) <= leaf * leaf or min(i1 - i0, j1 - j0) < 3:
                jj, ii = np.meshgrid(np.arange(j0, j1), np.arange(i0, i1), indexing="ij")
                parts.append((jj * w + ii).ravel())
                continue
            # pushed in reverse: first half, second half, then the separator
            if i1 - i0 >= j1 - j0:
                m = (i0 + i1) // 2
                stack += [(m, m + 1, j0, j1, True), (m + 1, i1, j0, j1, False), (i0, m, j0, j1, False)]
            else:
                m = (j0 + j1) // 2
                stack += [(i0, i1, m, m + 1, True), (i0, i1, m + 1, j1, False), (i0, i1, j0, m, False)]
        return np.concatenate(parts)

    def free_dofs(self, fixed: np.ndarray) -> np.ndarray:
        """Unconstrained dofs in nested-dissection order."""
        nodes = self.dissection_order()
        dofs = np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()
        keep = np.ones(self.n_dofs, dtype=bool)
        keep[fixed] = False
        return dofs[keep[dofs]]


def factor_spd(A: sp.spmatrix):
    """Sparse LU of a symmetric positive definite matrix already in fill-reducing order."""
    return spla.splu(
        sp.csc_matrix(A), permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
    )
