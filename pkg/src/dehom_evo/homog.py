"""Unit-cell homogenization of the cross-bar lattice and its polynomial surrogate."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .io import atomic_write_text

logger = logging.getLogger(__name__)

E_MIN = 1e-9
MIN_CELL_RESOLUTION = 16
COMPONENTS = ("c11", "c12", "c22", "c33")


@dataclass(frozen=True)
class ElasticityTensor:
    """Orthotropic-or-rotated plane stiffness in Voigt notation.

    ``c13``/``c23`` are zero in the lattice frame and only appear after rotation.
    """

    c11: float
    c12: float
    c22: float
    c33: float
    c13: float = 0.0
    c23: float = 0.0

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.c11, self.c12, self.c13],
                [self.c12, self.c22, self.c23],
                [self.c13, self.c23, self.c33],
            ]
        )

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "ElasticityTensor":
        m = 0.5 * (np.asarray(m, dtype=float) + np.asarray(m, dtype=float).T)
        return cls(m[0, 0], m[0, 1], m[1, 1], m[2, 2], m[0, 2], m[1, 2])

    def components(self) -> np.ndarray:
        return np.array([self.c11, self.c12, self.c22, self.c33])


def cross_cell_density(mu1: float, mu2: float, resolution: int) -> np.ndarray:
    """Pixel coverage fractions (n, n) [ix, iy] of the centred cross.

    The vertical bar (normal along local axis 1) has width ``mu1``; the
    horizontal bar (normal along axis 2) has width ``mu2``. Partially covered
    pixels get their exact area fraction.
    """
    n = resolution
    edges = np.arange(n + 1, dtype=float)

    def band(width):
        lo, hi = 0.5 * n * (1.0 - width), 0.5 * n * (1.0 + width)
        return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, 1.0)

    fx, fy = band(mu1), band(mu2)
    return fx[:, None] + fy[None, :] - fx[:, None] * fy[None, :]


def homogenize_density(density: np.ndarray, E_min: float = E_MIN) -> np.ndarray:
    """Effective (3, 3) plane-stress tensor of a periodic square cell.

    Energy-based homogenization with periodic boundary conditions on a grid of
    unit Q4 elements; ``density`` is (n, n) indexed [ix, iy] and interpolates
    Young's modulus linearly between ``E_min`` and 1.
    """
    n = density.shape[0]
    grid = fem.Grid(n, n)
    E = E_min + (1.0 - E_min) * grid.to_elem_order(density)
    ke0 = fem.element_stiffness(fem.isotropic_plane_stress())
    ke = E[:, None, None] * ke0

    # periodic node map: (i mod n, j mod n)
    j, i = np.divmod(np.arange(grid.n_nodes), n + 1)
    pnode = (j % n) * n + (i % n)
    pdof = np.empty(grid.n_dofs, dtype=np.int64)
    pdof[0::2] = 2 * pnode
    pdof[1::2] = 2 * pnode + 1
    edof = pdof[grid.edof]
    nd = 2 * n * n
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nd, nd)).tocsc()

    # element displacements for the three unit macro strains (same for every element)
    xy = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    chi0 = np.zeros((3, 8))
    chi0[0, 0::2] = xy[:, 0]
    chi0[1, 1::2] = xy[:, 1]
    chi0[2, 0::2] = 0.5 * xy[:, 1]
    chi0[2, 1::2] = 0.5 * xy[:, 0]

    fe = np.einsum("eab,kb->kea", ke, chi0)  # (3, n_elems, 8)
    F = np.zeros((3, nd))
    for k in range(3):
        np.add.at(F[k], edof.ravel(), fe[k].ravel())

    free = np.arange(2, nd)  # pin node 0 against rigid translation
    lu = spla.splu(K[free][:, free].tocsc())
    chi = np.zeros((3, nd))
    for k in range(3):
        chi[k, free] = lu.solve(F[k, free])

    diff = chi0[:, None, :] - chi[:, edof]  # (3, n_elems, 8)
    C = np.einsum("iea,eab,jeb->ij", diff, ke, diff) / (n * n)
    return 0.5 * (C + C.T)


def homogenize_cell(mu1: float, mu2: float, cell_resolution: int = 64) -> ElasticityTensor:
    """Effective tensor of the cross-bar cell with bar widths ``mu1``, ``mu2``."""
    for name, v in (("mu1", mu1), ("mu2", mu2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    if cell_resolution < MIN_CELL_RESOLUTION:
        raise ValueError(f"cell_resolution must be >= {MIN_CELL_RESOLUTION}, got {cell_resolution}")
    C = homogenize_density(cross_cell_density(mu1, mu2, cell_resolution))
    return ElasticityTensor(C[0, 0], C[0, 1], C[1, 1], C[2, 2])


def homogenization_grid(n_grid: int = 11, cell_resolution: int = 64):
    """Samples ``(mu1, mu2, tensor)`` on a full tensor grid over [0, 1]^2."""
    mus = np.linspace(0.0, 1.0, n_grid)
    return [(a, b, homogenize_cell(a, b, cell_resolution)) for a in mus for b in mus]


# --------------------------------------------------------------------------- surrogate


@dataclass(frozen=True)
class SurrogateModel:
    """Bivariate polynomial fit of the four lattice-frame components.

    ``coeffs[comp][q, r]`` multiplies ``(2 mu1 - 1)^q (2 mu2 - 1)^r``.
    """

    coeffs: dict
    q_max: int
    r_max: int
    fit_residual: float = 0.0
    clamp_count: list = field(default_factory=lambda: [0], compare=False, repr=False)

    def _basis(self, mu1, mu2):
        s, t = 2.0 * np.asarray(mu1, float) - 1.0, 2.0 * np.asarray(mu2, float) - 1.0
        sp_ = np.stack([s**q for q in range(self.q_max + 1)], axis=-1)
        tp = np.stack([t**r for r in range(self.r_max + 1)], axis=-1)
        return sp_, tp

    def _clamp(self, mu1, mu2):
        mu1, mu2 = np.asarray(mu1, float), np.asarray(mu2, float)
        bad = (mu1 < 0) | (mu1 > 1) | (mu2 < 0) | (mu2 > 1)
        if np.any(bad):
            self.clamp_count[0] += int(np.count_nonzero(bad))
            logger.warning("surrogate inputs clamped to [0, 1] (%d values)", int(np.count_nonzero(bad)))
        return np.clip(mu1, 0, 1), np.clip(mu2, 0, 1)

    def components(self, mu1, mu2) -> np.ndarray:
        """Vectorised evaluation: (..., 4) array of c11, c12, c22, c33."""
        mu1, mu2 = self._clamp(mu1, mu2)
        sp_, tp = self._basis(mu1, mu2)
        return np.stack(
            [np.einsum("...q,qr,...r->...", sp_, self.coeffs[c], tp) for c in COMPONENTS], axis=-1
        )

    def component_grads(self, mu1, mu2):
        """Partial derivatives of ``components`` w.r.t. mu1 and mu2, each (..., 4)."""
        mu1, mu2 = self._clamp(mu1, mu2)
        s, t = 2.0 * mu1 - 1.0, 2.0 * mu2 - 1.0
        sp_, tp = self._basis(mu1, mu2)
        dsp = np.stack([2.0 * q * s ** max(q - 1, 0) if q else 0.0 * s for q in range(self.q_max + 1)], -1)
        dtp = np.stack([2.0 * r * t ** max(r - 1, 0) if r else 0.0 * t for r in range(self.r_max + 1)], -1)
        d1 = np.stack([np.einsum("...q,qr,...r->...", dsp, self.coeffs[c], tp) for c in COMPONENTS], -1)
        d2 = np.stack([np.einsum("...q,qr,...r->...", sp_, self.coeffs[c], dtp) for c in COMPONENTS], -1)
        return d1, d2

    def to_csv(self, path) -> None:
        lines = ["component,q,r,alpha"]
        for c in COMPONENTS:
            for q in range(self.q_max + 1):
                for r in range(self.r_max + 1):
                    lines.append(f"{c},{q},{r},{float(self.coeffs[c][q, r])!r}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SurrogateModel":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"component", "q", "r", "alpha"}:
            raise ValueError(f"{path}: expected header component,q,r,alpha")
        q_max = max(int(r["q"]) for r in rows)
        r_max = max(int(r["r"]) for r in rows)
        coeffs = {c: np.zeros((q_max + 1, r_max + 1)) for c in COMPONENTS}
        for row in rows:
            coeffs[row["component"]][int(row["q"]), int(row["r"])] = float(row["alpha"])
        return cls(coeffs, q_max, r_max)


def fit_surrogate(samples, q_max: int = 5, r_max: int = 5) -> SurrogateModel:
    """Least-squares fit of each component in the shifted monomial basis.

    ``samples`` is an iterable of ``(mu1, mu2, ElasticityTensor)`` covering a
    full tensor grid of [0, 1]^2.
    """
    samples = list(samples)
    mu1 = np.array([s[0] for s in samples], float)
    mu2 = np.array([s[1] for s in samples], float)
    Y = np.array([s[2].components() for s in samples])
    n1, n2 = len(np.unique(mu1)), len(np.unique(mu2))
    if n1 * n2 != len(samples):
        raise ValueError(f"samples do not form a full tensor grid ({n1}x{n2} axes, {len(samples)} samples)")
    if n1 < q_max + 1 or n2 < r_max + 1:
        raise ValueError(
            f"rank-deficient normal equations: basis (2mu1-1)^q, q<={q_max} needs {q_max + 1} distinct "
            f"mu1 values (have {n1}); (2mu2-1)^r, r<={r_max} needs {r_max + 1} distinct mu2 values (have {n2})"
        )
    s, t = 2 * mu1 - 1, 2 * mu2 - 1
    terms = list(itertools.product(range(q_max + 1), range(r_max + 1)))
    A = np.stack([s**q * t**r for q, r in terms], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(A, Y, rcond=None)
    if rank < len(terms):
        raise ValueError(f"rank-deficient normal equations (rank {rank} < {len(terms)} basis terms)")
    resid = float(np.max(np.abs(A @ sol - Y)))
    coeffs = {c: sol[:, k].reshape(q_max + 1, r_max + 1) for k, c in enumerate(COMPONENTS)}
    return SurrogateModel(coeffs, q_max, r_max, resid)


def eval_surrogate(model: SurrogateModel, mu1: float, mu2: float) -> ElasticityTensor:
    c11, c12, c22, c33 = model.components(mu1, mu2)
    return ElasticityTensor(float(c11), float(c12), float(c22), float(c33))


def eval_surrogate_grad(model: SurrogateModel, mu1: float, mu2: float):
    d1, d2 = model.component_grads(mu1, mu2)
    return ElasticityTensor(*map(float, d1)), ElasticityTensor(*map(float, d2))


# --------------------------------------------------------------------------- rotation


def rotation_matrix(theta) -> np.ndarray:
    """Voigt strain transformation T(theta) from the global to the lattice frame.

    Written for engineering shear strain, so ``T^T C T`` conserves strain
    energy and leaves isotropic tensors unchanged. Accepts scalars or arrays
    (returns (..., 3, 3)).
    """
    c, s = np.cos(theta), np.sin(theta)
    T = np.array(
        [
            [c * c, s * s, s * c],
            [s * s, c * c, -s * c],
            [-2 * s * c, 2 * s * c, c * c - s * s],
        ]
    )
    return np.moveaxis(T, (0, 1), (-2, -1))


def rotate_matrix(C: np.ndarray, theta) -> np.ndarray:
    """T^T C T for (..., 3, 3) tensors."""
    T = rotation_matrix(theta)
    return np.swapaxes(T, -1, -2) @ C @ T


def rotate_tensor(c: ElasticityTensor, theta: float) -> ElasticityTensor:
    return ElasticityTensor.from_matrix(rotate_matrix(c.matrix(), theta))


def default_surrogate() -> SurrogateModel:
    """The packaged surrogate (11x11 grid, order 5, 64-pixel cells)."""
    path = Path(__file__).with_name("data") / "surrogate_default.csv"
    return SurrogateModel.from_csv(path)


def lattice_matrices(components: np.ndarray) -> np.ndarray:
    """(..., 4) components (c11, c12, c22, c33) -> (..., 3, 3) Voigt matrices."""
    c = np.asarray(components, float)
    M = np.zeros(c.shape[:-1] + (3, 3))
    M[..., 0, 0] = c[..., 0]
    M[..., 0, 1] = M[..., 1, 0] = c[..., 1]
    M[..., 1, 1] = c[..., 2]
    M[..., 2, 2] = c[..., 3]
    return M


PSD_FLOOR = 1e-6


def floor_eigenvalues(C: np.ndarray, floor: float = PSD_FLOOR):
    """Raise eigenvalues of symmetric (..., 3, 3) matrices to at least ``floor``.

    Returns the floored matrices and a function mapping a perturbation ``dC``
    (same shape) to the first-order change of the floored matrices.
    """
    lam, V = np.linalg.eigh(C)
    flam = np.maximum(lam, floor)
    out = (V * flam[..., None, :]) @ np.swapaxes(V, -1, -2)
    if np.all(lam >= floor):
        return out, lambda dC: dC

    # divided differences of f(x) = max(x, floor)
    li, lj = lam[..., :, None], lam[..., None, :]
    fi, fj = flam[..., :, None], flam[..., None, :]
    gap = li - lj
    close = np.abs(gap) < 1e-12 * (1.0 + np.abs(li))
    deriv = (lam >= floor).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.where(close, deriv[..., :, None], (fi - fj) / np.where(close, 1.0, gap))

    def directional(dC):
        Vt = np.swapaxes(V, -1, -2)
        return V @ (L * (Vt @ dC @ V)) @ Vt

    return out, directional
