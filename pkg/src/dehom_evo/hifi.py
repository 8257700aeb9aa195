"""Pixel-based finite-element evaluation of binary structures.

Each fine pixel is a unit Q4 element with the base material (E = 1, nu = 0.3)
when solid and an ersatz stiffness ``E_min`` when void. Supports and loads are
given in coarse-grid coordinates and scaled onto the fine nodes.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import fem
from .boundary import fixed_dofs, force_vector, loaded_nodes, supported_nodes
from .errors import ConfigError, DehomError

logger = logging.getLogger(__name__)

E_MIN = 1e-9
P_NORM = 8
METRICS = ("vf", "compliance", "u_max", "sigma_max", "blf")
RESULT_HEADER = ("id", "vf", "compliance", "u_max", "sigma_max", "blf", "feasible")
EIG_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class FineProblem:
    nx: int  # fine pixels
    ny: int
    supports: tuple
    loads: tuple
    scale: float = 1.0  # fine pixels per coarse unit
    e_min: float = E_MIN

    def __post_init__(self):
        if not self.supports:
            raise ConfigError("fine problem needs at least one support")
        if not any(np.any(np.asarray(ld.force) != 0) for ld in self.loads):
            raise ConfigError("fine problem needs at least one nonzero load")
        if not 0 < self.e_min <= 1e-3:
            raise ConfigError(f"e_min must lie in (0, 1e-3], got {self.e_min}")

    @classmethod
    def from_coarse(cls, problem, s_f: int, e_min: float = E_MIN) -> "FineProblem":
        return cls(problem.nx * s_f, problem.ny * s_f, problem.supports, problem.loads, float(s_f), e_min)

    @property
    def grid(self) -> fem.Grid:
        return fem.Grid(self.nx, self.ny)


@dataclass
class StaticSolution:
    u: np.ndarray | None
    compliance: float
    u_max: float
    feasible: bool
    notes: str = ""
    factor: object = field(default=None, repr=False)  # LU of the reduced stiffness
    free: np.ndarray | None = field(default=None, repr=False)


@dataclass
class EvalResult:
    vf: float = float("nan")
    compliance: float = float("nan")
    u_max: float = float("nan")
    sigma_max: float = float("nan")
    blf: float = float("nan")
    feasible: bool = True
    notes: str = ""

    def row(self, ident) -> tuple:
        return (ident, self.vf, self.compliance, self.u_max, self.sigma_max, self.blf, self.feasible)


def _bits(field_) -> np.ndarray:
    return np.asarray(getattr(field_, "bits", field_)).astype(bool)


def volume_fraction(field_) -> float:
    b = _bits(field_)
    if b.size == 0:
        raise ValueError("empty field")
    return float(np.count_nonzero(b)) / b.size


_KE_SOLID = fem.element_stiffness(fem.isotropic_plane_stress())
_D_SOLID = fem.isotropic_plane_stress()


def _check_grid(problem, bits):
    if bits.shape != (problem.nx, problem.ny):
        raise ConfigError(f"field is {bits.shape}, problem expects {(problem.nx, problem.ny)}")


def connectivity_ok(problem: FineProblem, bits: np.ndarray):
    """Every loaded node touches solid that is edge-connected to a supported node."""
    grid = problem.grid
    labels, _ = ndimage.label(bits)
    padded = np.pad(labels, 1)

    def touching(nodes):
        j, i = np.divmod(nodes, grid.nx + 1)
        # node (i, j) touches pixels (i-1..i, j-1..j); +1 for the padding
        around = np.stack([padded[i + a, j + b] for a in (0, 1) for b in (0, 1)], axis=1)
        return around

    sup = touching(supported_nodes(grid, problem.supports, problem.scale))
    anchored = set(np.unique(sup[sup > 0]).tolist())
    loaded = loaded_nodes(grid, problem.loads, problem.scale)
    for node, around in zip(loaded, touching(loaded)):
        if not anchored.intersection(around[around > 0].tolist()):
            return False, f"loaded node {int(node)} is not connected to any support through solid pixels"
    return True, ""


def solve_static(problem: FineProblem, field_) -> StaticSolution:
    bits = _bits(field_)
    _check_grid(problem, bits)
    ok, why = connectivity_ok(problem, bits)
    if not ok:
        return StaticSolution(None, float("nan"), float("nan"), False, why)
    grid = problem.grid
    E = grid.to_elem_order(np.where(bits, 1.0, problem.e_min))
    K = grid.assemble(E[:, None, None] * _KE_SOLID)
    F = force_vector(grid, problem.loads, problem.scale)
    fixed = fixed_dofs(grid, problem.supports, problem.scale)
    free = grid.free_dofs(fixed)
    try:
        lu = fem.factor_spd(K[free][:, free])
    except RuntimeError as exc:
        return StaticSolution(None, float("nan"), float("nan"), False, f"singular stiffness: {exc}")
    u = np.zeros(grid.n_dofs)
    u[free] = lu.solve(F[free])
    if not np.all(np.isfinite(u)):
        return StaticSolution(None, float("nan"), float("nan"), False, "non-finite displacements")
    solid_nodes = np.unique(grid.elem_nodes[grid.to_elem_order(bits)])
    mag = np.hypot(u[2 * solid_nodes], u[2 * solid_nodes + 1])
    return StaticSolution(u, float(u @ F), float(mag.max()), True, "", lu, free)


def element_stresses(problem: FineProblem, field_, u: np.ndarray) -> np.ndarray:
    """Centroid stresses (n_elems, 3) in element order, using each pixel's own modulus."""
    bits = _bits(field_)
    grid = problem.grid
    E = grid.to_elem_order(np.where(bits, 1.0, problem.e_min))
    strain = grid.element_displacements(u) @ fem.B_CENTER.T
    return E[:, None] * (strain @ _D_SOLID.T)


def von_mises(stress: np.ndarray) -> np.ndarray:
    sx, sy, txy = stress[..., 0], stress[..., 1], stress[..., 2]
    return np.sqrt(np.maximum(sx * sx - sx * sy + sy * sy + 3.0 * txy * txy, 0.0))


def von_mises_max(problem: FineProblem, field_, u: np.ndarray, p: int = P_NORM, raw: bool = False):
    """Normalized p-mean of solid-element von Mises stresses (and the raw max if ``raw``)."""
    bits = _bits(field_)
    solid = problem.grid.to_elem_order(bits)
    vm = von_mises(element_stresses(problem, field_, u))[solid]
    if vm.size == 0:
        return (0.0, 0.0) if raw else 0.0
    top = float(vm.max())
    agg = 0.0 if top == 0 else top * float(np.mean((vm / top) ** p)) ** (1.0 / p)
    return (agg, top) if raw else agg


def buckling_blf(problem: FineProblem, field_, static: StaticSolution):
    """First positive load factor of K v = -lambda K_sigma v.

    Only solid pixels contribute geometric stiffness, so the near-empty void
    cannot produce spurious modes. Returns ``(blf, feasible, note)``.
    """
    if not static.feasible or static.u is None:
        return float("nan"), False, "no static solution"
    bits = _bits(field_)
    grid = problem.grid
    solid = grid.to_elem_order(bits)
    stress = element_stresses(problem, field_, static.u) * solid[:, None]
    if not np.any(stress):
        return float("nan"), False, "structure is stress-free"
    Ks = grid.assemble(fem.geometric_stiffness(stress))
    free = static.free
    A = -Ks[free][:, free]
    E = grid.to_elem_order(np.where(bits, 1.0, problem.e_min))
    K = grid.assemble(E[:, None, None] * _KE_SOLID)[free][:, free]
    lu = static.factor
    Minv = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
    n = K.shape[0]
    try:
        # fixed start vector keeps the Lanczos iteration reproducible
        v0 = np.random.default_rng(0).standard_normal(n)
        vals, vecs = spla.eigsh(A, k=1, M=K, Minv=Minv, which="LA", tol=1e-12, v0=v0, maxiter=max(2000, n // 10))
    except spla.ArpackNoConvergence:
        return float("nan"), False, "eigen solver did not converge"
    mu = float(vals[0])
    if not mu > 0:
        return float("nan"), False, "no positive buckling load factor"
    lam = 1.0 / mu
    v = vecs[:, 0]
    Kv = K @ v
    resid = float(np.linalg.norm(Kv - lam * (A @ v)) / np.linalg.norm(Kv))
    if resid > EIG_RESIDUAL_TOL:
        return float("nan"), False, f"eigen residual {resid:.2e} above {EIG_RESIDUAL_TOL:g}"
    return lam, True, ""


def evaluate(problem: FineProblem, field_, metrics=("vf", "compliance")) -> EvalResult:
    """Requested metrics of one structure; failures become infeasible results."""
    metrics = set(metrics)
    unknown = metrics - set(METRICS)
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}; choose from {METRICS}")
    res = EvalResult()
    try:
        if "vf" in metrics:
            res.vf = volume_fraction(field_)
        if metrics & {"compliance", "u_max", "sigma_max", "blf"}:
            st = solve_static(problem, field_)
            if not st.feasible:
                res.feasible, res.notes = False, st.notes
                return res
            if "compliance" in metrics:
                res.compliance = st.compliance
            if "u_max" in metrics:
                res.u_max = st.u_max
            if "sigma_max" in metrics:
                res.sigma_max, top = von_mises_max(problem, field_, st.u, raw=True)
                res.notes = f"raw_sigma_max={top!r}"
            if "blf" in metrics:
                res.blf, ok, note = buckling_blf(problem, field_, st)
                if not ok:
                    res.feasible = False
                    res.notes = "; ".join(filter(None, [res.notes, note]))
    except (DehomError, ValueError, ArithmeticError, RuntimeError, MemoryError) as exc:
        logger.warning("evaluation failed: %s", exc)
        res.feasible, res.notes = False, f"{type(exc).__name__}: {exc}"
    return res


def evaluate_batch(problem: FineProblem, fields, metrics=("vf", "compliance"), workers: int = 1):
    """Evaluate many structures; results come back in input order."""
    fields = list(fields)
    if workers <= 1:
        return [evaluate(problem, f, metrics) for f in fields]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda f: evaluate(problem, f, metrics), fields))


class StiffnessReference:
    """Piecewise-linear reference u_max(vf) through an initial population.

    Designs sharing a volume fraction are averaged; outside the sampled range
    the end values are held.
    """

    def __init__(self, vf, u_max):
        vf, u_max = np.asarray(vf, float), np.asarray(u_max, float)
        ok = np.isfinite(vf) & np.isfinite(u_max)
        if not ok.any():
            raise ValueError("stiffness reference needs at least one finite (vf, u_max) pair")
        xs, inv = np.unique(vf[ok], return_inverse=True)
        ys = np.bincount(inv, weights=u_max[ok]) / np.bincount(inv)
        self.vf, self.u = xs, ys

    def __call__(self, vf):
        return np.interp(vf, self.vf, self.u)

    def violation(self, vf, u_max) -> float:
        return float(max(0.0, u_max - self(vf)))
