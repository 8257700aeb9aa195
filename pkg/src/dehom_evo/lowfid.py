"""Coarse homogenization-based compliance optimization of lattice design fields.

Each coarse element holds a cross-bar lattice whose stiffness comes from the
polynomial surrogate, rotated by the element angle. The optimizer alternates a
linear solve, self-adjoint sensitivities, an optimality-criteria update of the
width/density channels and principal-stress alignment of the angles.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from . import fem
from .boundary import Load, Support, fixed_dofs, force_vector
from .design import THETA_BOUND, DesignField
from .errors import ConfigError, NumericalError, SingularSystemError
from .homog import SurrogateModel, floor_eigenvalues, lattice_matrices, rotate_matrix, rotation_matrix

logger = logging.getLogger(__name__)

MODES = ("free-widths", "width-interp")
FILTER_RADIUS = 1.5
BISECTION_HALVINGS = 60
VOLUME_TOL = 1e-4


@dataclass(frozen=True)
class CoarseProblem:
    nx: int
    ny: int
    supports: tuple
    loads: tuple
    v0: float = 0.5
    mode: str = "free-widths"
    p: float = 3.0
    mu_min: float = 0.0
    mu_max: float = 1.0
    lmin: float = 0.1
    lmax: float = 1.0
    rho_min: float = 1e-3
    rho_max: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 1:
            raise ConfigError(f"coarse grid must be at least 2x1, got {self.nx}x{self.ny}")
        if not self.supports:
            raise ConfigError("problem needs at least one support")
        if not any(np.any(np.asarray(ld.force) != 0) for ld in self.loads):
            raise ConfigError("problem needs at least one nonzero load")
        if not 0 < self.v0 <= 1:
            raise ConfigError(f"v0 must lie in (0, 1], got {self.v0}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.lmin <= self.lmax <= 1:
            raise ConfigError(f"need 0 <= lmin <= lmax <= 1, got {self.lmin}, {self.lmax}")
        if not 0 < self.rho_min <= self.rho_max <= 1:
            raise ConfigError(f"need 0 < rho_min <= rho_max <= 1, got {self.rho_min}, {self.rho_max}")
        if not 0 <= self.mu_min <= self.mu_max <= 1:
            raise ConfigError(f"need 0 <= mu_min <= mu_max <= 1, got {self.mu_min}, {self.mu_max}")

    @property
    def grid(self) -> fem.Grid:
        return fem.Grid(self.nx, self.ny)

    def with_(self, **kw) -> "CoarseProblem":
        return replace(self, **kw)


def double_clamped_beam(nx: int = 60, ny: int = 30, force: float = 1.0, **kw) -> CoarseProblem:
    """Both vertical edges fully fixed, downward point load at the top centre."""
    supports = (Support((0, 0, 0, ny), "xy"), Support((nx, 0, nx, ny), "xy"))
    loads = (Load((nx / 2, ny, nx / 2, ny), (0.0, -force)),)
    return CoarseProblem(nx, ny, supports, loads, **kw)


def cantilever(nx: int = 2, ny: int = 1, force: float = 1.0, **kw) -> CoarseProblem:
    """Left edge fixed, downward load at the bottom-right corner."""
    supports = (Support((0, 0, 0, ny), "xy"),)
    loads = (Load((nx, 0, nx, 0), (0.0, -force)),)
    return CoarseProblem(nx, ny, supports, loads, **kw)


@dataclass
class CoarseState:
    u: np.ndarray
    compliance: float
    strain: np.ndarray  # (nx, ny, 3) at element centres
    stress: np.ndarray  # (nx, ny, 3)
    ue: np.ndarray = field(repr=False, default=None)  # element-ordered (n_elems, 8)


# --------------------------------------------------------------------------- material


def effective_widths(problem: CoarseProblem, x: DesignField):
    """Widths entering the surrogate and their derivatives w.r.t. the design channels."""
    if problem.mode == "free-widths":
        return x.mu1 * x.rho, x.mu2 * x.rho
    mu = problem.mu_min + (problem.mu_max - problem.mu_min) * x.rho**problem.p
    return mu, mu


def _lattice(problem, x, surrogate):
    w1, w2 = effective_widths(problem, x)
    S = lattice_matrices(surrogate.components(w1, w2))
    return S, floor_eigenvalues(S)


def element_tensors(problem: CoarseProblem, x: DesignField, surrogate: SurrogateModel) -> np.ndarray:
    """Rotated constitutive matrices (nx, ny, 3, 3)."""
    _, (Sf, _) = _lattice(problem, x, surrogate)
    return rotate_matrix(Sf, x.theta)


def _check_shape(problem, x):
    if x.shape != (problem.nx, problem.ny):
        raise ConfigError(f"design field is {x.shape}, problem grid is {(problem.nx, problem.ny)}")


def solve_with_tensors(grid: fem.Grid, D: np.ndarray, fixed: np.ndarray, F: np.ndarray):
    """Assemble from (nx, ny, 3, 3) tensors and solve with Dirichlet elimination."""
    fixed = np.asarray(fixed)
    if fixed.size < 3 or not np.any(fixed % 2 == 0) or not np.any(fixed % 2 == 1):
        raise SingularSystemError(
            f"supports fix {fixed.size} dofs; at least 3 including both x and y components are required"
        )
    ke = fem.element_stiffness(grid.to_elem_order(D))
    K = grid.assemble(ke)
    free = np.setdiff1d(np.arange(grid.n_dofs), fixed)
    Kff = K[free][:, free].tocsc()
    try:
        lu = spla.splu(Kff, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularSystemError(f"stiffness matrix is singular: {exc}") from exc
    u = np.zeros(grid.n_dofs)
    u[free] = lu.solve(F[free])
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite displacement solution")
    res = np.linalg.norm(Kff @ u[free] - F[free])
    if res > 1e-6 * max(np.linalg.norm(F), 1e-300):
        raise SingularSystemError(f"stiffness system is ill-posed (relative residual {res / np.linalg.norm(F):.2e})")
    return u, ke


def assemble_and_solve(problem: CoarseProblem, x: DesignField, surrogate: SurrogateModel) -> CoarseState:
    _check_shape(problem, x)
    grid = problem.grid
    D = element_tensors(problem, x, surrogate)
    F = force_vector(grid, problem.loads)
    u, _ = solve_with_tensors(grid, D, fixed_dofs(grid, problem.supports), F)
    ue = grid.element_displacements(u)
    strain = grid.from_elem_order(ue @ fem.B_CENTER.T)
    stress = np.einsum("xyij,xyj->xyi", D, strain)
    return CoarseState(u, float(u @ F), strain, stress, ue)


# --------------------------------------------------------------------------- sensitivities


def compliance_sensitivities(problem: CoarseProblem, x: DesignField, state: CoarseState, surrogate) -> dict:
    """d(compliance)/d(channel) per element, keyed by channel name.

    free-widths mode returns mu1, mu2 and rho; width-interp returns rho only.
    """
    _check_shape(problem, x)
    grid = problem.grid
    w1, w2 = effective_widths(problem, x)
    S = lattice_matrices(surrogate.components(w1, w2))
    _, dfloor = floor_eigenvalues(S)
    d1, d2 = surrogate.component_grads(w1, w2)
    T = rotation_matrix(x.theta)
    Tt = np.swapaxes(T, -1, -2)
    # element strain-energy densities against each stiffness basis matrix
    ue = grid.element_displacements(state.u)
    energy = grid.from_elem_order(np.einsum("na,kab,nb->nk", ue, fem.KE_BASIS, ue))

    def dc_dw(dcomp):
        dD = Tt @ dfloor(lattice_matrices(dcomp)) @ T
        return -np.sum(fem.flatten_sym(dD) * energy, axis=-1)

    g1, g2 = dc_dw(d1), dc_dw(d2)
    if problem.mode == "free-widths":
        return {"mu1": x.rho * g1, "mu2": x.rho * g2, "rho": x.mu1 * g1 + x.mu2 * g2}
    dmu = (problem.mu_max - problem.mu_min) * problem.p * x.rho ** (problem.p - 1)
    return {"rho": (g1 + g2) * dmu}


# --------------------------------------------------------------------------- theta


def principal_angle(stress: np.ndarray):
    """Direction of the largest-magnitude principal stress, in (-pi/2, pi/2].

    Returns the angles and a mask of elements whose direction is degenerate
    (hydrostatic or zero stress).
    """
    sx, sy, txy = stress[..., 0], stress[..., 1], stress[..., 2]
    half_diff = 0.5 * (sx - sy)
    radius = np.hypot(half_diff, txy)
    mean = 0.5 * (sx + sy)
    scale = np.max(np.abs(stress)) if stress.size else 0.0
    degenerate = radius <= 1e-12 * max(scale, 1e-300)
    ang = 0.5 * np.arctan2(txy, half_diff)  # direction of the algebraically largest stress
    ang = np.where(mean < 0, ang + 0.5 * np.pi, ang)  # |s2| > |s1| when the mean is compressive
    ang = np.where(ang > 0.5 * np.pi, ang - np.pi, ang)
    return ang, degenerate


def nearest_representative(previous, angle):
    """``angle + k*pi`` closest to ``previous``, kept within the theta bounds."""
    previous = np.asarray(previous, float)
    out = angle + np.pi * np.round((previous - angle) / np.pi)
    out = np.where(out > THETA_BOUND, out - np.pi, out)
    return np.where(out < -THETA_BOUND, out + np.pi, out)


def update_theta(x: DesignField, state: CoarseState) -> DesignField:
    ang, degenerate = principal_angle(state.stress)
    theta = np.where(degenerate, x.theta, nearest_representative(x.theta, ang))
    return replace(x, theta=theta, meta=dict(x.meta))


def unwrap_spatially(theta: np.ndarray) -> np.ndarray:
    """Shift angles by multiples of pi so neighbouring elements agree.

    A breadth-first sweep from element (0, 0) moves every angle to the
    representative nearest the element it was reached from; the whole field is
    then shifted by a multiple of pi to put its median in [-pi/2, pi/2].
    """
    theta = np.asarray(theta, float)
    nx, ny = theta.shape
    out = theta.copy()
    seen = np.zeros(theta.shape, bool)
    seen[0, 0] = True
    queue = deque([(0, 0)])
    while queue:
        i, j = queue.popleft()
        for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= a < nx and 0 <= b < ny and not seen[a, b]:
                seen[a, b] = True
                out[a, b] = theta[a, b] + np.pi * np.round((out[i, j] - theta[a, b]) / np.pi)
                queue.append((a, b))
    out -= np.pi * np.round(np.median(out) / np.pi)
    return nearest_representative(out, out)


# --------------------------------------------------------------------------- optimizer


def filter_weights(nx: int, ny: int, radius: float = FILTER_RADIUS):
    """Sparse-free linear (cone) filter as an (n, n) dense matrix over element-id order."""
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(float)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    H = np.maximum(0.0, radius - d)
    return H / H.sum(axis=1, keepdims=True)


def _filter(H, a):
    return (H @ a.ravel()).reshape(a.shape)


def _bounds(problem: CoarseProblem, x: DesignField) -> dict:
    b = {"rho": (problem.rho_min, problem.rho_max)}
    if problem.mode == "free-widths":
        b["mu1"] = b["mu2"] = (problem.lmin, problem.lmax)
    return b


def volume_of(problem: CoarseProblem, x: DesignField) -> float:
    w1, w2 = effective_widths(problem, x)
    return float(np.mean(w1 + w2 - w1 * w2))


def _volume_grads(problem, x) -> dict:
    n = x.mu1.size
    w1, w2 = effective_widths(problem, x)
    if problem.mode == "free-widths":
        return {
            "mu1": x.rho * (1 - w2) / n,
            "mu2": x.rho * (1 - w1) / n,
            "rho": (x.mu1 * (1 - w2) + x.mu2 * (1 - w1)) / n,
        }
    dmu = (problem.mu_max - problem.mu_min) * problem.p * x.rho ** (problem.p - 1)
    return {"rho": (2 - 2 * w1) * dmu / n}


def oc_update(problem, x, dc, move=0.1, damping=0.5):
    """Optimality-criteria step with log-bisection on the volume multiplier."""
    dv = _volume_grads(problem, x)
    bounds = _bounds(problem, x)
    names = list(dc)
    cur = {k: getattr(x, k) for k in names}
    lo = {k: np.maximum(bounds[k][0], cur[k] - move) for k in names}
    hi = {k: np.minimum(bounds[k][1], cur[k] + move) for k in names}
    ratio = {k: np.maximum(-dc[k], 0.0) / np.maximum(dv[k], 1e-12) for k in names}
    # entries with non-negative sensitivity get a vanishing but positive ratio so
    # that an inactive volume cap still pushes them up rather than to zero
    top = max(float(np.max(r)) for r in ratio.values())
    ratio = {k: np.maximum(r, 1e-12 * max(top, 1e-300)) for k, r in ratio.items()}

    def trial(lam):
        vals = {k: np.clip(cur[k] * (ratio[k] / lam) ** damping, lo[k], hi[k]) for k in names}
        return replace(x, **vals, meta=dict(x.meta))

    v0 = problem.v0
    upper = replace(x, **hi, meta=dict(x.meta))
    if volume_of(problem, upper) <= v0:
        return upper
    lower = replace(x, **lo, meta=dict(x.meta))
    if volume_of(problem, lower) >= v0:
        return lower
    positive = np.concatenate([r[r > 0] for r in ratio.values()])
    guess = float(np.median(positive))
    a, b = np.log(guess) - 25.0, np.log(guess) + 25.0
    for _ in range(40):
        if volume_of(problem, trial(np.exp(a))) >= v0:
            break
        a -= 25.0
    for _ in range(40):
        if volume_of(problem, trial(np.exp(b))) <= v0:
            break
        b += 25.0
    for _ in range(BISECTION_HALVINGS):
        mid = 0.5 * (a + b)
        cand = trial(np.exp(mid))
        vol = volume_of(problem, cand)
        if abs(vol - v0) <= 1e-7:
            return cand
        if vol > v0:
            a = mid
        else:
            b = mid
    cand = trial(np.exp(b))
    vol = volume_of(problem, cand)
    if abs(vol - v0) > VOLUME_TOL:
        raise NumericalError(
            f"volume multiplier bisection failed after {BISECTION_HALVINGS} halvings: "
            f"V={vol:.6g}, V0={v0:.6g}, log-bracket=[{a:.4g}, {b:.4g}]"
        )
    return cand


def initial_field(problem: CoarseProblem) -> DesignField:
    """Uniform start whose volume equals V0."""
    shape = (problem.nx, problem.ny)
    if problem.mode == "free-widths":
        w0 = 1.0 - np.sqrt(1.0 - problem.v0)
        mu0 = float(np.clip(max(w0, problem.lmin), problem.lmin, problem.lmax))
        rho0 = float(np.clip(w0 / mu0, problem.rho_min, problem.rho_max))
        return DesignField(
            np.full(shape, mu0), np.full(shape, mu0), np.zeros(shape), np.full(shape, rho0),
            (problem.lmin, problem.lmax), (problem.rho_min, problem.rho_max),
        )
    span = problem.mu_max - problem.mu_min
    target = 1.0 - np.sqrt(1.0 - problem.v0)
    rho0 = ((target - problem.mu_min) / span) ** (1.0 / problem.p) if span > 0 else 1.0
    rho0 = float(np.clip(rho0, problem.rho_min, problem.rho_max))
    return DesignField(
        np.full(shape, 1.0), np.full(shape, 1.0), np.zeros(shape), np.full(shape, rho0),
        (0.0, 1.0), (problem.rho_min, problem.rho_max),
    )


def design_output(problem: CoarseProblem, x: DesignField) -> DesignField:
    """Field handed downstream: width-interp designs carry mu(rho) in the width channels."""
    if problem.mode == "free-widths":
        return x
    w, _ = effective_widths(problem, x)
    return DesignField(w, w.copy(), x.theta.copy(), np.ones_like(w), (0.0, 1.0), (1e-3, 1.0), dict(x.meta))


def optimize(
    problem: CoarseProblem,
    surrogate: SurrogateModel,
    iters: int = 60,
    move: float = 0.1,
    damping: float = 0.5,
    x0: DesignField | None = None,
    history: list | None = None,
    raw: bool = False,
) -> DesignField:
    """Compliance minimization under the volume cap.

    ``history`` (if given) receives the compliance of every iterate. With
    ``raw=True`` the optimizer's own parameterization is returned even in
    width-interp mode.
    """
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    x = initial_field(problem) if x0 is None else x0
    _check_shape(problem, x)
    H = filter_weights(problem.nx, problem.ny)
    for it in range(iters):
        state = assemble_and_solve(problem, x, surrogate)
        if history is not None:
            history.append(state.compliance)
        dc = compliance_sensitivities(problem, x, state, surrogate)
        dc = {k: _filter(H, v) for k, v in dc.items()}
        x = oc_update(problem, x, dc, move, damping)
        x = update_theta(x, state)
        logger.debug("iter %d compliance %.6g volume %.4f", it, state.compliance, volume_of(problem, x))
    x = replace(x, theta=unwrap_spatially(x.theta), meta=dict(x.meta))
    x.meta.update(v0=problem.v0, lmin=problem.lmin)
    return x if raw else design_output(problem, x)


def generate_initial_population(problem: CoarseProblem, surrogate, schedule, iters: int = 60, seed: int = 0):
    """One optimize run per ``(V0, L_min)`` schedule entry.

    The runs are deterministic; ``seed`` is recorded with each field so a
    population can be traced back to the call that produced it. Angles of
    later designs are moved by multiples of pi to the representative nearest
    the first design's, so equivalent orientations share one value across the
    population.
    """
    schedule = list(schedule)
    if not schedule:
        raise ConfigError("schedule must contain at least one (V0, L_min) entry")
    out = []
    for k, (v0, lmin) in enumerate(schedule):
        try:
            x = optimize(problem.with_(v0=float(v0), lmin=float(lmin)), surrogate, iters=iters)
        except Exception as exc:
            raise type(exc)(f"schedule entry {k} (V0={v0}, L_min={lmin}): {exc}") from exc
        if out:
            x = replace(x, theta=nearest_representative(out[0].theta, x.theta), meta=dict(x.meta))
        x.meta.update(seed=seed, index=k)
        out.append(x)
    return out
