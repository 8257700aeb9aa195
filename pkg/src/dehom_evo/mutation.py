"""Radial deformation mutation of coarse design fields.

The field is treated as an image on the coarse grid and warped by the
low-fidelity displacement field, locally around a few random centres. Each
warp moves content along the displacement direction, with a weight that decays
to zero at radius ``r_m`` from its centre.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .design import DesignField
from .errors import ConfigError
from .interp import KEYS_A, resample
from .lowfid import nearest_representative


@dataclass(frozen=True)
class MutationConfig:
    n_samples: int = 10  # individuals mutated per generation
    n_points: int = 10  # centres per individual
    r_m: float = 20.0  # coarse cells
    p0: float = 2.0
    strength: float = 1.0  # peak displacement in coarse cells
    kernel_a: float = KEYS_A

    def __post_init__(self):
        if self.r_m <= 0 or self.p0 <= 0:
            raise ConfigError(f"r_m and p0 must be positive, got r_m={self.r_m}, p0={self.p0}")
        if not -1.0 <= self.kernel_a <= 0.0:
            raise ConfigError(f"kernel_a must lie in [-1, 0], got {self.kernel_a}")
        if self.n_samples < 0 or self.n_points < 0 or self.strength < 0:
            raise ConfigError("n_samples, n_points and strength must be non-negative")


def element_displacement(grid, u: np.ndarray) -> np.ndarray:
    """Nodal displacement vector -> (nx, ny, 2) element-centre averages."""
    ue = grid.element_displacements(u)
    c = np.stack([ue[:, 0::2].mean(axis=1), ue[:, 1::2].mean(axis=1)], axis=1)
    return grid.from_elem_order(c)


def decay_weight(shape, centre, r_m: float, p0: float) -> np.ndarray:
    """max(0, 1 - dist/r_m)**p0 around ``centre`` in element-index units."""
    i, j = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    d = np.hypot(i - centre[0], j - centre[1])
    return np.maximum(0.0, 1.0 - d / r_m) ** p0


def warp(x: DesignField, disp: np.ndarray, alpha: np.ndarray, a: float = KEYS_A) -> DesignField:
    """Backward warp of every channel by ``alpha * disp``.

    Arrays are indexed with y increasing upward, so content follows the
    displacement when sampling at ``p - alpha * u``. Pixels with zero shift are
    copied untouched.
    """
    sx, sy = alpha * disp[..., 0], alpha * disp[..., 1]
    moved = (sx != 0) | (sy != 0)
    if not moved.any():
        return x
    i, j = np.meshgrid(np.arange(x.nx, dtype=float), np.arange(x.ny, dtype=float), indexing="ij")
    u, v = (i - sx)[moved], (j - sy)[moved]

    def channel(img, lo=None, hi=None):
        out = img.copy()
        vals = resample(img, u, v, a)
        out[moved] = vals if lo is None else np.clip(vals, lo, hi)
        return out

    lo, hi = x.mu_bounds
    s = resample(np.sin(2.0 * x.theta), u, v, a)
    c = resample(np.cos(2.0 * x.theta), u, v, a)
    theta = x.theta.copy()
    theta[moved] = nearest_representative(x.theta[moved], 0.5 * np.arctan2(s, c))
    return replace(
        x,
        mu1=channel(x.mu1, lo, hi),
        mu2=channel(x.mu2, lo, hi),
        theta=theta,
        rho=channel(x.rho, *x.rho_bounds),
        meta=dict(x.meta),
    )


def mutate(x: DesignField, u_field: np.ndarray, cfg: MutationConfig = MutationConfig(), rng=None, centres=None):
    """Warp ``x`` around ``cfg.n_points`` random centres (or the given ones).

    ``u_field`` is the (nx, ny, 2) element-centre displacement; it is rescaled
    so its largest magnitude equals ``cfg.strength`` coarse cells.
    """
    u_field = np.asarray(u_field, float)
    if u_field.shape != x.shape + (2,):
        raise ConfigError(f"displacement field {u_field.shape} does not match design {x.shape}")
    rng = np.random.default_rng(0) if rng is None else rng
    if centres is None:
        flat = rng.integers(0, x.mu1.size, size=cfg.n_points)
        centres = np.stack(np.unravel_index(flat, x.shape), axis=1)
    peak = float(np.max(np.hypot(u_field[..., 0], u_field[..., 1])))
    if peak == 0.0 or cfg.strength == 0.0:
        return replace(x, meta=dict(x.meta))
    disp = u_field * (cfg.strength / peak)
    out = x
    for centre in centres:
        out = warp(out, disp, decay_weight(x.shape, centre, cfg.r_m, cfg.p0), cfg.kernel_a)
    return out if out is not x else replace(x, meta=dict(x.meta))
