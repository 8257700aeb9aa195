"""The coarse lattice design field and its CSV form."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .io import read_csv, write_csv

THETA_BOUND = 4.0 * np.pi
CSV_HEADER = ("ix", "iy", "mu1", "mu2", "theta", "rho")


@dataclass
class DesignField:
    """Per-element lattice widths, orientation and macro density on an nx-by-ny grid.

    Arrays have shape ``(nx, ny)`` indexed ``[ix, iy]``. The width that actually
    enters the microstructure is ``mu * rho`` (see :meth:`effective_widths`).
    """

    mu1: np.ndarray
    mu2: np.ndarray
    theta: np.ndarray
    rho: np.ndarray | None = None
    mu_bounds: tuple = (0.0, 1.0)
    rho_bounds: tuple = (1e-3, 1.0)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.mu1 = np.array(self.mu1, dtype=float)
        self.mu2 = np.array(self.mu2, dtype=float)
        self.theta = np.array(self.theta, dtype=float)
        self.rho = np.ones_like(self.mu1) if self.rho is None else np.array(self.rho, dtype=float)
        shapes = {a.shape for a in (self.mu1, self.mu2, self.theta, self.rho)}
        if len(shapes) != 1 or self.mu1.ndim != 2:
            raise ValueError(f"channels must share one 2D shape, got {sorted(shapes)}")
        if min(self.mu1.shape) < 2:
            raise ValueError(f"design grid must be at least 2x2, got {self.mu1.shape}")

    @property
    def shape(self) -> tuple:
        return self.mu1.shape

    @property
    def nx(self) -> int:
        return self.mu1.shape[0]

    @property
    def ny(self) -> int:
        return self.mu1.shape[1]

    def effective_widths(self):
        return self.mu1 * self.rho, self.mu2 * self.rho

    def volume(self) -> float:
        """Solid area fraction of the cross-bar cells, averaged over elements."""
        w1, w2 = self.effective_widths()
        return float(np.mean(w1 + w2 - w1 * w2))

    def clamped(self) -> "DesignField":
        lo, hi = self.mu_bounds
        rlo, rhi = self.rho_bounds
        return replace(
            self,
            mu1=np.clip(self.mu1, lo, hi),
            mu2=np.clip(self.mu2, lo, hi),
            theta=np.clip(self.theta, -THETA_BOUND, THETA_BOUND),
            rho=np.clip(self.rho, rlo, rhi),
            meta=dict(self.meta),
        )

    def within_bounds(self) -> bool:
        return self.clamped() == self

    def folded(self) -> "DesignField":
        """Equivalent field with the density multiplied into the widths (rho = 1)."""
        w1, w2 = self.effective_widths()
        return DesignField(w1, w2, self.theta.copy(), np.ones_like(w1), (0.0, 1.0), (1.0, 1.0), dict(self.meta))

    def channels(self) -> np.ndarray:
        """(nx, ny, 3) stack of mu1, mu2, theta."""
        return np.stack([self.mu1, self.mu2, self.theta], axis=-1)

    def __eq__(self, other):
        if not isinstance(other, DesignField):
            return NotImplemented
        return (
            self.shape == other.shape
            and all(
                np.array_equal(a, b)
                for a, b in zip(
                    (self.mu1, self.mu2, self.theta, self.rho), (other.mu1, other.mu2, other.theta, other.rho)
                )
            )
            and tuple(self.mu_bounds) == tuple(other.mu_bounds)
            and tuple(self.rho_bounds) == tuple(other.rho_bounds)
        )

    def to_csv(self, path) -> None:
        rows = []
        for iy in range(self.ny):
            for ix in range(self.nx):
                rows.append(
                    (ix, iy, self.mu1[ix, iy], self.mu2[ix, iy], self.theta[ix, iy], self.rho[ix, iy])
                )
        write_csv(path, CSV_HEADER, rows)

    @classmethod
    def from_csv(cls, path, mu_bounds=(0.0, 1.0), rho_bounds=(1e-3, 1.0)) -> "DesignField":
        rows = read_csv(path)
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(CSV_HEADER)}")
        ix = np.array([int(r["ix"]) for r in rows])
        iy = np.array([int(r["iy"]) for r in rows])
        nx, ny = ix.max() + 1, iy.max() + 1
        if len(rows) != nx * ny:
            raise ConfigError(f"{path}: {len(rows)} rows do not fill a {nx}x{ny} grid")
        out = {}
        for key in ("mu1", "mu2", "theta", "rho"):
            a = np.full((nx, ny), np.nan)
            a[ix, iy] = [float(r[key]) for r in rows]
            out[key] = a
        if np.isnan(out["mu1"]).any():
            raise ConfigError(f"{path}: missing grid cells")
        return cls(out["mu1"], out["mu2"], out["theta"], out["rho"], mu_bounds, rho_bounds)


def uniform_field(nx, ny, mu1, mu2, theta=0.0, rho=1.0, **kw) -> DesignField:
    full = lambda v: np.full((nx, ny), float(v))  # noqa: E731
    return DesignField(full(mu1), full(mu2), full(theta), full(rho), **kw)
